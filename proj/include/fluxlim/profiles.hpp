#pragma once

// Conversions between the radial cell density u(r), the accumulated density
// U(xi) and the signal gradient -v_r(rho) = rho^{1-N} U(rho^N), all sampled
// on the radius grid r_i = xi_i^{1/N} induced by a Grid.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"

namespace fluxlim {

/// Radii induced by the xi nodes.
inline std::vector<double> radius_nodes(const Grid& g) {
    std::vector<double> r(g.xi.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = std::pow(g.xi[i], 1.0 / g.dim);
    }
    return r;
}

/// U_i = int_0^{r_i} u r^{N-1} dr by composite trapezoid in the density on
/// the induced radius grid, with the r^{N-1} weight integrated exactly per
/// cell (int_{r_{i-1}}^{r_i} r^{N-1} dr = (xi_i - xi_{i-1}) / N). Exact for
/// constant densities, nondecreasing with U_0 = 0 by construction, and free
/// of the first-cell weight error the plain rule suffers where the induced
/// radius spacing is coarse.
inline std::vector<double> accumulate_density(const Grid& g, std::span<const double> u) {
    if (u.size() != g.xi.size()) {
        throw std::invalid_argument("accumulate_density: sample count does not match grid");
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (u[i] < 0.0) {
            throw std::invalid_argument("accumulate_density: negative density sample at index "
                                        + std::to_string(i));
        }
    }
    std::vector<double> U(u.size(), 0.0);
    for (std::size_t i = 1; i < u.size(); ++i) {
        U[i] = U[i - 1] + 0.5 * (u[i - 1] + u[i]) * (g.xi[i] - g.xi[i - 1]) / g.dim;
    }
    return U;
}

/// u(r_i) = N * U_xi(xi_i), central differences inside, one-sided second
/// order at the ends; tiny negative slopes from round-off clamp to 0.
inline std::vector<double> density_from_accumulated(const Grid& g, std::span<const double> U) {
    if (U.size() != g.xi.size()) {
        throw std::invalid_argument("density_from_accumulated: size does not match grid");
    }
    const std::size_t n = g.n();
    std::vector<double> u(U.size());
    u[0] = g.dim * g.left_slope(U);
    for (std::size_t i = 1; i < n; ++i) {
        u[i] = g.dim * g.first_derivative(U, i);
    }
    u[n] = g.dim * g.right_slope(U);
    for (double& v : u) v = std::max(v, 0.0);
    return u;
}

/// -v_r at the induced radii: rho^{1-N} U(rho^N); 0 at the origin (limit).
inline std::vector<double> signal_gradient(const Grid& g, std::span<const double> U) {
    if (U.size() != g.xi.size()) {
        throw std::invalid_argument("signal_gradient: size does not match grid");
    }
    const std::vector<double> r = radius_nodes(g);
    std::vector<double> grad(U.size(), 0.0);
    for (std::size_t i = 1; i < U.size(); ++i) {
        grad[i] = std::pow(r[i], 1 - g.dim) * U[i];
    }
    return grad;
}

} // namespace fluxlim
