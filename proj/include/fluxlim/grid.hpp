#pragma once

// Graded 1D mesh on [0,1] in the xi variable, plus the nonuniform
// three-point difference weights and the degenerate operator coefficients
//   c2(xi) = N^2 xi^{2-2/N},   c1(xi) = N xi^{1-2/N},
// precomputed at interior nodes. Node layout is xi_i = (i/n)^gamma with
// gamma >= 1 clustering points at the origin, where the coefficients
// degenerate and the interesting dynamics (collapse, gradient blow-up) live.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"

namespace fluxlim {

struct Grid {
    std::vector<double> xi;          // nodes, xi[0] = 0, xi[n] = 1, strictly increasing
    double grading = 1.0;
    int dim = 2;

    // degenerate operator coefficients at interior nodes (index 1..n-1; ends unused)
    std::vector<double> diffusion;   // c2_i
    std::vector<double> drift;       // c1_i

    // second-order nonuniform difference weights at interior nodes
    std::vector<double> d1m, d1c, d1p;   // first derivative
    std::vector<double> d2m, d2c, d2p;   // second derivative

    std::size_t n() const { return xi.size() - 1; }

    double first_derivative(std::span<const double> f, std::size_t i) const {
        return d1m[i] * f[i - 1] + d1c[i] * f[i] + d1p[i] * f[i + 1];
    }
    double second_derivative(std::span<const double> f, std::size_t i) const {
        return d2m[i] * f[i - 1] + d2c[i] * f[i] + d2p[i] * f[i + 1];
    }

    /// One-sided second-order slope at the left (i=0) / right (i=n) endpoint.
    double left_slope(std::span<const double> f) const {
        const double h1 = xi[1] - xi[0], h2 = xi[2] - xi[1];
        return -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0]
             + (h1 + h2) / (h1 * h2) * f[1]
             - h1 / (h2 * (h1 + h2)) * f[2];
    }
    double right_slope(std::span<const double> f) const {
        const std::size_t m = n();
        const double h1 = xi[m] - xi[m - 1], h2 = xi[m - 1] - xi[m - 2];
        return (2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[m]
             - (h1 + h2) / (h1 * h2) * f[m - 1]
             + h1 / (h2 * (h1 + h2)) * f[m - 2];
    }
};

inline Grid build_grid(std::size_t n, double gamma, int dim) {
    require_dimension(dim);
    if (n < 4) {
        throw std::invalid_argument("build_grid: need n >= 4, got " + std::to_string(n));
    }
    if (!(gamma >= 1.0)) {
        throw std::invalid_argument("build_grid: grading exponent must be >= 1");
    }
    Grid g;
    g.grading = gamma;
    g.dim = dim;
    g.xi.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        g.xi[i] = std::pow(static_cast<double>(i) / static_cast<double>(n), gamma);
    }
    g.xi[0] = 0.0;
    g.xi[n] = 1.0;

    g.diffusion.assign(n + 1, 0.0);
    g.drift.assign(n + 1, 0.0);
    g.d1m.assign(n + 1, 0.0);
    g.d1c.assign(n + 1, 0.0);
    g.d1p.assign(n + 1, 0.0);
    g.d2m.assign(n + 1, 0.0);
    g.d2c.assign(n + 1, 0.0);
    g.d2p.assign(n + 1, 0.0);

    const double nd = static_cast<double>(dim);
    for (std::size_t i = 1; i < n; ++i) {
        const double x = g.xi[i];
        g.diffusion[i] = nd * nd * std::pow(x, 2.0 - 2.0 / nd);
        g.drift[i] = nd * std::pow(x, 1.0 - 2.0 / nd);

        const double hm = g.xi[i] - g.xi[i - 1];
        const double hp = g.xi[i + 1] - g.xi[i];
        const double hs = hm + hp;
        g.d1m[i] = -hp / (hm * hs);
        g.d1c[i] = (hp - hm) / (hm * hp);
        g.d1p[i] = hm / (hp * hs);
        g.d2m[i] = 2.0 / (hm * hs);
        g.d2c[i] = -2.0 / (hm * hp);
        g.d2p[i] = 2.0 / (hp * hs);
    }
    return g;
}

} // namespace fluxlim
