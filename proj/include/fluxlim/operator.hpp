#pragma once

// Semi-discretization of the accumulated-density operator
//
//   U_t = N^2 xi^{2-2/N} U_xixi + N xi^{1-2/N} U^{1/(N-1)} U_xi
//
// on a Grid, with Dirichlet values held at both ends (interior stencil only),
// plus the eps-regularized drift variant
//
//   N (eps + xi^{2/N-2} U^2)^{(2-N)/(2N-2)} U U_xi
//
// whose eps -> 0 limit recovers the plain drift, and the analytic tridiagonal
// Jacobian used by the implicit integrator. The drift uses central differences
// by default; a first-order upwind variant (forward difference, since the
// drift transports mass toward the origin) is available as a fallback for
// strongly advection-dominated runs.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "grid.hpp"

namespace fluxlim {

enum class DriftScheme { central, upwind };

namespace detail {

// U^{1/(N-1)} on the clamped positive part.
inline double drift_power(double u, int dim) {
    if (dim == 2) return std::max(u, 0.0);
    return std::pow(std::max(u, 0.0), 1.0 / (dim - 1));
}

// d/dU of drift_power, clamped at U <= 1e-30 to avoid the singular slope at 0.
inline double drift_power_derivative(double u, int dim) {
    if (u <= 1e-30) return 0.0;
    if (dim == 2) return 1.0;
    return std::pow(u, (2.0 - dim) / (dim - 1.0)) / (dim - 1.0);
}

inline double drift_slope(const Grid& g, std::span<const double> U, std::size_t i,
                          DriftScheme scheme) {
    if (scheme == DriftScheme::central) return g.first_derivative(U, i);
    return (U[i + 1] - U[i]) / (g.xi[i + 1] - g.xi[i]);
}

} // namespace detail

/// Interior time derivatives of the semi-discrete system; entries 0 and n are
/// zero (boundary nodes are held by the Dirichlet data).
inline std::vector<double> apply_rhs(const Grid& g, std::span<const double> U,
                                     DriftScheme scheme = DriftScheme::central) {
    if (U.size() != g.xi.size()) {
        throw std::invalid_argument("apply_rhs: state size does not match grid");
    }
    const std::size_t n = g.n();
    std::vector<double> out(U.size(), 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double diff = g.diffusion[i] * g.second_derivative(U, i);
        const double drift = g.drift[i] * detail::drift_power(U[i], g.dim)
                           * detail::drift_slope(g, U, i, scheme);
        out[i] = diff + drift;
    }
    return out;
}

/// Regularized drift coefficient N (eps + xi^{2/N-2} U^2)^{(2-N)/(2N-2)} U.
/// For N = 2 the exponent vanishes and the plain operator is recovered for
/// every eps.
inline std::vector<double> apply_regularized_rhs(const Grid& g, std::span<const double> U,
                                                 double eps,
                                                 DriftScheme scheme = DriftScheme::central) {
    if (U.size() != g.xi.size()) {
        throw std::invalid_argument("apply_regularized_rhs: state size does not match grid");
    }
    if (!(eps > 0.0)) {
        throw std::invalid_argument("apply_regularized_rhs: eps must be > 0");
    }
    const std::size_t n = g.n();
    const double nd = static_cast<double>(g.dim);
    const double p = (2.0 - nd) / (2.0 * nd - 2.0);
    std::vector<double> out(U.size(), 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double um = std::max(U[i], 0.0);
        const double s = std::pow(g.xi[i], 2.0 / nd - 2.0);
        const double coeff = nd * std::pow(eps + s * um * um, p) * um;
        out[i] = g.diffusion[i] * g.second_derivative(U, i)
               + coeff * detail::drift_slope(g, U, i, scheme);
    }
    return out;
}

/// Tridiagonal matrix over the interior nodes 1..n-1. Row k of the system
/// corresponds to node k+1; lower[0] and upper[n-2] are outside the matrix.
struct Tridiagonal {
    std::vector<double> lower, diag, upper;

    explicit Tridiagonal(std::size_t rows = 0)
        : lower(rows, 0.0), diag(rows, 0.0), upper(rows, 0.0) {}

    std::size_t rows() const { return diag.size(); }
};

/// Analytic Jacobian of apply_rhs with respect to the interior values.
inline Tridiagonal rhs_jacobian(const Grid& g, std::span<const double> U,
                                DriftScheme scheme = DriftScheme::central) {
    const std::size_t n = g.n();
    Tridiagonal J(n - 1);
    for (std::size_t i = 1; i < n; ++i) {
        const std::size_t k = i - 1;
        const double c2 = g.diffusion[i];
        const double c = g.drift[i] * detail::drift_power(U[i], g.dim);
        const double dc = g.drift[i] * detail::drift_power_derivative(U[i], g.dim);
        const double slope = detail::drift_slope(g, U, i, scheme);
        if (scheme == DriftScheme::central) {
            J.lower[k] = c2 * g.d2m[i] + c * g.d1m[i];
            J.diag[k] = c2 * g.d2c[i] + c * g.d1c[i] + dc * slope;
            J.upper[k] = c2 * g.d2p[i] + c * g.d1p[i];
        } else {
            const double hp = g.xi[i + 1] - g.xi[i];
            J.lower[k] = c2 * g.d2m[i];
            J.diag[k] = c2 * g.d2c[i] - c / hp + dc * slope;
            J.upper[k] = c2 * g.d2p[i] + c / hp;
        }
    }
    return J;
}

/// Jacobian of the regularized right-hand side.
inline Tridiagonal rhs_jacobian(const Grid& g, std::span<const double> U, double eps,
                                DriftScheme scheme = DriftScheme::central) {
    if (!(eps > 0.0)) {
        throw std::invalid_argument("rhs_jacobian: eps must be > 0");
    }
    const std::size_t n = g.n();
    const double nd = static_cast<double>(g.dim);
    const double p = (2.0 - nd) / (2.0 * nd - 2.0);
    Tridiagonal J(n - 1);
    for (std::size_t i = 1; i < n; ++i) {
        const std::size_t k = i - 1;
        const double c2 = g.diffusion[i];
        const double um = std::max(U[i], 0.0);
        const double s = std::pow(g.xi[i], 2.0 / nd - 2.0);
        const double base = eps + s * um * um;
        const double c = nd * std::pow(base, p) * um;
        const double dc = nd * std::pow(base, p - 1.0) * (2.0 * p * s * um * um + base);
        const double slope = detail::drift_slope(g, U, i, scheme);
        if (scheme == DriftScheme::central) {
            J.lower[k] = c2 * g.d2m[i] + c * g.d1m[i];
            J.diag[k] = c2 * g.d2c[i] + c * g.d1c[i] + dc * slope;
            J.upper[k] = c2 * g.d2p[i] + c * g.d1p[i];
        } else {
            const double hp = g.xi[i + 1] - g.xi[i];
            J.lower[k] = c2 * g.d2m[i];
            J.diag[k] = c2 * g.d2c[i] - c / hp + dc * slope;
            J.upper[k] = c2 * g.d2p[i] + c / hp;
        }
    }
    return J;
}

/// Thomas algorithm; overwrites rhs with the solution. The matrix is consumed.
inline void solve_tridiagonal(Tridiagonal& A, std::vector<double>& rhs) {
    const std::size_t m = A.rows();
    if (rhs.size() != m) {
        throw std::invalid_argument("solve_tridiagonal: size mismatch");
    }
    for (std::size_t k = 1; k < m; ++k) {
        const double w = A.lower[k] / A.diag[k - 1];
        A.diag[k] -= w * A.upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    rhs[m - 1] /= A.diag[m - 1];
    for (std::size_t k = m - 1; k-- > 0;) {
        rhs[k] = (rhs[k] - A.upper[k] * rhs[k + 1]) / A.diag[k];
    }
}

} // namespace fluxlim
