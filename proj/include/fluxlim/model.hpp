#pragma once

// Closed-form model quantities for the radially symmetric flux-limited
// aggregation problem in the unit ball of R^N, N >= 2, written in terms of
// the accumulated density U(xi) = int_0^{xi^{1/N}} u(r) r^{N-1} dr.
//
//   amplitude        A    = (N^2/(N-1))^{N-1}
//   critical mass    m_c  = omega_N * A          (omega_N = |S^{N-1}|)
//   steady family    W_0(xi)    = A * xi * (1 + xi^{1/(N-1)})^{1-N}
//                    W_lam(xi)  = W_0(lam^N xi)
//   steady density   X_lam(r)   = N * A * lam^N / (1 + (lam r)^{N/(N-1)})^N
//
// Every steady accumulated profile is a dilation of W_0; the boundary level
// ell = W_0(lam^N) in (0, A) identifies one member per Dirichlet problem.
// Supercritical mass (m > m_c) forces finite-time blow-up no later than
// T* = (1/2N) * ((m/m_c)^{1/(N-1)} - 1)^{-1}.

#include <cmath>
#include <stdexcept>
#include <string>
#include <numbers>

namespace fluxlim {

inline void require_dimension(int dim) {
    if (dim < 2) {
        throw std::invalid_argument("dimension must be >= 2, got " + std::to_string(dim));
    }
}

/// Measure of the unit sphere S^{N-1}. Closed recurrence omega_{N+2} = 2*pi*omega_N / N
/// from seeds omega_2 = 2*pi, omega_3 = 4*pi (no special functions involved).
inline double unit_sphere_measure(int dim) {
    require_dimension(dim);
    double w = (dim % 2 == 0) ? 2.0 * std::numbers::pi : 4.0 * std::numbers::pi;
    for (int k = (dim % 2 == 0) ? 2 : 3; k < dim; k += 2) {
        w *= 2.0 * std::numbers::pi / static_cast<double>(k);
    }
    return w;
}

/// A = (N^2/(N-1))^{N-1}, the common sup of every steady accumulated profile.
inline double steady_amplitude(int dim) {
    require_dimension(dim);
    const double base = static_cast<double>(dim) * dim / (dim - 1.0);
    return std::pow(base, dim - 1);
}

/// m_c = omega_N * A. Mass above it blows up, below it relaxes, at it collapses.
inline double critical_mass(int dim) {
    return unit_sphere_measure(dim) * steady_amplitude(dim);
}

/// Upper bound T* on the blow-up time for supercritical mass.
inline double blowup_time_bound(double mass, int dim) {
    require_dimension(dim);
    const double mc = critical_mass(dim);
    if (!(mass > mc)) {
        throw std::invalid_argument("blow-up time bound undefined for mass <= critical mass");
    }
    const double excess = std::pow(mass / mc, 1.0 / (dim - 1)) - 1.0;
    return 1.0 / (2.0 * dim * excess);
}

/// Canonical steady accumulated profile W_0. Strictly increasing, concave,
/// W_0(0) = 0, W_0 -> A as xi -> infinity. Evaluated as A*(s/(1+s))^{N-1}
/// with s = xi^{1/(N-1)}, which is stable for arbitrarily large xi.
inline double steady_profile(double xi, int dim) {
    require_dimension(dim);
    if (xi < 0.0) {
        throw std::invalid_argument("steady_profile: xi must be >= 0");
    }
    const double s = std::pow(xi, 1.0 / (dim - 1));
    return steady_amplitude(dim) * std::pow(s / (1.0 + s), static_cast<double>(dim - 1));
}

/// Dilated member W_lam(xi) = W_0(lam^N xi).
inline double steady_profile(double xi, double dilation, int dim) {
    require_dimension(dim);
    if (!(dilation > 0.0)) {
        throw std::invalid_argument("steady_profile: dilation must be > 0");
    }
    return steady_profile(std::pow(dilation, dim) * xi, dim);
}

/// Stationary cell density X_lam(r) = N * A * lam^N / (1 + (lam r)^{N/(N-1)})^N.
inline double steady_density(double r, double dilation, int dim) {
    require_dimension(dim);
    if (!(dilation > 0.0)) {
        throw std::invalid_argument("steady_density: dilation must be > 0");
    }
    if (r < 0.0) {
        throw std::invalid_argument("steady_density: r must be >= 0");
    }
    const double q = std::pow(dilation * r, static_cast<double>(dim) / (dim - 1));
    return dim * steady_amplitude(dim) * std::pow(dilation, dim) / std::pow(1.0 + q, dim);
}

/// Identifies one steady profile: boundary level ell = W_0(lam^N) in (0, A)
/// together with the dilation lam that realizes it.
struct SteadyProfile {
    double level = 0.0;
    double dilation = 0.0;
};

/// Inverts ell = W_0(lam^N) for the dilation. Bisection on the strictly
/// increasing map z -> W_0(z), z = lam^N; residual tolerance 1e-12 * A.
inline double dilation_from_level(double level, int dim) {
    require_dimension(dim);
    const double amp = steady_amplitude(dim);
    if (!(level > 0.0) || !(level < amp)) {
        throw std::invalid_argument("dilation_from_level: level must lie strictly inside (0, A)");
    }
    const double tol = 1e-12 * amp;
    double lo = 0.0;
    double hi = 1.0;
    while (steady_profile(hi, dim) < level) {
        hi *= 2.0;
        if (hi > 1e300) {
            throw std::runtime_error("dilation_from_level: level too close to A to bracket");
        }
    }
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < 400; ++it) {
        const double w = steady_profile(z, dim);
        if (std::abs(w - level) <= tol) break;
        (w < level ? lo : hi) = z;
        z = 0.5 * (lo + hi);
    }
    if (std::abs(steady_profile(z, dim) - level) > tol) {
        throw std::runtime_error("dilation_from_level: bisection failed to reach tolerance");
    }
    return std::pow(z, 1.0 / dim);
}

inline SteadyProfile steady_for_level(double level, int dim) {
    return SteadyProfile{level, dilation_from_level(level, dim)};
}

/// Model constants for one run; the single source of truth for N, m and the
/// derived values.
struct ModelParams {
    int dim = 2;
    double mass = 0.0;
    double sphere_measure = 0.0;   // omega_N
    double amplitude = 0.0;        // A
    double critical = 0.0;         // m_c = omega_N * A

    static ModelParams create(int dim, double mass) {
        require_dimension(dim);
        if (!(mass > 0.0)) {
            throw std::invalid_argument("ModelParams: mass must be > 0");
        }
        ModelParams p;
        p.dim = dim;
        p.mass = mass;
        p.sphere_measure = unit_sphere_measure(dim);
        p.amplitude = steady_amplitude(dim);
        p.critical = p.sphere_measure * p.amplitude;
        return p;
    }

    /// Dirichlet datum at xi = 1, i.e. U(1) = m / omega_N.
    double boundary_level() const { return mass / sphere_measure; }

    bool is_supercritical(double rel = 1e-9) const { return mass > critical * (1.0 + rel); }
    bool is_subcritical(double rel = 1e-9) const { return mass < critical * (1.0 - rel); }
    bool is_critical(double rel = 1e-9) const { return std::abs(mass - critical) <= rel * critical; }
};

} // namespace fluxlim
