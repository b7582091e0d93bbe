#pragma once

// The functionals monitored along trajectories:
//
//   psi      = int_0^1 U xi^{2/N-1} dxi                    (moment; grows at a
//              guaranteed linear rate for supercritical mass, yet stays below
//              N m / (2 omega_N) -- the squeeze that forces blow-up)
//   Psi_ell  = int_0^1 xi^{2/N-1} (2-xi) |U - phi_ell| dxi (weighted L1 distance
//              to the matched steady profile; nonincreasing for subcritical runs)
//   Psi_c    = int_0^1 xi^{2/N-1} (2-xi) (A - U) dxi       (critical-mass variant;
//              nonincreasing, with a quadratic decay bound when N = 2)
//
// plus the plain L1 residuals, the per-interval dissipation checks, the
// nodewise two-trajectory comparison and the collapse probes.
//
// All quadrature is cell-exact in the (possibly singular) weight
// xi^a (2-xi)^b and trapezoidal in the smooth factor, so the integrable
// endpoint singularity at xi = 0 (a in (-1,0) for N >= 3) costs no accuracy.
// For a = 0, b = 0 this reduces to the plain composite trapezoid rule.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"
#include "model.hpp"

namespace fluxlim {

namespace detail {

// antiderivative of xi^a (2-xi)^b for b in {0,1}
inline double weight_antiderivative(double x, double a, int b) {
    const double t = std::pow(x, a + 1.0);
    if (b == 0) return t / (a + 1.0);
    return 2.0 * t / (a + 1.0) - t * x / (a + 2.0);
}

} // namespace detail

/// Sum over cells of mean(f) * int_cell xi^a (2-xi)^b dxi.
inline double weighted_trapezoid(const Grid& g, std::span<const double> f, double a, int b) {
    if (f.size() != g.xi.size()) {
        throw std::invalid_argument("weighted_trapezoid: size mismatch");
    }
    double total = 0.0;
    double prev_anti = 0.0;  // antiderivative at xi = 0 vanishes for a > -1
    for (std::size_t i = 1; i < f.size(); ++i) {
        const double anti = detail::weight_antiderivative(g.xi[i], a, b);
        total += 0.5 * (f[i - 1] + f[i]) * (anti - prev_anti);
        prev_anti = anti;
    }
    return total;
}

inline double moment(const Grid& g, std::span<const double> U) {
    return weighted_trapezoid(g, U, 2.0 / g.dim - 1.0, 0);
}

/// Guaranteed moment growth (N^2 m / omega_N)((m/m_c)^{1/(N-1)} - 1) t; negative
/// for subcritical mass, where the inequality carries no information.
inline double moment_lower_bound(double t, const ModelParams& p) {
    if (t < 0.0) {
        throw std::invalid_argument("moment_lower_bound: t must be >= 0");
    }
    const double rate = p.dim * p.dim * (p.mass / p.sphere_measure)
                      * (std::pow(p.mass / p.critical, 1.0 / (p.dim - 1)) - 1.0);
    return rate * t;
}

inline double steady_residual_l1(const Grid& g, std::span<const double> U,
                                 const SteadyProfile& steady) {
    std::vector<double> f(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) {
        f[i] = std::abs(U[i] - steady_profile(g.xi[i], steady.dilation, g.dim));
    }
    return weighted_trapezoid(g, f, 0.0, 0);
}

inline double lyapunov_subcritical(const Grid& g, std::span<const double> U,
                                   const SteadyProfile& steady) {
    if (std::abs(U.back() - steady.level) > 1e-9) {
        throw std::invalid_argument("lyapunov_subcritical: boundary value "
                                    + std::to_string(U.back()) + " does not match steady level "
                                    + std::to_string(steady.level));
    }
    std::vector<double> f(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) {
        f[i] = std::abs(U[i] - steady_profile(g.xi[i], steady.dilation, g.dim));
    }
    return weighted_trapezoid(g, f, 2.0 / g.dim - 1.0, 1);
}

inline double collapse_residual_l1(const Grid& g, std::span<const double> U,
                                   const ModelParams& p) {
    std::vector<double> f(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) f[i] = p.amplitude - U[i];
    return weighted_trapezoid(g, f, 0.0, 0);
}

inline double lyapunov_critical(const Grid& g, std::span<const double> U,
                                const ModelParams& p) {
    if (!p.is_critical()) {
        throw std::invalid_argument("lyapunov_critical: requires critical mass, got m = "
                                    + std::to_string(p.mass) + " vs m_c = "
                                    + std::to_string(p.critical));
    }
    std::vector<double> f(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) f[i] = p.amplitude - U[i];
    return weighted_trapezoid(g, f, 2.0 / g.dim - 1.0, 1);
}

/// One sampled row of the monitoring series. Fields that do not apply to the
/// run's mass regime (e.g. Psi_ell at critical mass, where no steady profile
/// with that boundary level exists) are stored as 0 so every entry stays
/// finite and the CSV schema is fixed.
struct DiagnosticsSample {
    double t = 0.0;
    double psi = 0.0;            // moment
    double psi_lower = 0.0;      // moment lower bound at t
    double psi_ell = 0.0;        // subcritical Lyapunov value
    double psi_c = 0.0;          // critical Lyapunov value
    double r_ell_l1 = 0.0;       // int |U - phi_ell|
    double r_c_l1 = 0.0;         // int (A - U)
    double origin_slope = 0.0;   // N * U_xi(0+), the reconstructed origin density
    double steady_dist = 0.0;    // sup-norm distance to the matched steady profile
};

inline const char* diagnostics_csv_header() {
    return "t,psi,psi_lower,Psi_ell,Psi_c,R_ell_L1,R_c_L1,origin_slope,steady_dist";
}

/// Full sample for a state; `steady` must be present exactly when the mass is
/// subcritical.
inline DiagnosticsSample sample_diagnostics(const Grid& g, std::span<const double> U, double t,
                                            const ModelParams& p, const SteadyProfile* steady) {
    DiagnosticsSample s;
    s.t = t;
    s.psi = moment(g, U);
    s.psi_lower = moment_lower_bound(t, p);
    s.origin_slope = g.dim * U[1] / g.xi[1];
    if (steady != nullptr) {
        s.psi_ell = lyapunov_subcritical(g, U, *steady);
        s.r_ell_l1 = steady_residual_l1(g, U, *steady);
        double dist = 0.0;
        for (std::size_t i = 0; i < U.size(); ++i) {
            dist = std::max(dist, std::abs(U[i] - steady_profile(g.xi[i], steady->dilation, g.dim)));
        }
        s.steady_dist = dist;
    }
    if (p.is_critical()) {
        s.psi_c = lyapunov_critical(g, U, p);
        s.r_c_l1 = collapse_residual_l1(g, U, p);
    }
    return s;
}

// ---------------------------------------------------------------------------
// dissipation check
// ---------------------------------------------------------------------------

struct DissipationInterval {
    double t0 = 0.0, t1 = 0.0;
    double slope = 0.0;      // finite-difference Lyapunov slope over [t0, t1]
    double bound = 0.0;      // dimension-appropriate right-hand side at t0
    double tol = 0.0;
    bool pass = false;
};

struct DissipationReport {
    std::vector<DissipationInterval> intervals;
    bool all_pass = true;
    double worst_excess = 0.0;  // max over intervals of slope - bound - tol
};

/// Checks the per-interval Lyapunov slope against the proven dissipation rate:
/// subcritical  N>=3:  dPsi_ell/dt <= (2-N)N^2/(N-1) * int |R_ell|
///              N=2:   dPsi_ell/dt <= -(8 - 2*ell)   * int |R_ell|
/// critical     N>=3:  dPsi_c/dt   <= -(N-2)N^2/(N-1) * int R_c
///              N=2:   dPsi_c/dt   <= -Psi_c^2 / 4
/// The tolerance absorbs the O(dt) slope bias (local slope-variation proxy)
/// plus an O(h^2) quadrature term: tol = 1e-6 + 10*(|slope_k - slope_adj| +
/// h_max^2 * N * A).
inline DissipationReport dissipation_check(std::span<const DiagnosticsSample> samples,
                                           const ModelParams& p, const Grid& g) {
    if (samples.size() < 3) {
        throw std::invalid_argument("dissipation_check: need at least 3 samples");
    }
    const bool critical = p.is_critical();
    if (!critical && !p.is_subcritical()) {
        throw std::invalid_argument("dissipation_check: no Lyapunov bound for supercritical mass");
    }
    double h_max = 0.0;
    for (std::size_t i = 1; i < g.xi.size(); ++i) h_max = std::max(h_max, g.xi[i] - g.xi[i - 1]);
    const double quad_term = h_max * h_max * p.dim * p.amplitude;

    const std::size_t m = samples.size() - 1;
    std::vector<double> slope(m);
    for (std::size_t k = 0; k < m; ++k) {
        const double dt = samples[k + 1].t - samples[k].t;
        const double dpsi = critical ? samples[k + 1].psi_c - samples[k].psi_c
                                     : samples[k + 1].psi_ell - samples[k].psi_ell;
        slope[k] = dpsi / dt;
    }

    DissipationReport rep;
    rep.intervals.resize(m);
    const double nd = p.dim;
    for (std::size_t k = 0; k < m; ++k) {
        DissipationInterval& iv = rep.intervals[k];
        iv.t0 = samples[k].t;
        iv.t1 = samples[k + 1].t;
        iv.slope = slope[k];
        if (critical) {
            iv.bound = (p.dim == 2) ? -0.25 * samples[k].psi_c * samples[k].psi_c
                                    : -(nd - 2.0) * nd * nd / (nd - 1.0) * samples[k].r_c_l1;
        } else {
            iv.bound = (p.dim == 2) ? -(8.0 - 2.0 * p.boundary_level()) * samples[k].r_ell_l1
                                    : (2.0 - nd) * nd * nd / (nd - 1.0) * samples[k].r_ell_l1;
        }
        const double adj = (k == 0) ? std::abs(slope[1] - slope[0])
                                    : std::abs(slope[k] - slope[k - 1]);
        iv.tol = 1e-6 + 10.0 * (adj + quad_term);
        iv.pass = iv.slope <= iv.bound + iv.tol;
        rep.worst_excess = std::max(rep.worst_excess, iv.slope - iv.bound - iv.tol);
        rep.all_pass = rep.all_pass && iv.pass;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// comparison check
// ---------------------------------------------------------------------------

struct ComparisonReport {
    double min_gap = 0.0;        // min over nodes and times of upper - lower
    double worst_time = 0.0;
    std::size_t worst_node = 0;
    double threshold = 0.0;      // -1e-10 * scale
    bool pass = false;
};

/// Verifies nodewise ordering lower <= upper along two trajectories sampled on
/// the same grid at the same times.
inline ComparisonReport comparison_check(std::span<const double> times_lo,
                                         std::span<const std::vector<double>> profiles_lo,
                                         std::span<const double> times_hi,
                                         std::span<const std::vector<double>> profiles_hi,
                                         double scale) {
    if (times_lo.size() != times_hi.size() || profiles_lo.size() != profiles_hi.size()
        || times_lo.size() != profiles_lo.size() || times_lo.empty()) {
        throw std::invalid_argument("comparison_check: trajectories have mismatched sampling");
    }
    for (std::size_t k = 0; k < times_lo.size(); ++k) {
        if (std::abs(times_lo[k] - times_hi[k]) > 1e-12) {
            throw std::invalid_argument("comparison_check: sample times differ at index "
                                        + std::to_string(k));
        }
        if (profiles_lo[k].size() != profiles_hi[k].size()) {
            throw std::invalid_argument("comparison_check: grids differ at sample "
                                        + std::to_string(k));
        }
    }
    ComparisonReport rep;
    rep.threshold = -1e-10 * scale;
    rep.min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < times_lo.size(); ++k) {
        for (std::size_t i = 0; i < profiles_lo[k].size(); ++i) {
            const double gap = profiles_hi[k][i] - profiles_lo[k][i];
            if (gap < rep.min_gap) {
                rep.min_gap = gap;
                rep.worst_time = times_lo[k];
                rep.worst_node = i;
            }
        }
    }
    rep.pass = rep.min_gap >= rep.threshold;
    return rep;
}

// ---------------------------------------------------------------------------
// collapse diagnostics
// ---------------------------------------------------------------------------

inline double interpolate_at(const Grid& g, std::span<const double> U, double xi) {
    if (xi <= 0.0) return U.front();
    if (xi >= 1.0) return U.back();
    std::size_t i = 1;
    while (g.xi[i] < xi) ++i;
    const double w = (xi - g.xi[i - 1]) / (g.xi[i] - g.xi[i - 1]);
    return (1.0 - w) * U[i - 1] + w * U[i];
}

/// (A - U(xi_p)) at each probe, with the L1 collapse residual appended.
inline std::vector<double> collapse_metrics(const Grid& g, std::span<const double> U,
                                            const ModelParams& p,
                                            std::span<const double> probes) {
    if (!p.is_critical()) {
        throw std::invalid_argument("collapse_metrics: requires critical mass");
    }
    std::vector<double> out;
    out.reserve(probes.size() + 1);
    for (double xi : probes) {
        out.push_back(p.amplitude - interpolate_at(g, U, xi));
    }
    out.push_back(collapse_residual_l1(g, U, p));
    return out;
}

} // namespace fluxlim
