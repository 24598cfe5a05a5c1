#pragma once

// Closed-form moments and spatial profiles of the data model under a
// sampling design, and a brute-force generative Monte-Carlo check of them.
//
// The data at s_i is Y_i = delta_i (x_i'beta + nu_i + eps_i) + (1 - delta_i) Y~_i
// where Y~ follows the true model (mean mu~, covariance C~ with C~(s,s) = sigma~^2
// and nugget tau~^2). Inclusion enters the moments only through the design
// coefficients p, a, b (or their per-stratum versions).

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdsm/covariogram.hpp"
#include "sdsm/designs.hpp"
#include "sdsm/errors.hpp"
#include "sdsm/linalg.hpp"
#include "sdsm/rng.hpp"

namespace sdsm {

/// Parametric part of theta that enters the data moments.
struct Theta {
    Vector beta;
    double tau2 = 1.0;
    double sigma2 = 1.0;
    double phi = 1.0;
};

enum class TrueFamily { Exponential, Spherical, General };

/// Gaussian surrogate for the unparameterized true data model.
struct TrueModelSpec {
    std::vector<double> mean;  // mu~(s_i)
    double variance = 1.0;     // sigma~^2, also C~(s, s)
    double nugget = 0.0;       // tau~^2
    TrueFamily family = TrueFamily::Exponential;
    double scale = 1.0;  // decay rate (exponential) or range (spherical)
    std::function<double(const Location&, const Location&)> general;  // General family, distinct indices

    [[nodiscard]] bool stationary() const { return family != TrueFamily::General; }
    [[nodiscard]] double partial_sill() const { return variance - nugget; }

    /// C~(d) for distinct indices at lag d >= 0 (d = 0 is the 0+ limit).
    [[nodiscard]] double lag_cov(double d) const {
        switch (family) {
            case TrueFamily::Exponential: return partial_sill() * std::exp(-scale * d);
            case TrueFamily::Spherical: {
                if (d >= scale) return 0.0;
                const double u = d / scale;
                return partial_sill() * (1.0 - 1.5 * u + 0.5 * u * u * u);
            }
            case TrueFamily::General: break;
        }
        throw NonStationaryTrueModel("true covariance is not a function of the lag alone");
    }

    /// C~ between population indices i and j at locations si and sj.
    [[nodiscard]] double cov(std::size_t i, std::size_t j, const Location& si, const Location& sj) const {
        if (i == j) return variance;
        if (family == TrueFamily::General) return general(si, sj);
        return lag_cov(distance(si, sj));
    }

    void validate(std::size_t N) const {
        if (mean.size() != N) throw DimensionMismatch("true model mean has wrong length");
        if (!(variance > 0.0)) throw InvalidParameter("true variance must be positive");
        if (nugget < 0.0 || nugget > variance) throw InvalidParameter("true nugget must lie in [0, variance]");
        if (family == TrueFamily::General && !general) throw InvalidParameter("general true model needs a function");
        if (family != TrueFamily::General && !(scale > 0.0)) throw InvalidParameter("true scale must be positive");
    }
};

struct MomentSummary {
    Vector mean;
    Vector variance;
    Matrix cov;  // diagonal equals variance
    DesignKind design = DesignKind::SRS;
};

namespace detail {

inline void check_inputs(const Theta& theta, const TrueModelSpec& tm, const Matrix& X, std::span<const Location> locs) {
    const std::size_t N = locs.size();
    if (static_cast<std::size_t>(X.rows()) != N || X.cols() != theta.beta.size())
        throw DimensionMismatch("moments: X must be N x p with p = length of beta");
    tm.validate(N);
}

// Mean and variance at one location with inclusion probability p.
inline void point_moments(double p, double param_mean, double true_mean, const Theta& th, const TrueModelSpec& tm,
                          double& mean, double& var) {
    const double gap = param_mean - true_mean;
    mean = p * param_mean + (1.0 - p) * true_mean;
    var = p * (th.tau2 + th.sigma2) + (1.0 - p) * tm.variance + p * (1.0 - p) * gap * gap;
}

}  // namespace detail

/// Weighted covariance of the de-trended process: w_true C~ + w_param sigma^2 h.
[[nodiscard]] inline double detrended_cov(const DesignCoefficients& c, double true_cov, double sigma2, double h) {
    return c.weight_true * true_cov + c.weight_param * sigma2 * h;
}

/// Moments under SRS without replacement of n from N.
[[nodiscard]] inline MomentSummary srs_moments(const Theta& theta, const TrueModelSpec& tm, const Matrix& X,
                                               std::span<const Location> locs, std::size_t N, std::size_t n,
                                               const Covariogram& c = {}) {
    detail::check_inputs(theta, tm, X, locs);
    if (n > N) throw InvalidAllocation("srs_moments: n exceeds N");
    const auto m = static_cast<Eigen::Index>(locs.size());
    const double p = static_cast<double>(n) / static_cast<double>(N);
    const DesignCoefficients coef = pair_coefficients(static_cast<double>(n), static_cast<double>(N));
    const Vector param = X * theta.beta;

    MomentSummary out;
    out.design = DesignKind::SRS;
    out.mean.resize(m);
    out.variance.resize(m);
    out.cov.resize(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        detail::point_moments(p, param(i), tm.mean[static_cast<std::size_t>(i)], theta, tm, out.mean(i),
                              out.variance(i));
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (i == j) {
                out.cov(i, i) = out.variance(i);
                continue;
            }
            const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
            const double h = c(distance(locs[si], locs[sj]), theta.phi);
            const double gi = param(i) - tm.mean[si], gj = param(j) - tm.mean[sj];
            out.cov(i, j) = detrended_cov(coef, tm.cov(si, sj, locs[si], locs[sj]), theta.sigma2, h) +
                            coef.weight_cross * gi * gj;
        }
    }
    return out;
}

/// Moments under stratified random sampling; `spec` indexes the same
/// population as `locs`.
[[nodiscard]] inline MomentSummary strat_moments(const Theta& theta, const TrueModelSpec& tm, const Matrix& X,
                                                 std::span<const Location> locs, const DesignSpec& spec,
                                                 const Covariogram& c = {}) {
    detail::check_inputs(theta, tm, X, locs);
    if (spec.population() != locs.size()) throw DimensionMismatch("strat_moments: design population != N");
    const auto m = static_cast<Eigen::Index>(locs.size());
    const Vector param = X * theta.beta;

    MomentSummary out;
    out.design = spec.kind();
    out.mean.resize(m);
    out.variance.resize(m);
    out.cov.resize(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto si = static_cast<std::size_t>(i);
        detail::point_moments(spec.inclusion_prob(si), param(i), tm.mean[si], theta, tm, out.mean(i),
                              out.variance(i));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (i == j) {
                out.cov(i, i) = out.variance(i);
                continue;
            }
            const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
            const DesignCoefficients coef = design_coefficients(spec, si, sj);
            const double h = c(distance(locs[si], locs[sj]), theta.phi);
            const double gi = param(i) - tm.mean[si], gj = param(j) - tm.mean[sj];
            out.cov(i, j) = detrended_cov(coef, tm.cov(si, sj, locs[si], locs[sj]), theta.sigma2, h) +
                            coef.weight_cross * gi * gj;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Variograms and sill / nugget / effective range for a stationary true model.

/// Inclusion probabilities of the two locations in a pair and the pair's
/// design coefficients. Under SRS, or within one stratum, p_i == p_j.
struct PairDesign {
    double p_i = 0.0;
    double p_j = 0.0;
    DesignCoefficients coef;
    bool same_stratum = true;
};

[[nodiscard]] inline PairDesign srs_pair(std::size_t N, std::size_t n) {
    const double p = static_cast<double>(n) / static_cast<double>(N);
    return {p, p, pair_coefficients(static_cast<double>(n), static_cast<double>(N)), true};
}

/// Pair of strata r and t of a stratified design (r == t for within-stratum pairs).
[[nodiscard]] inline PairDesign strata_pair(const DesignSpec& spec, std::size_t r, std::size_t t) {
    const double pr = static_cast<double>(spec.allocation(r)) / static_cast<double>(spec.stratum_size(r));
    const double pt = static_cast<double>(spec.allocation(t)) / static_cast<double>(spec.stratum_size(t));
    if (r == t)
        return {pr, pr,
                pair_coefficients(static_cast<double>(spec.allocation(r)), static_cast<double>(spec.stratum_size(r))),
                true};
    return {pr, pt, {pr * pt - pr - pt + 1.0, pr * pt, 0.0}, false};
}

/// 2 gamma(d) at each lag; zero at d == 0.
[[nodiscard]] inline std::vector<double> variogram(const PairDesign& pd, const Theta& theta, const TrueModelSpec& tm,
                                                   std::span<const double> lags, const Covariogram& c = {}) {
    if (!tm.stationary()) throw NonStationaryTrueModel("variogram needs a lag-only true covariance");
    const double level = pd.p_i * (theta.tau2 + theta.sigma2) + (1.0 - pd.p_i) * tm.variance +
                         pd.p_j * (theta.tau2 + theta.sigma2) + (1.0 - pd.p_j) * tm.variance;
    std::vector<double> out;
    out.reserve(lags.size());
    for (double d : lags) {
        if (d < 0.0) throw InvalidParameter("variogram: negative lag");
        if (d == 0.0) {
            out.push_back(0.0);
            continue;
        }
        out.push_back(level - 2.0 * detrended_cov(pd.coef, tm.lag_cov(d), theta.sigma2, c(d, theta.phi)));
    }
    return out;
}

struct SpatialProfile {
    double sill = 0.0;
    double nugget = 0.0;
    double effective_range = 0.0;  // +inf when never reached
    std::vector<double> lags;
    std::vector<double> variogram;  // 2 gamma on `lags`
};

[[nodiscard]] inline SpatialProfile sill_nugget_range(const PairDesign& pd, const Theta& theta,
                                                      const TrueModelSpec& tm, const Covariogram& c = {},
                                                      double drop_fraction = 0.05,
                                                      std::span<const double> lags = {}) {
    if (!tm.stationary()) throw NonStationaryTrueModel("sill/nugget/range need a lag-only true covariance");
    if (drop_fraction < 0.0 || drop_fraction >= 1.0)
        throw InvalidParameter("drop_fraction must lie in [0, 1)");
    const double s = 0.5 * (pd.p_i + pd.p_j);
    const double t2 = theta.tau2, s2 = theta.sigma2;
    SpatialProfile out;
    out.sill = s * (t2 + s2) + (1.0 - s) * tm.variance;
    if (pd.same_stratum) {
        const double p = pd.p_i, a = pd.coef.weight_true, b = pd.coef.weight_cross;
        out.nugget = (p * t2 + (p - b - p * p) * s2) + ((1.0 - p - a) * tm.variance + a * tm.nugget);
    } else {
        const double pr = pd.p_i, pt = pd.p_j, art = pd.coef.weight_true;
        const double w = 0.5 * (pr + pt - 2.0 * pr * pt);
        out.nugget = (s * t2 + w * s2) + (w * tm.variance + art * tm.nugget);
    }

    auto cov_at = [&](double d) { return detrended_cov(pd.coef, tm.lag_cov(d), s2, c(d, theta.phi)); };
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (drop_fraction == 0.0) {
        // Literal range: first lag with exactly zero covariance. The
        // exponential kernels never reach it.
        if (pd.coef.weight_param > 0.0 && s2 > 0.0) {
            out.effective_range = inf;
        } else if (pd.coef.weight_true == 0.0) {
            out.effective_range = 0.0;
        } else {
            // spherical support ends at its range
            out.effective_range = tm.family == TrueFamily::Exponential ? inf : tm.scale;
        }
    } else {
        const double target = drop_fraction * cov_at(0.0);
        if (!(cov_at(0.0) > 0.0)) {
            out.effective_range = 0.0;
        } else {
            double lo = 0.0, hi = 1.0;
            while (cov_at(hi) > target && hi < 1e12) {
                lo = hi;
                hi *= 2.0;
            }
            if (cov_at(hi) > target) {
                out.effective_range = inf;
            } else {
                while (hi - lo > 1e-9 * std::max(1.0, hi)) {
                    const double mid = 0.5 * (lo + hi);
                    (cov_at(mid) > target ? lo : hi) = mid;
                }
                out.effective_range = hi;
            }
        }
    }
    out.lags.assign(lags.begin(), lags.end());
    out.variogram = variogram(pd, theta, tm, lags, c);
    return out;
}

// ---------------------------------------------------------------------------
// Generative Monte-Carlo oracle.

struct EmpiricalMoments {
    MomentSummary estimate;
    Vector mean_se;
    Vector var_se;
    Matrix cov_se;
    std::size_t draws = 0;
};

/// Simulates delta from `design`, the parametric field where delta = 1 and
/// the Gaussian true-model surrogate where delta = 0, and reports the
/// empirical moments with Monte-Carlo standard errors.
[[nodiscard]] inline EmpiricalMoments mc_generative_oracle(const DesignSpec& design, const Theta& theta,
                                                           const TrueModelSpec& tm, const Matrix& X,
                                                           std::span<const Location> locs, std::size_t draws,
                                                           std::uint64_t seed, const Covariogram& c = {}) {
    detail::check_inputs(theta, tm, X, locs);
    if (design.population() != locs.size()) throw DimensionMismatch("oracle: design population != N");
    if (draws < 2) throw InvalidParameter("oracle: need at least two draws");
    const auto N = static_cast<Eigen::Index>(locs.size());
    const Vector param = X * theta.beta;

    const CholFactor Lh = cholesky(build_corr_matrix(c, locs, theta.phi));
    Matrix Ct(N, N);
    for (Eigen::Index j = 0; j < N; ++j)
        for (Eigen::Index i = 0; i < N; ++i) {
            const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
            Ct(i, j) = tm.cov(si, sj, locs[si], locs[sj]);
        }
    const CholFactor Lt = cholesky(Ct);
    const Vector mu_true = Eigen::Map<const Vector>(tm.mean.data(), N);
    const double sd_param = std::sqrt(theta.sigma2), sd_nug = std::sqrt(theta.tau2);

    Matrix Y(N, static_cast<Eigen::Index>(draws));
    Vector z1(N), z2(N), eps(N);
    for (std::size_t t = 0; t < draws; ++t) {
        Rng rng = make_stream(seed, Stream::Oracle, 0, t);
        const DeltaDraw delta = draw(design, rng);
        std::normal_distribution<double> nd;
        for (Eigen::Index i = 0; i < N; ++i) z1(i) = nd(rng);
        for (Eigen::Index i = 0; i < N; ++i) z2(i) = nd(rng);
        for (Eigen::Index i = 0; i < N; ++i) eps(i) = nd(rng);
        const Vector field = Lh.L() * z1;
        const Vector yp = param + sd_param * field + sd_nug * eps;
        const Vector true_dev = Lt.L() * z2;
        Vector y = mu_true + true_dev;
        for (std::size_t i : delta.included) y(static_cast<Eigen::Index>(i)) = yp(static_cast<Eigen::Index>(i));
        Y.col(static_cast<Eigen::Index>(t)) = y;
    }

    const double D = static_cast<double>(draws);
    EmpiricalMoments out;
    out.draws = draws;
    out.estimate.design = design.kind();
    out.estimate.mean = Y.rowwise().mean();
    const Matrix centered = Y.colwise() - out.estimate.mean;
    out.mean_se = (centered.array().square().rowwise().sum() / (D - 1.0)).sqrt() / std::sqrt(D);
    out.estimate.cov.resize(N, N);
    out.cov_se.resize(N, N);
    for (Eigen::Index j = 0; j < N; ++j)
        for (Eigen::Index i = 0; i <= j; ++i) {
            const Eigen::ArrayXd prod = centered.row(i).array() * centered.row(j).array();
            const double m = prod.sum() / (D - 1.0);
            const double v = (prod - prod.mean()).square().sum() / (D - 1.0);
            out.estimate.cov(i, j) = out.estimate.cov(j, i) = m;
            out.cov_se(i, j) = out.cov_se(j, i) = std::sqrt(v / D);
        }
    out.estimate.variance = out.estimate.cov.diagonal();
    out.var_se = out.cov_se.diagonal();
    return out;
}

}  // namespace sdsm
