#pragma once

// Gibbs-within-composite sampler. The outer loop redraws the subsample
// delta from its design; the inner loop runs K Gibbs scans over
// (nu_delta, beta, tau2, sigma2, sigma_beta2, phi) using only the n rows
// selected by delta, then predicts the process at the target set A.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "sdsm/covariogram.hpp"
#include "sdsm/dataset.hpp"
#include "sdsm/designs.hpp"
#include "sdsm/errors.hpp"
#include "sdsm/linalg.hpp"
#include "sdsm/rng.hpp"

namespace sdsm {

enum class PredictionTarget { Latent, Observed };

[[nodiscard]] inline PredictionTarget parse_target(std::string_view s) {
    if (s == "latent") return PredictionTarget::Latent;
    if (s == "observed") return PredictionTarget::Observed;
    throw InvalidParameter("unknown prediction target '" + std::string(s) + "' (expected latent or observed)");
}

[[nodiscard]] inline std::string_view to_string(PredictionTarget t) {
    return t == PredictionTarget::Latent ? "latent" : "observed";
}

/// Power of det H_delta(phi) in the phi full conditional. Half is the
/// Gaussian density; Full reproduces det^{-1} as printed in the original
/// derivation, kept for comparison runs.
enum class PhiDeterminant { Half, Full };

[[nodiscard]] inline std::vector<double> default_phi_support() {
    std::vector<double> s;
    for (int i = 0; i <= 8; ++i) s.push_back(1.0 + 0.5 * i);
    return s;
}

struct ModelConfig {
    Covariogram covariogram{};
    std::vector<double> phi_support = default_phi_support();
    double prior_shape = 1.0;  // a
    double prior_scale = 1.0;  // b
    std::size_t n = 0;
    std::size_t G = 1;
    std::size_t K = 1;
    std::size_t burn_in = 0;
    std::uint64_t seed = 1;
    std::uint64_t chain = 0;
    PredictionTarget prediction_target = PredictionTarget::Latent;
    PhiDeterminant phi_determinant = PhiDeterminant::Half;

    // Initial theta at [1, 0].
    double init_tau2 = 1.0;
    double init_sigma2 = 1.0;
    double init_sigma_beta2 = 1.0;
    std::optional<double> init_phi;  // defaults to the middle of the support

    void validate() const {
        if (G < 1) throw InvalidParameter("G must be >= 1");
        if (K < 1) throw InvalidParameter("K must be >= 1");
        if (burn_in >= G) throw InvalidParameter("burn_in must be < G");
        if (n < 1) throw InvalidParameter("the sampler needs a subsample size n >= 1");
        if (!(prior_shape > 0.0) || !(prior_scale > 0.0)) throw InvalidParameter("prior a and b must be positive");
        if (phi_support.empty()) throw InvalidParameter("phi support is empty");
        for (std::size_t i = 0; i < phi_support.size(); ++i) {
            if (!(phi_support[i] > 0.0) || !std::isfinite(phi_support[i]))
                throw InvalidParameter("phi support entries must be positive");
            if (i > 0 && !(phi_support[i] > phi_support[i - 1]))
                throw InvalidParameter("phi support must be strictly ascending");
        }
        if (!(init_tau2 > 0.0) || !(init_sigma2 > 0.0) || !(init_sigma_beta2 > 0.0))
            throw InvalidParameter("initial variances must be positive");
    }

    [[nodiscard]] std::size_t initial_phi_index() const {
        if (!init_phi) return phi_support.size() / 2;
        const auto it = std::find(phi_support.begin(), phi_support.end(), *init_phi);
        if (it == phi_support.end()) throw InvalidParameter("initial phi is not on the support");
        return static_cast<std::size_t>(it - phi_support.begin());
    }
};

struct PosteriorState {
    Vector nu_delta;
    Vector beta;
    double tau2 = 1.0;
    double sigma2 = 1.0;
    double sigma_beta2 = 1.0;
    double phi = 1.0;
    std::size_t phi_index = 0;
};

/// Parameter block of one composite iteration, taken at inner index K.
struct ParameterDraw {
    Vector beta;
    double tau2 = 0.0;
    double sigma2 = 0.0;
    double sigma_beta2 = 0.0;
    double phi = 0.0;
};

/// Kept draws of W(s_i) for every target i (rows) and kept iteration
/// (columns), plus the nugget variance of each kept iteration.
struct PredictionRecord {
    Matrix latent;       // |A| x (G - burn_in)
    Vector nugget_var;   // tau2^{[g,K]} per kept iteration
    std::vector<std::size_t> iterations;  // g of each kept column
    std::uint64_t seed = 0;
    std::uint64_t chain = 0;

    [[nodiscard]] Eigen::Index locations() const { return latent.rows(); }
    [[nodiscard]] Eigen::Index kept() const { return latent.cols(); }

    /// Running mean w-hat over kept iterations.
    [[nodiscard]] Vector mean() const { return latent.rowwise().mean(); }

    /// Latent draws plus independent N(0, tau2) noise per kept draw.
    /// The noise comes from its own substream per iteration, so the
    /// result is deterministic and does not disturb the parameter chain.
    [[nodiscard]] Matrix observed() const {
        Matrix out = latent;
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            Rng rng = make_stream(seed, Stream::Nugget, chain, iterations[static_cast<std::size_t>(c)]);
            std::normal_distribution<double> z;
            const double sd = std::sqrt(nugget_var(c));
            for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, c) += sd * z(rng);
        }
        return out;
    }

    [[nodiscard]] Matrix draws(PredictionTarget t) const {
        return t == PredictionTarget::Latent ? latent : observed();
    }
};

struct ChainTiming {
    double fit_seconds = 0.0;
    double predict_seconds = 0.0;
    std::vector<double> fit_per_iteration;
};

struct ChainOutput {
    std::vector<ParameterDraw> draws;  // one per composite iteration g
    PredictionRecord predictions;
    ChainTiming timing;
    PosteriorState final_state;
    std::size_t burn_in = 0;
};

// ---------------------------------------------------------------------------
// Full conditionals. Each takes exactly the quantities its density uses.

/// nu_delta ~ N(Sigma (y - X beta)/tau2, Sigma), Sigma = (I/tau2 + H^{-1}/sigma2)^{-1}.
/// With H = L L', the precision is L^{-T} M L^{-1} where
/// M = L'L/tau2 + I/sigma2 = R R', so nu = L R^{-T} (R^{-1} L' r / tau2 + z).
[[nodiscard]] inline Vector fc_nu_delta(const Vector& y, const Matrix& X, const Vector& beta, double tau2,
                                        double sigma2, const CholFactor& H, Rng& rng) {
    const Eigen::Index n = y.size();
    if (H.order() != n || X.rows() != n || X.cols() != beta.size())
        throw DimensionMismatch("fc_nu_delta: dimension mismatch");
    const Vector r = y - X * beta;
    // Only the lower triangle of M is formed; the factorization reads no more.
    Matrix M = Matrix::Zero(n, n);
    M.selfadjointView<Eigen::Lower>().rankUpdate(H.lower().transpose(), 1.0 / tau2);
    M.diagonal().array() += 1.0 / sigma2;
    const CholFactor R = cholesky(M);

    Vector b = H.U() * r;
    b /= tau2;
    R.L().solveInPlace(b);
    std::normal_distribution<double> z;
    for (Eigen::Index i = 0; i < n; ++i) b(i) += z(rng);
    R.U().solveInPlace(b);
    return (H.L() * b).eval();
}

/// beta ~ N(P^{-1} X'(y - nu)/tau2, P^{-1}), P = X'X/tau2 + I/sigma_beta2.
[[nodiscard]] inline Vector fc_beta(const Vector& y, const Matrix& X, const Vector& nu, double tau2,
                                    double sigma_beta2, Rng& rng) {
    if (X.rows() != y.size() || nu.size() != y.size()) throw DimensionMismatch("fc_beta: dimension mismatch");
    const Eigen::Index p = X.cols();
    Matrix P = X.transpose() * X;
    P /= tau2;
    P.diagonal().array() += 1.0 / sigma_beta2;
    const CholFactor R = cholesky(P);
    const Vector rhs = X.transpose() * (y - nu) / tau2;
    Vector mean = solve(R, rhs);
    Vector z(p);
    std::normal_distribution<double> nd;
    for (Eigen::Index i = 0; i < p; ++i) z(i) = nd(rng);
    R.U().solveInPlace(z);
    return mean + z;
}

/// tau2 ~ IG(a + n/2, b + r'r/2) with r = y - X beta - nu.
[[nodiscard]] inline double fc_tau2(const Vector& residual, double a, double b, Rng& rng) {
    return inverse_gamma(rng, a + 0.5 * static_cast<double>(residual.size()), b + 0.5 * residual.squaredNorm());
}

/// sigma2 ~ IG(a + n/2, b + nu' H^{-1} nu / 2).
[[nodiscard]] inline double fc_sigma2(const Vector& nu, const CholFactor& H, double a, double b, Rng& rng) {
    return inverse_gamma(rng, a + 0.5 * static_cast<double>(nu.size()), b + 0.5 * quad_form(H, nu));
}

/// sigma_beta2 ~ IG(a + p/2, b + beta'beta/2).
[[nodiscard]] inline double fc_sigma_beta2(const Vector& beta, double a, double b, Rng& rng) {
    return inverse_gamma(rng, a + 0.5 * static_cast<double>(beta.size()), b + 0.5 * beta.squaredNorm());
}

/// Caches chol(H_delta(phi)) per support point for one delta draw.
class PhiFactorCache {
public:
    PhiFactorCache(const Covariogram& c, const Matrix& dist, std::span<const double> support)
        : c_(c), dist_(&dist), support_(support), factors_(support.size()) {}

    const CholFactor& get(std::size_t j) {
        auto& slot = factors_[j];
        if (!slot) {
            try {
                slot.emplace(cholesky(corr_from_distances(c_, *dist_, support_[j])));
            } catch (const NotPositiveDefinite& e) {
                throw NotPositiveDefinite("H_delta(phi = " + std::to_string(support_[j]) + "): " + e.what());
            }
        }
        return *slot;
    }

private:
    Covariogram c_;
    const Matrix* dist_;
    std::span<const double> support_;
    std::vector<std::optional<CholFactor>> factors_;
};

/// Normalized log masses of the phi full conditional over the support.
[[nodiscard]] inline std::vector<double> phi_log_mass(const Vector& nu, double sigma2, PhiFactorCache& cache,
                                                      std::size_t support_size,
                                                      PhiDeterminant det = PhiDeterminant::Half) {
    const double power = det == PhiDeterminant::Half ? 0.5 : 1.0;
    std::vector<double> lm(support_size);
    for (std::size_t j = 0; j < support_size; ++j) {
        const CholFactor& f = cache.get(j);
        lm[j] = -power * log_det(f) - quad_form(f, nu) / (2.0 * sigma2);
    }
    const double mx = *std::max_element(lm.begin(), lm.end());
    double s = 0.0;
    for (double v : lm) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (double& v : lm) v -= lse;
    return lm;
}

[[nodiscard]] inline std::size_t draw_categorical_log(const std::vector<double>& log_mass, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t j = 0; j < log_mass.size(); ++j) {
        acc += std::exp(log_mass[j]);
        if (u < acc) return j;
    }
    return log_mass.size() - 1;
}

/// Index into the support of a phi draw.
[[nodiscard]] inline std::size_t fc_phi_index(const Vector& nu, double sigma2, PhiFactorCache& cache,
                                              std::size_t support_size, Rng& rng,
                                              PhiDeterminant det = PhiDeterminant::Half) {
    if (support_size == 0) throw InvalidParameter("fc_phi: empty support");
    if (support_size == 1) return 0;
    return draw_categorical_log(phi_log_mass(nu, sigma2, cache, support_size, det), rng);
}

[[nodiscard]] inline double fc_phi(const Vector& nu, double sigma2, std::span<const Location> locs,
                                   std::span<const double> support, const Covariogram& c, Rng& rng,
                                   PhiDeterminant det = PhiDeterminant::Half) {
    const Matrix dist = distance_matrix(locs);
    PhiFactorCache cache(c, dist, support);
    return support[fc_phi_index(nu, sigma2, cache, support.size(), rng, det)];
}

// ---------------------------------------------------------------------------
// Prediction at targets, one univariate conditional per location.

/// Conditional mean h' H^{-1} nu and variance sigma2 max(0, 1 - h' H^{-1} h)
/// for a block of targets. `cross` is |A| x n.
struct ConditionalMoments {
    Vector mean;
    Vector var;
};

[[nodiscard]] inline ConditionalMoments conditional_moments(const CholFactor& H, const Vector& nu, double sigma2,
                                                            const Matrix& cross) {
    if (cross.cols() != H.order() || nu.size() != H.order())
        throw DimensionMismatch("conditional_moments: dimension mismatch");
    const Vector alpha = H.L().solve(nu);
    const Matrix V = H.L().solve(cross.transpose());
    ConditionalMoments m;
    m.mean = V.transpose() * alpha;
    m.var = (1.0 - V.colwise().squaredNorm().array()).max(0.0).matrix().transpose() * sigma2;
    return m;
}

/// One draw of nu(s) at a single target location.
[[nodiscard]] inline double predict_at(const Location& target, const Vector& nu, double sigma2, double phi,
                                       std::span<const Location> locs, const CholFactor& H, Rng& rng,
                                       const Covariogram& c = {}) {
    const Matrix cross = build_cross_matrix(c, std::span<const Location>(&target, 1), locs, phi);
    const ConditionalMoments m = conditional_moments(H, nu, sigma2, cross);
    return m.mean(0) + std::sqrt(m.var(0)) * std_normal(rng);
}

/// Target coordinates laid out for vectorized cross-correlation blocks.
class TargetGeometry {
public:
    explicit TargetGeometry(const PredictionTargets& A) {
        const auto m = static_cast<Eigen::Index>(A.size());
        x_.resize(m);
        y_.resize(m);
        z_.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto& s = A.locations[static_cast<std::size_t>(i)];
            x_(i) = s.x;
            y_(i) = s.y;
            z_(i) = s.z;
        }
    }

    [[nodiscard]] Eigen::Index size() const { return x_.size(); }

    /// Rows [begin, begin + count) of H_m(phi).
    [[nodiscard]] Matrix cross_block(Eigen::Index begin, Eigen::Index count, std::span<const Location> cols,
                                     const Covariogram& c, double phi) const {
        Matrix h(count, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const auto& s = cols[j];
            Eigen::ArrayXd d = ((x_.segment(begin, count) - s.x).square() + (y_.segment(begin, count) - s.y).square() +
                                (z_.segment(begin, count) - s.z).square())
                                   .sqrt();
            if (c.kind == CovariogramKind::Exponential)
                h.col(static_cast<Eigen::Index>(j)) = (-phi * d).exp().matrix();
            else
                h.col(static_cast<Eigen::Index>(j)) = d.unaryExpr([&](double v) { return c(v, phi); }).matrix();
        }
        return h;
    }

private:
    Eigen::ArrayXd x_, y_, z_;
};

namespace detail {

inline constexpr Eigen::Index kPredictBlock = 1024;

// Latent nu_A draws for every target, processed in blocks of columns.
inline Vector predict_all(const TargetGeometry& geo, std::span<const Location> locs, const CholFactor& H,
                          const Vector& nu, double sigma2, double phi, const Covariogram& c, Rng& rng) {
    const Eigen::Index m = geo.size();
    Vector z(m);
    std::normal_distribution<double> nd;
    for (Eigen::Index i = 0; i < m; ++i) z(i) = nd(rng);
    Vector out(m);
    for (Eigen::Index b = 0; b < m; b += kPredictBlock) {
        const Eigen::Index cnt = std::min(kPredictBlock, m - b);
        const Matrix cross = geo.cross_block(b, cnt, locs, c, phi);
        const ConditionalMoments cm = conditional_moments(H, nu, sigma2, cross);
        out.segment(b, cnt) = cm.mean + (cm.var.array().sqrt() * z.segment(b, cnt).array()).matrix();
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// The design delta is drawn from: SRS over the source, or strata taken
/// from the source's labels with allocations per `rule`.
template <ObservationSource S>
[[nodiscard]] DesignSpec make_design(const S& src, DesignKind kind, std::size_t n, Allocation rule = Allocation::Equal) {
    if (kind == DesignKind::SRS) return DesignSpec::srs(src.size(), n);
    std::size_t R = 0;
    std::vector<int> labels = dense_strata(src, &R);
    std::vector<std::size_t> sizes(R, 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    return DesignSpec::stratified(std::move(labels), DesignSpec::allocate(sizes, n, rule));
}

/// Runs one chain. Reads from `data` only the rows selected by each delta
/// draw (plus whatever `design` was built from beforehand).
template <ObservationSource S>
[[nodiscard]] ChainOutput run_composite(const ModelConfig& cfg, const S& data, const DesignSpec& design,
                                        const PredictionTargets& targets) {
    using clock = std::chrono::steady_clock;
    cfg.validate();
    const std::size_t n = cfg.n;
    if (data.size() < n)
        throw InsufficientData("subsample size " + std::to_string(n) + " exceeds the " +
                               std::to_string(data.size()) + " observed rows");
    if (design.sample_size() != n || design.population() != data.size())
        throw InvalidParameter("design does not match the data or the subsample size");
    if (targets.size() == 0) throw InvalidParameter("prediction target set A is empty");
    const std::size_t p = data.num_covariates();
    if (static_cast<std::size_t>(targets.covariates.cols()) != p)
        throw DimensionMismatch("targets carry a different number of covariates than the data");

    const double a = cfg.prior_shape, b = cfg.prior_scale;
    const std::span<const double> support(cfg.phi_support);
    const auto ni = static_cast<Eigen::Index>(n);
    const auto pi = static_cast<Eigen::Index>(p);

    Rng design_rng = make_stream(cfg.seed, Stream::Design, cfg.chain);
    Rng gibbs = make_stream(cfg.seed, Stream::Gibbs, cfg.chain);
    const TargetGeometry geo(targets);

    PosteriorState st;
    st.beta = Vector::Zero(pi);
    st.tau2 = cfg.init_tau2;
    st.sigma2 = cfg.init_sigma2;
    st.sigma_beta2 = cfg.init_sigma_beta2;
    st.phi_index = cfg.initial_phi_index();
    st.phi = support[st.phi_index];

    ChainOutput out;
    out.burn_in = cfg.burn_in;
    out.draws.reserve(cfg.G);
    const std::size_t kept = cfg.G - cfg.burn_in;
    out.predictions.latent.resize(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(kept));
    out.predictions.nugget_var.resize(static_cast<Eigen::Index>(kept));
    out.predictions.iterations.reserve(kept);
    out.predictions.seed = cfg.seed;
    out.predictions.chain = cfg.chain;
    out.timing.fit_per_iteration.reserve(cfg.G);

    Vector y(ni);
    Matrix X(ni, pi);
    std::vector<Location> locs(n);

    for (std::size_t g = 0; g < cfg.G; ++g) {
        const auto t_start = clock::now();
        double predict_secs = 0.0;
        try {
            // Steps 3-4: fresh delta, then y_delta and X_delta.
            const DeltaDraw delta = draw(design, design_rng);
            for (Eigen::Index r = 0; r < ni; ++r) {
                const std::size_t i = delta.included[static_cast<std::size_t>(r)];
                y(r) = data.value(i);
                const auto x = data.covariates(i);
                for (Eigen::Index c = 0; c < pi; ++c) X(r, c) = x[static_cast<std::size_t>(c)];
                locs[static_cast<std::size_t>(r)] = data.location(i);
            }
            const Matrix dist = distance_matrix(locs);
            PhiFactorCache cache(cfg.covariogram, dist, support);

            for (std::size_t k = 1; k <= cfg.K; ++k) {
                // Step 5: H_delta(phi^{[g,k-1]}).
                const std::size_t prev_phi_index = st.phi_index;
                const double prev_phi = st.phi;
                const double prev_sigma2 = st.sigma2;
                const CholFactor& H = cache.get(prev_phi_index);

                st.nu_delta = fc_nu_delta(y, X, st.beta, st.tau2, st.sigma2, H, gibbs);              // 6
                st.beta = fc_beta(y, X, st.nu_delta, st.tau2, st.sigma_beta2, gibbs);                  // 7
                st.tau2 = fc_tau2(y - X * st.beta - st.nu_delta, a, b, gibbs);                         // 8
                st.sigma2 = fc_sigma2(st.nu_delta, H, a, b, gibbs);                                    // 9
                st.sigma_beta2 = fc_sigma_beta2(st.beta, a, b, gibbs);                                 // 10
                st.phi_index = fc_phi_index(st.nu_delta, st.sigma2, cache, support.size(), gibbs,
                                            cfg.phi_determinant);                                      // 11
                st.phi = support[st.phi_index];

                // Steps 12-13, only where the draw is kept: [g, K] with g past burn-in.
                if (k == cfg.K && g >= cfg.burn_in) {
                    const auto t_pred = clock::now();
                    Rng pred_rng = make_stream(cfg.seed, Stream::Predict, cfg.chain, g);
                    const Vector nu_a = detail::predict_all(geo, locs, H, st.nu_delta, prev_sigma2, prev_phi,
                                                            cfg.covariogram, pred_rng);
                    const auto col = static_cast<Eigen::Index>(g - cfg.burn_in);
                    out.predictions.latent.col(col) = targets.covariates * st.beta + nu_a;
                    out.predictions.nugget_var(col) = st.tau2;
                    out.predictions.iterations.push_back(g);
                    predict_secs = std::chrono::duration<double>(clock::now() - t_pred).count();
                }
            }
        } catch (const NumericalError& e) {
            throw NumericalError("composite iteration " + std::to_string(g + 1) + ": " + e.what());
        }

        ParameterDraw d;
        d.beta = st.beta;
        d.tau2 = st.tau2;
        d.sigma2 = st.sigma2;
        d.sigma_beta2 = st.sigma_beta2;
        d.phi = st.phi;
        out.draws.push_back(std::move(d));

        const double total = std::chrono::duration<double>(clock::now() - t_start).count();
        out.timing.fit_per_iteration.push_back(total - predict_secs);
        out.timing.fit_seconds += total - predict_secs;
        out.timing.predict_seconds += predict_secs;
    }
    out.final_state = st;
    return out;
}

/// Chains 0..chains-1 on independent substreams, at most `threads` at a
/// time. Output order is chain order, independent of scheduling.
template <ObservationSource S>
[[nodiscard]] std::vector<ChainOutput> run_chains(const ModelConfig& cfg, const S& data, const DesignSpec& design,
                                                  const PredictionTargets& targets, std::size_t chains,
                                                  std::size_t threads = 1) {
    if (chains < 1) throw InvalidParameter("chains must be >= 1");
    threads = std::max<std::size_t>(1, std::min(threads, chains));
    std::vector<ChainOutput> outs(chains);
    std::vector<std::exception_ptr> errors(chains);
    auto work = [&](std::size_t c) {
        try {
            ModelConfig local = cfg;
            local.chain = c;
            outs[c] = run_composite(local, data, design, targets);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    if (threads == 1) {
        for (std::size_t c = 0; c < chains; ++c) work(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t c = next++; c < chains; c = next++) work(c);
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return outs;
}

}  // namespace sdsm
