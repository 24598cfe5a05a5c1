#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sdsm/sampler.hpp"

using namespace sdsm;

namespace {

struct Moments {
    Vector mean;
    Matrix cov;
    Vector mean_se;
    Matrix cov_se;
};

// Sample mean and covariance of the columns of `draws` with MC standard errors.
Moments moments(const Matrix& draws) {
    const double D = static_cast<double>(draws.cols());
    Moments m;
    m.mean = draws.rowwise().mean();
    const Matrix c = draws.colwise() - m.mean;
    m.cov = c * c.transpose() / (D - 1.0);
    m.mean_se = (m.cov.diagonal() / D).array().sqrt();
    const Eigen::Index k = draws.rows();
    m.cov_se.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
            const Eigen::ArrayXd prod = c.row(i).array() * c.row(j).array();
            m.cov_se(i, j) = std::sqrt((prod - prod.mean()).square().sum() / (D - 1.0) / D);
        }
    return m;
}

void expect_moments(const Matrix& draws, const Vector& mean, const Matrix& cov) {
    const Moments m = moments(draws);
    for (Eigen::Index i = 0; i < mean.size(); ++i) EXPECT_NEAR(m.mean(i), mean(i), 4.0 * m.mean_se(i)) << "mean " << i;
    for (Eigen::Index i = 0; i < cov.rows(); ++i)
        for (Eigen::Index j = 0; j < cov.cols(); ++j)
            EXPECT_NEAR(m.cov(i, j), cov(i, j), 4.0 * m.cov_se(i, j)) << "cov " << i << "," << j;
}

std::vector<Location> grid_locations(std::size_t side) {
    std::vector<Location> out;
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c)
            out.push_back({static_cast<double>(c) / static_cast<double>(side - 1),
                           static_cast<double>(r) / static_cast<double>(side - 1), 0.0});
    return out;
}

// Small fully observed dataset drawn from the parametric model itself.
SpatialDataset parametric_dataset(std::size_t side, std::uint64_t seed, double tau2 = 0.2, double sigma2 = 1.0,
                                  double phi = 3.0) {
    const auto locs = grid_locations(side);
    const std::size_t N = locs.size();
    Rng rng = make_stream(seed, Stream::Aux, 99);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u;
    const CholFactor L = cholesky(build_corr_matrix({}, locs, phi));
    Vector z(static_cast<Eigen::Index>(N));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(rng);
    const Vector nu = std::sqrt(sigma2) * (L.L() * z).eval();
    SpatialDataset d;
    for (std::size_t i = 0; i < N; ++i) {
        const double x[2] = {u(rng), u(rng)};
        const double y = 2.0 * x[0] + 3.0 * x[1] + nu(static_cast<Eigen::Index>(i)) + std::sqrt(tau2) * nd(rng);
        d.push_back(locs[i], y, x, static_cast<int>(i % 2));
    }
    return d;
}

// Records every value read; the sampler may only see delta rows.
class CountingSource {
public:
    explicit CountingSource(const ObservedView& v) : v_(&v) {}
    [[nodiscard]] std::size_t size() const { return v_->size(); }
    [[nodiscard]] std::size_t num_covariates() const { return v_->num_covariates(); }
    [[nodiscard]] double value(std::size_t i) const {
        reads.push_back(i);
        return v_->value(i);
    }
    [[nodiscard]] const Location& location(std::size_t i) const { return v_->location(i); }
    [[nodiscard]] std::span<const double> covariates(std::size_t i) const { return v_->covariates(i); }
    [[nodiscard]] int stratum(std::size_t i) const { return v_->stratum(i); }

    mutable std::vector<std::size_t> reads;

private:
    const ObservedView* v_;
};

static_assert(ObservationSource<CountingSource>);

}  // namespace

// ---------------------------------------------------------------------------
// nu_delta

TEST(FcNuDelta, ScalarCase) {
    // n = 1, H = [1], tau2 = sigma2 = 1: mean (y - x'beta)/2, variance 1/2.
    const CholFactor H = cholesky(SymMatrix(Matrix::Identity(1, 1)));
    Vector y(1), beta(1);
    y << 3.0;
    beta << 1.0;
    Matrix X(1, 1);
    X << 0.5;
    Rng rng = make_stream(1, Stream::Aux);
    Matrix draws(1, 100000);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) draws.col(t) = fc_nu_delta(y, X, beta, 1.0, 1.0, H, rng);
    expect_moments(draws, Vector::Constant(1, 1.25), Matrix::Constant(1, 1, 0.5));
}

TEST(FcNuDelta, PriorWashout) {
    const CholFactor H = cholesky(SymMatrix(Matrix::Identity(2, 2)));
    Vector y(2), beta = Vector::Zero(1);
    y << 1.0, -2.0;
    const Matrix X = Matrix::Ones(2, 1);
    Rng rng = make_stream(2, Stream::Aux);
    Matrix draws(2, 100000);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) draws.col(t) = fc_nu_delta(y, X, beta, 1.0, 1e12, H, rng);
    expect_moments(draws, y, Matrix::Identity(2, 2));
}

TEST(FcNuDelta, ThreePointClosedForm) {
    const std::vector<Location> locs{{0, 0, 0}, {0.3, 0.1, 0}, {0.5, 0.6, 0}};
    const Matrix Hm = build_corr_matrix({}, locs, 2.0).matrix();
    const CholFactor H = cholesky(SymMatrix(Hm));
    Vector y(3), beta(2);
    y << 1.0, 0.2, -0.7;
    beta << 0.5, -0.3;
    Matrix X(3, 2);
    X << 1, 0.2, 1, 0.8, 1, -0.4;
    const double tau2 = 0.4, sigma2 = 1.5;
    const Matrix Sigma = (Matrix::Identity(3, 3) / tau2 + Hm.inverse() / sigma2).inverse();
    const Vector mean = Sigma * (y - X * beta) / tau2;
    Rng rng = make_stream(3, Stream::Aux);
    Matrix draws(3, 100000);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) draws.col(t) = fc_nu_delta(y, X, beta, tau2, sigma2, H, rng);
    expect_moments(draws, mean, Sigma);
}

TEST(FcNuDelta, DimensionChecks) {
    const CholFactor H = cholesky(SymMatrix(Matrix::Identity(2, 2)));
    Rng rng = make_stream(1, Stream::Aux);
    EXPECT_THROW((void)fc_nu_delta(Vector::Zero(3), Matrix::Zero(3, 1), Vector::Zero(1), 1, 1, H, rng),
                 DimensionMismatch);
}

// ---------------------------------------------------------------------------
// beta

TEST(FcBeta, PriorOnlyWhenXIsZero) {
    Rng rng = make_stream(4, Stream::Aux);
    const Matrix X = Matrix::Zero(5, 2);
    const Vector y = Vector::LinSpaced(5, 0, 4), nu = Vector::Zero(5);
    Matrix draws(2, 100000);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) draws.col(t) = fc_beta(y, X, nu, 0.7, 2.5, rng);
    expect_moments(draws, Vector::Zero(2), 2.5 * Matrix::Identity(2, 2));
}

TEST(FcBeta, ScalarRidge) {
    // p = 1, ones column, tau2 = sigma_beta2 = 1, n = 4: mean sum(y - nu)/5, variance 1/5.
    Rng rng = make_stream(5, Stream::Aux);
    Vector y(4), nu(4);
    y << 1, 2, 3, 4;
    nu << 0.5, 0, -0.5, 1;
    Matrix draws(1, 100000);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) draws.col(t) = fc_beta(y, Matrix::Ones(4, 1), nu, 1.0, 1.0, rng);
    expect_moments(draws, Vector::Constant(1, 9.0 / 5.0), Matrix::Constant(1, 1, 0.2));
}

TEST(FcBeta, GeneralClosedForm) {
    Rng rng = make_stream(6, Stream::Aux);
    Matrix X(6, 3);
    X << 1, 0.1, 0.5, 1, 0.9, -0.2, 1, 0.4, 0.3, 1, -0.6, 0.8, 1, 0.2, 0.1, 1, 0.7, -0.9;
    const Vector y = Vector::LinSpaced(6, -1, 2), nu = Vector::LinSpaced(6, 0.3, -0.3);
    const double tau2 = 0.5, sb2 = 3.0;
    const Matrix P = X.transpose() * X / tau2 + Matrix::Identity(3, 3) / sb2;
    const Matrix cov = P.inverse();
    const Vector mean = (X.transpose() * X + (tau2 / sb2) * Matrix::Identity(3, 3)).inverse() * X.transpose() * (y - nu);
    Matrix draws(3, 100000);
    for (Eigen::Index t = 0; t < draws.cols(); ++t) draws.col(t) = fc_beta(y, X, nu, tau2, sb2, rng);
    expect_moments(draws, mean, cov);
}

// ---------------------------------------------------------------------------
// Variance components: IG(shape, scale) has mean scale/(shape-1); its
// reciprocal is Gamma(shape, rate = scale), mean shape/scale, var shape/scale^2.

namespace {

template <class F>
void expect_inverse_gamma(F&& draw, double shape, double scale, std::uint64_t seed) {
    Rng rng = make_stream(seed, Stream::Aux);
    constexpr int D = 1000000;
    double sum = 0.0, inv_sum = 0.0, inv_sq = 0.0, mn = INFINITY;
    for (int t = 0; t < D; ++t) {
        const double v = draw(rng);
        mn = std::min(mn, v);
        sum += v;
        inv_sum += 1.0 / v;
        inv_sq += 1.0 / (v * v);
    }
    EXPECT_GT(mn, 0.0);
    if (shape > 1.0) {
        EXPECT_NEAR(sum / D, scale / (shape - 1.0), 0.01 * scale / (shape - 1.0));
    }
    const double inv_mean = inv_sum / D;
    const double inv_var = inv_sq / D - inv_mean * inv_mean;
    EXPECT_NEAR(inv_mean, shape / scale, 4.0 * std::sqrt(inv_var / D));
    EXPECT_NEAR(inv_var, shape / (scale * scale), 0.01 * shape / (scale * scale));
}

}  // namespace

TEST(FcTau2, InverseGammaTwoTwo) {
    Vector r(2);
    r << 1, 1;
    expect_inverse_gamma([&](Rng& g) { return fc_tau2(r, 1.0, 1.0, g); }, 2.0, 2.0, 10);
}

TEST(FcTau2, ZeroResidualShiftsShapeOnly) {
    const Vector r = Vector::Zero(6);
    expect_inverse_gamma([&](Rng& g) { return fc_tau2(r, 1.0, 1.0, g); }, 4.0, 1.0, 11);
}

TEST(FcSigma2, InverseGammaTwoTwo) {
    const CholFactor H = cholesky(SymMatrix(Matrix::Identity(2, 2)));
    Vector nu(2);
    nu << 1, 1;
    expect_inverse_gamma([&](Rng& g) { return fc_sigma2(nu, H, 1.0, 1.0, g); }, 2.0, 2.0, 12);
}

TEST(FcSigma2, UsesQuadraticForm) {
    const std::vector<Location> locs{{0, 0, 0}, {0.2, 0, 0}, {0, 0.5, 0}};
    const Matrix Hm = build_corr_matrix({}, locs, 1.5).matrix();
    Vector nu(3);
    nu << 0.4, -1.0, 0.3;
    const double q = nu.dot(Hm.inverse() * nu);
    const CholFactor H = cholesky(SymMatrix(Hm));
    expect_inverse_gamma([&](Rng& g) { return fc_sigma2(nu, H, 2.0, 0.5, g); }, 3.5, 0.5 + q / 2.0, 13);
    const Vector zero = Vector::Zero(3);
    expect_inverse_gamma([&](Rng& g) { return fc_sigma2(zero, H, 2.0, 0.5, g); }, 3.5, 0.5, 14);
}

TEST(FcSigmaBeta2, Cases) {
    Vector beta(2);
    beta << 1, 1;
    expect_inverse_gamma([&](Rng& g) { return fc_sigma_beta2(beta, 1.0, 1.0, g); }, 2.0, 2.0, 15);
    const Vector zero = Vector::Zero(3);
    expect_inverse_gamma([&](Rng& g) { return fc_sigma_beta2(zero, 1.0, 1.0, g); }, 2.5, 1.0, 16);
}

// ---------------------------------------------------------------------------
// phi

TEST(FcPhi, SingletonSupport) {
    Rng rng = make_stream(1, Stream::Aux);
    const std::vector<Location> locs{{0, 0, 0}, {0.1, 0, 0}};
    const std::vector<double> support{2.5};
    Vector nu(2);
    nu << 1, -1;
    for (int t = 0; t < 100; ++t) EXPECT_EQ(fc_phi(nu, 1.0, locs, support, {}, rng), 2.5);
}

TEST(FcPhi, SinglePointIsUniform) {
    Rng rng = make_stream(2, Stream::Aux);
    const std::vector<Location> locs{{0.3, 0.3, 0}};
    const std::vector<double> support{1, 2, 3, 4};
    Vector nu(1);
    nu << 0.7;
    constexpr double D = 100000;
    std::vector<double> freq(4, 0.0);
    for (int t = 0; t < D; ++t) freq[static_cast<std::size_t>(fc_phi(nu, 1.0, locs, support, {}, rng)) - 1] += 1.0;
    for (double f : freq) EXPECT_NEAR(f / D, 0.25, 4.0 * std::sqrt(0.25 * 0.75 / D));
}

TEST(FcPhi, TwoPointMatchesDirectDensity) {
    const std::vector<Location> locs{{0, 0, 0}, {0.3, 0.4, 0}};  // distance 0.5
    const std::vector<double> support{1.0, 4.0};
    Vector nu(2);
    nu << 0.9, -0.2;
    const double sigma2 = 0.8;
    for (PhiDeterminant det : {PhiDeterminant::Half, PhiDeterminant::Full}) {
        const double power = det == PhiDeterminant::Half ? 0.5 : 1.0;
        double w[2];
        for (int j = 0; j < 2; ++j) {
            const double h = std::exp(-support[static_cast<std::size_t>(j)] * 0.5);
            const double dt = 1.0 - h * h;
            const double quad = (nu(0) * nu(0) - 2.0 * h * nu(0) * nu(1) + nu(1) * nu(1)) / dt;
            w[j] = std::pow(dt, -power) * std::exp(-quad / (2.0 * sigma2));
        }
        const double p0 = w[0] / (w[0] + w[1]);
        Rng rng = make_stream(3, Stream::Aux);
        constexpr double D = 100000;
        double hits = 0.0;
        for (int t = 0; t < D; ++t) hits += fc_phi(nu, sigma2, locs, support, {}, rng, det) == 1.0 ? 1.0 : 0.0;
        EXPECT_NEAR(hits / D, p0, 4.0 * std::sqrt(p0 * (1.0 - p0) / D));
    }
}

TEST(FcPhi, LogMassIsNormalized) {
    const std::vector<Location> locs{{0, 0, 0}, {0.1, 0.2, 0}, {0.5, 0.1, 0}};
    const Matrix dist = distance_matrix(locs);
    const auto support = default_phi_support();
    PhiFactorCache cache({}, dist, support);
    Vector nu(3);
    nu << 0.1, 0.5, -0.4;
    const auto lm = phi_log_mass(nu, 1.2, cache, support.size());
    double s = 0.0;
    for (double v : lm) s += std::exp(v);
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(FcPhi, DuplicateLocationsUseJitter) {
    const std::vector<Location> locs{{0, 0, 0}, {0, 0, 0}};
    const Matrix dist = distance_matrix(locs);
    const std::vector<double> support{1.0};
    PhiFactorCache cache({}, dist, support);
    EXPECT_GT(cache.get(0).jitter_applied(), 0.0);
}

// ---------------------------------------------------------------------------
// prediction

TEST(Predict, InterpolatesAtSubsampledLocation) {
    const std::vector<Location> locs{{0, 0, 0}, {0.4, 0.1, 0}, {0.2, 0.7, 0}};
    const CholFactor H = cholesky(build_corr_matrix({}, locs, 2.0));
    Vector nu(3);
    nu << 0.3, -1.1, 0.8;
    const ConditionalMoments m = conditional_moments(H, nu, 1.7, build_cross_matrix({}, std::span(&locs[1], 1), locs, 2.0));
    EXPECT_NEAR(m.mean(0), -1.1, 1e-10);
    EXPECT_NEAR(m.var(0), 0.0, 1e-10);
    EXPECT_GE(m.var(0), 0.0);
}

TEST(Predict, RevertsToPriorFarAway) {
    const std::vector<Location> locs{{0, 0, 0}, {0.4, 0.1, 0}};
    const CholFactor H = cholesky(build_corr_matrix({}, locs, 2.0));
    Vector nu(2);
    nu << 0.3, -1.1;
    const std::vector<Location> far{{50, 50, 0}};
    const ConditionalMoments m = conditional_moments(H, nu, 1.7, build_cross_matrix({}, far, locs, 2.0));
    EXPECT_NEAR(m.mean(0), 0.0, 1e-12);
    EXPECT_NEAR(m.var(0), 1.7, 1e-12);
}

TEST(Predict, TwoPointHandCase) {
    // Conditional Gaussian with 2 x 2 explicit algebra.
    const std::vector<Location> locs{{0, 0, 0}, {0.5, 0, 0}};
    const Location s0{0.2, 0.1, 0};
    const double phi = 1.5, sigma2 = 0.9;
    const double h12 = std::exp(-phi * 0.5);
    const double k1 = std::exp(-phi * distance(s0, locs[0])), k2 = std::exp(-phi * distance(s0, locs[1]));
    Vector nu(2);
    nu << 1.0, -0.5;
    const double det = 1.0 - h12 * h12;
    const double w1 = (k1 - h12 * k2) / det, w2 = (k2 - h12 * k1) / det;
    const double mean = w1 * nu(0) + w2 * nu(1);
    const double var = sigma2 * (1.0 - (w1 * k1 + w2 * k2));
    const CholFactor H = cholesky(build_corr_matrix({}, locs, phi));
    const ConditionalMoments m = conditional_moments(H, nu, sigma2, build_cross_matrix({}, std::span(&s0, 1), locs, phi));
    EXPECT_NEAR(m.mean(0), mean, 1e-10);
    EXPECT_NEAR(m.var(0), var, 1e-10);

    Rng rng = make_stream(4, Stream::Aux);
    constexpr int D = 100000;
    Matrix draws(1, D);
    for (int t = 0; t < D; ++t) draws(0, t) = predict_at(s0, nu, sigma2, phi, locs, H, rng);
    expect_moments(draws, Vector::Constant(1, mean), Matrix::Constant(1, 1, var));
}

TEST(Predict, MarginalsOfJointDraw) {
    // The per-location conditionals equal the marginals of the joint
    // conditional N(H_m H^{-1} nu, sigma2 (H_A - H_m H^{-1} H_m')).
    const std::vector<Location> locs{{0, 0, 0}, {0.4, 0.1, 0}, {0.2, 0.7, 0}, {0.9, 0.9, 0}};
    const std::vector<Location> A{{0.1, 0.1, 0}, {0.5, 0.5, 0}, {0.8, 0.2, 0}};
    const double phi = 2.5, sigma2 = 1.3;
    const Matrix Hd = build_corr_matrix({}, locs, phi).matrix();
    const Matrix Hm = build_cross_matrix({}, A, locs, phi);
    const Matrix HA = build_corr_matrix({}, A, phi).matrix();
    Vector nu(4);
    nu << 0.5, -0.2, 1.0, 0.1;
    const Vector jmean = Hm * Hd.inverse() * nu;
    const Matrix jcov = sigma2 * (HA - Hm * Hd.inverse() * Hm.transpose());
    const ConditionalMoments m = conditional_moments(cholesky(SymMatrix(Hd)), nu, sigma2, Hm);
    EXPECT_LT((m.mean - jmean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((m.var - Vector(jcov.diagonal())).cwiseAbs().maxCoeff(), 1e-10);
}

// ---------------------------------------------------------------------------
// composite loop

namespace {

ModelConfig small_config(std::size_t n, std::size_t G) {
    ModelConfig cfg;
    cfg.n = n;
    cfg.G = G;
    cfg.burn_in = G / 4;
    cfg.seed = 2024;
    return cfg;
}

}  // namespace

TEST(RunComposite, ConfigValidation) {
    ModelConfig cfg = small_config(5, 10);
    cfg.K = 0;
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = small_config(5, 10);
    cfg.burn_in = 10;
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = small_config(5, 10);
    cfg.phi_support = {1.0, 0.5};
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = small_config(5, 10);
    cfg.prior_shape = 0.0;
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = small_config(0, 10);
    EXPECT_THROW(cfg.validate(), InvalidParameter);
    cfg = small_config(5, 10);
    cfg.init_phi = 1.25;
    EXPECT_THROW((void)cfg.initial_phi_index(), InvalidParameter);
}

TEST(RunComposite, InsufficientDataAndEmptyTargets) {
    const SpatialDataset d = parametric_dataset(4, 1);
    const ObservedView v(d);
    const PredictionTargets A = targets_from_rows(d, std::vector<std::size_t>{0, 1});
    ModelConfig cfg = small_config(17, 4);
    EXPECT_THROW((void)run_composite(cfg, v, DesignSpec::srs(16, 16), A), InsufficientData);
    cfg.n = 4;
    EXPECT_THROW((void)run_composite(cfg, v, DesignSpec::srs(16, 4), PredictionTargets{}), InvalidParameter);
    EXPECT_THROW((void)run_composite(cfg, v, DesignSpec::srs(16, 5), A), InvalidParameter);
}

TEST(RunComposite, SingleIterationBoundary) {
    const SpatialDataset d = parametric_dataset(4, 2);
    const ObservedView v(d);
    ModelConfig cfg = small_config(6, 1);
    cfg.burn_in = 0;
    const PredictionTargets A = targets_from_rows(d, std::vector<std::size_t>{3, 7, 11});
    const ChainOutput out = run_composite(cfg, v, DesignSpec::srs(16, 6), A);
    EXPECT_EQ(out.draws.size(), 1u);
    EXPECT_EQ(out.predictions.kept(), 1);
    EXPECT_EQ(out.predictions.locations(), 3);
    EXPECT_GE(out.timing.fit_seconds, 0.0);
    EXPECT_GE(out.timing.predict_seconds, 0.0);
}

TEST(RunComposite, DeterministicAndTargetIndependent) {
    const SpatialDataset d = parametric_dataset(5, 3);
    const ObservedView v(d);
    const ModelConfig cfg = small_config(10, 60);
    const DesignSpec design = make_design(v, DesignKind::Stratified, 10);
    const PredictionTargets A = targets_from_rows(d, std::vector<std::size_t>{0, 4, 9});
    const PredictionTargets B = targets_from_rows(d, std::vector<std::size_t>{1, 2, 3, 5, 6, 7, 8});
    const ChainOutput a = run_composite(cfg, v, design, A);
    const ChainOutput a2 = run_composite(cfg, v, design, A);
    const ChainOutput b = run_composite(cfg, v, design, B);
    ASSERT_EQ(a.draws.size(), 60u);
    for (std::size_t g = 0; g < a.draws.size(); ++g) {
        EXPECT_EQ(a.draws[g].beta, a2.draws[g].beta);
        EXPECT_EQ(a.draws[g].tau2, a2.draws[g].tau2);
        EXPECT_EQ(a.draws[g].phi, a2.draws[g].phi);
        EXPECT_EQ(a.draws[g].beta, b.draws[g].beta);
        EXPECT_EQ(a.draws[g].sigma2, b.draws[g].sigma2);
    }
    EXPECT_EQ(a.predictions.latent, a2.predictions.latent);
    EXPECT_EQ(a.predictions.observed(), a2.predictions.observed());
    EXPECT_EQ(a.predictions.kept(), 45);
}

TEST(RunComposite, ReadsOnlyDeltaRows) {
    const SpatialDataset d = parametric_dataset(6, 4);
    const ObservedView v(d);
    CountingSource src(v);
    ModelConfig cfg = small_config(7, 25);
    cfg.K = 3;
    const DesignSpec design = DesignSpec::srs(src.size(), 7);
    const PredictionTargets A = targets_from_rows(d, std::vector<std::size_t>{0});
    (void)run_composite(cfg, src, design, A);
    ASSERT_EQ(src.reads.size(), cfg.G * cfg.n);
    // Replay the design substream: iteration g reads exactly delta_g.
    Rng replay = make_stream(cfg.seed, Stream::Design, cfg.chain);
    for (std::size_t g = 0; g < cfg.G; ++g) {
        const DeltaDraw delta = draw(design, replay);
        const std::vector<std::size_t> got(src.reads.begin() + static_cast<std::ptrdiff_t>(g * cfg.n),
                                           src.reads.begin() + static_cast<std::ptrdiff_t>((g + 1) * cfg.n));
        EXPECT_EQ(got, delta.included) << "iteration " << g;
    }
}

TEST(RunComposite, DrawsFiniteAndPositive) {
    const SpatialDataset d = parametric_dataset(8, 5);
    const ObservedView v(d);
    const ModelConfig cfg = small_config(20, 400);
    const ChainOutput out =
        run_composite(cfg, v, DesignSpec::srs(v.size(), 20), targets_from_rows(d, std::vector<std::size_t>{0, 9}));
    for (const auto& p : out.draws) {
        EXPECT_TRUE(p.beta.allFinite());
        EXPECT_GT(p.tau2, 0.0);
        EXPECT_GT(p.sigma2, 0.0);
        EXPECT_GT(p.sigma_beta2, 0.0);
        EXPECT_NE(std::find(cfg.phi_support.begin(), cfg.phi_support.end(), p.phi), cfg.phi_support.end());
    }
    EXPECT_TRUE(out.predictions.latent.allFinite());
}

TEST(RunComposite, ObservedTargetAddsNuggetNoise) {
    const SpatialDataset d = parametric_dataset(5, 6);
    const ObservedView v(d);
    const ModelConfig cfg = small_config(10, 800);
    const ChainOutput out =
        run_composite(cfg, v, DesignSpec::srs(v.size(), 10), targets_from_rows(d, std::vector<std::size_t>{12}));
    const Matrix noise = out.predictions.observed() - out.predictions.latent;
    const Eigen::ArrayXd z = noise.row(0).transpose().array() / out.predictions.nugget_var.array().sqrt();
    const double D = static_cast<double>(z.size());
    EXPECT_NEAR(z.mean(), 0.0, 4.0 / std::sqrt(D));
    EXPECT_NEAR((z - z.mean()).square().sum() / (D - 1.0), 1.0, 4.0 * std::sqrt(2.0 / D));
}

TEST(RunChains, ParallelEqualsSequential) {
    const SpatialDataset d = parametric_dataset(5, 7);
    const ObservedView v(d);
    const ModelConfig cfg = small_config(8, 30);
    const DesignSpec design = DesignSpec::srs(v.size(), 8);
    const PredictionTargets A = targets_from_rows(d, std::vector<std::size_t>{0, 1});
    const auto seq = run_chains(cfg, v, design, A, 3, 1);
    const auto par = run_chains(cfg, v, design, A, 3, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(seq[c].predictions.latent, par[c].predictions.latent);
        EXPECT_EQ(seq[c].draws.back().beta, par[c].draws.back().beta);
    }
    EXPECT_NE(seq[0].draws.back().tau2, seq[1].draws.back().tau2);
}

TEST(RunComposite, FullDataIntervalsCoverTruth) {
    // n = N on data from the parametric model: the 95% interval of each beta
    // covers its true value in at least 80% of 20 replicates.
    int covered = 0, total = 0;
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
        const SpatialDataset d = parametric_dataset(5, 100 + rep);
        const ObservedView v(d);
        ModelConfig cfg = small_config(v.size(), 1500);
        cfg.seed = 500 + rep;
        const ChainOutput out =
            run_composite(cfg, v, DesignSpec::srs(v.size(), v.size()), targets_from_rows(d, std::vector<std::size_t>{0}));
        for (Eigen::Index k = 0; k < 2; ++k) {
            std::vector<double> b;
            for (std::size_t g = cfg.burn_in; g < cfg.G; ++g) b.push_back(out.draws[g].beta(k));
            std::sort(b.begin(), b.end());
            const double lo = b[static_cast<std::size_t>(0.025 * static_cast<double>(b.size()))];
            const double hi = b[static_cast<std::size_t>(0.975 * static_cast<double>(b.size()))];
            const double truth = k == 0 ? 2.0 : 3.0;
            covered += (lo <= truth && truth <= hi) ? 1 : 0;
            ++total;
        }
    }
    EXPECT_GE(covered, (4 * total) / 5) << covered << " of " << total;
}
