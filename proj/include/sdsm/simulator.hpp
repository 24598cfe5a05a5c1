#pragma once

// Synthetic spatial data: a stationary Gaussian field by spectral
// simulation, an SNR-controlled nugget, and a missing-data mask.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdsm/covariogram.hpp"
#include "sdsm/dataset.hpp"
#include "sdsm/designs.hpp"
#include "sdsm/errors.hpp"
#include "sdsm/rng.hpp"

namespace sdsm {

/// Regular rows x cols lattice over [x_min, x_max] x [y_min, y_max],
/// endpoints included; index = row * cols + col, x varies along a row.
struct Grid {
    std::size_t rows = 100;
    std::size_t cols = 100;
    double x_min = 0.0, x_max = 1.0;
    double y_min = 0.0, y_max = 1.0;

    [[nodiscard]] std::size_t size() const { return rows * cols; }
    [[nodiscard]] double x(std::size_t col) const {
        return cols == 1 ? x_min : x_min + (x_max - x_min) * static_cast<double>(col) / static_cast<double>(cols - 1);
    }
    [[nodiscard]] double y(std::size_t row) const {
        return rows == 1 ? y_min : y_min + (y_max - y_min) * static_cast<double>(row) / static_cast<double>(rows - 1);
    }
    [[nodiscard]] Location location(std::size_t index) const { return {x(index % cols), y(index / cols), 0.0}; }
    [[nodiscard]] std::vector<Location> locations() const {
        std::vector<Location> out(size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = location(i);
        return out;
    }
};

/// Rectangular missing block in grid cells.
struct MissingBlock {
    std::size_t row0 = 0, col0 = 0, rows = 0, cols = 0;
};

enum class CovariateSource { UniformIID, Provided };

struct SimConfig {
    Grid grid{};
    Covariogram covariogram{};
    double phi_true = 3.0;
    double sigma2_true = 1.0;
    std::vector<double> beta_true{2.0, 3.0};
    CovariateSource covariate_source = CovariateSource::UniformIID;
    std::vector<double> provided_covariates;  // N x p row-major, when Provided
    double snr = 3.0;
    std::size_t spectral_components = 5000;  // M
    double missing_fraction = 0.2;
    std::optional<MissingBlock> block;
    std::string strata_scheme = "quadrant";  // none | quadrant | KxK (e.g. "4x4")
    std::uint64_t seed = 1;

    void validate() const {
        if (grid.rows < 1 || grid.cols < 1) throw InvalidParameter("grid must have at least one cell");
        if (!(grid.x_max >= grid.x_min) || !(grid.y_max >= grid.y_min)) throw InvalidParameter("grid bounds inverted");
        if (!(snr > 0.0)) throw InvalidParameter("snr must be positive");
        if (spectral_components < 1) throw InvalidParameter("spectral component count must be >= 1");
        if (!(missing_fraction >= 0.0 && missing_fraction < 1.0))
            throw InvalidParameter("missing fraction must lie in [0, 1)");
        if (!(phi_true > 0.0)) throw InvalidParameter("phi_true must be positive");
        if (sigma2_true < 0.0) throw InvalidParameter("sigma2_true must be non-negative");
        if (beta_true.empty()) throw InvalidParameter("beta_true must have at least one entry");
        if (block && (block->row0 + block->rows > grid.rows || block->col0 + block->cols > grid.cols))
            throw BlockOutOfBounds("missing block exceeds the grid");
        if (covariate_source == CovariateSource::Provided &&
            provided_covariates.size() != grid.size() * beta_true.size())
            throw DimensionMismatch("provided covariates must be N x p");
    }
};

/// Frequencies and phases of a spectral field realization.
struct SpectralDraws {
    std::vector<double> wx, wy, phase;
    double amplitude = 0.0;  // sqrt(2 sigma2 / M)
};

/// Spectral measure of exp(-phi |h|) in R^2: the radial CDF
/// F(r) = 1 - phi / sqrt(phi^2 + r^2) inverts to r = phi sqrt((1-u)^{-2} - 1);
/// the direction is uniform on the circle and the phase uniform on [0, 2 pi).
[[nodiscard]] inline SpectralDraws draw_spectral(const Covariogram& c, double phi, double sigma2, std::size_t M,
                                                 Rng& rng) {
    if (c.kind != CovariogramKind::Exponential)
        throw UnsupportedKernel("spectral simulation supports the exponential covariogram only");
    if (M < 1) throw InvalidParameter("spectral component count must be >= 1");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    SpectralDraws d;
    d.wx.resize(M);
    d.wy.resize(M);
    d.phase.resize(M);
    d.amplitude = std::sqrt(2.0 * sigma2 / static_cast<double>(M));
    for (std::size_t m = 0; m < M; ++m) {
        const double u = uniform01(rng);
        const double q = 1.0 - u;
        const double r = phi * std::sqrt(1.0 / (q * q) - 1.0);
        const double angle = two_pi * uniform01(rng);
        d.wx[m] = r * std::cos(angle);
        d.wy[m] = r * std::sin(angle);
        d.phase[m] = two_pi * uniform01(rng);
    }
    return d;
}

/// nu(s) = sqrt(2 sigma2 / M) sum_m cos(w_m . s + U_m) at arbitrary
/// locations. O(M N) time, O(N + M) memory.
[[nodiscard]] inline std::vector<double> spectral_field(std::span<const Location> locs, const SpectralDraws& d) {
    std::vector<double> out(locs.size(), 0.0);
    for (std::size_t m = 0; m < d.wx.size(); ++m)
        for (std::size_t i = 0; i < locs.size(); ++i)
            out[i] += std::cos(d.wx[m] * locs[i].x + d.wy[m] * locs[i].y + d.phase[m]);
    for (double& v : out) v *= d.amplitude;
    return out;
}

[[nodiscard]] inline std::vector<double> spectral_field(std::span<const Location> locs, const Covariogram& c,
                                                        double phi, double sigma2, std::size_t M, Rng& rng) {
    return spectral_field(locs, draw_spectral(c, phi, sigma2, M, rng));
}

/// Same field on a grid, using cos(a + b) = cos a cos b - sin a sin b so
/// only rows + cols trigonometric calls are needed per component.
[[nodiscard]] inline std::vector<double> spectral_field(const Grid& grid, const SpectralDraws& d) {
    std::vector<double> out(grid.size(), 0.0);
    std::vector<double> cx(grid.cols), sx(grid.cols), cy(grid.rows), sy(grid.rows);
    for (std::size_t m = 0; m < d.wx.size(); ++m) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const double a = d.wx[m] * grid.x(c);
            cx[c] = std::cos(a);
            sx[c] = std::sin(a);
        }
        for (std::size_t r = 0; r < grid.rows; ++r) {
            const double b = d.wy[m] * grid.y(r) + d.phase[m];
            cy[r] = std::cos(b);
            sy[r] = std::sin(b);
        }
        for (std::size_t r = 0; r < grid.rows; ++r) {
            double* row = out.data() + r * grid.cols;
            const double cr = cy[r], sr = sy[r];
            for (std::size_t c = 0; c < grid.cols; ++c) row[c] += cx[c] * cr - sx[c] * sr;
        }
    }
    for (double& v : out) v *= d.amplitude;
    return out;
}

/// Stratum labels on a grid. "quadrant" splits at the midpoints of both
/// axes (labels ordered x-low/y-low, x-low/y-high, x-high/y-low,
/// x-high/y-high); "KxK" cuts rows and columns into K near-equal bands;
/// "none" is a single stratum.
[[nodiscard]] inline std::vector<int> make_strata(const Grid& grid, std::string_view scheme) {
    std::vector<int> labels(grid.size(), 0);
    if (scheme == "none") return labels;
    if (scheme == "quadrant") {
        const double xm = 0.5 * (grid.x_min + grid.x_max), ym = 0.5 * (grid.y_min + grid.y_max);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Location s = grid.location(i);
            labels[i] = (s.x > xm ? 2 : 0) + (s.y > ym ? 1 : 0);
        }
        return labels;
    }
    const auto xpos = scheme.find('x');
    std::size_t k = 0;
    if (xpos != std::string_view::npos && scheme.substr(0, xpos) == scheme.substr(xpos + 1)) {
        for (char ch : scheme.substr(0, xpos)) {
            if (ch < '0' || ch > '9') {
                k = 0;
                break;
            }
            k = k * 10 + static_cast<std::size_t>(ch - '0');
        }
    }
    if (k < 1 || k > grid.rows || k > grid.cols)
        throw InvalidParameter("unknown strata scheme '" + std::string(scheme) + "' (none, quadrant, or KxK)");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::size_t r = i / grid.cols, c = i % grid.cols;
        const std::size_t br = r * k / grid.rows, bc = c * k / grid.cols;
        labels[i] = static_cast<int>(br * k + bc);
    }
    return labels;
}

/// Ground truth kept for scoring.
struct TruthRecord {
    std::vector<double> w;       // X beta + nu
    std::vector<double> nu;
    std::vector<double> epsilon;
    std::vector<double> y_full;  // w + epsilon, including masked rows
    std::vector<double> beta_true;
    double tau2_implied = 0.0;
    double realized_snr = 0.0;
    std::size_t masked = 0;
};

struct SimResult {
    SpatialDataset data;
    TruthRecord truth;
};

namespace detail {

inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace detail

[[nodiscard]] inline SimResult synthesize(const SimConfig& cfg) {
    cfg.validate();
    const Grid& grid = cfg.grid;
    const std::size_t N = grid.size();
    const std::size_t p = cfg.beta_true.size();

    Rng field_rng = make_stream(cfg.seed, Stream::Simulate, 0, 0);
    Rng cov_rng = make_stream(cfg.seed, Stream::Simulate, 0, 1);
    Rng noise_rng = make_stream(cfg.seed, Stream::Simulate, 0, 2);
    Rng mask_rng = make_stream(cfg.seed, Stream::Simulate, 0, 3);

    std::vector<double> X;
    if (cfg.covariate_source == CovariateSource::Provided) {
        X = cfg.provided_covariates;
    } else {
        X.resize(N * p);
        for (double& v : X) v = uniform01(cov_rng);
    }

    SimResult res;
    TruthRecord& t = res.truth;
    t.nu = spectral_field(grid, draw_spectral(cfg.covariogram, cfg.phi_true, cfg.sigma2_true,
                                              cfg.spectral_components, field_rng));
    t.w.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        double xb = 0.0;
        for (std::size_t c = 0; c < p; ++c) xb += X[i * p + c] * cfg.beta_true[c];
        t.w[i] = xb + t.nu[i];
    }
    t.tau2_implied = detail::sample_variance(t.w) / cfg.snr;
    t.epsilon.resize(N);
    std::normal_distribution<double> nd(0.0, std::sqrt(t.tau2_implied));
    for (double& e : t.epsilon) e = nd(noise_rng);
    t.y_full.resize(N);
    for (std::size_t i = 0; i < N; ++i) t.y_full[i] = t.w[i] + t.epsilon[i];
    const double var_eps = detail::sample_variance(t.epsilon);
    t.realized_snr = var_eps > 0.0 ? detail::sample_variance(t.w) / var_eps : 0.0;
    t.beta_true = cfg.beta_true;

    // Mask: the block, plus round(fraction * N) random cells outside it.
    std::vector<char> masked(N, 0);
    std::size_t block_count = 0;
    if (cfg.block) {
        const MissingBlock& b = *cfg.block;
        for (std::size_t r = b.row0; r < b.row0 + b.rows; ++r)
            for (std::size_t c = b.col0; c < b.col0 + b.cols; ++c) masked[r * grid.cols + c] = 1;
        block_count = b.rows * b.cols;
    }
    const auto random_count = static_cast<std::size_t>(std::llround(cfg.missing_fraction * static_cast<double>(N)));
    if (random_count + block_count > N) throw InvalidParameter("missing fraction and block exceed the grid");
    if (random_count > 0) {
        std::vector<std::size_t> outside;
        outside.reserve(N - block_count);
        for (std::size_t i = 0; i < N; ++i)
            if (!masked[i]) outside.push_back(i);
        std::vector<std::size_t> pick;
        detail::floyd_select(outside.size(), random_count, mask_rng, pick);
        for (std::size_t k : pick) masked[outside[k]] = 1;
    }
    t.masked = random_count + block_count;

    const std::vector<int> labels = make_strata(grid, cfg.strata_scheme);
    SpatialDataset& d = res.data;
    d.num_covariates = p;
    d.dim = 2;
    d.locations = grid.locations();
    d.values.resize(N);
    d.observed.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        d.observed[i] = masked[i] ? 0 : 1;
        d.values[i] = masked[i] ? 0.0 : t.y_full[i];
    }
    d.covariates = std::move(X);
    d.strata = labels;
    return res;
}

}  // namespace sdsm
