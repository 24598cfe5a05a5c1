#pragma once

// Forecast scores over evaluation locations and chain diagnostics.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sdsm/errors.hpp"
#include "sdsm/linalg.hpp"
#include "sdsm/sampler.hpp"

namespace sdsm {

namespace detail {

inline void check_pair(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw DimensionMismatch(std::string(what) + ": length mismatch");
    if (a == 0) throw DimensionMismatch(std::string(what) + ": empty input");
}

}  // namespace detail

[[nodiscard]] inline double rmse(std::span<const double> truth, std::span<const double> pred) {
    detail::check_pair(truth.size(), pred.size(), "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    return std::sqrt(s / static_cast<double>(truth.size()));
}

[[nodiscard]] inline double mae(std::span<const double> truth, std::span<const double> pred) {
    detail::check_pair(truth.size(), pred.size(), "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
    return s / static_cast<double>(truth.size());
}

/// Empirical CRPS of one predictive sample: mean|X - y| - mean|X - X'| / 2,
/// the second mean over all S^2 ordered pairs (evaluated exactly from the
/// order statistics).
[[nodiscard]] inline double crps_sample(std::vector<double> samples, double y) {
    const std::size_t S = samples.size();
    if (S < 2) throw TooFewSamples("crps: need at least two predictive samples");
    double abs_err = 0.0;
    for (double x : samples) abs_err += std::abs(x - y);
    std::sort(samples.begin(), samples.end());
    double pair_sum = 0.0;
    const double Sd = static_cast<double>(S);
    for (std::size_t i = 0; i < S; ++i) pair_sum += (2.0 * static_cast<double>(i) - Sd + 1.0) * samples[i];
    return abs_err / Sd - pair_sum / (Sd * Sd);
}

/// Mean CRPS over locations; `samples` is locations x draws.
[[nodiscard]] inline double crps(const Matrix& samples, std::span<const double> truth) {
    detail::check_pair(static_cast<std::size_t>(samples.rows()), truth.size(), "crps");
    double s = 0.0;
    std::vector<double> row(static_cast<std::size_t>(samples.cols()));
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index c = 0; c < samples.cols(); ++c) row[static_cast<std::size_t>(c)] = samples(i, c);
        s += crps_sample(row, truth[static_cast<std::size_t>(i)]);
    }
    return s / static_cast<double>(truth.size());
}

/// Quantile by linear interpolation between order statistics of a sorted sample.
[[nodiscard]] inline double quantile_sorted(std::span<const double> sorted, double prob) {
    if (sorted.empty()) throw TooFewSamples("quantile: empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

struct Intervals {
    std::vector<double> lower;
    std::vector<double> upper;
};

/// Central (alpha/2, 1 - alpha/2) intervals per location of `samples` (locations x draws).
[[nodiscard]] inline Intervals central_intervals(const Matrix& samples, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("alpha must lie in (0, 1)");
    Intervals out;
    out.lower.resize(static_cast<std::size_t>(samples.rows()));
    out.upper.resize(out.lower.size());
    std::vector<double> row(static_cast<std::size_t>(samples.cols()));
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index c = 0; c < samples.cols(); ++c) row[static_cast<std::size_t>(c)] = samples(i, c);
        std::sort(row.begin(), row.end());
        out.lower[static_cast<std::size_t>(i)] = quantile_sorted(row, alpha / 2.0);
        out.upper[static_cast<std::size_t>(i)] = quantile_sorted(row, 1.0 - alpha / 2.0);
    }
    return out;
}

/// Mean interval score (u - l) + (2/alpha)(l - y)[y < l] + (2/alpha)(y - u)[y > u].
[[nodiscard]] inline double interval_score(std::span<const double> lower, std::span<const double> upper,
                                           std::span<const double> truth, double alpha) {
    detail::check_pair(lower.size(), truth.size(), "interval_score");
    detail::check_pair(upper.size(), truth.size(), "interval_score");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("alpha must lie in (0, 1)");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double l = lower[i], u = upper[i], y = truth[i];
        double v = u - l;
        if (y < l) v += 2.0 / alpha * (l - y);
        if (y > u) v += 2.0 / alpha * (y - u);
        s += v;
    }
    return s / static_cast<double>(truth.size());
}

[[nodiscard]] inline double coverage(std::span<const double> lower, std::span<const double> upper,
                                     std::span<const double> truth) {
    detail::check_pair(lower.size(), truth.size(), "coverage");
    detail::check_pair(upper.size(), truth.size(), "coverage");
    std::size_t inside = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] >= lower[i] && truth[i] <= upper[i]) ++inside;
    return static_cast<double>(inside) / static_cast<double>(truth.size());
}

struct ScoreReport {
    double mae = 0.0;
    double rmse = 0.0;
    double crps = 0.0;
    double interval_score = 0.0;
    double coverage = 0.0;
    double alpha = 0.05;
    std::size_t n_eval = 0;
};

/// MAE/RMSE of the posterior mean against `point_truth`; CRPS, INT and CVG
/// of `samples` against `dist_truth`. The caller picks both targets.
[[nodiscard]] inline ScoreReport score(const Matrix& samples, std::span<const double> point_truth,
                                       std::span<const double> dist_truth, double alpha = 0.05) {
    const Vector mean = samples.rowwise().mean();
    const std::span<const double> m(mean.data(), static_cast<std::size_t>(mean.size()));
    const Intervals iv = central_intervals(samples, alpha);
    ScoreReport r;
    r.alpha = alpha;
    r.n_eval = point_truth.size();
    r.mae = mae(point_truth, m);
    r.rmse = rmse(point_truth, m);
    r.crps = crps(samples, dist_truth);
    r.interval_score = interval_score(iv.lower, iv.upper, dist_truth, alpha);
    r.coverage = coverage(iv.lower, iv.upper, dist_truth);
    return r;
}

/// (w_n - w_{n+1})'(w_n - w_{n+1}) for each adjacent pair in the sequence.
[[nodiscard]] inline std::vector<double> pairwise_prediction_gap(std::span<const Vector> w_hat) {
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < w_hat.size(); ++k) {
        if (w_hat[k].size() != w_hat[k + 1].size()) throw DimensionMismatch("pairwise gap: length mismatch");
        out.push_back((w_hat[k] - w_hat[k + 1]).squaredNorm());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Chain diagnostics.

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
[[nodiscard]] inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw TooFewSamples("ks: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == v) ++i;
        while (j < b.size() && b[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

/// Effective sample size of an autocorrelated chain (Geyer's initial
/// monotone positive sequence).
[[nodiscard]] inline double effective_sample_size(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 4) return static_cast<double>(n);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    auto acov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
        return s / static_cast<double>(n);
    };
    const double c0 = acov(0);
    if (!(c0 > 0.0)) return static_cast<double>(n);
    double sum = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if (pair <= 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        sum += pair;
    }
    const double tau = std::max(2.0 * sum - 1.0, 1.0);
    return static_cast<double>(n) / tau;
}

/// Batch-means Monte-Carlo standard error of the mean of a chain.
[[nodiscard]] inline double batch_means_se(std::span<const double> x, std::size_t batches = 0) {
    const std::size_t n = x.size();
    if (batches == 0) batches = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    batches = std::clamp<std::size_t>(batches, 2, n);
    const std::size_t len = n / batches;
    std::vector<double> means(batches, 0.0);
    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t t = b * len; t < (b + 1) * len; ++t) means[b] += x[t];
        means[b] /= static_cast<double>(len);
    }
    double m = 0.0;
    for (double v : means) m += v;
    m /= static_cast<double>(batches);
    double s = 0.0;
    for (double v : means) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(batches - 1) / static_cast<double>(batches));
}

/// Asymptotic two-sample KS critical value at level alpha for sample sizes m, n.
[[nodiscard]] inline double ks_critical_value(double alpha, double m, double n) {
    return std::sqrt(-0.5 * std::log(alpha / 2.0)) * std::sqrt((m + n) / (m * n));
}

/// Names of the monitored parameters, in column order of `parameter_columns`.
[[nodiscard]] inline std::vector<std::string> parameter_names(std::size_t p) {
    std::vector<std::string> out;
    for (std::size_t k = 1; k <= p; ++k) out.push_back("beta_" + std::to_string(k));
    out.emplace_back("tau2");
    out.emplace_back("sigma2");
    return out;
}

/// Kept draws (g >= burn_in) of beta_1..beta_p, tau2, sigma2 as columns.
[[nodiscard]] inline std::vector<std::vector<double>> parameter_columns(const ChainOutput& chain) {
    const std::size_t p = chain.draws.empty() ? 0 : static_cast<std::size_t>(chain.draws.front().beta.size());
    std::vector<std::vector<double>> cols(p + 2);
    for (std::size_t g = chain.burn_in; g < chain.draws.size(); ++g) {
        const ParameterDraw& d = chain.draws[g];
        for (std::size_t k = 0; k < p; ++k) cols[k].push_back(d.beta(static_cast<Eigen::Index>(k)));
        cols[p].push_back(d.tau2);
        cols[p + 1].push_back(d.sigma2);
    }
    return cols;
}

struct KsRow {
    std::string parameter;
    std::size_t K = 1;
    double ks = 0.0;
    double ess_reference = 0.0;
    double ess_other = 0.0;
    double critical = 0.0;  // at level `alpha`, effective sample sizes
    bool below_critical = true;
};

struct DensityCurve {
    std::string parameter;
    std::size_t K = 1;
    std::vector<double> grid;
    std::vector<double> density;
};

struct KDiagnostic {
    std::vector<KsRow> rows;
    std::vector<DensityCurve> densities;
};

/// Gaussian kernel density with Silverman's bandwidth on `grid`.
[[nodiscard]] inline std::vector<double> kernel_density(std::span<const double> x, std::span<const double> grid) {
    const double n = static_cast<double>(x.size());
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    const double sd = std::sqrt(s / std::max(1.0, n - 1.0));
    const double bw = std::max(1.06 * sd * std::pow(n, -0.2), 1e-12);
    std::vector<double> out(grid.size(), 0.0);
    const double norm = 1.0 / (n * bw * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (double v : x) {
            const double u = (grid[g] - v) / bw;
            acc += std::exp(-0.5 * u * u);
        }
        out[g] = acc * norm;
    }
    return out;
}

/// Compares the kept marginals of the K = 1 chain with each other chain.
/// `chains[k]` ran with inner length `ks[k]`; ks[0] must be 1.
[[nodiscard]] inline KDiagnostic k_consistency_diagnostic(std::span<const ChainOutput> chains,
                                                          std::span<const std::size_t> ks, double alpha = 0.01,
                                                          std::size_t grid_points = 128) {
    if (chains.empty() || chains.size() != ks.size()) throw InvalidParameter("diagnostic: one chain per K");
    if (ks[0] != 1) throw InvalidParameter("diagnostic: the first chain must use K = 1");
    std::vector<std::vector<std::vector<double>>> cols;
    for (const ChainOutput& c : chains) cols.push_back(parameter_columns(c));
    const std::size_t P = cols[0].size();
    const std::size_t p = P - 2;
    const auto names = parameter_names(p);

    KDiagnostic out;
    for (std::size_t q = 0; q < P; ++q) {
        const auto& ref = cols[0][q];
        const double ess_ref = effective_sample_size(ref);
        double lo = *std::min_element(ref.begin(), ref.end()), hi = *std::max_element(ref.begin(), ref.end());
        for (std::size_t c = 1; c < chains.size(); ++c) {
            const auto& other = cols[c][q];
            const double ess_o = effective_sample_size(other);
            KsRow row;
            row.parameter = names[q];
            row.K = ks[c];
            row.ks = ks_statistic(ref, other);
            row.ess_reference = ess_ref;
            row.ess_other = ess_o;
            row.critical = ks_critical_value(alpha, ess_ref, ess_o);
            row.below_critical = row.ks < row.critical;
            out.rows.push_back(row);
            lo = std::min(lo, *std::min_element(other.begin(), other.end()));
            hi = std::max(hi, *std::max_element(other.begin(), other.end()));
        }
        std::vector<double> grid(grid_points);
        for (std::size_t g = 0; g < grid_points; ++g)
            grid[g] = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_points - 1);
        for (std::size_t c = 0; c < chains.size(); ++c)
            out.densities.push_back({names[q], ks[c], grid, kernel_density(cols[c][q], grid)});
    }
    if (chains.size() == 1) {
        for (std::size_t q = 0; q < P; ++q) {
            const double e = effective_sample_size(cols[0][q]);
            out.rows.push_back({names[q], 1, 0.0, e, e, ks_critical_value(alpha, e, e), true});
        }
    }
    return out;
}

}  // namespace sdsm
