#pragma once

// Experiment orchestration behind the sdsm command-line tool. Each command
// reads a RunConfig, computes, and writes its outputs under out_dir.

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "sdsm/config.hpp"
#include "sdsm/dataset.hpp"
#include "sdsm/io.hpp"
#include "sdsm/metrics.hpp"
#include "sdsm/properties.hpp"
#include "sdsm/sampler.hpp"
#include "sdsm/simulator.hpp"
#include "sdsm/svg.hpp"

namespace sdsm {

/// Worker cap: SDSM_THREADS when set to a positive integer, else the
/// hardware concurrency.
[[nodiscard]] inline std::size_t worker_threads() {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SDSM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return hw;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOutput {
    SimResult result;
    fs::path data_csv, truth_csv, meta_json;
};

[[nodiscard]] inline SimulateOutput cmd_simulate(const RunConfig& cfg, std::ostream& log) {
    SimConfig sc = cfg.sim;
    if (sc.covariate_source == CovariateSource::Provided) {
        if (cfg.data_path.empty()) throw ConfigError("covariate_source 'provided' needs data_path with cov_ columns");
        const SpatialDataset src = read_dataset(cfg.data_path);
        if (src.size() != sc.grid.size()) throw DimensionMismatch("provided covariates must have one row per grid cell");
        if (src.num_covariates != sc.beta_true.size())
            throw DimensionMismatch("provided covariates must have one column per beta_true entry");
        sc.provided_covariates = src.covariates;
    }
    SimulateOutput out{synthesize(sc), cfg.out_dir / "data.csv", cfg.out_dir / "truth.csv",
                       cfg.out_dir / "truth_meta.json"};
    write_dataset(out.data_csv, out.result.data);
    atomic_write(out.truth_csv, truth_to_csv(out.result.truth, out.result.data));
    atomic_write(out.meta_json, truth_meta_json(out.result.truth));
    log << "rows " << out.result.data.size() << ", observed " << out.result.data.observed_count() << ", masked "
        << out.result.truth.masked << ", realized snr " << out.result.truth.realized_snr << ", tau2 "
        << out.result.truth.tau2_implied << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// fit

/// Unobserved rows, or every row when nothing is missing.
[[nodiscard]] inline PredictionTargets default_targets(const SpatialDataset& data) {
    PredictionTargets t = missing_targets(data);
    if (t.size() > 0) return t;
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return targets_from_rows(data, all);
}

struct FitResult {
    std::vector<ChainOutput> chains;
    PredictionTargets targets;
    DesignSpec design;

    /// Kept draws of every chain side by side, for the requested target.
    [[nodiscard]] Matrix pooled(PredictionTarget t) const {
        Eigen::Index cols = 0;
        for (const auto& c : chains) cols += c.predictions.kept();
        Matrix out(static_cast<Eigen::Index>(targets.size()), cols);
        Eigen::Index at = 0;
        for (const auto& c : chains) {
            const Matrix d = c.predictions.draws(t);
            out.middleCols(at, d.cols()) = d;
            at += d.cols();
        }
        return out;
    }

    [[nodiscard]] double fit_seconds() const {
        double s = 0.0;
        for (const auto& c : chains) s += c.timing.fit_seconds;
        return s;
    }
    [[nodiscard]] double predict_seconds() const {
        double s = 0.0;
        for (const auto& c : chains) s += c.timing.predict_seconds;
        return s;
    }
    [[nodiscard]] double median_iteration_seconds() const {
        std::vector<double> v;
        for (const auto& c : chains) v.insert(v.end(), c.timing.fit_per_iteration.begin(), c.timing.fit_per_iteration.end());
        if (v.empty()) return 0.0;
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    }
};

[[nodiscard]] inline FitResult fit_dataset(const ModelConfig& model, const SpatialDataset& data, DesignKind kind,
                                           Allocation rule, std::size_t chains, std::size_t threads,
                                           std::optional<PredictionTargets> targets = std::nullopt) {
    data.validate();
    const ObservedView view(data);
    if (view.size() == 0) throw InsufficientData("dataset has no observed values");
    if (model.n > view.size())
        throw InsufficientData("subsample size " + std::to_string(model.n) + " exceeds the " +
                               std::to_string(view.size()) + " observed rows");
    FitResult r{{}, targets ? std::move(*targets) : default_targets(data), make_design(view, kind, model.n, rule)};
    r.chains = run_chains(model, view, r.design, r.targets, chains, threads);
    return r;
}

[[nodiscard]] inline SpatialDataset require_dataset(const RunConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("config field 'data_path': required by this command");
    return read_dataset(cfg.data_path);
}

inline std::string chain_csv(const FitResult& r) {
    const std::size_t p = r.chains.empty() || r.chains[0].draws.empty()
                              ? 0
                              : static_cast<std::size_t>(r.chains[0].draws[0].beta.size());
    std::vector<std::string> header{"chain", "g"};
    for (std::size_t k = 1; k <= p; ++k) header.push_back("beta_" + std::to_string(k));
    for (const char* h : {"tau2", "sigma2", "sigma_beta2", "phi"}) header.emplace_back(h);
    CsvBuilder csv(header);
    for (std::size_t c = 0; c < r.chains.size(); ++c) {
        const ChainOutput& ch = r.chains[c];
        for (std::size_t g = ch.burn_in; g < ch.draws.size(); ++g) {
            const ParameterDraw& d = ch.draws[g];
            csv.cell(c).cell(g + 1);
            for (Eigen::Index k = 0; k < d.beta.size(); ++k) csv.cell(d.beta(k));
            csv.cell(d.tau2).cell(d.sigma2).cell(d.sigma_beta2).cell(d.phi);
            csv.end_row();
        }
    }
    return csv.str();
}

inline std::string predictions_csv(const FitResult& r, const Matrix& draws, double alpha) {
    const Intervals iv = central_intervals(draws, alpha);
    const Vector mean = draws.rowwise().mean();
    CsvBuilder csv({"row", "x", "y", "mean", "lower", "upper"});
    for (std::size_t i = 0; i < r.targets.size(); ++i) {
        csv.cell(r.targets.rows.empty() ? i : r.targets.rows[i])
            .cell(r.targets.locations[i].x)
            .cell(r.targets.locations[i].y)
            .cell(mean(static_cast<Eigen::Index>(i)))
            .cell(iv.lower[i])
            .cell(iv.upper[i]);
        csv.end_row();
    }
    return csv.str();
}

inline std::string timing_json(const FitResult& r, const ModelConfig& m, std::size_t N) {
    std::string o = "{\n  \"n\": " + std::to_string(m.n) + ",\n  \"N_observed\": " + std::to_string(N) +
                    ",\n  \"G\": " + std::to_string(m.G) + ",\n  \"K\": " + std::to_string(m.K) +
                    ",\n  \"targets\": " + std::to_string(r.targets.size()) + ",\n  \"fit_seconds\": " +
                    format_number(r.fit_seconds()) + ",\n  \"predict_seconds\": " + format_number(r.predict_seconds()) +
                    ",\n  \"median_iteration_fit_seconds\": " + format_number(r.median_iteration_seconds()) +
                    ",\n  \"chains\": [";
    for (std::size_t c = 0; c < r.chains.size(); ++c) {
        if (c) o += ", ";
        o += "{\"fit_seconds\": " + format_number(r.chains[c].timing.fit_seconds) +
             ", \"predict_seconds\": " + format_number(r.chains[c].timing.predict_seconds) + "}";
    }
    o += "]\n}\n";
    return o;
}

struct FitOutput {
    FitResult result;
    fs::path chain_csv, predictions_csv, timing_json;
};

[[nodiscard]] inline FitOutput cmd_fit(const RunConfig& cfg, std::ostream& log) {
    const SpatialDataset data = require_dataset(cfg);
    FitOutput out{fit_dataset(cfg.model, data, cfg.design, cfg.allocation, cfg.chains, worker_threads()),
                  cfg.out_dir / "chain.csv", cfg.out_dir / "predictions.csv", cfg.out_dir / "timing.json"};
    atomic_write(out.chain_csv, chain_csv(out.result));
    atomic_write(out.predictions_csv,
                 predictions_csv(out.result, out.result.pooled(cfg.model.prediction_target), cfg.alpha));
    atomic_write(out.timing_json, timing_json(out.result, cfg.model, data.observed_count()));
    log << "fit " << out.result.chains.size() << " chain(s), n " << cfg.model.n << ", G " << cfg.model.G
        << ", fit " << out.result.fit_seconds() << " s, predict " << out.result.predict_seconds() << " s\n";
    return out;
}

// ---------------------------------------------------------------------------
// evaluate

/// Truth values aligned with the prediction targets.
struct AlignedTruth {
    std::vector<double> latent;    // w
    std::vector<double> observed;  // w + epsilon
};

[[nodiscard]] inline AlignedTruth align_truth(const TruthTable& truth, const PredictionTargets& targets) {
    AlignedTruth a;
    for (std::size_t row : targets.rows) {
        if (row >= truth.size()) throw DimensionMismatch("truth record is shorter than the dataset");
        a.latent.push_back(truth.w[row]);
        a.observed.push_back(truth.y_full[row]);
    }
    return a;
}

/// Point scores against the configured target; interval and CRPS scores on
/// the observed target (latent draws plus nugget noise) against w + epsilon.
[[nodiscard]] inline ScoreReport evaluate_fit(const FitResult& r, const AlignedTruth& truth, PredictionTarget point,
                                              double alpha) {
    const Matrix obs = r.pooled(PredictionTarget::Observed);
    ScoreReport rep = score(obs, truth.observed, truth.observed, alpha);
    if (point == PredictionTarget::Latent) {
        const Matrix lat = r.pooled(PredictionTarget::Latent);
        const Vector m = lat.rowwise().mean();
        const std::span<const double> ms(m.data(), static_cast<std::size_t>(m.size()));
        rep.mae = mae(truth.latent, ms);
        rep.rmse = rmse(truth.latent, ms);
    }
    return rep;
}

inline void add_score_rows(CsvBuilder& csv, std::string_view design, std::size_t n, const ScoreReport& s) {
    for (const auto& [name, v] : std::vector<std::pair<const char*, double>>{
             {"mae", s.mae}, {"rmse", s.rmse}, {"crps", s.crps}, {"interval_score", s.interval_score},
             {"coverage", s.coverage}}) {
        csv.cell(design).cell(n).cell(name).cell(v);
        csv.end_row();
    }
}

struct EvaluateOutput {
    FitResult result;
    ScoreReport scores;
    fs::path scores_csv;
};

[[nodiscard]] inline EvaluateOutput cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
    if (cfg.truth_path.empty()) throw ConfigError("config field 'truth_path': required by evaluate");
    const SpatialDataset data = require_dataset(cfg);
    const TruthTable truth = read_truth(cfg.truth_path);
    if (truth.size() != data.size()) throw DimensionMismatch("truth record and dataset differ in row count");
    EvaluateOutput out{fit_dataset(cfg.model, data, cfg.design, cfg.allocation, cfg.chains, worker_threads()), {},
                       cfg.out_dir / "scores.csv"};
    out.scores = evaluate_fit(out.result, align_truth(truth, out.result.targets), cfg.model.prediction_target,
                              cfg.alpha);
    CsvBuilder csv({"design", "n", "metric", "value"});
    add_score_rows(csv, to_string(cfg.design), cfg.model.n, out.scores);
    atomic_write(out.scores_csv, csv.str());
    log << "n_eval " << out.scores.n_eval << ", rmse " << out.scores.rmse << ", mae " << out.scores.mae << ", crps "
        << out.scores.crps << ", int " << out.scores.interval_score << ", cvg " << out.scores.coverage << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepPoint {
    DesignKind design = DesignKind::SRS;
    std::size_t n = 0;
    ScoreReport scores;
    double fit_seconds = 0.0;
    double predict_seconds = 0.0;
    double median_iteration_seconds = 0.0;
    Vector w_hat;  // posterior mean at the targets, configured target
};

struct SweepResult {
    std::vector<SweepPoint> points;  // design-major, ascending n
    std::vector<std::vector<double>> gaps;  // per design, one per adjacent n pair
    PredictionTargets targets;
    AlignedTruth truth;
};

/// Fits every n in `n_list` under every design in `designs` on one dataset
/// and scores each fit against the truth record.
[[nodiscard]] inline SweepResult run_sweep(const ModelConfig& base, const SpatialDataset& data, const TruthTable& truth,
                                           std::span<const DesignKind> designs, std::span<const std::size_t> n_list,
                                           Allocation rule, double alpha, std::size_t chains, std::size_t threads,
                                           std::ostream* log = nullptr) {
    if (n_list.empty()) throw ConfigError("config field 'n_list': required by sweep");
    SweepResult out;
    out.targets = default_targets(data);
    out.truth = align_truth(truth, out.targets);
    for (DesignKind kind : designs) {
        std::vector<Vector> w_hats;
        for (std::size_t n : n_list) {
            ModelConfig m = base;
            m.n = n;
            const FitResult r = fit_dataset(m, data, kind, rule, chains, threads, out.targets);
            SweepPoint pt;
            pt.design = kind;
            pt.n = n;
            pt.scores = evaluate_fit(r, out.truth, m.prediction_target, alpha);
            pt.fit_seconds = r.fit_seconds();
            pt.predict_seconds = r.predict_seconds();
            pt.median_iteration_seconds = r.median_iteration_seconds();
            pt.w_hat = r.pooled(m.prediction_target).rowwise().mean();
            w_hats.push_back(pt.w_hat);
            if (log)
                *log << to_string(kind) << " n " << n << ": rmse " << pt.scores.rmse << ", fit " << pt.fit_seconds
                     << " s\n";
            out.points.push_back(std::move(pt));
        }
        out.gaps.push_back(pairwise_prediction_gap(w_hats));
    }
    return out;
}

struct SweepOutput {
    SweepResult result;
    fs::path results_csv;
};

[[nodiscard]] inline SweepOutput cmd_sweep(const RunConfig& cfg, std::ostream& log,
                                           std::vector<DesignKind> designs = {}) {
    if (designs.empty()) designs = cfg.sweep_designs;
    if (designs.empty()) designs.push_back(cfg.design);
    const SpatialDataset data = require_dataset(cfg);
    if (cfg.truth_path.empty()) throw ConfigError("config field 'truth_path': required by sweep");
    const TruthTable truth = read_truth(cfg.truth_path);
    if (truth.size() != data.size()) throw DimensionMismatch("truth record and dataset differ in row count");
    SweepOutput out{run_sweep(cfg.model, data, truth, designs, cfg.n_list, cfg.allocation, cfg.alpha, cfg.chains,
                              worker_threads(), &log),
                    cfg.out_dir / "sweep.csv"};
    const SweepResult& r = out.result;

    CsvBuilder csv({"design", "n", "metric", "value"});
    std::size_t at = 0;
    for (std::size_t d = 0; d < designs.size(); ++d) {
        for (std::size_t k = 0; k < cfg.n_list.size(); ++k, ++at) {
            const SweepPoint& pt = r.points[at];
            const auto name = to_string(pt.design);
            add_score_rows(csv, name, pt.n, pt.scores);
            csv.cell(name).cell(pt.n).cell("fit_seconds").cell(pt.fit_seconds);
            csv.end_row();
            csv.cell(name).cell(pt.n).cell("predict_seconds").cell(pt.predict_seconds);
            csv.end_row();
            csv.cell(name).cell(pt.n).cell("median_iteration_seconds").cell(pt.median_iteration_seconds);
            csv.end_row();
            if (k > 0) {
                csv.cell(name).cell(pt.n).cell("gap_from_previous").cell(r.gaps[d][k - 1]);
                csv.end_row();
            }
        }
    }
    atomic_write(out.results_csv, csv.str());

    svg::Plot rmse_plot{"RMSE against subsample size", "n", "RMSE", {}};
    svg::Plot time_plot{"Fit and prediction time", "n", "seconds", {}};
    svg::Plot gap_plot{"Squared change of the prediction between adjacent n", "n", "gap", {}};
    at = 0;
    for (std::size_t d = 0; d < designs.size(); ++d) {
        const std::string name(to_string(designs[d]));
        svg::Series rm{name, {}, {}}, fit{name + " fit", {}, {}}, pred{name + " predict", {}, {}}, gap{name, {}, {}};
        for (std::size_t k = 0; k < cfg.n_list.size(); ++k, ++at) {
            const SweepPoint& pt = r.points[at];
            const double n = static_cast<double>(pt.n);
            rm.x.push_back(n);
            rm.y.push_back(pt.scores.rmse);
            fit.x.push_back(n);
            fit.y.push_back(pt.fit_seconds);
            pred.x.push_back(n);
            pred.y.push_back(pt.predict_seconds);
            if (k > 0) {
                gap.x.push_back(n);
                gap.y.push_back(r.gaps[d][k - 1]);
            }
        }
        rmse_plot.series.push_back(rm);
        time_plot.series.push_back(fit);
        time_plot.series.push_back(pred);
        gap_plot.series.push_back(gap);
    }
    svg::write(cfg.out_dir / "rmse_vs_n.svg", rmse_plot);
    svg::write(cfg.out_dir / "time_vs_n.svg", time_plot);
    svg::write(cfg.out_dir / "gap_vs_n.svg", gap_plot);

    // Prediction against truth at the largest n of the first design.
    const SweepPoint& last = r.points[cfg.n_list.size() - 1];
    const auto& point_truth =
        cfg.model.prediction_target == PredictionTarget::Latent ? r.truth.latent : r.truth.observed;
    svg::Plot scatter{"Prediction against truth, n = " + std::to_string(last.n), "truth", "prediction", {}};
    scatter.lines = false;
    scatter.identity_line = true;
    scatter.series.push_back({std::string(to_string(last.design)),
                              point_truth,
                              std::vector<double>(last.w_hat.data(), last.w_hat.data() + last.w_hat.size())});
    svg::write(cfg.out_dir / "prediction_vs_truth.svg", scatter);
    return out;
}

// ---------------------------------------------------------------------------
// properties

struct PropertiesOutput {
    std::vector<SpatialProfile> profiles;  // SRS, stratified
    fs::path moments_csv, variogram_csv, profile_csv;
};

[[nodiscard]] inline TrueModelSpec true_model_from(const TrueModelConfig& c, std::size_t N) {
    TrueModelSpec tm;
    tm.mean.assign(N, c.mean);
    tm.variance = c.variance;
    tm.nugget = c.nugget;
    tm.family = c.family == "spherical" ? TrueFamily::Spherical : TrueFamily::Exponential;
    tm.scale = c.scale;
    tm.validate(N);
    return tm;
}

[[nodiscard]] inline PropertiesOutput cmd_properties(const RunConfig& cfg, std::ostream& log) {
    // Locations and covariates from the simulator grid; no field draw is needed.
    const Grid& grid = cfg.sim.grid;
    const std::size_t N = grid.size();
    const std::vector<Location> locs = grid.locations();
    const std::size_t p = cfg.sim.beta_true.size();
    Matrix X(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p));
    Rng cov_rng = make_stream(cfg.sim.seed, Stream::Simulate, 0, 1);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index c = 0; c < X.cols(); ++c) X(i, c) = uniform01(cov_rng);

    Theta th;
    const std::vector<double>& beta = cfg.theta_beta.empty() ? cfg.sim.beta_true : cfg.theta_beta;
    if (beta.size() != p) throw ConfigError("config field 'theta_beta': length must match beta_true");
    th.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(p));
    th.tau2 = cfg.theta_tau2;
    th.sigma2 = cfg.theta_sigma2;
    th.phi = cfg.theta_phi;
    const TrueModelSpec tm = true_model_from(cfg.true_model, N);
    const std::size_t n = cfg.model.n;
    if (n > N) throw InvalidAllocation("n exceeds the grid size");

    const std::vector<int> labels = make_strata(grid, cfg.sim.strata_scheme);
    std::vector<int> dense = labels;
    int R = 0;
    for (int l : labels) R = std::max(R, l + 1);
    std::vector<std::size_t> sizes(static_cast<std::size_t>(R), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    for (std::size_t s : sizes)
        if (s == 0) throw InvalidParameter("strata scheme leaves an empty stratum on this grid");

    CsvBuilder mcsv({"design", "n", "index", "x", "y", "mean", "variance"});
    const Covariogram cv = cfg.model.covariogram;
    for (const std::size_t nn : {std::size_t{0}, n, N}) {
        const MomentSummary srs = srs_moments(th, tm, X, locs, N, nn, cv);
        const DesignSpec sspec =
            DesignSpec::stratified(dense, DesignSpec::allocate(sizes, nn, cfg.allocation));
        const MomentSummary st = strat_moments(th, tm, X, locs, sspec, cv);
        for (std::size_t i = 0; i < N; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            mcsv.cell("srs").cell(nn).cell(i).cell(locs[i].x).cell(locs[i].y).cell(srs.mean(ii)).cell(srs.variance(ii));
            mcsv.end_row();
        }
        for (std::size_t i = 0; i < N; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            mcsv.cell("stratified").cell(nn).cell(i).cell(locs[i].x).cell(locs[i].y).cell(st.mean(ii)).cell(
                st.variance(ii));
            mcsv.end_row();
        }
    }

    std::vector<double> lags = cfg.lags;
    if (lags.empty()) {
        const double span = std::hypot(grid.x_max - grid.x_min, grid.y_max - grid.y_min);
        for (std::size_t k = 0; k < defaults::lag_points; ++k)
            lags.push_back(span * static_cast<double>(k) / static_cast<double>(defaults::lag_points - 1));
    }
    const DesignSpec sspec = DesignSpec::stratified(dense, DesignSpec::allocate(sizes, n, cfg.allocation));
    const PairDesign pairs[] = {srs_pair(N, n), strata_pair(sspec, 0, 0), strata_pair(sspec, 0, std::min<std::size_t>(1, static_cast<std::size_t>(R) - 1))};
    const char* pair_names[] = {"srs", "stratified_within", "stratified_across"};
    PropertiesOutput out;
    out.moments_csv = cfg.out_dir / "moments.csv";
    out.variogram_csv = cfg.out_dir / "variogram.csv";
    out.profile_csv = cfg.out_dir / "profile.csv";
    CsvBuilder vcsv({"lag", "srs", "stratified_within", "stratified_across"});
    CsvBuilder pcsv({"design", "sill", "nugget", "effective_range"});
    svg::Plot plot{"Variogram of the de-trended process, n = " + std::to_string(n), "lag", "2 gamma", {}};
    for (std::size_t k = 0; k < 3; ++k) {
        out.profiles.push_back(sill_nugget_range(pairs[k], th, tm, cv, cfg.range_drop, lags));
        const SpatialProfile& pr = out.profiles.back();
        pcsv.cell(pair_names[k]).cell(pr.sill).cell(pr.nugget).cell(pr.effective_range);
        pcsv.end_row();
        plot.series.push_back({pair_names[k], lags, pr.variogram});
    }
    for (std::size_t i = 0; i < lags.size(); ++i) {
        vcsv.cell(lags[i]);
        for (std::size_t k = 0; k < 3; ++k) vcsv.cell(out.profiles[k].variogram[i]);
        vcsv.end_row();
    }
    atomic_write(out.moments_csv, mcsv.str());
    atomic_write(out.variogram_csv, vcsv.str());
    atomic_write(out.profile_csv, pcsv.str());
    svg::write(cfg.out_dir / "variogram.svg", plot);
    log << "N " << N << ", n " << n << ", srs sill " << out.profiles[0].sill << ", nugget " << out.profiles[0].nugget
        << ", range " << out.profiles[0].effective_range << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseOutput {
    std::vector<KDiagnostic> replicates;
    fs::path table_csv;
};

[[nodiscard]] inline DiagnoseOutput cmd_diagnose(const RunConfig& cfg, std::ostream& log) {
    if (cfg.k_list.empty()) throw ConfigError("config field 'k_list': required by diagnose");
    const SpatialDataset data = require_dataset(cfg);
    const ObservedView view(data);
    if (cfg.model.n > view.size()) throw InsufficientData("subsample size exceeds the observed rows");
    const DesignSpec design = make_design(view, cfg.design, cfg.model.n, cfg.allocation);
    // One target keeps the prediction cost negligible; the diagnostic reads parameters only.
    PredictionTargets one = targets_from_rows(data, std::vector<std::size_t>{0});
    const std::size_t threads = worker_threads();

    DiagnoseOutput out;
    out.table_csv = cfg.out_dir / "ks_table.csv";
    CsvBuilder csv({"replicate", "parameter", "K", "ks", "ess_reference", "ess_other", "critical_1pct", "below"});
    for (std::size_t rep = 0; rep < cfg.diagnose_replicates; ++rep) {
        std::vector<ChainOutput> chains(cfg.k_list.size());
        std::vector<std::exception_ptr> errors(chains.size());
        auto work = [&](std::size_t k) {
            try {
                ModelConfig m = cfg.model;
                m.K = cfg.k_list[k];
                m.seed = cfg.model.seed + rep;
                m.chain = k;
                chains[k] = run_composite(m, view, design, one);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        {
            std::atomic<std::size_t> next{0};
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < std::min(threads, chains.size()); ++t)
                pool.emplace_back([&] {
                    for (std::size_t k = next++; k < chains.size(); k = next++) work(k);
                });
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        out.replicates.push_back(k_consistency_diagnostic(chains, cfg.k_list, 0.01));
        for (const KsRow& r : out.replicates.back().rows) {
            csv.cell(rep).cell(r.parameter).cell(r.K).cell(r.ks).cell(r.ess_reference).cell(r.ess_other).cell(
                r.critical).cell(r.below_critical ? "1" : "0");
            csv.end_row();
        }
    }
    atomic_write(out.table_csv, csv.str());

    // Densities of the first replicate, one plot per parameter.
    const KDiagnostic& first = out.replicates.front();
    std::vector<std::string> seen;
    for (const DensityCurve& d : first.densities) {
        if (std::find(seen.begin(), seen.end(), d.parameter) != seen.end()) continue;
        seen.push_back(d.parameter);
        svg::Plot plot{"Posterior density of " + d.parameter + " by K", d.parameter, "density", {}};
        plot.markers = false;
        for (const DensityCurve& e : first.densities)
            if (e.parameter == d.parameter) plot.series.push_back({"K = " + std::to_string(e.K), e.grid, e.density});
        svg::write(cfg.out_dir / ("density_" + d.parameter + ".svg"), plot);
    }
    std::size_t below = 0, total = 0;
    for (const auto& r : out.replicates)
        for (const KsRow& row : r.rows) {
            ++total;
            below += row.below_critical ? 1 : 0;
        }
    log << "ks rows below the 1% critical value: " << below << " of " << total << "\n";
    return out;
}

}  // namespace sdsm
