#pragma once

// Run configuration: one flat JSON object. Every key is optional, every
// key not listed in the schema is rejected, and every default has a name.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sdsm/designs.hpp"
#include "sdsm/errors.hpp"
#include "sdsm/sampler.hpp"
#include "sdsm/simulator.hpp"

namespace sdsm {

namespace defaults {
inline constexpr double prior_shape = 1.0;
inline constexpr double prior_scale = 1.0;
inline constexpr std::size_t inner_scans = 1;  // K
inline constexpr double alpha = 0.05;
inline constexpr double snr = 3.0;
inline constexpr std::size_t spectral_components = 5000;
inline constexpr double missing_fraction = 0.2;
inline constexpr std::size_t grid_side = 100;
inline constexpr double phi_true = 3.0;
inline constexpr double sigma2_true = 1.0;
inline constexpr std::size_t lag_points = 41;
inline constexpr double range_drop = 0.05;
inline std::vector<double> phi_support() { return default_phi_support(); }
inline std::vector<double> beta_true() { return {2.0, 3.0}; }
}  // namespace defaults

/// Properties-command inputs beyond theta: the Gaussian true-model surrogate.
struct TrueModelConfig {
    double mean = 0.0;  // constant mu~
    double variance = 1.0;
    double nugget = 0.0;
    std::string family = "exponential";
    double scale = 3.0;
};

struct RunConfig {
    // Paths.
    std::filesystem::path data_path;
    std::filesystem::path truth_path;
    std::filesystem::path out_dir = "out";

    SimConfig sim{};
    ModelConfig model{};
    DesignKind design = DesignKind::SRS;
    Allocation allocation = Allocation::Equal;

    std::vector<std::size_t> n_list;
    std::vector<DesignKind> sweep_designs;  // empty: the single `design`
    std::vector<std::size_t> k_list;
    double alpha = defaults::alpha;
    std::size_t chains = 1;
    std::size_t diagnose_replicates = 1;

    // Properties command.
    std::vector<double> theta_beta;
    double theta_tau2 = 1.0;
    double theta_sigma2 = 1.0;
    double theta_phi = 3.0;
    TrueModelConfig true_model{};
    std::vector<double> lags;
    double range_drop = defaults::range_drop;

    // Only set when the model seed came from the file or the command line.
    bool seed_given = false;
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void field_error(const std::string& key, const std::string& why) {
    throw ConfigError("config field '" + key + "': " + why);
}

inline double get_real(const json& v, const std::string& key) {
    if (!v.is_number()) field_error(key, "expected a number");
    return v.get<double>();
}

inline std::size_t get_count(const json& v, const std::string& key) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        field_error(key, "expected a non-negative integer");
    return v.get<std::size_t>();
}

inline std::uint64_t get_u64(const json& v, const std::string& key) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        field_error(key, "expected an unsigned 64-bit integer");
    return v.get<std::uint64_t>();
}

inline std::string get_string(const json& v, const std::string& key) {
    if (!v.is_string()) field_error(key, "expected a string");
    return v.get<std::string>();
}

inline std::vector<double> get_reals(const json& v, const std::string& key) {
    if (!v.is_array()) field_error(key, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) out.push_back(get_real(v[k], key + "[" + std::to_string(k) + "]"));
    return out;
}

inline std::vector<std::size_t> get_counts(const json& v, const std::string& key) {
    if (!v.is_array()) field_error(key, "expected an array of non-negative integers");
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < v.size(); ++k) out.push_back(get_count(v[k], key + "[" + std::to_string(k) + "]"));
    return out;
}

template <class F>
inline auto rethrow_as_field(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        field_error(key, e.what());
    }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

inline const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> s = {
        {"data_path", [](RunConfig& c, const json& v, const std::string& k) { c.data_path = get_string(v, k); }},
        {"truth_path", [](RunConfig& c, const json& v, const std::string& k) { c.truth_path = get_string(v, k); }},
        {"out_dir", [](RunConfig& c, const json& v, const std::string& k) { c.out_dir = get_string(v, k); }},
        {"seed",
         [](RunConfig& c, const json& v, const std::string& k) {
             c.model.seed = get_u64(v, k);
             c.sim.seed = c.model.seed;
             c.seed_given = true;
         }},
        // Simulator.
        {"grid_rows", [](RunConfig& c, const json& v, const std::string& k) { c.sim.grid.rows = get_count(v, k); }},
        {"grid_cols", [](RunConfig& c, const json& v, const std::string& k) { c.sim.grid.cols = get_count(v, k); }},
        {"x_min", [](RunConfig& c, const json& v, const std::string& k) { c.sim.grid.x_min = get_real(v, k); }},
        {"x_max", [](RunConfig& c, const json& v, const std::string& k) { c.sim.grid.x_max = get_real(v, k); }},
        {"y_min", [](RunConfig& c, const json& v, const std::string& k) { c.sim.grid.y_min = get_real(v, k); }},
        {"y_max", [](RunConfig& c, const json& v, const std::string& k) { c.sim.grid.y_max = get_real(v, k); }},
        {"phi_true", [](RunConfig& c, const json& v, const std::string& k) { c.sim.phi_true = get_real(v, k); }},
        {"sigma2_true", [](RunConfig& c, const json& v, const std::string& k) { c.sim.sigma2_true = get_real(v, k); }},
        {"beta_true", [](RunConfig& c, const json& v, const std::string& k) { c.sim.beta_true = get_reals(v, k); }},
        {"snr", [](RunConfig& c, const json& v, const std::string& k) { c.sim.snr = get_real(v, k); }},
        {"spectral_components",
         [](RunConfig& c, const json& v, const std::string& k) { c.sim.spectral_components = get_count(v, k); }},
        {"missing_fraction",
         [](RunConfig& c, const json& v, const std::string& k) { c.sim.missing_fraction = get_real(v, k); }},
        {"missing_block",
         [](RunConfig& c, const json& v, const std::string& k) {
             if (v.is_null()) {
                 c.sim.block.reset();
                 return;
             }
             const auto b = get_counts(v, k);
             if (b.size() != 4) field_error(k, "expected [row0, col0, rows, cols]");
             c.sim.block = MissingBlock{b[0], b[1], b[2], b[3]};
         }},
        {"strata_scheme",
         [](RunConfig& c, const json& v, const std::string& k) { c.sim.strata_scheme = get_string(v, k); }},
        {"covariate_source",
         [](RunConfig& c, const json& v, const std::string& k) {
             const std::string s = get_string(v, k);
             if (s == "uniform_iid") c.sim.covariate_source = CovariateSource::UniformIID;
             else if (s == "provided") c.sim.covariate_source = CovariateSource::Provided;
             else field_error(k, "expected uniform_iid or provided");
         }},
        // Model.
        {"covariogram",
         [](RunConfig& c, const json& v, const std::string& k) {
             const auto kind = rethrow_as_field(k, [&] { return parse_covariogram(get_string(v, k)); });
             c.model.covariogram.kind = kind;
             c.sim.covariogram.kind = kind;
         }},
        {"phi_support", [](RunConfig& c, const json& v, const std::string& k) { c.model.phi_support = get_reals(v, k); }},
        {"prior_shape", [](RunConfig& c, const json& v, const std::string& k) { c.model.prior_shape = get_real(v, k); }},
        {"prior_scale", [](RunConfig& c, const json& v, const std::string& k) { c.model.prior_scale = get_real(v, k); }},
        {"n", [](RunConfig& c, const json& v, const std::string& k) { c.model.n = get_count(v, k); }},
        {"G", [](RunConfig& c, const json& v, const std::string& k) { c.model.G = get_count(v, k); }},
        {"K", [](RunConfig& c, const json& v, const std::string& k) { c.model.K = get_count(v, k); }},
        {"burn_in", [](RunConfig& c, const json& v, const std::string& k) { c.model.burn_in = get_count(v, k); }},
        {"prediction_target",
         [](RunConfig& c, const json& v, const std::string& k) {
             c.model.prediction_target = rethrow_as_field(k, [&] { return parse_target(get_string(v, k)); });
         }},
        {"phi_determinant",
         [](RunConfig& c, const json& v, const std::string& k) {
             const std::string s = get_string(v, k);
             if (s == "half") c.model.phi_determinant = PhiDeterminant::Half;
             else if (s == "full") c.model.phi_determinant = PhiDeterminant::Full;
             else field_error(k, "expected half or full");
         }},
        {"init_tau2", [](RunConfig& c, const json& v, const std::string& k) { c.model.init_tau2 = get_real(v, k); }},
        {"init_sigma2", [](RunConfig& c, const json& v, const std::string& k) { c.model.init_sigma2 = get_real(v, k); }},
        {"init_sigma_beta2",
         [](RunConfig& c, const json& v, const std::string& k) { c.model.init_sigma_beta2 = get_real(v, k); }},
        {"init_phi", [](RunConfig& c, const json& v, const std::string& k) { c.model.init_phi = get_real(v, k); }},
        // Design.
        {"design",
         [](RunConfig& c, const json& v, const std::string& k) {
             c.design = rethrow_as_field(k, [&] { return parse_design(get_string(v, k)); });
         }},
        {"allocation",
         [](RunConfig& c, const json& v, const std::string& k) {
             c.allocation = rethrow_as_field(k, [&] { return parse_allocation(get_string(v, k)); });
         }},
        // Experiments.
        {"n_list", [](RunConfig& c, const json& v, const std::string& k) { c.n_list = get_counts(v, k); }},
        {"sweep_designs",
         [](RunConfig& c, const json& v, const std::string& k) {
             if (!v.is_array()) field_error(k, "expected an array of design names");
             c.sweep_designs.clear();
             for (const auto& e : v)
                 c.sweep_designs.push_back(rethrow_as_field(k, [&] { return parse_design(get_string(e, k)); }));
         }},
        {"k_list", [](RunConfig& c, const json& v, const std::string& k) { c.k_list = get_counts(v, k); }},
        {"alpha", [](RunConfig& c, const json& v, const std::string& k) { c.alpha = get_real(v, k); }},
        {"chains", [](RunConfig& c, const json& v, const std::string& k) { c.chains = get_count(v, k); }},
        {"diagnose_replicates",
         [](RunConfig& c, const json& v, const std::string& k) { c.diagnose_replicates = get_count(v, k); }},
        // Properties.
        {"theta_beta", [](RunConfig& c, const json& v, const std::string& k) { c.theta_beta = get_reals(v, k); }},
        {"theta_tau2", [](RunConfig& c, const json& v, const std::string& k) { c.theta_tau2 = get_real(v, k); }},
        {"theta_sigma2", [](RunConfig& c, const json& v, const std::string& k) { c.theta_sigma2 = get_real(v, k); }},
        {"theta_phi", [](RunConfig& c, const json& v, const std::string& k) { c.theta_phi = get_real(v, k); }},
        {"true_mean", [](RunConfig& c, const json& v, const std::string& k) { c.true_model.mean = get_real(v, k); }},
        {"true_variance",
         [](RunConfig& c, const json& v, const std::string& k) { c.true_model.variance = get_real(v, k); }},
        {"true_nugget", [](RunConfig& c, const json& v, const std::string& k) { c.true_model.nugget = get_real(v, k); }},
        {"true_family",
         [](RunConfig& c, const json& v, const std::string& k) {
             const std::string s = get_string(v, k);
             if (s != "exponential" && s != "spherical") field_error(k, "expected exponential or spherical");
             c.true_model.family = s;
         }},
        {"true_scale", [](RunConfig& c, const json& v, const std::string& k) { c.true_model.scale = get_real(v, k); }},
        {"lags", [](RunConfig& c, const json& v, const std::string& k) { c.lags = get_reals(v, k); }},
        {"range_drop", [](RunConfig& c, const json& v, const std::string& k) { c.range_drop = get_real(v, k); }},
    };
    return s;
}

}  // namespace detail

/// Keys accepted in a run configuration.
[[nodiscard]] inline std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : detail::schema()) out.push_back(k);
    return out;
}

/// Cross-field checks that do not depend on the command.
inline void validate(const RunConfig& c) {
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) detail::field_error("alpha", "must lie in (0, 1)");
    if (c.chains < 1) detail::field_error("chains", "must be >= 1");
    if (c.diagnose_replicates < 1) detail::field_error("diagnose_replicates", "must be >= 1");
    for (std::size_t k = 1; k < c.n_list.size(); ++k)
        if (c.n_list[k] <= c.n_list[k - 1]) detail::field_error("n_list", "must be strictly ascending");
    for (std::size_t n : c.n_list)
        if (n == 0) detail::field_error("n_list", "entries must be >= 1");
    if (!c.k_list.empty()) {
        if (c.k_list.front() != 1) detail::field_error("k_list", "must start with 1");
        for (std::size_t k = 1; k < c.k_list.size(); ++k)
            if (c.k_list[k] <= c.k_list[k - 1]) detail::field_error("k_list", "must be strictly ascending");
    }
    if (!(c.range_drop >= 0.0 && c.range_drop < 1.0)) detail::field_error("range_drop", "must lie in [0, 1)");
}

/// Parses a configuration document. Parse failures carry line and column.
[[nodiscard]] inline RunConfig parse_config(std::string_view text, const std::string& name = "<config>") {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(name + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError(name + ": top level must be a JSON object");
    RunConfig c;
    const auto& s = detail::schema();
    for (const auto& [key, value] : doc.items()) {
        const auto it = s.find(key);
        if (it == s.end()) throw ConfigError(name + ": unknown config key '" + key + "'");
        it->second(c, value, key);
    }
    validate(c);
    return c;
}

[[nodiscard]] inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    RunConfig c = parse_config(text, path.string());
    // Relative paths, including the output directory, resolve against the config
    // file's directory; a --out flag given later stays relative to the caller.
    const auto base = path.parent_path();
    auto resolve = [&](std::filesystem::path& p) {
        if (!p.empty() && p.is_relative() && !base.empty()) p = base / p;
    };
    resolve(c.data_path);
    resolve(c.truth_path);
    resolve(c.out_dir);
    return c;
}

}  // namespace sdsm
