#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sdsm/covariogram.hpp"
#include "sdsm/errors.hpp"

namespace sdsm {

/// N locations with an optional observed value each, p covariates per row
/// (row-major) and an integer stratum label per row.
struct SpatialDataset {
    std::vector<Location> locations;
    std::vector<double> values;      // meaningful only where observed[i]
    std::vector<char> observed;      // 1 = value present
    std::vector<double> covariates;  // N x p, row-major
    std::vector<int> strata;         // 0 when the source has no labels
    std::size_t num_covariates = 0;
    int dim = 2;

    [[nodiscard]] std::size_t size() const { return locations.size(); }

    [[nodiscard]] std::span<const double> covariate_row(std::size_t i) const {
        return {covariates.data() + i * num_covariates, num_covariates};
    }

    [[nodiscard]] std::optional<double> value(std::size_t i) const {
        if (!observed[i]) return std::nullopt;
        return values[i];
    }

    [[nodiscard]] std::size_t observed_count() const {
        std::size_t c = 0;
        for (char o : observed) c += o ? 1 : 0;
        return c;
    }

    void push_back(const Location& s, std::optional<double> v, std::span<const double> x, int stratum) {
        if (locations.empty() && covariates.empty()) num_covariates = x.size();
        if (x.size() != num_covariates) throw DimensionMismatch("dataset row has wrong covariate count");
        locations.push_back(s);
        values.push_back(v.value_or(0.0));
        observed.push_back(v.has_value() ? 1 : 0);
        covariates.insert(covariates.end(), x.begin(), x.end());
        strata.push_back(stratum);
    }

    void validate() const {
        const std::size_t N = locations.size();
        if (values.size() != N || observed.size() != N || strata.size() != N ||
            covariates.size() != N * num_covariates)
            throw DimensionMismatch("dataset columns have inconsistent lengths");
    }
};

/// What the sampler may read from the data: the design population (the
/// observed rows) by position 0..size()-1.
template <class S>
concept ObservationSource = requires(const S& s, std::size_t i) {
    { s.size() } -> std::convertible_to<std::size_t>;
    { s.num_covariates() } -> std::convertible_to<std::size_t>;
    { s.value(i) } -> std::convertible_to<double>;
    { s.location(i) } -> std::convertible_to<Location>;
    { s.covariates(i) } -> std::convertible_to<std::span<const double>>;
    { s.stratum(i) } -> std::convertible_to<int>;
};

/// The observed rows of a dataset, addressed by position among them.
class ObservedView {
public:
    explicit ObservedView(const SpatialDataset& data) : data_(&data) {
        rows_.reserve(data.size());
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.observed[i]) rows_.push_back(i);
    }

    [[nodiscard]] std::size_t size() const { return rows_.size(); }
    [[nodiscard]] std::size_t num_covariates() const { return data_->num_covariates; }
    [[nodiscard]] double value(std::size_t i) const { return data_->values[rows_[i]]; }
    [[nodiscard]] const Location& location(std::size_t i) const { return data_->locations[rows_[i]]; }
    [[nodiscard]] std::span<const double> covariates(std::size_t i) const { return data_->covariate_row(rows_[i]); }
    [[nodiscard]] int stratum(std::size_t i) const { return data_->strata[rows_[i]]; }
    [[nodiscard]] std::size_t row(std::size_t i) const { return rows_[i]; }

private:
    const SpatialDataset* data_;
    std::vector<std::size_t> rows_;
};

static_assert(ObservationSource<ObservedView>);

/// Prediction locations A with their covariates (|A| x p).
struct PredictionTargets {
    std::vector<Location> locations;
    Matrix covariates;
    std::vector<std::size_t> rows;  // dataset row of each target, when known

    [[nodiscard]] std::size_t size() const { return locations.size(); }
};

[[nodiscard]] inline PredictionTargets targets_from_rows(const SpatialDataset& data, std::span<const std::size_t> rows) {
    PredictionTargets t;
    t.locations.reserve(rows.size());
    t.covariates.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.num_covariates));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        if (i >= data.size()) throw DataError("target row out of range");
        t.locations.push_back(data.locations[i]);
        const auto x = data.covariate_row(i);
        for (std::size_t c = 0; c < x.size(); ++c)
            t.covariates(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = x[c];
    }
    t.rows.assign(rows.begin(), rows.end());
    return t;
}

/// Every unobserved row of the dataset.
[[nodiscard]] inline PredictionTargets missing_targets(const SpatialDataset& data) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!data.observed[i]) rows.push_back(i);
    return targets_from_rows(data, rows);
}

/// Dense stratum ids 0..R-1 for the rows of `src`, numbered in ascending
/// order of the raw labels.
template <ObservationSource S>
[[nodiscard]] std::vector<int> dense_strata(const S& src, std::size_t* strata_count = nullptr) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < src.size(); ++i) labels.push_back(src.stratum(i));
    std::vector<int> unique = labels;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    for (int& l : labels)
        l = static_cast<int>(std::lower_bound(unique.begin(), unique.end(), l) - unique.begin());
    if (strata_count) *strata_count = unique.size();
    return labels;
}

}  // namespace sdsm
