#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdsm/errors.hpp"
#include "sdsm/linalg.hpp"

namespace sdsm {

/// Point in R^d, d <= 3. Unused trailing coordinates stay zero so the
/// Euclidean distance is the same for every d.
struct Location {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Location&, const Location&) = default;
};

[[nodiscard]] inline double distance(const Location& a, const Location& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

enum class CovariogramKind { Exponential };

[[nodiscard]] inline std::string_view to_string(CovariogramKind k) {
    switch (k) {
        case CovariogramKind::Exponential: return "exponential";
    }
    return "unknown";
}

[[nodiscard]] inline CovariogramKind parse_covariogram(std::string_view s) {
    if (s == "exponential") return CovariogramKind::Exponential;
    throw InvalidParameter("unknown covariogram '" + std::string(s) + "'");
}

/// Isotropic correlation function rho(d; phi).
struct Covariogram {
    CovariogramKind kind = CovariogramKind::Exponential;

    [[nodiscard]] double operator()(double lag_norm, double phi) const {
        switch (kind) {
            case CovariogramKind::Exponential: return std::exp(-phi * lag_norm);
        }
        return 0.0;
    }
};

[[nodiscard]] inline double corr(const Covariogram& c, double lag_norm, double phi) {
    if (!(phi > 0.0) || !std::isfinite(phi))
        throw InvalidParameter("corr: phi must be positive, got " + std::to_string(phi));
    if (!(lag_norm >= 0.0)) throw InvalidParameter("corr: negative lag");
    return c(lag_norm, phi);
}

/// Pairwise distances among `locs`.
[[nodiscard]] inline Matrix distance_matrix(std::span<const Location> locs) {
    const auto n = static_cast<Eigen::Index>(locs.size());
    Matrix d(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        d(j, j) = 0.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = distance(locs[static_cast<std::size_t>(i)], locs[static_cast<std::size_t>(j)]);
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

/// Correlation matrix from a precomputed distance matrix; the sampler
/// reuses one distance matrix across every phi on the grid.
[[nodiscard]] inline SymMatrix corr_from_distances(const Covariogram& c, const Matrix& dist, double phi) {
    if (!(phi > 0.0)) throw InvalidParameter("corr_from_distances: phi must be positive");
    Matrix h(dist.rows(), dist.cols());
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
        h(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < dist.rows(); ++i) {
            const double v = c(dist(i, j), phi);
            h(i, j) = v;
            h(j, i) = v;
        }
    }
    return {std::move(h), SymMatrix::trusted};
}

[[nodiscard]] inline SymMatrix build_corr_matrix(const Covariogram& c, std::span<const Location> locs, double phi) {
    return corr_from_distances(c, distance_matrix(locs), phi);
}

/// Rectangular correlation block, rows x cols.
[[nodiscard]] inline Matrix build_cross_matrix(const Covariogram& c, std::span<const Location> rows,
                                               std::span<const Location> cols, double phi) {
    if (rows.empty() || cols.empty()) throw DimensionMismatch("build_cross_matrix: empty location list");
    if (!(phi > 0.0)) throw InvalidParameter("build_cross_matrix: phi must be positive");
    Matrix h(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        for (std::size_t i = 0; i < rows.size(); ++i)
            h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c(distance(rows[i], cols[j]), phi);
    return h;
}

}  // namespace sdsm
