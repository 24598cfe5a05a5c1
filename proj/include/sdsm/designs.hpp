#pragma once

// Sampling designs for the inclusion vector delta: simple random sampling
// without replacement and stratified random sampling, together with their
// closed-form first and second moments.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sdsm/errors.hpp"
#include "sdsm/linalg.hpp"
#include "sdsm/rng.hpp"

namespace sdsm {

enum class DesignKind { SRS, Stratified };

[[nodiscard]] inline std::string_view to_string(DesignKind k) {
    return k == DesignKind::SRS ? "srs" : "stratified";
}

[[nodiscard]] inline DesignKind parse_design(std::string_view s) {
    if (s == "srs") return DesignKind::SRS;
    if (s == "stratified") return DesignKind::Stratified;
    throw InvalidParameter("unknown design '" + std::string(s) + "' (expected srs or stratified)");
}

enum class Allocation { Equal, Proportional };

[[nodiscard]] inline Allocation parse_allocation(std::string_view s) {
    if (s == "equal") return Allocation::Equal;
    if (s == "proportional") return Allocation::Proportional;
    throw InvalidParameter("unknown allocation '" + std::string(s) + "' (expected equal or proportional)");
}

/// A design over population indices 0..N-1.
class DesignSpec {
public:
    static DesignSpec srs(std::size_t N, std::size_t n) {
        if (n > N)
            throw InvalidAllocation("srs: subsample size " + std::to_string(n) + " exceeds population " +
                                    std::to_string(N));
        DesignSpec d;
        d.kind_ = DesignKind::SRS;
        d.N_ = N;
        d.n_ = n;
        return d;
    }

    /// `labels[i]` in 0..R-1 is the stratum of index i; `allocations[r]` is n_r.
    static DesignSpec stratified(std::vector<int> labels, std::vector<std::size_t> allocations) {
        const std::size_t R = allocations.size();
        if (R == 0) throw InvalidAllocation("stratified: no strata");
        DesignSpec d;
        d.kind_ = DesignKind::Stratified;
        d.N_ = labels.size();
        d.members_.assign(R, {});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int r = labels[i];
            if (r < 0 || static_cast<std::size_t>(r) >= R)
                throw InvalidAllocation("stratified: label " + std::to_string(r) + " at index " +
                                        std::to_string(i) + " outside 0.." + std::to_string(R - 1));
            d.members_[static_cast<std::size_t>(r)].push_back(i);
        }
        for (std::size_t r = 0; r < R; ++r)
            if (allocations[r] > d.members_[r].size())
                throw InvalidAllocation("stratified: allocation " + std::to_string(allocations[r]) +
                                        " exceeds size " + std::to_string(d.members_[r].size()) +
                                        " of stratum " + std::to_string(r));
        d.n_ = std::accumulate(allocations.begin(), allocations.end(), std::size_t{0});
        d.labels_ = std::move(labels);
        d.alloc_ = std::move(allocations);
        return d;
    }

    /// Splits n over strata of the given sizes. Remainders go to the
    /// lowest-numbered strata that still have room.
    static std::vector<std::size_t> allocate(std::span<const std::size_t> sizes, std::size_t n, Allocation rule) {
        const std::size_t R = sizes.size();
        const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
        if (R == 0) throw InvalidAllocation("allocate: no strata");
        if (n > total)
            throw InvalidAllocation("allocate: subsample size " + std::to_string(n) + " exceeds population " +
                                    std::to_string(total));
        std::vector<std::size_t> out(R, 0);
        if (rule == Allocation::Equal) {
            for (std::size_t r = 0; r < R; ++r) out[r] = std::min(sizes[r], n / R);
        } else {
            for (std::size_t r = 0; r < R; ++r)
                out[r] = static_cast<std::size_t>(static_cast<double>(n) * static_cast<double>(sizes[r]) /
                                                  static_cast<double>(total));
        }
        std::size_t assigned = std::accumulate(out.begin(), out.end(), std::size_t{0});
        while (assigned < n) {
            for (std::size_t r = 0; r < R && assigned < n; ++r) {
                if (out[r] < sizes[r]) {
                    ++out[r];
                    ++assigned;
                }
            }
        }
        return out;
    }

    [[nodiscard]] DesignKind kind() const { return kind_; }
    [[nodiscard]] std::size_t population() const { return N_; }
    [[nodiscard]] std::size_t sample_size() const { return n_; }
    [[nodiscard]] std::size_t strata_count() const { return kind_ == DesignKind::SRS ? 1 : alloc_.size(); }

    [[nodiscard]] int stratum_of(std::size_t i) const { return kind_ == DesignKind::SRS ? 0 : labels_.at(i); }
    [[nodiscard]] std::size_t stratum_size(std::size_t r) const {
        return kind_ == DesignKind::SRS ? N_ : members_.at(r).size();
    }
    [[nodiscard]] std::size_t allocation(std::size_t r) const { return kind_ == DesignKind::SRS ? n_ : alloc_.at(r); }
    [[nodiscard]] std::span<const std::size_t> members(std::size_t r) const { return members_.at(r); }

    /// Inclusion probability p (SRS) or p_r of the stratum holding i.
    [[nodiscard]] double inclusion_prob(std::size_t i) const {
        const auto r = static_cast<std::size_t>(stratum_of(i));
        return static_cast<double>(allocation(r)) / static_cast<double>(stratum_size(r));
    }

private:
    DesignKind kind_ = DesignKind::SRS;
    std::size_t N_ = 0;
    std::size_t n_ = 0;
    std::vector<int> labels_;
    std::vector<std::size_t> alloc_;
    std::vector<std::vector<std::size_t>> members_;
};

/// One realized inclusion vector, stored as the sorted included indices.
struct DeltaDraw {
    std::vector<std::size_t> included;
    const DesignSpec* design = nullptr;

    [[nodiscard]] std::size_t size() const { return included.size(); }
};

namespace detail {

// Floyd's subset selection: n uniform picks from 0..N-1, O(n) expected
// time and memory regardless of N. Appends to `out` unsorted.
inline void floyd_select(std::size_t N, std::size_t n, Rng& rng, std::vector<std::size_t>& out) {
    if (n == 0) return;
    if (n == N) {
        for (std::size_t i = 0; i < N; ++i) out.push_back(i);
        return;
    }
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(2 * n);
    for (std::size_t j = N - n; j < N; ++j) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        const std::size_t pick = chosen.insert(t).second ? t : j;
        if (pick == j) chosen.insert(j);
        out.push_back(pick);
    }
}

}  // namespace detail

[[nodiscard]] inline DeltaDraw draw_srs(std::size_t N, std::size_t n, Rng& rng) {
    if (n > N)
        throw InvalidAllocation("draw_srs: subsample size " + std::to_string(n) + " exceeds population " +
                                std::to_string(N));
    DeltaDraw d;
    d.included.reserve(n);
    detail::floyd_select(N, n, rng, d.included);
    std::sort(d.included.begin(), d.included.end());
    return d;
}

[[nodiscard]] inline DeltaDraw draw_srs(std::size_t N, std::size_t n, std::uint64_t seed) {
    Rng rng = make_stream(seed, Stream::Design);
    return draw_srs(N, n, rng);
}

[[nodiscard]] inline DeltaDraw draw_stratified(const DesignSpec& spec, Rng& rng) {
    if (spec.kind() != DesignKind::Stratified) throw InvalidParameter("draw_stratified: design is not stratified");
    DeltaDraw d;
    d.design = &spec;
    d.included.reserve(spec.sample_size());
    std::vector<std::size_t> local;
    for (std::size_t r = 0; r < spec.strata_count(); ++r) {
        local.clear();
        const auto members = spec.members(r);
        detail::floyd_select(members.size(), spec.allocation(r), rng, local);
        for (std::size_t t : local) d.included.push_back(members[t]);
    }
    std::sort(d.included.begin(), d.included.end());
    return d;
}

[[nodiscard]] inline DeltaDraw draw_stratified(const DesignSpec& spec, std::uint64_t seed) {
    Rng rng = make_stream(seed, Stream::Design);
    return draw_stratified(spec, rng);
}

/// Draws under whichever design `spec` describes.
[[nodiscard]] inline DeltaDraw draw(const DesignSpec& spec, Rng& rng) {
    if (spec.kind() == DesignKind::SRS) {
        DeltaDraw d = draw_srs(spec.population(), spec.sample_size(), rng);
        d.design = &spec;
        return d;
    }
    return draw_stratified(spec, rng);
}

/// Joint inclusion probability E[delta_i delta_j].
[[nodiscard]] inline double joint_inclusion(const DesignSpec& spec, std::size_t i, std::size_t j) {
    if (i == j) return spec.inclusion_prob(i);
    const auto r = static_cast<std::size_t>(spec.stratum_of(i));
    const auto t = static_cast<std::size_t>(spec.stratum_of(j));
    if (r != t) return spec.inclusion_prob(i) * spec.inclusion_prob(j);
    const double n = static_cast<double>(spec.allocation(r));
    const double N = static_cast<double>(spec.stratum_size(r));
    return (n / N) * ((n - 1.0) / (N - 1.0));
}

struct DesignMoments {
    Vector incl_prob;  // E[delta_i]
    Vector incl_var;   // Var(delta_i)
    Matrix joint_prob; // E[delta_i delta_j], diagonal = E[delta_i]
    Matrix cov;        // Cov(delta_i, delta_j), diagonal = Var(delta_i)
};

/// Materializes all N x N moments; meant for small populations.
[[nodiscard]] inline DesignMoments design_moments(const DesignSpec& spec) {
    const auto N = static_cast<Eigen::Index>(spec.population());
    DesignMoments m;
    m.incl_prob.resize(N);
    m.incl_var.resize(N);
    m.joint_prob.resize(N, N);
    m.cov.resize(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const double p = spec.inclusion_prob(static_cast<std::size_t>(i));
        m.incl_prob(i) = p;
        m.incl_var(i) = p * (1.0 - p);
    }
    for (Eigen::Index j = 0; j < N; ++j) {
        for (Eigen::Index i = 0; i < N; ++i) {
            if (i == j) {
                m.joint_prob(i, i) = m.incl_prob(i);
                m.cov(i, i) = m.incl_var(i);
                continue;
            }
            const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
            if (spec.stratum_of(si) != spec.stratum_of(sj)) {
                m.joint_prob(i, j) = m.incl_prob(i) * m.incl_prob(j);
                m.cov(i, j) = 0.0;
            } else {
                const double p = m.incl_prob(i);
                const auto r = static_cast<std::size_t>(spec.stratum_of(si));
                const double n = static_cast<double>(spec.allocation(r));
                const double Nr = static_cast<double>(spec.stratum_size(r));
                m.joint_prob(i, j) = joint_inclusion(spec, si, sj);
                m.cov(i, j) = p * ((n - 1.0) / (Nr - 1.0) - p);
            }
        }
    }
    return m;
}

/// Weights of the pair covariance for i != j:
///   Cov(Y_i, Y_j) = weight_true C~ + weight_param sigma^2 h_ij + weight_cross (mean gaps).
struct DesignCoefficients {
    double weight_true = 0.0;
    double weight_param = 0.0;
    double weight_cross = 0.0;
};

/// SRS: p, a, b with a = p (n-1)/(N-1) - 2p + 1, b = p ((n-1)/(N-1) - p).
/// A population of one admits no pairs; the (n-1)/(N-1) term is taken as 0.
[[nodiscard]] inline DesignCoefficients pair_coefficients(double n, double N) {
    const double p = n / N;
    const double q = N > 1.0 ? (n - 1.0) / (N - 1.0) : 0.0;
    const double a = p * q - 2.0 * p + 1.0;
    const double b = p * (q - p);
    return {a, b + p * p, b};
}

[[nodiscard]] inline DesignCoefficients design_coefficients(const DesignSpec& spec, std::size_t i, std::size_t j) {
    if (i >= spec.population() || j >= spec.population())
        throw InvalidParameter("design_coefficients: index out of range");
    const auto r = static_cast<std::size_t>(spec.stratum_of(i));
    const auto t = static_cast<std::size_t>(spec.stratum_of(j));
    if (r == t)
        return pair_coefficients(static_cast<double>(spec.allocation(r)), static_cast<double>(spec.stratum_size(r)));
    const double pr = spec.inclusion_prob(i), pt = spec.inclusion_prob(j);
    return {pr * pt - pr - pt + 1.0, pr * pt, 0.0};
}

}  // namespace sdsm
