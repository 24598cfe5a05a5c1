#pragma once

// Dense symmetric positive-definite kernels: Cholesky with a reported jitter
// ladder, solves, log-determinants and quadratic forms. Storage and the
// underlying factorization are Eigen's; everything above it lives here.

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

#include "sdsm/errors.hpp"

namespace sdsm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense symmetric matrix. Construction from arbitrary storage checks
/// symmetry (1e-12 relative to the largest entry) and finiteness.
class SymMatrix {
public:
    struct trusted_t {};
    static constexpr trusted_t trusted{};

    SymMatrix() = default;

    explicit SymMatrix(Matrix m) : m_(std::move(m)) { validate(); }

    // For builders that are symmetric by construction.
    SymMatrix(Matrix m, trusted_t) : m_(std::move(m)) {}

    [[nodiscard]] Eigen::Index order() const { return m_.rows(); }
    [[nodiscard]] const Matrix& matrix() const { return m_; }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

private:
    void validate() const {
        if (m_.rows() != m_.cols() || m_.rows() < 1)
            throw DimensionMismatch("SymMatrix: matrix must be square with order >= 1");
        if (!m_.allFinite())
            throw InvalidParameter("SymMatrix: non-finite entry");
        const double scale = std::max(m_.cwiseAbs().maxCoeff(), 1e-300);
        for (Eigen::Index j = 0; j < m_.cols(); ++j)
            for (Eigen::Index i = j + 1; i < m_.rows(); ++i)
                if (std::abs(m_(i, j) - m_(j, i)) > 1e-12 * scale)
                    throw InvalidParameter("SymMatrix: matrix is not symmetric");
    }

    Matrix m_;
};

/// Lower Cholesky factor L with L L' = A + jitter I.
class CholFactor {
public:
    CholFactor(Matrix lower, double jitter) : l_(std::move(lower)), jitter_(jitter) {}

    [[nodiscard]] Eigen::Index order() const { return l_.rows(); }
    [[nodiscard]] const Matrix& lower() const { return l_; }
    [[nodiscard]] auto L() const { return l_.triangularView<Eigen::Lower>(); }
    [[nodiscard]] auto U() const { return l_.transpose().triangularView<Eigen::Upper>(); }  // L'
    [[nodiscard]] double jitter_applied() const { return jitter_; }
    [[nodiscard]] Matrix reconstructed() const { return L() * l_.transpose(); }

private:
    Matrix l_;
    double jitter_;
};

namespace detail {

// Factors m + jitter I in place of `out`; true on success.
inline bool try_llt(const Matrix& m, double jitter, Matrix& out) {
    Eigen::LLT<Matrix> llt;
    if (jitter > 0.0) {
        Matrix shifted = m;
        shifted.diagonal().array() += jitter;
        llt.compute(shifted);
    } else {
        llt.compute(m);
    }
    if (llt.info() != Eigen::Success) return false;
    out = llt.matrixL();
    const auto d = out.diagonal();
    return (d.array() > 0.0).all() && d.allFinite();
}

}  // namespace detail

// Jitter ladder relative to the mean diagonal: 0, then 1e-10 ... 1e-4 in
// decades. Fails with NotPositiveDefinite past the last rung.
inline CholFactor cholesky(const Matrix& m) {
    if (m.rows() != m.cols() || m.rows() < 1)
        throw DimensionMismatch("cholesky: matrix must be square with order >= 1");
    Matrix out;
    if (detail::try_llt(m, 0.0, out)) return {std::move(out), 0.0};

    const double mean_diag = m.diagonal().mean();
    if (!(mean_diag > 0.0) || !std::isfinite(mean_diag))
        throw NotPositiveDefinite("cholesky: non-positive mean diagonal");
    for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
        const double jitter = rel * mean_diag;
        if (detail::try_llt(m, jitter, out)) return {std::move(out), jitter};
    }
    std::ostringstream msg;
    msg << "cholesky: matrix of order " << m.rows()
        << " is not positive definite even with jitter 1e-4 x mean diagonal";
    throw NotPositiveDefinite(msg.str());
}

inline CholFactor cholesky(const SymMatrix& m) { return cholesky(m.matrix()); }

/// Solves (L L') x = rhs for a vector or matrix right-hand side.
template <class Derived>
[[nodiscard]] Matrix solve(const CholFactor& f, const Eigen::MatrixBase<Derived>& rhs) {
    if (rhs.rows() != f.order())
        throw DimensionMismatch("solve: right-hand side has " + std::to_string(rhs.rows()) +
                                " rows, factor has order " + std::to_string(f.order()));
    Matrix x = f.L().solve(rhs);
    f.U().solveInPlace(x);
    return x;
}

inline Vector solve(const CholFactor& f, const Vector& rhs) {
    return solve(f, rhs.matrix()).col(0);
}

/// L^{-1} rhs.
template <class Derived>
[[nodiscard]] Matrix whiten(const CholFactor& f, const Eigen::MatrixBase<Derived>& rhs) {
    if (rhs.rows() != f.order())
        throw DimensionMismatch("whiten: dimension mismatch");
    return f.L().solve(rhs);
}

[[nodiscard]] inline double log_det(const CholFactor& f) {
    return 2.0 * f.lower().diagonal().array().log().sum();
}

/// x' (L L')^{-1} x through one triangular solve.
[[nodiscard]] inline double quad_form(const CholFactor& f, const Vector& x) {
    if (x.size() != f.order()) throw DimensionMismatch("quad_form: dimension mismatch");
    const Vector u = f.L().solve(x);
    return u.squaredNorm();
}

}  // namespace sdsm
