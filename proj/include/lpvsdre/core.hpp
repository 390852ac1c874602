#pragma once

// Common vocabulary types, error classes and small dense helpers shared by
// every lpvsdre module.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

namespace lpvsdre {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using SpMat = Eigen::SparseMatrix<double>;
using CSpMat = Eigen::SparseMatrix<std::complex<double>>;
using Triplet = Eigen::Triplet<double>;

/// Violated precondition (wrong dimensions, invalid parameters).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A structural invariant of an input object does not hold.
class InvariantError : public std::runtime_error {
public:
    InvariantError(std::string invariant, const std::string& what)
        : std::runtime_error(invariant + ": " + what), invariant_(std::move(invariant)) {}
    [[nodiscard]] const std::string& invariant() const noexcept { return invariant_; }

private:
    std::string invariant_;
};

/// Constraint matrix without full row rank (singular Schur complement).
class RankDeficiencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A sparse or dense factorization failed or produced an unusable solve.
class FactorizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Controller synthesis failed (no stabilizing solution, bad spectrum).
class SynthesisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

}  // namespace detail

template <typename... Args>
void require(bool condition, Args&&... message) {
    if (!condition) throw ContractError(detail::concat(std::forward<Args>(message)...));
}

inline void require_dims(Index got, Index expected, const char* what) {
    if (got != expected)
        throw ContractError(detail::concat(what, ": dimension mismatch (got ", got, ", expected ",
                                           expected, ")"));
}

inline bool all_finite(const Eigen::Ref<const Mat>& x) { return x.allFinite(); }

inline double safe_ratio(double num, double den) {
    return den > 0.0 ? num / den : num;
}

inline SpMat sparse_identity(Index n) {
    SpMat I(n, n);
    I.setIdentity();
    return I;
}

inline bool is_diagonal(const SpMat& A) {
    for (Index k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it)
            if (it.row() != it.col() && it.value() != 0.0) return false;
    return true;
}

/// Orthonormal basis of range(X) from a pivoted QR, dropping columns whose
/// diagonal falls below `rel_tol` times the largest one.
inline Mat orth(const Eigen::Ref<const Mat>& X, double rel_tol = 1e-12) {
    if (X.cols() == 0 || X.rows() == 0) return Mat(X.rows(), 0);
    Eigen::ColPivHouseholderQR<Mat> qr(X);
    const Mat R = qr.matrixR().template triangularView<Eigen::Upper>();
    const Index k = std::min(X.rows(), X.cols());
    const double rmax = k > 0 ? std::abs(R(0, 0)) : 0.0;
    Index rank = 0;
    while (rank < k && std::abs(R(rank, rank)) > rel_tol * rmax && rmax > 0.0) ++rank;
    Mat Q = qr.householderQ() * Mat::Identity(X.rows(), rank);
    return Q;
}

/// Eigenvalues (ascending) and eigenvectors of the symmetric part of A via
/// LAPACK dsyevd; much faster than Eigen's solver above a few hundred rows.
inline std::pair<Vec, Mat> sym_eig(const Eigen::Ref<const Mat>& A, bool vectors = true) {
    const Index n = A.rows();
    Mat V = 0.5 * (A + A.transpose());
    Vec w(n);
    if (n == 0) return {w, V};
    const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'U', static_cast<lapack_int>(n),
                                           V.data(), static_cast<lapack_int>(n), w.data());
    if (info != 0) throw std::runtime_error("dsyevd failed with info = " + std::to_string(info));
    return {w, V};
}

/// Spectral norm of the symmetric low-rank product W S W^T computed from a
/// thin QR of W, never forming an n x n matrix.
inline double lowrank_sym_norm(const Eigen::Ref<const Mat>& W, const Eigen::Ref<const Mat>& S) {
    if (W.cols() == 0) return 0.0;
    if (W.cols() >= W.rows()) {
        return sym_eig(W * S * W.transpose(), false).first.cwiseAbs().maxCoeff();
    }
    Eigen::HouseholderQR<Mat> qr(W);
    const Mat R = qr.matrixQR().topRows(W.cols()).template triangularView<Eigen::Upper>();
    return sym_eig(R * S * R.transpose(), false).first.cwiseAbs().maxCoeff();
}

/// Frobenius norm of W S W^T, also through the thin QR.
inline double lowrank_sym_fro(const Eigen::Ref<const Mat>& W, const Eigen::Ref<const Mat>& S) {
    if (W.cols() == 0) return 0.0;
    if (W.cols() >= W.rows()) return (W * S * W.transpose()).norm();
    Eigen::HouseholderQR<Mat> qr(W);
    const Mat R = qr.matrixQR().topRows(W.cols()).template triangularView<Eigen::Upper>();
    return (R * S * R.transpose()).norm();
}

/// Frobenius norm of W S W^T from the Gram matrix G = W^T W:
/// ||W S W^T||_F^2 = tr(S G S G). Cheaper than the QR route for tall W and
/// accurate enough for stopping tests (no cancellation beyond that of W S W^T
/// itself).
inline double lowrank_sym_fro_gram(const Eigen::Ref<const Mat>& W, const Eigen::Ref<const Mat>& S) {
    if (W.cols() == 0) return 0.0;
    const Mat G = W.transpose() * W;
    const Mat SG = S * G;
    return std::sqrt(std::max((SG.array() * SG.transpose().array()).sum(), 0.0));
}

/// Column compression of a symmetric indefinite factorization Z D Z^T:
/// returns (Z', D') with D' diagonal and |D'_ii| > rel_tol * max |D'|.
inline std::pair<Mat, Mat> compress_ldl(const Eigen::Ref<const Mat>& Z, const Eigen::Ref<const Mat>& D,
                                        double rel_tol) {
    const Index n = Z.rows();
    if (Z.cols() == 0) return {Mat(n, 0), Mat(0, 0)};
    Mat Q, core;
    if (Z.cols() >= n) {
        Q = Mat::Identity(n, n);
        core = Z * D * Z.transpose();
    } else {
        Eigen::HouseholderQR<Mat> qr(Z);
        const Mat R = qr.matrixQR().topRows(Z.cols()).template triangularView<Eigen::Upper>();
        Q = qr.householderQ() * Mat::Identity(n, Z.cols());
        core = R * D * R.transpose();
    }
    const auto [lam, vecs] = sym_eig(core);
    const double lmax = lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0;
    std::vector<Index> keep;
    for (Index i = 0; i < lam.size(); ++i)
        if (lmax > 0.0 && std::abs(lam(i)) > rel_tol * lmax) keep.push_back(i);
    std::sort(keep.begin(), keep.end(),
              [&](Index a, Index b) { return std::abs(lam(a)) > std::abs(lam(b)); });
    const auto k = static_cast<Index>(keep.size());
    Mat E(vecs.rows(), k);
    Mat Dc = Mat::Zero(k, k);
    for (Index c = 0; c < k; ++c) {
        E.col(c) = vecs.col(keep[static_cast<std::size_t>(c)]);
        Dc(c, c) = lam(keep[static_cast<std::size_t>(c)]);
    }
    Mat Zc = Q * E;
    return {Zc, Dc};
}

/// Column compression of a positive semidefinite factorization Z Z^T.
inline Mat compress_psd(const Eigen::Ref<const Mat>& Z, double rel_tol) {
    const Index n = Z.rows();
    if (Z.cols() == 0) return Mat(n, 0);
    auto [Zc, Dc] = compress_ldl(Z, Mat::Identity(Z.cols(), Z.cols()), rel_tol);
    for (Index c = 0; c < Zc.cols(); ++c) Zc.col(c) *= std::sqrt(std::max(Dc(c, c), 0.0));
    return Zc;
}

/// Splits `s` at `sep`, trimming blanks, skipping empty fields.
inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace lpvsdre
