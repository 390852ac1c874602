#pragma once

// Dense solvers for the generalized Riccati and Lyapunov equations
//     A^T P M + M P A - M P B B^T P M + C^T C = 0
//     F^T L M + M L F + Q = 0
// restricted to ker J when a constraint is present. Everything is reduced to
// standard form with an M-orthonormal basis Theta of ker J (Theta^T M Theta
// = I), solved there, and lifted back as Theta X Theta^T. Intended for
// n up to a few hundred, and as the oracle for the low-rank solvers.

#include "lpvsdre/core.hpp"
#include "lpvsdre/lapack.hpp"
#include "lpvsdre/projector.hpp"

#include <Eigen/SparseCholesky>

namespace lpvsdre {

struct DenseOptions {
    Index max_dim = 600;    // dense threshold on n
    int newton_polish = 2;  // Kleinman refinement steps after the Schur solve
};

/// Theta with Theta^T M Theta = I and range(Theta) = ker J (all of R^n when
/// J is empty).
inline Mat reduction_basis(const SpMat& M, const SpMat& J) {
    const Index n = M.rows();
    if (J.rows() == 0) {
        Eigen::SimplicialLLT<SpMat> llt(M);
        if (llt.info() != Eigen::Success) throw FactorizationError("reduction_basis: M not spd");
        const SpMat L = llt.matrixL();
        const Mat LtInv = L.transpose().triangularView<Eigen::Upper>().solve(Mat::Identity(n, n));
        return llt.permutationPinv() * LtInv;
    }
    Eigen::HouseholderQR<Mat> qr(Mat(J.transpose()));
    const Mat Q = qr.householderQ();
    const Index np = J.rows();
    const Mat Phi = Q.rightCols(n - np);
    const Mat G = Phi.transpose() * (M * Phi);
    Eigen::LLT<Mat> llt(0.5 * (G + G.transpose()));
    if (llt.info() != Eigen::Success) throw FactorizationError("reduction_basis: M not spd on ker J");
    const Mat Rinv = llt.matrixU().solve(Mat::Identity(n - np, n - np));
    return Phi * Rinv;
}

/// Stabilizing solution of F^T X + X F = -Q (F stable) by Bartels-Stewart.
inline Mat lyap_standard(const Mat& F, const Mat& Q) {
    require(F.rows() == F.cols() && Q.rows() == F.rows() && Q.cols() == F.cols(),
            "lyap_standard: shape mismatch");
    const auto s = lapack::real_schur(F);
    // F = U T U^T: T^T Y + Y T = -U^T Q U
    const Mat rhs = -(s.U.transpose() * Q * s.U);
    const Mat Y = lapack::trsyl('T', 'N', 1, s.T, s.T, rhs);
    Mat X = s.U * Y * s.U.transpose();
    return 0.5 * (X + X.transpose());
}

/// Standard-form residual A^T X + X A - X B B^T X + C^T C.
inline Mat care_residual(const Mat& A, const Mat& B, const Mat& C, const Mat& X) {
    const Mat XB = X * B;
    return A.transpose() * X + X * A - XB * XB.transpose() + C.transpose() * C;
}

/// Stabilizing solution of A^T X + X A - X B B^T X + C^T C = 0 via the ordered
/// Schur form of the Hamiltonian, polished by Kleinman steps.
inline Mat care_standard(const Mat& A, const Mat& B, const Mat& C, int polish = 2) {
    const Index n = A.rows();
    require(A.cols() == n && B.rows() == n && C.cols() == n, "care_standard: shape mismatch");
    if (n == 0) return Mat(0, 0);
    Mat H(2 * n, 2 * n);
    H << A, -B * B.transpose(), -C.transpose() * C, -A.transpose();
    const auto s = lapack::real_schur(H, lapack::Select::LeftHalfPlane);
    if (s.selected != n)
        throw SynthesisError(detail::concat(
            "Hamiltonian has ", s.selected, " stable eigenvalues, expected ", n,
            " (pair not stabilizable/detectable or eigenvalues on the imaginary axis)"));
    const Mat U11 = s.U.topLeftCorner(n, n);
    const Mat U21 = s.U.bottomLeftCorner(n, n);
    Eigen::PartialPivLU<Mat> lu(U11.transpose());
    const double rc = lu.rcond();
    if (!(rc > 1e-14)) throw SynthesisError("stable invariant subspace is not a graph (U11 singular)");
    Mat X = lu.solve(U21.transpose()).transpose();
    X = (0.5 * (X + X.transpose())).eval();
    for (int k = 0; k < polish; ++k) {
        // Kleinman step: (A - B B^T X)^T X+ + X+ (A - B B^T X) = -(C^T C + X B B^T X)
        const Mat K = B.transpose() * X;
        const Mat F = A - B * K;
        const Mat Xn = lyap_standard(F, C.transpose() * C + K.transpose() * K);
        if (!Xn.allFinite()) break;
        if (care_residual(A, B, C, Xn).norm() > care_residual(A, B, C, X).norm()) break;
        X = Xn;
    }
    return X;
}

/// Standard-form data (Theta^T A Theta, Theta^T B, C Theta) of a generalized,
/// possibly constrained triple.
struct ReducedTriple {
    Mat basis;
    Mat A, B, C;
};

inline ReducedTriple reduce_triple(const SpMat& M, const Mat& A, const Mat& B, const Mat& C,
                                   const SpMat& J) {
    ReducedTriple r;
    r.basis = reduction_basis(M, J);
    r.A = r.basis.transpose() * A * r.basis;
    r.B = r.basis.transpose() * B;
    r.C = C * r.basis;
    return r;
}

/// Dense stabilizing solution P0 of the generalized Riccati equation.
inline Mat solve_riccati_dense(const SpMat& M, const SpMat& A0, const Mat& B, const Mat& C,
                               const SpMat& J = SpMat(), const DenseOptions& opts = {}) {
    const Index n = M.rows();
    require(n <= opts.max_dim, "solve_riccati_dense: n = ", n, " above dense threshold ", opts.max_dim);
    require_dims(A0.rows(), n, "solve_riccati_dense A0");
    require_dims(B.rows(), n, "solve_riccati_dense B");
    require_dims(C.cols(), n, "solve_riccati_dense C");
    const SpMat Jc = J.rows() ? J : SpMat(0, n);
    const auto red = reduce_triple(M, Mat(A0), B, C, Jc);
    const Mat X = care_standard(red.A, red.B, red.C, opts.newton_polish);
    Mat P = red.basis * X * red.basis.transpose();
    return 0.5 * (P + P.transpose());
}

/// Dense solution of F^T L M + M L F = -Q on ker J (F stable there).
inline Mat solve_lyapunov_dense(const SpMat& M, const Mat& F, const Mat& Q, const SpMat& J = SpMat(),
                                const DenseOptions& opts = {}) {
    const Index n = M.rows();
    require(n <= opts.max_dim, "solve_lyapunov_dense: n = ", n, " above dense threshold ",
            opts.max_dim);
    require(F.rows() == n && F.cols() == n && Q.rows() == n && Q.cols() == n,
            "solve_lyapunov_dense: shape mismatch");
    const Mat Theta = reduction_basis(M, J.rows() ? J : SpMat(0, n));
    const Mat Fr = Theta.transpose() * F * Theta;
    const Mat Qr = Theta.transpose() * Q * Theta;
    const Mat Y = lyap_standard(Fr, 0.5 * (Qr + Qr.transpose()));
    Mat L = Theta * Y * Theta.transpose();
    return 0.5 * (L + L.transpose());
}

/// Dense Leray projector matrix (small n only).
inline Mat dense_projector(const SpMat& M, const SpMat& J) {
    const Index n = M.rows();
    if (J.rows() == 0) return Mat::Identity(n, n);
    LerayProjector pi(M, J);
    return pi.apply(Mat(Mat::Identity(n, n)));
}

/// Normalized Frobenius residual of the generalized Riccati equation with the
/// projected operators A_p = Pi^T A Pi, B_p = Pi^T B, C_p = C Pi.
inline double riccati_residual_dense(const SpMat& M, const Mat& A, const Mat& B, const Mat& C,
                                     const Mat& P, const SpMat& J = SpMat()) {
    const Index n = M.rows();
    const Mat Pi = dense_projector(M, J.rows() ? J : SpMat(0, n));
    const Mat Ap = Pi.transpose() * A * Pi;
    const Mat Bp = Pi.transpose() * B;
    const Mat Cp = C * Pi;
    const Mat Md = Mat(M);
    const Mat MPB = Md * P * Bp;
    const Mat R = Ap.transpose() * P * Md + Md * P * Ap - MPB * MPB.transpose() + Cp.transpose() * Cp;
    return safe_ratio(R.norm(), (Cp.transpose() * Cp).norm());
}

/// Eigenvalues of the pencil (F, M) restricted to ker J.
inline CVec generalized_spectrum(const SpMat& M, const Mat& F, const SpMat& J = SpMat()) {
    const Index n = M.rows();
    const Mat Theta = reduction_basis(M, J.rows() ? J : SpMat(0, n));
    return lapack::eigenvalues(Theta.transpose() * F * Theta);
}

inline double spectral_abscissa(const CVec& ev) {
    double a = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < ev.size(); ++i) a = std::max(a, ev(i).real());
    return a;
}

/// Feedback K (p x n) with A - B K stable on ker J, built from a Bernoulli
/// equation on the anti-stable left invariant subspace of the reduced
/// pencil. Zero when the pencil is already stable.
inline Mat stabilizing_feedback_dense(const SpMat& M, const SpMat& A, const Mat& B,
                                      const SpMat& J = SpMat(), Index max_dim = 6000) {
    const Index n = M.rows();
    require(n <= max_dim, "stabilizing_feedback_dense: n = ", n, " above threshold ", max_dim);
    const SpMat Jc = J.rows() ? J : SpMat(0, n);
    const Mat Theta = reduction_basis(M, Jc);
    const Mat Ar = Theta.transpose() * (A * Theta);
    const Mat Br = Theta.transpose() * B;
    const auto s = lapack::real_schur(Mat(Ar.transpose()), lapack::Select::RightHalfPlane);
    const Index k = s.selected;
    if (k == 0) return Mat::Zero(B.cols(), n);
    const Mat Q = s.U.leftCols(k);
    const Mat S = s.T.topLeftCorner(k, k).transpose();
    const Mat G = Q.transpose() * Br;
    // (-S) Y + Y (-S)^T = -G G^T, X = Y^{-1}; S - G G^T X has spectrum -eig(S).
    const Mat Y = lyap_standard(Mat(-S.transpose()), G * G.transpose());
    Eigen::LLT<Mat> llt(Y);
    if (llt.info() != Eigen::Success)
        throw SynthesisError("stabilizing_feedback_dense: unstable modes not controllable");
    const Mat X = llt.solve(Mat::Identity(k, k));
    const Mat Kr = G.transpose() * X * Q.transpose();
    const Mat KrT = Kr * Theta.transpose();
    return KrT * M;
}

/// Normalized SDRE residual at P(rho) = P0 + sum rho_k L_k for each sample,
/// with A(rho) = A0 + sum rho_k A_k. Dense; small n only.
inline std::vector<double> expansion_residual(const SpMat& M, const SpMat& A0, const std::vector<SpMat>& coeffs,
                                              const Mat& B, const Mat& C, const Mat& P0,
                                              const std::vector<Mat>& Ls, const std::vector<Vec>& samples,
                                              const SpMat& J = SpMat()) {
    require(Ls.size() <= coeffs.size(), "expansion_residual: more L_k than coefficients");
    std::vector<double> out;
    out.reserve(samples.size());
    for (const Vec& rho : samples) {
        require(static_cast<std::size_t>(rho.size()) == coeffs.size(), "expansion_residual: sample size");
        Mat A = Mat(A0);
        Mat P = P0;
        for (std::size_t k = 0; k < coeffs.size(); ++k) {
            A += rho(static_cast<Index>(k)) * Mat(coeffs[k]);
            if (k < Ls.size()) P += rho(static_cast<Index>(k)) * Ls[k];
        }
        out.push_back(riccati_residual_dense(M, A, B, C, P, J));
    }
    return out;
}

}  // namespace lpvsdre
