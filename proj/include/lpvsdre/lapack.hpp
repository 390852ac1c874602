#pragma once

// Thin wrappers over the LAPACK routines Eigen does not provide: ordered
// real Schur forms (dgees with eigenvalue selection) and the quasi-triangular
// Sylvester solver dtrsyl.

#include "lpvsdre/core.hpp"

#include <complex>
#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

namespace lpvsdre::lapack {

enum class Select { None, LeftHalfPlane, RightHalfPlane };

struct RealSchur {
    Mat T;         // quasi upper triangular
    Mat U;         // orthogonal, A = U T U^T
    Index selected = 0;
    CVec eigenvalues;
};

namespace detail {
inline lapack_logical select_lhp(const double* re, const double*) { return *re < 0.0; }
inline lapack_logical select_rhp(const double* re, const double*) { return *re > 0.0; }
}  // namespace detail

/// A = U T U^T with the selected eigenvalues leading the diagonal of T.
inline RealSchur real_schur(const Mat& A, Select sel = Select::None) {
    require(A.rows() == A.cols(), "real_schur: square matrix required");
    const auto n = static_cast<lapack_int>(A.rows());
    RealSchur out;
    out.T = A;
    out.U.resize(n, n);
    out.eigenvalues.resize(n);
    if (n == 0) return out;
    Vec wr(n), wi(n);
    lapack_int sdim = 0;
    LAPACK_D_SELECT2 fn = nullptr;
    if (sel == Select::LeftHalfPlane) fn = &detail::select_lhp;
    if (sel == Select::RightHalfPlane) fn = &detail::select_rhp;
    const lapack_int info = LAPACKE_dgees(LAPACK_COL_MAJOR, 'V', fn ? 'S' : 'N', fn, n,
                                          out.T.data(), n, &sdim, wr.data(), wi.data(),
                                          out.U.data(), n);
    // info == n+2 flags reordering round-off; the ordering is still usable
    // when sdim matches the count of selected eigenvalues, checked by callers.
    if (info < 0 || (info > 0 && info <= n))
        throw FactorizationError(lpvsdre::detail::concat("dgees failed, info = ", info));
    out.selected = sdim;
    for (lapack_int i = 0; i < n; ++i) out.eigenvalues(i) = {wr(i), wi(i)};
    return out;
}

inline CVec eigenvalues(const Mat& A) { return real_schur(A).eigenvalues; }

/// Solves op(T1) X + isgn * X op(T2) = C for quasi-triangular T1, T2 (Schur
/// forms) and returns X (the LAPACK scale factor is divided out).
inline Mat trsyl(char trans1, char trans2, int isgn, const Mat& T1, const Mat& T2, Mat C) {
    const auto m = static_cast<lapack_int>(T1.rows());
    const auto n = static_cast<lapack_int>(T2.rows());
    require(C.rows() == m && C.cols() == n, "trsyl: right-hand side shape");
    if (m == 0 || n == 0) return C;
    double scale = 1.0;
    const lapack_int info = LAPACKE_dtrsyl(LAPACK_COL_MAJOR, trans1, trans2, isgn, m, n, T1.data(),
                                           m, T2.data(), n, C.data(), m, &scale);
    if (info < 0) throw FactorizationError(lpvsdre::detail::concat("dtrsyl failed, info = ", info));
    if (info == 1 || scale <= 0.0)
        throw SynthesisError("Sylvester operator (nearly) singular: common eigenvalues");
    if (scale != 1.0) C /= scale;
    return C;
}

}  // namespace lpvsdre::lapack
