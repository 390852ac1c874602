#pragma once

#include "lpvsdre/core.hpp"

#include <random>

namespace testsupport {

using lpvsdre::Index;
using lpvsdre::Mat;
using lpvsdre::SpMat;
using lpvsdre::Vec;

inline Mat random_mat(Index r, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Mat A(r, c);
    for (Index j = 0; j < c; ++j)
        for (Index i = 0; i < r; ++i) A(i, j) = g(rng);
    return A;
}

inline Vec random_vec(Index n, std::mt19937_64& rng) { return random_mat(n, 1, rng).col(0); }

/// -(L + c I) for the 1D Dirichlet Laplacian on n interior points of (0, 1),
/// with a small upwind convection term so the operator is nonsymmetric.
inline SpMat diffusion(Index n, double nu = 1.0, double conv = 0.0, double shift = 0.0) {
    const double h = 1.0 / static_cast<double>(n + 1);
    std::vector<lpvsdre::Triplet> t;
    for (Index i = 0; i < n; ++i) {
        t.emplace_back(i, i, -2.0 * nu / (h * h) - conv / h + shift);
        if (i > 0) t.emplace_back(i, i - 1, nu / (h * h) + conv / h);
        if (i + 1 < n) t.emplace_back(i, i + 1, nu / (h * h));
    }
    SpMat A(n, n);
    A.setFromTriplets(t.begin(), t.end());
    return A;
}

/// Indicator of the index window [a, b) scaled to unit mass.
inline Mat indicator(Index n, Index a, Index b) {
    Mat v = Mat::Zero(n, 1);
    for (Index i = a; i < b; ++i) v(i, 0) = 1.0 / std::sqrt(static_cast<double>(b - a));
    return v;
}

inline SpMat random_spd_mass(Index n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<lpvsdre::Triplet> t;
    for (Index i = 0; i < n; ++i) {
        t.emplace_back(i, i, 4.0 * u(rng));
        if (i + 1 < n) {
            const double c = 0.5 * u(rng);
            t.emplace_back(i, i + 1, c);
            t.emplace_back(i + 1, i, c);
        }
    }
    SpMat M(n, n);
    M.setFromTriplets(t.begin(), t.end());
    return M;
}

/// Sparse full-row-rank constraint: each row couples a few velocity entries
/// and owns one private column, so rank is guaranteed.
inline SpMat random_constraint(Index np, Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::uniform_int_distribution<Index> col(0, n - 1);
    std::vector<lpvsdre::Triplet> t;
    for (Index i = 0; i < np; ++i) {
        t.emplace_back(i, (i * n) / np, 2.0 + std::abs(g(rng)));
        for (int k = 0; k < 3; ++k) t.emplace_back(i, col(rng), 0.3 * g(rng));
    }
    SpMat J(np, n);
    J.setFromTriplets(t.begin(), t.end());
    return J;
}

/// Random dense matrix with spectrum in the left half plane, shifted by `sigma`.
inline Mat random_stable(Index n, std::mt19937_64& rng, double sigma = 1.0) {
    Mat A = random_mat(n, n, rng) / std::sqrt(static_cast<double>(n));
    Eigen::EigenSolver<Mat> es(A, false);
    double a = -1e300;
    for (Index i = 0; i < n; ++i) a = std::max(a, es.eigenvalues()(i).real());
    return A - (a + sigma) * Mat::Identity(n, n);
}

inline double rel_fro(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace testsupport
