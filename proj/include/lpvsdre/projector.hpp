#pragma once

// Discrete Leray projector Pi = I - M^{-1} J^T (J M^{-1} J^T)^{-1} J and
// saddle-point solves for index-2 constrained systems.

#include "lpvsdre/core.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <memory>

namespace lpvsdre {

/// Factorized block system [[K, J^T], [J, 0]] (or just K when J is empty).
/// Immutable after construction; solve() is const and reentrant.
template <typename Scalar>
class SaddlePointSolver {
public:
    using SparseT = Eigen::SparseMatrix<Scalar>;
    using VecT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    SaddlePointSolver(const SparseT& K, const SpMat& J) : n_(K.rows()), np_(J.rows()) {
        require(K.rows() == K.cols(), "SaddlePointSolver: block must be square");
        if (np_ > 0) require_dims(J.cols(), n_, "SaddlePointSolver constraint");
        std::vector<Eigen::Triplet<Scalar>> t;
        t.reserve(static_cast<std::size_t>(K.nonZeros() + 2 * J.nonZeros()));
        for (Index c = 0; c < K.outerSize(); ++c)
            for (typename SparseT::InnerIterator it(K, c); it; ++it)
                t.emplace_back(it.row(), it.col(), it.value());
        for (Index c = 0; c < J.outerSize(); ++c)
            for (SpMat::InnerIterator it(J, c); it; ++it) {
                t.emplace_back(n_ + it.row(), it.col(), Scalar(it.value()));
                t.emplace_back(it.col(), n_ + it.row(), Scalar(it.value()));
            }
        K_.resize(n_ + np_, n_ + np_);
        K_.setFromTriplets(t.begin(), t.end());
        K_.makeCompressed();
        lu_ = std::make_shared<Eigen::SparseLU<SparseT, Eigen::COLAMDOrdering<int>>>();
        lu_->analyzePattern(K_);
        lu_->factorize(K_);
        if (lu_->info() != Eigen::Success)
            throw FactorizationError("saddle-point factorization failed: " + lu_->lastErrorMessage());
    }

    [[nodiscard]] Index n() const { return n_; }
    [[nodiscard]] Index n_p() const { return np_; }

    /// Solves for all columns of [F; G] at once; returns (V, P).
    [[nodiscard]] std::pair<MatT, MatT> solve(const MatT& F, const MatT& G) const {
        require_dims(F.rows(), n_, "SaddlePointSolver::solve f");
        MatT rhs(n_ + np_, F.cols());
        rhs.topRows(n_) = F;
        if (np_ > 0) {
            if (G.size() == 0) rhs.bottomRows(np_).setZero();
            else {
                require(G.rows() == np_ && G.cols() == F.cols(), "SaddlePointSolver::solve g shape");
                rhs.bottomRows(np_) = G;
            }
        }
        MatT x = lu_->solve(rhs);
        const double rnorm = rhs.norm();
        const double res = (K_ * x - rhs).norm();
        if (!x.allFinite() || res > 1e-6 * std::max(rnorm, 1e-300) + 1e-300)
            throw FactorizationError(detail::concat("saddle-point solve inaccurate (relative residual ",
                                                    res / std::max(rnorm, 1e-300), ")"));
        return {x.topRows(n_), x.bottomRows(np_)};
    }

    [[nodiscard]] MatT solve_velocity(const MatT& F) const { return solve(F, MatT()).first; }

private:
    Index n_, np_;
    SparseT K_;
    std::shared_ptr<Eigen::SparseLU<SparseT, Eigen::COLAMDOrdering<int>>> lu_;
};

/// Solves M_sys v + J^T p = f, J v = g.
inline std::pair<Vec, Vec> saddle_point_solve(const SpMat& M_sys, const SpMat& J, const Vec& f,
                                              const Vec& g) {
    SaddlePointSolver<double> s(M_sys, J);
    Mat G = g.size() ? Mat(g) : Mat();
    auto [v, p] = s.solve(Mat(f), G);
    return {v.col(0), J.rows() ? Vec(p.col(0)) : Vec(0)};
}

/// Pi x and Pi^T x through cached factorizations of M and S = J M^{-1} J^T;
/// Pi itself is never formed.
class LerayProjector {
public:
    LerayProjector(const SpMat& M, const SpMat& J) : M_(M), J_(J) {
        require(M.rows() == M.cols(), "LerayProjector: mass must be square");
        if (J.rows() > 0) require_dims(J.cols(), M.rows(), "LerayProjector constraint");
        diagonal_ = is_diagonal(M);
        if (diagonal_) {
            if ((Vec(M.diagonal()).array() <= 0.0).any())
                throw FactorizationError("LerayProjector: mass matrix not positive definite");
            minv_ = Vec(M.diagonal()).cwiseInverse();
        } else {
            mass_ = std::make_shared<Eigen::SimplicialLLT<SpMat>>(M);
            if (mass_->info() != Eigen::Success)
                throw FactorizationError("LerayProjector: mass matrix not positive definite");
        }
        if (J.rows() == 0) return;
        if (diagonal_) {
            const SpMat S = J * minv_.asDiagonal() * SpMat(J.transpose());
            auto f = std::make_shared<Eigen::SimplicialLLT<SpMat>>(S);
            check_schur(f->info() == Eigen::Success ? Vec(SpMat(f->matrixL()).diagonal()) : Vec());
            sparse_schur_ = std::move(f);
        } else {
            const Mat S = J * mass_->solve(Mat(J.transpose()));
            auto f = std::make_shared<Eigen::LLT<Mat>>(0.5 * (S + S.transpose()));
            check_schur(f->info() == Eigen::Success ? Vec(f->matrixLLT().diagonal()) : Vec());
            dense_schur_ = std::move(f);
        }
    }

    [[nodiscard]] Index dim() const { return M_.rows(); }
    [[nodiscard]] bool identity() const { return J_.rows() == 0; }
    [[nodiscard]] const SpMat& mass() const { return M_; }
    [[nodiscard]] const SpMat& constraint() const { return J_; }

    /// Pi X = X - M^{-1} J^T S^{-1} J X.
    [[nodiscard]] Mat apply(const Mat& X) const {
        require_dims(X.rows(), dim(), "LerayProjector::apply");
        if (identity()) return X;
        return X - solve_mass(Mat(J_.transpose()) * solve_schur(J_ * X));
    }

    /// Pi^T X = X - J^T S^{-1} J M^{-1} X.
    [[nodiscard]] Mat apply_transpose(const Mat& X) const {
        require_dims(X.rows(), dim(), "LerayProjector::apply_transpose");
        if (identity()) return X;
        return X - SpMat(J_.transpose()) * solve_schur(J_ * solve_mass(X));
    }

    [[nodiscard]] Vec apply(const Vec& x) const { return apply(Mat(x)).col(0); }
    [[nodiscard]] Vec apply_transpose(const Vec& x) const { return apply_transpose(Mat(x)).col(0); }

    [[nodiscard]] Mat solve_mass(const Mat& X) const {
        if (diagonal_) return minv_.asDiagonal() * X;
        return mass_->solve(X);
    }

private:
    void check_schur(const Vec& pivots) const {
        if (pivots.size() == 0 && J_.rows() > 0)
            throw RankDeficiencyError("Schur complement J M^{-1} J^T is singular (J rank deficient)");
        if (pivots.size() == 0) return;
        const double mx = pivots.cwiseAbs2().maxCoeff();
        if (!(mx > 0.0) || pivots.cwiseAbs2().minCoeff() < 1e-13 * mx)
            throw RankDeficiencyError("Schur complement J M^{-1} J^T is singular (J rank deficient)");
    }

    [[nodiscard]] Mat solve_schur(const Mat& X) const {
        if (sparse_schur_) return sparse_schur_->solve(X);
        return dense_schur_->solve(X);
    }

    SpMat M_, J_;
    bool diagonal_ = false;
    Vec minv_;
    std::shared_ptr<Eigen::SimplicialLLT<SpMat>> mass_;
    std::shared_ptr<Eigen::SimplicialLLT<SpMat>> sparse_schur_;
    std::shared_ptr<Eigen::LLT<Mat>> dense_schur_;
};

}  // namespace lpvsdre
