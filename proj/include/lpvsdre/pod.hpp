#pragma once

// Mass-weighted proper orthogonal decomposition of velocity snapshots.

#include "lpvsdre/core.hpp"
#include "lpvsdre/io.hpp"

#include <Eigen/SparseCholesky>

#include <memory>

namespace lpvsdre {

struct SnapshotSet {
    Mat X;                      // n x N_s, one state per column
    std::vector<double> times;  // sample instants, size N_s
    std::string meta;           // description of the generating input

    [[nodiscard]] Index count() const { return X.cols(); }
};

/// M-orthonormal POD modes V_r with the full singular value list.
///
/// The encoder is V_r^T M so that decode(encode(.)) is the M-orthogonal
/// projector onto span(V_r).
class PodBasis {
public:
    PodBasis() = default;
    PodBasis(Mat modes, Vec sigma, SpMat mass, std::string warning = {})
        : V_(std::move(modes)), sigma_(std::move(sigma)), M_(std::move(mass)),
          warning_(std::move(warning)) {
        require_dims(M_.rows(), V_.rows(), "PodBasis mass");
        MV_ = M_ * V_;
    }

    [[nodiscard]] Index dim() const { return V_.rows(); }
    [[nodiscard]] Index rank() const { return V_.cols(); }
    [[nodiscard]] const Mat& modes() const { return V_; }
    [[nodiscard]] const Vec& sigma() const { return sigma_; }
    [[nodiscard]] const SpMat& mass() const { return M_; }
    /// Non-empty when the requested rank had to be reduced.
    [[nodiscard]] const std::string& warning() const { return warning_; }

    [[nodiscard]] Vec encode(const Eigen::Ref<const Vec>& v) const {
        require_dims(v.size(), dim(), "encode");
        return MV_.transpose() * v;
    }

    [[nodiscard]] Vec decode(const Eigen::Ref<const Vec>& rho) const {
        require_dims(rho.size(), rank(), "decode");
        return V_ * rho;
    }

    /// Leading sub-basis with r' <= r modes (nested by construction).
    [[nodiscard]] PodBasis truncated(Index r) const {
        require(r >= 0 && r <= rank(), "truncated: rank ", r, " outside [0, ", rank(), "]");
        return PodBasis(V_.leftCols(r), sigma_, M_, warning_);
    }

private:
    Mat V_;
    Mat MV_;
    Vec sigma_;
    SpMat M_;
    std::string warning_;
};

/// Rank-r POD in the M-inner product via a Cholesky-weighted SVD:
/// M = F F^T, SVD of F^T X = U S W^T, V_r = F^{-T} U_r.
inline PodBasis compute_pod(const SnapshotSet& snaps, const SpMat& M, Index r) {
    const Index n = snaps.X.rows();
    require_dims(M.rows(), n, "compute_pod mass");
    require(snaps.X.cols() >= 1, "compute_pod: empty snapshot set");
    require(snaps.X.allFinite(), "compute_pod: non-finite snapshot");
    require(r >= 1 && r <= std::min(n, snaps.X.cols()), "compute_pod: rank ", r,
            " outside [1, min(n, N_s)]");

    Eigen::SimplicialLLT<SpMat> llt(M);
    if (llt.info() != Eigen::Success) throw FactorizationError("compute_pod: mass matrix not spd");

    // llt: P M P^T = L L^T, so F = P^T L and F^T X = L^T P X.
    const SpMat L = llt.matrixL();
    const Mat PX = llt.permutationP() * snaps.X;
    const Mat FtX = L.transpose() * PX;
    Eigen::BDCSVD<Mat> svd(FtX, Eigen::ComputeThinU);
    const Vec sigma = svd.singularValues();

    const double tol = sigma.size() ? sigma(0) * static_cast<double>(std::max(n, snaps.X.cols())) *
                                          std::numeric_limits<double>::epsilon()
                                    : 0.0;
    Index numrank = 0;
    while (numrank < sigma.size() && sigma(numrank) > tol) ++numrank;
    std::string warning;
    Index keep = r;
    if (r > numrank) {
        keep = std::max<Index>(numrank, 1);
        warning = detail::concat("requested rank ", r, " exceeds numerical rank ", numrank,
                                 "; using ", keep);
    }

    Mat U = svd.matrixU().leftCols(keep);
    // V = P^T L^{-T} U
    const Mat LtInvU = L.transpose().triangularView<Eigen::Upper>().solve(U);
    Mat V = llt.permutationPinv() * LtInvU;
    for (Index c = 0; c < V.cols(); ++c) {
        Index imax = 0;
        V.col(c).cwiseAbs().maxCoeff(&imax);
        if (V(imax, c) < 0.0) V.col(c) = -V.col(c);
    }
    return PodBasis(std::move(V), sigma, M, std::move(warning));
}

inline void save_basis(const std::filesystem::path& path, const PodBasis& b) {
    io::write_container(path, {{"modes", b.modes()}, {"sigma", Mat(b.sigma())}});
}

inline PodBasis load_basis(const std::filesystem::path& path, const SpMat& M) {
    auto c = io::read_container(path);
    return PodBasis(c.at("modes"), Vec(c.at("sigma").col(0)), M);
}

inline void write_sigma_csv(const std::filesystem::path& path, const Vec& sigma) {
    std::vector<std::vector<double>> rows;
    for (Index i = 0; i < sigma.size(); ++i)
        rows.push_back({static_cast<double>(i + 1), sigma(i)});
    io::write_csv(path, {"index", "sigma"}, rows);
}

}  // namespace lpvsdre
