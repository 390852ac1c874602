#pragma once

// Truncated SDRE feedback
//     u = -(1/alpha) B^T (P0 + sum_k rho_k(v) L_k) M v
// with P0, L_k solved for the regularized input matrix B / sqrt(alpha).
// r = 0 is the LQR law.

#include "lpvsdre/core.hpp"
#include "lpvsdre/io.hpp"
#include "lpvsdre/mateq_dense.hpp"
#include "lpvsdre/mateq_lowrank.hpp"
#include "lpvsdre/model.hpp"
#include "lpvsdre/pod.hpp"

#include <memory>

namespace lpvsdre {

/// K0 = B^T P0 M and K_k = B^T L_k M as dense p x n rows.
struct FeedbackGains {
    Mat K0;
    std::vector<Mat> Ks;
};

class SdreExpansion {
public:
    SdreExpansion() = default;

    [[nodiscard]] Index rank() const { return static_cast<Index>(Ls_.size()); }
    [[nodiscard]] Index n() const { return gains_.K0.cols(); }
    [[nodiscard]] Index p() const { return gains_.K0.rows(); }
    [[nodiscard]] double alpha() const { return alpha_; }
    [[nodiscard]] const LowRankPsd& P0() const { return P0_; }
    [[nodiscard]] const std::vector<LowRankIndef>& Ls() const { return Ls_; }
    [[nodiscard]] const FeedbackGains& gains() const { return gains_; }
    [[nodiscard]] const std::shared_ptr<const PodBasis>& basis() const { return basis_; }
    [[nodiscard]] std::optional<double> clamp() const { return clamp_; }

    /// rho_hat(v); empty for r = 0.
    [[nodiscard]] Vec schedule(const Eigen::Ref<const Vec>& v) const {
        if (rank() == 0) return Vec(0);
        return basis_->encode(v).head(rank());
    }

    /// u = -(1/alpha) (K0 + sum_k rho_k K_k) v.
    [[nodiscard]] Vec evaluate(const Eigen::Ref<const Vec>& v) const {
        require_dims(v.size(), n(), "SdreExpansion::evaluate");
        Vec u = gains_.K0 * v;
        const Vec rho = schedule(v);
        for (Index k = 0; k < rho.size(); ++k) u.noalias() += rho(k) * (gains_.Ks[static_cast<std::size_t>(k)] * v);
        u *= -1.0 / alpha_;
        if (clamp_) u = u.cwiseMax(-*clamp_).cwiseMin(*clamp_);
        return u;
    }

    /// Leading r' terms (r' <= r); the r' = 0 case is the LQR law.
    [[nodiscard]] SdreExpansion truncated(Index r) const {
        require(r >= 0 && r <= rank(), "SdreExpansion::truncated: rank ", r, " outside [0, ", rank(), "]");
        SdreExpansion out = *this;
        out.Ls_.resize(static_cast<std::size_t>(r));
        out.gains_.Ks.resize(static_cast<std::size_t>(r));
        return out;
    }

    [[nodiscard]] SdreExpansion with_clamp(std::optional<double> limit) const {
        if (limit) require(*limit > 0.0, "input clamp must be positive");
        SdreExpansion out = *this;
        out.clamp_ = limit;
        return out;
    }

    /// Gains as records K0, K1, ... of a binary container.
    void save_gains(const std::filesystem::path& path) const {
        io::Container c;
        c["K0"] = gains_.K0;
        for (std::size_t k = 0; k < gains_.Ks.size(); ++k) c["K" + std::to_string(k + 1)] = gains_.Ks[k];
        c["alpha"] = Mat::Constant(1, 1, alpha_);
        io::write_container(path, c);
    }

    /// Long format: gain, input, index, value (1-based gain index, 0 is K0).
    void write_gains_csv(const std::filesystem::path& path) const {
        std::vector<std::vector<double>> rows;
        auto emit = [&](std::size_t g, const Mat& K) {
            for (Index i = 0; i < K.rows(); ++i)
                for (Index j = 0; j < K.cols(); ++j)
                    rows.push_back({static_cast<double>(g), static_cast<double>(i + 1),
                                    static_cast<double>(j + 1), K(i, j)});
        };
        emit(0, gains_.K0);
        for (std::size_t k = 0; k < gains_.Ks.size(); ++k) emit(k + 1, gains_.Ks[k]);
        io::write_csv(path, {"gain", "input", "index", "value"}, rows);
    }

    friend SdreExpansion assemble(LowRankPsd, std::vector<LowRankIndef>, std::shared_ptr<const PodBasis>,
                                  const Mat&, const SpMat&, double);

private:
    LowRankPsd P0_;
    std::vector<LowRankIndef> Ls_;
    std::shared_ptr<const PodBasis> basis_;
    FeedbackGains gains_;
    double alpha_ = 1.0;
    std::optional<double> clamp_;
};

/// Precomputes the gains through the factors (B^T Z first, then the core),
/// never forming n x n matrices. B is the unregularized input matrix; every
/// factor must carry the same alpha.
inline SdreExpansion assemble(LowRankPsd P0, std::vector<LowRankIndef> Ls, std::shared_ptr<const PodBasis> basis,
                              const Mat& B, const SpMat& M, double alpha) {
    const Index n = M.rows();
    require(alpha > 0.0 && std::isfinite(alpha), "assemble: alpha must be positive, got ", alpha);
    require_dims(B.rows(), n, "assemble B");
    require_dims(P0.Z.rows(), n, "assemble P0");
    require(P0.alpha == alpha, "assemble: P0 solved with alpha = ", P0.alpha, " but feedback uses ", alpha);
    if (!Ls.empty()) {
        require(basis != nullptr, "assemble: expansion terms without a POD basis");
        require(static_cast<Index>(Ls.size()) <= basis->rank(), "assemble: ", Ls.size(),
                " expansion terms but basis rank ", basis->rank());
        require_dims(basis->dim(), n, "assemble basis");
    }
    SdreExpansion e;
    e.alpha_ = alpha;
    e.basis_ = std::move(basis);
    const Mat BtZ = B.transpose() * P0.Z;
    e.gains_.K0 = BtZ * (M * P0.Z).transpose();
    for (std::size_t k = 0; k < Ls.size(); ++k) {
        const auto& L = Ls[k];
        require_dims(L.Z.rows(), n, "assemble L_k");
        require(L.alpha == alpha, "assemble: L_", k + 1, " solved with alpha = ", L.alpha, " but feedback uses ",
                alpha);
        e.gains_.Ks.push_back((B.transpose() * L.Z) * L.D * (M * L.Z).transpose());
    }
    require(e.gains_.K0.allFinite(), "assemble: non-finite K0");
    for (const auto& K : e.gains_.Ks) require(K.allFinite(), "assemble: non-finite gain");
    e.P0_ = std::move(P0);
    e.Ls_ = std::move(Ls);
    return e;
}

struct SynthesisOptions {
    double alpha = 1.0;
    RiccatiOptions riccati{};
    AdiOptions lyapunov{};
    bool dense = false;          // dense oracle path (small n)
    DenseOptions dense_opts{};
    bool bernoulli_init = true;  // K0 from the anti-stable subspace when none is given
    Index bernoulli_max_dim = 6000;
    unsigned jobs = 1;
};

struct SynthesisResult {
    SdreExpansion expansion;
    SolverReport riccati;
    std::vector<SolverReport> lyapunov;
    Index open_loop_unstable = -1;  // -1 when not computed
};

namespace detail {

inline LowRankPsd psd_factor(const Mat& P, double alpha) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (P + P.transpose()));
    const double mx = es.eigenvalues().cwiseAbs().maxCoeff();
    std::vector<Index> keep;
    for (Index i = es.eigenvalues().size() - 1; i >= 0; --i)
        if (es.eigenvalues()(i) > 1e-13 * mx) keep.push_back(i);
    Mat Z(P.rows(), static_cast<Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c)
        Z.col(static_cast<Index>(c)) = es.eigenvectors().col(keep[c]) * std::sqrt(es.eigenvalues()(keep[c]));
    return {Z, alpha};
}

inline LowRankIndef ldl_factor(const Mat& L, double alpha) {
    auto [Z, D] = compress_ldl(Mat::Identity(L.rows(), L.rows()), 0.5 * (L + L.transpose()), 1e-13);
    return {Z, D, alpha};
}

}  // namespace detail

/// Solves the Riccati equation for P0 and the r Lyapunov equations for the
/// L_k with B replaced by B / sqrt(alpha), then assembles the feedback.
/// `lpv.parameters()` fixes r; pass a model built from a rank-0 basis (or
/// truncate afterwards) for LQR only.
inline SynthesisResult synthesize(const QuadraticSystem& sys, const AffineLpvModel& lpv,
                                  const SynthesisOptions& opts = {}) {
    sys.validate_dims();
    require(opts.alpha > 0.0, "synthesize: alpha must be positive");
    const Index n = sys.n();
    const Mat Breg = sys.B / std::sqrt(opts.alpha);
    const SpMat J = sys.constrained() ? sys.J : SpMat(0, n);
    SynthesisResult res;
    LowRankPsd P0;
    std::vector<LowRankIndef> Ls;
    if (opts.dense) {
        const Mat P = solve_riccati_dense(sys.M, lpv.A0(), Breg, sys.C, J, opts.dense_opts);
        res.riccati.converged = true;
        res.riccati.residual = riccati_residual_dense(sys.M, Mat(lpv.A0()), Breg, sys.C, P, J);
        res.riccati.message = "dense";
        P0 = detail::psd_factor(P, opts.alpha);
        const Mat Md = Mat(sys.M);
        const Mat F = Mat(lpv.A0()) - Breg * (Breg.transpose() * P * Md);
        for (Index k = 0; k < lpv.parameters(); ++k) {
            const Mat Ak = Mat(lpv.coeff(k));
            const Mat Q = Md * P * Ak + Ak.transpose() * P * Md;
            // Projected right-hand side: Pi^T Q Pi is implied by the reduction.
            Ls.push_back(detail::ldl_factor(solve_lyapunov_dense(sys.M, F, Q, J, opts.dense_opts), opts.alpha));
            SolverReport r;
            r.converged = true;
            r.message = "dense";
            res.lyapunov.push_back(r);
        }
    } else {
        SparsePencil pencil(lpv.A0(), sys.M, J);
        RiccatiOptions ropts = opts.riccati;
        if (!ropts.K0 && opts.bernoulli_init && n <= opts.bernoulli_max_dim) {
            Mat K0 = stabilizing_feedback_dense(sys.M, lpv.A0(), Breg, J, opts.bernoulli_max_dim);
            if (K0.norm() > 0.0) ropts.K0 = std::move(K0);
        }
        auto [P, rep] = solve_riccati_lowrank(pencil, Breg, sys.C, ropts);
        res.riccati = std::move(rep);
        P.alpha = opts.alpha;
        P0 = std::move(P);
        const Mat K = (Breg.transpose() * P0.Z) * (sys.M * P0.Z).transpose();
        auto family = solve_lyapunov_family(pencil, K, Breg, P0.Z, lpv.coeffs(), opts.lyapunov, opts.jobs);
        for (auto& [L, r] : family) {
            L.alpha = opts.alpha;
            Ls.push_back(std::move(L));
            res.lyapunov.push_back(std::move(r));
        }
    }
    res.expansion = assemble(std::move(P0), std::move(Ls), lpv.basis(), sys.B, sys.M, opts.alpha);
    return res;
}

}  // namespace lpvsdre
