#pragma once

// Low-rank solvers for large generalized matrix equations:
//   * LDL^T-factorized ADI for  F^T X M + M X F = -W S W^T,  F = A - B K
//   * Newton-Kleinman-ADI for   A^T P M + M P A - M P B B^T P M + C^T C = 0
// For constrained systems the Leray projection is realized implicitly: every
// shifted solve is a saddle-point solve with the constraint J V = 0, and the
// right-hand sides are kept in range(Pi^T).

#include "lpvsdre/core.hpp"
#include "lpvsdre/io.hpp"
#include "lpvsdre/projector.hpp"

#include <Eigen/Eigenvalues>

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <tuple>

namespace lpvsdre {

/// P ~ Z Z^T. `alpha` records the Tikhonov weight the factor was solved with.
struct LowRankPsd {
    Mat Z;
    double alpha = 1.0;

    [[nodiscard]] Index rank() const { return Z.cols(); }
    [[nodiscard]] Mat dense() const { return Z * Z.transpose(); }
};

/// L ~ Z D Z^T with symmetric, possibly indefinite D.
struct LowRankIndef {
    Mat Z;
    Mat D;
    double alpha = 1.0;

    [[nodiscard]] Index rank() const { return Z.cols(); }
    [[nodiscard]] Mat dense() const { return Z * D * Z.transpose(); }
};

struct SolverReport {
    int iterations = 0;               // ADI steps (summed over Newton steps)
    int newton_steps = 0;
    double residual = std::numeric_limits<double>::infinity();  // final normalized
    bool converged = false;
    std::vector<double> residual_history;  // per ADI step, or per Newton step for Riccati
    std::vector<Index> rank_history;
    std::vector<std::complex<double>> shift_history;
    std::vector<int> adi_iterations;  // per Newton step
    std::string message;

    /// One row per entry of residual_history.
    void write_csv(const std::filesystem::path& path) const {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < residual_history.size(); ++i)
            rows.push_back({static_cast<double>(i + 1), residual_history[i],
                            i < rank_history.size() ? static_cast<double>(rank_history[i]) : -1.0,
                            i < adi_iterations.size() ? static_cast<double>(adi_iterations[i]) : -1.0});
        io::write_csv(path, {"step", "residual", "rank", "adi_iterations"}, rows);
    }
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, SolverReport report)
        : std::runtime_error(what), report_(std::move(report)) {}
    [[nodiscard]] const SolverReport& report() const noexcept { return report_; }

private:
    SolverReport report_;
};

struct AdiOptions {
    double tol = 1e-7;          // on ||W S W^T|| / ||W0 S W0^T||
    double abs_tol = 0.0;       // alternative absolute target on ||W S W^T||_F
    int max_iter = 400;
    double trunc_tol = 1e-12;   // column compression of the solution factor
    int max_shifts = 24;
    int basis_cols = 60;        // columns used for projection shifts
};

struct RiccatiOptions {
    double tol = 1e-7;          // normalized Riccati residual
    int max_newton = 40;
    AdiOptions adi{};
    std::optional<Mat> K0;      // stabilizing initial feedback (p x n)
};

/// Sparse pencil (A, M) with optional constraint J. Holds the projector and
/// produces shifted saddle-point factorizations.
class SparsePencil {
public:
    SparsePencil(SpMat A, SpMat M, SpMat J = SpMat())
        : A_(std::move(A)), M_(std::move(M)), J_(J.rows() ? std::move(J) : SpMat(0, M_.rows())),
          At_(A_.transpose()), proj_(M_, J_) {
        require(A_.rows() == A_.cols() && A_.rows() == M_.rows(), "SparsePencil: shape mismatch");
    }

    [[nodiscard]] Index n() const { return A_.rows(); }
    [[nodiscard]] const SpMat& A() const { return A_; }
    [[nodiscard]] const SpMat& M() const { return M_; }
    [[nodiscard]] const SpMat& J() const { return J_; }
    [[nodiscard]] const LerayProjector& projector() const { return proj_; }

    /// Sparse block [[A^T + p M, -K^T], [B^T, -I]] for the bordered shifted
    /// system; K (p x n) and B (n x p) enter as a few dense columns/rows.
    template <typename Scalar>
    [[nodiscard]] Eigen::SparseMatrix<Scalar> shifted_block(Scalar p, const Mat& K, const Mat& B) const {
        const Index n = this->n();
        const Index m = K.rows();
        std::vector<Eigen::Triplet<Scalar>> t;
        t.reserve(static_cast<std::size_t>(At_.nonZeros() + M_.nonZeros() + 2 * m * n + m));
        for (Index c = 0; c < At_.outerSize(); ++c)
            for (SpMat::InnerIterator it(At_, c); it; ++it) t.emplace_back(it.row(), it.col(), Scalar(it.value()));
        for (Index c = 0; c < M_.outerSize(); ++c)
            for (SpMat::InnerIterator it(M_, c); it; ++it) t.emplace_back(it.row(), it.col(), p * it.value());
        for (Index i = 0; i < m; ++i) {
            for (Index r = 0; r < n; ++r) {
                if (K(i, r) != 0.0) t.emplace_back(r, n + i, Scalar(-K(i, r)));
                if (B(r, i) != 0.0) t.emplace_back(n + i, r, Scalar(B(r, i)));
            }
            t.emplace_back(n + i, n + i, Scalar(-1.0));
        }
        Eigen::SparseMatrix<Scalar> out(n + m, n + m);
        out.setFromTriplets(t.begin(), t.end());
        return out;
    }

    /// J padded with zero columns for the bordered unknowns.
    [[nodiscard]] SpMat padded_constraint(Index extra) const {
        SpMat Jp = J_;
        Jp.conservativeResize(J_.rows(), J_.cols() + extra);
        return Jp;
    }

private:
    SpMat A_, M_, J_, At_;
    LerayProjector proj_;
};

namespace detail {

/// Solves (A^T - K^T B^T + p M) V = W, J V = 0 through the bordered sparse
/// system with the auxiliary unknown w = B^T V, so the factorized matrix stays
/// regular even when A^T + p M alone is singular.
template <typename Scalar>
class ShiftedSolve {
public:
    using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    ShiftedSolve(const SparsePencil& pencil, Scalar p, const Mat& K, const Mat& B)
        : n_(pencil.n()), m_(K.rows()),
          solver_(pencil.shifted_block<Scalar>(p, K, B), pencil.padded_constraint(K.rows())) {}

    [[nodiscard]] MatT solve(const MatT& W) const {
        MatT rhs = MatT::Zero(n_ + m_, W.cols());
        rhs.topRows(n_) = W;
        return solver_.solve_velocity(rhs).topRows(n_);
    }

private:
    Index n_, m_;
    SaddlePointSolver<Scalar> solver_;
};

/// Ritz values of (F^T, M) on span(U) where F^T = A^T - K^T B^T; U must lie
/// in ker J.
inline CVec ritz_values(const SparsePencil& pencil, const Mat& K, const Mat& B, const Mat& U) {
    if (U.cols() == 0) return CVec(0);
    Mat FtU = pencil.A().transpose() * U;
    if (K.rows() > 0) FtU -= K.transpose() * (B.transpose() * U);
    const Mat H = U.transpose() * FtU;
    const Mat E = U.transpose() * (pencil.M() * U);
    Eigen::LLT<Mat> llt(0.5 * (E + E.transpose()));
    if (llt.info() != Eigen::Success) return CVec(0);
    Eigen::EigenSolver<Mat> es(llt.solve(H), false);
    if (es.info() != Eigen::Success) return CVec(0);
    return es.eigenvalues();
}

/// ADI shift parameters from Ritz values: unstable ones mirrored, complex
/// ones kept with positive imaginary part (the conjugate is implied), and
/// a greedy min-max selection when there are more than `max_shifts`.
inline std::vector<std::complex<double>> select_shifts(const CVec& ritz, int max_shifts) {
    std::vector<std::complex<double>> cand;
    for (Index i = 0; i < ritz.size(); ++i) {
        auto z = ritz(i);
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) continue;
        if (z.real() > 0.0) z = {-z.real(), z.imag()};
        if (z.real() == 0.0) continue;
        if (std::abs(z.imag()) <= 1e-10 * std::abs(z.real())) z = {z.real(), 0.0};
        if (z.imag() < 0.0) continue;
        cand.push_back(z);
    }
    std::sort(cand.begin(), cand.end(), [](auto a, auto b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    cand.erase(std::unique(cand.begin(), cand.end(),
                           [](auto a, auto b) { return std::abs(a - b) <= 1e-12 * std::abs(a); }),
               cand.end());
    auto weight = [](std::complex<double> p) { return p.imag() != 0.0 ? 2 : 1; };
    int total = 0;
    for (auto c : cand) total += weight(c);
    if (total <= max_shifts) return cand;

    // Candidate eigenvalue set with conjugates for the rational min-max.
    std::vector<std::complex<double>> lam;
    for (auto c : cand) {
        lam.push_back(c);
        if (c.imag() != 0.0) lam.push_back(std::conj(c));
    }
    auto factor = [](std::complex<double> p, std::complex<double> l) {
        double f = std::abs((p - l) / (p + l));
        if (p.imag() != 0.0) f *= std::abs((std::conj(p) - l) / (std::conj(p) + l));
        return f;
    };
    std::vector<double> prod(lam.size(), 1.0);
    std::vector<std::complex<double>> chosen;
    // first shift: minimize the maximal single-shift factor
    double best = std::numeric_limits<double>::infinity();
    std::complex<double> first = cand.front();
    for (auto c : cand) {
        double worst = 0.0;
        for (auto l : lam) worst = std::max(worst, factor(c, l));
        if (worst < best) {
            best = worst;
            first = c;
        }
    }
    int used = 0;
    auto take = [&](std::complex<double> c) {
        chosen.push_back(c);
        used += weight(c);
        for (std::size_t i = 0; i < lam.size(); ++i) prod[i] *= factor(c, lam[i]);
    };
    take(first);
    while (used < max_shifts) {
        std::size_t worst = 0;
        for (std::size_t i = 1; i < lam.size(); ++i)
            if (prod[i] > prod[worst]) worst = i;
        auto c = lam[worst];
        if (c.imag() < 0.0) c = std::conj(c);
        if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) break;
        if (used + weight(c) > max_shifts) break;
        take(c);
    }
    return chosen;
}

/// Logarithmically spaced real shifts between the smallest and largest
/// magnitudes of the Ritz values (fallback when projection yields nothing).
inline std::vector<std::complex<double>> heuristic_real_shifts(const CVec& ritz, int count) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (Index i = 0; i < ritz.size(); ++i) {
        const double a = std::abs(ritz(i));
        if (a > 0.0 && std::isfinite(a)) {
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
    }
    if (!(hi > 0.0)) {
        lo = 1e-2;
        hi = 1e2;
    }
    if (hi / lo < 1.0 + 1e-12) return {{-lo, 0.0}};
    std::vector<std::complex<double>> out;
    for (int i = 0; i < count; ++i) {
        const double t = count > 1 ? static_cast<double>(i) / (count - 1) : 0.0;
        out.push_back({-lo * std::pow(hi / lo, t), 0.0});
    }
    return out;
}

}  // namespace detail


/// Outcome of one ADI run: X ~ Z D Z^T plus the residual factor W, for which
/// F^T X M + M X F + W0 S W0^T = W S W^T.
struct AdiResult {
    LowRankIndef X;
    Mat residual_factor;
    SolverReport report;
};

/// LDL^T low-rank ADI for F^T X M + M X F = -W0 S W0^T with F = A - B K on
/// ker J. W0 must lie in range(Pi^T). Throws SolverError on divergence or when
/// the iteration limit is reached.
inline AdiResult lradi_ldl(const SparsePencil& pencil, const Mat& K, const Mat& B, const Mat& W0,
                           const Mat& S, const AdiOptions& opts = {}) {
    const Index n = pencil.n();
    require_dims(W0.rows(), n, "lradi_ldl W");
    require(S.rows() == W0.cols() && S.cols() == W0.cols(), "lradi_ldl: core shape mismatch");
    if (K.rows() > 0) {
        require_dims(K.cols(), n, "lradi_ldl K");
        require_dims(B.rows(), n, "lradi_ldl B");
        require_dims(B.cols(), K.rows(), "lradi_ldl B/K");
    }
    AdiResult out;
    out.X = LowRankIndef{Mat(n, 0), Mat(0, 0)};
    out.residual_factor = W0;
    SolverReport& report = out.report;
    const double res0 = lowrank_sym_fro_gram(W0, S);
    if (res0 == 0.0) {
        report.converged = true;
        report.residual = 0.0;
        report.message = "zero right-hand side";
        return out;
    }
    const double target = std::max(opts.tol * res0, opts.abs_tol);

    auto make_shifts = [&](const Mat& span) {
        const Mat U = orth(pencil.projector().apply(span), 1e-10);
        const CVec ritz = detail::ritz_values(pencil, K, B, U);
        auto shifts = detail::select_shifts(ritz, opts.max_shifts);
        if (shifts.empty()) shifts = detail::heuristic_real_shifts(ritz, 8);
        return shifts;
    };
    std::map<double, detail::ShiftedSolve<double>> real_cache;
    std::vector<std::pair<std::complex<double>, detail::ShiftedSolve<std::complex<double>>>> cplx_cache;
    auto real_solver = [&](double p) -> const detail::ShiftedSolve<double>& {
        auto it = real_cache.find(p);
        if (it == real_cache.end())
            it = real_cache.emplace(p, detail::ShiftedSolve<double>(pencil, p, K, B)).first;
        return it->second;
    };
    auto cplx_solver = [&](std::complex<double> p) -> const detail::ShiftedSolve<std::complex<double>>& {
        for (auto& entry : cplx_cache)
            if (entry.first == p) return entry.second;
        cplx_cache.emplace_back(p, detail::ShiftedSolve<std::complex<double>>(pencil, p, K, B));
        return cplx_cache.back().second;
    };

    std::vector<Mat> zblocks, dblocks, cycle;
    Mat Zacc(n, 0), Dacc(0, 0);
    Index pending = 0;
    // folds the pending blocks into the compressed accumulator; D is block
    // diagonal, so the dense core stays bounded by the compressed rank
    auto fold = [&] {
        const Index r0 = Zacc.cols();
        Mat Z(n, r0 + pending);
        Mat D = Mat::Zero(r0 + pending, r0 + pending);
        Z.leftCols(r0) = Zacc;
        D.topLeftCorner(r0, r0) = Dacc;
        Index c = r0;
        for (std::size_t b = 0; b < zblocks.size(); ++b) {
            const Index w = zblocks[b].cols();
            Z.middleCols(c, w) = zblocks[b];
            D.block(c, c, w, w) = dblocks[b];
            c += w;
        }
        zblocks.clear();
        dblocks.clear();
        pending = 0;
        std::tie(Zacc, Dacc) = compress_ldl(Z, D, opts.trunc_tol);
    };
    std::vector<std::complex<double>> shifts = make_shifts(W0);
    std::size_t next = 0;
    Mat& W = out.residual_factor;
    double res = res0;
    Index total_cols = 0;
    int it = 0;
    while (it < opts.max_iter) {
        if (next >= shifts.size()) {
            // new shifts from the most recent columns of the solution factor
            Index cols = 0;
            std::vector<const Mat*> recent;
            for (auto b = cycle.rbegin(); b != cycle.rend() && cols < opts.basis_cols; ++b) {
                recent.push_back(&*b);
                cols += b->cols();
            }
            Mat span(n, cols);
            Index c = 0;
            for (const Mat* b : recent) {
                span.middleCols(c, b->cols()) = *b;
                c += b->cols();
            }
            cycle.clear();
            auto fresh = make_shifts(span);
            if (fresh != shifts) {
                real_cache.clear();
                cplx_cache.clear();
            }
            shifts = std::move(fresh);
            next = 0;
        }
        const auto p = shifts[next++];
        report.shift_history.push_back(p);
        if (p.imag() == 0.0) {
            const double pr = p.real();
            Mat V = real_solver(pr).solve(W);
            W -= 2.0 * pr * (pencil.M() * V);
            dblocks.push_back(-2.0 * pr * S);
            total_cols += V.cols();
            cycle.push_back(V);
            pending += V.cols();
            zblocks.push_back(std::move(V));
            ++it;
        } else {
            const CMat V = cplx_solver(p).solve(W.cast<std::complex<double>>());
            const double delta = p.real() / p.imag();
            const double gamma2 = -4.0 * p.real();
            Mat first = V.real() + delta * V.imag();
            W += gamma2 * (pencil.M() * first);
            dblocks.push_back(gamma2 * S);
            dblocks.push_back(gamma2 * (delta * delta + 1.0) * S);
            total_cols += 2 * first.cols();
            cycle.push_back(first);
            cycle.push_back(V.imag());
            pending += 2 * first.cols();
            zblocks.push_back(std::move(first));
            zblocks.push_back(V.imag());
            it += 2;
        }
        if (pending >= std::max<Index>(256, Zacc.cols())) fold();
        res = lowrank_sym_fro_gram(W, S);
        report.residual_history.push_back(res / res0);
        report.rank_history.push_back(total_cols);
        if (!std::isfinite(res) || res > 1e8 * res0) {
            report.iterations = it;
            report.residual = res / res0;
            report.message = "ADI diverged (shift quality or unstable operator)";
            throw SolverError(report.message, report);
        }
        if (res <= target) break;
    }
    report.iterations = it;
    report.residual = res / res0;
    report.converged = res <= target;
    if (!report.converged) {
        report.message = "ADI reached the iteration limit";
        throw SolverError(report.message, report);
    }

    fold();
    out.X.Z = std::move(Zacc);
    out.X.D = std::move(Dacc);
    report.rank_history.push_back(out.X.Z.cols());
    return out;
}

/// Low-rank Newton-Kleinman-ADI for the (projected) generalized Riccati
/// equation. B is the input matrix as used in the equation (already scaled
/// by 1/sqrt(alpha) if regularized). Returns P ~ Z Z^T.
inline std::pair<LowRankPsd, SolverReport> solve_riccati_lowrank(const SparsePencil& pencil, const Mat& B,
                                                                 const Mat& C,
                                                                 const RiccatiOptions& opts = {}) {
    const Index n = pencil.n();
    require_dims(B.rows(), n, "solve_riccati_lowrank B");
    require_dims(C.cols(), n, "solve_riccati_lowrank C");
    const auto& proj = pencil.projector();
    const Mat CpT = proj.apply_transpose(Mat(C.transpose()));
    const double nrmC = lowrank_sym_fro(CpT, Mat::Identity(CpT.cols(), CpT.cols()));
    SolverReport report;
    LowRankPsd out{Mat(n, 0)};
    if (nrmC == 0.0 && !opts.K0) {
        report.converged = true;
        report.residual = 0.0;
        report.message = "zero output matrix: P0 = 0";
        return {out, report};
    }
    const double scale = nrmC > 0.0 ? nrmC : 1.0;
    Mat K = Mat::Zero(B.cols(), n);
    if (opts.K0) {
        require(opts.K0->rows() == B.cols() && opts.K0->cols() == n, "solve_riccati_lowrank: K0 shape");
        K = proj.apply_transpose(Mat(opts.K0->transpose())).transpose();
    }
    double prev_abs = std::numeric_limits<double>::infinity();
    bool entered = false;
    int stalls = 0;
    for (int j = 0; j < opts.max_newton; ++j) {
        Mat W(n, CpT.cols() + K.rows());
        W << CpT, K.transpose();
        AdiOptions inner = opts.adi;
        inner.tol = 0.0;
        // inexact Newton: the inner accuracy follows the outer residual
        inner.abs_tol = std::max(0.05 * opts.tol * scale,
                                 std::isfinite(prev_abs) ? 0.01 * prev_abs : 0.0);
        if (!std::isfinite(prev_abs)) inner.tol = 1e-3;
        AdiResult adi;
        try {
            adi = lradi_ldl(pencil, K, B, W, Mat::Identity(W.cols(), W.cols()), inner);
        } catch (const SolverError& e) {
            report.message = detail::concat("Newton step ", j + 1, ": ", e.what());
            report.adi_iterations.push_back(e.report().iterations);
            report.iterations += e.report().iterations;
            throw SolverError(report.message, report);
        }
        report.iterations += adi.report.iterations;
        report.adi_iterations.push_back(adi.report.iterations);
        for (auto s : adi.report.shift_history) report.shift_history.push_back(s);
        Mat Z = adi.X.Z;
        for (Index c = 0; c < Z.cols(); ++c) Z.col(c) *= std::sqrt(std::max(adi.X.D(c, c), 0.0));
        const Mat Knew = (B.transpose() * Z) * (pencil.M() * Z).transpose();
        const Mat dK = Knew - K;
        Mat R(n, adi.residual_factor.cols() + dK.rows());
        R << adi.residual_factor, dK.transpose();
        Vec sgn(R.cols());
        sgn.head(adi.residual_factor.cols()).setOnes();
        sgn.tail(dK.rows()).setConstant(-1.0);
        const double abs_res = lowrank_sym_fro(R, Mat(sgn.asDiagonal()));
        const double rel = abs_res / scale;
        report.residual_history.push_back(rel);
        report.rank_history.push_back(Z.cols());
        report.newton_steps = j + 1;
        report.residual = rel;
        out.Z = std::move(Z);
        K = Knew;
        if (!std::isfinite(rel)) {
            report.message = "Newton iteration produced a non-finite residual";
            throw SolverError(report.message, report);
        }
        if (rel <= opts.tol) {
            report.converged = true;
            report.message = "converged";
            return {out, report};
        }
        if (entered && abs_res >= 0.9 * prev_abs) {
            if (++stalls >= 3) {
                report.message = "Newton iteration stagnates";
                throw SolverError(report.message, report);
            }
        } else {
            stalls = 0;
        }
        if (rel < 1.0) entered = true;
        prev_abs = abs_res;
    }
    report.message = "Newton iteration limit reached";
    throw SolverError(report.message, report);
}

/// Low-rank indefinite factorization of M P0 A_k + A_k^T P0 M with P0 = Z0 Z0^T:
/// Ck = [M Z0, A_k^T Z0], Sk = [[0, I], [I, 0]]. With a projector the second
/// block is taken as Pi^T A_k^T Z0 (Z0 is assumed to lie in ker J).
inline std::pair<Mat, Mat> lyap_rhs_factor(const SpMat& M, const SpMat& Ak, const Mat& Z0,
                                           const LerayProjector* proj = nullptr) {
    const Index n = M.rows();
    require_dims(Ak.rows(), n, "lyap_rhs_factor A_k");
    require_dims(Ak.cols(), n, "lyap_rhs_factor A_k");
    require_dims(Z0.rows(), n, "lyap_rhs_factor Z0");
    const Index l = Z0.cols();
    Mat AtZ = Ak.transpose() * Z0;
    if (proj) AtZ = proj->apply_transpose(AtZ);
    Mat Ck(n, 2 * l);
    Ck << M * Z0, AtZ;
    Mat Sk = Mat::Zero(2 * l, 2 * l);
    Sk.topRightCorner(l, l).setIdentity();
    Sk.bottomLeftCorner(l, l).setIdentity();
    return {Ck, Sk};
}

/// Solves F^T L M + M L F = -Ck Sk Ck^T with F = A0 - B K, K = B^T P0 M.
inline std::pair<LowRankIndef, SolverReport> solve_lyapunov_ldl(const SparsePencil& pencil, const Mat& K,
                                                                const Mat& B, const Mat& Ck, const Mat& Sk,
                                                                const AdiOptions& opts = {}) {
    auto [W, S] = compress_ldl(Ck, Sk, 1e-12);
    if (W.cols() == 0) {
        SolverReport rep;
        rep.converged = true;
        rep.residual = 0.0;
        rep.message = "zero right-hand side";
        return {LowRankIndef{Mat(pencil.n(), 0), Mat(0, 0)}, rep};
    }
    auto res = lradi_ldl(pencil, K, B, W, S, opts);
    return {std::move(res.X), std::move(res.report)};
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. The first
/// exception (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, jobs), count));
    std::vector<std::exception_ptr> errors(count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// The r independent Lyapunov solves for L_1..L_r, dispatched to a pool.
inline std::vector<std::pair<LowRankIndef, SolverReport>> solve_lyapunov_family(
    const SparsePencil& pencil, const Mat& K, const Mat& B, const Mat& Z0, const std::vector<SpMat>& Aks,
    const AdiOptions& opts = {}, unsigned jobs = 1) {
    std::vector<std::pair<LowRankIndef, SolverReport>> out(Aks.size());
    const LerayProjector* proj = pencil.projector().identity() ? nullptr : &pencil.projector();
    parallel_for(Aks.size(), jobs, [&](std::size_t k) {
        auto [Ck, Sk] = lyap_rhs_factor(pencil.M(), Aks[k], Z0, proj);
        out[k] = solve_lyapunov_ldl(pencil, K, B, Ck, Sk, opts);
    });
    return out;
}

}  // namespace lpvsdre
