#pragma once

// Quadratic input-affine systems
//     M v' = N(v, v) + A v + B u + f,   0 = J v - g,   y = C v
// their state-dependent coefficient (SDC) factorizations and the affine
// linear parameter-varying approximation driven by a POD encoder.

#include "lpvsdre/core.hpp"
#include "lpvsdre/io.hpp"
#include "lpvsdre/pod.hpp"

#include <Eigen/SparseCholesky>

#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <tuple>

namespace lpvsdre {

using io::TensorEntry;

/// Bilinear map N: R^n x R^n -> R^n stored as the row-compressed mode-1
/// unfolding, N(v, w)_i = sum_{j,k} T_ijk v_j w_k, with precomputed slot maps
/// into the sparsity patterns of both coefficient extractions.
class BilinearOperator {
public:
    BilinearOperator() = default;
    explicit BilinearOperator(Index n) : n_(n), row_ptr_(static_cast<std::size_t>(n) + 1, 0) {
        build_patterns();
    }

    /// Duplicate (i, j, k) entries are summed, zeros dropped.
    static BilinearOperator from_entries(Index n, std::vector<TensorEntry> entries) {
        for (const auto& e : entries)
            require(e.i >= 0 && e.i < n && e.j >= 0 && e.j < n && e.k >= 0 && e.k < n,
                    "BilinearOperator: tensor index out of range");
        std::sort(entries.begin(), entries.end(), [](const TensorEntry& a, const TensorEntry& b) {
            return std::tie(a.i, a.j, a.k) < std::tie(b.i, b.j, b.k);
        });
        BilinearOperator op;
        op.n_ = n;
        op.row_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
        for (std::size_t e = 0; e < entries.size();) {
            std::size_t f = e;
            double sum = 0.0;
            while (f < entries.size() && entries[f].i == entries[e].i &&
                   entries[f].j == entries[e].j && entries[f].k == entries[e].k)
                sum += entries[f++].value;
            if (sum != 0.0) {
                op.j_.push_back(entries[e].j);
                op.k_.push_back(entries[e].k);
                op.val_.push_back(sum);
                ++op.row_ptr_[static_cast<std::size_t>(entries[e].i) + 1];
            }
            e = f;
        }
        std::partial_sum(op.row_ptr_.begin(), op.row_ptr_.end(), op.row_ptr_.begin());
        op.build_patterns();
        return op;
    }

    [[nodiscard]] Index dim() const { return n_; }
    [[nodiscard]] std::size_t nonzeros() const { return val_.size(); }
    [[nodiscard]] bool empty() const { return val_.empty(); }

    [[nodiscard]] std::vector<TensorEntry> entries() const {
        std::vector<TensorEntry> out;
        out.reserve(val_.size());
        for (Index i = 0; i < n_; ++i)
            for (auto e = row_ptr_[static_cast<std::size_t>(i)];
                 e < row_ptr_[static_cast<std::size_t>(i) + 1]; ++e)
                out.push_back({i, j_[e], k_[e], val_[e]});
        return out;
    }

    /// N(v, w).
    [[nodiscard]] Vec apply(const Eigen::Ref<const Vec>& v, const Eigen::Ref<const Vec>& w) const {
        require_dims(v.size(), n_, "BilinearOperator::apply first argument");
        require_dims(w.size(), n_, "BilinearOperator::apply second argument");
        Vec out = Vec::Zero(n_);
        for (Index i = 0; i < n_; ++i) {
            double s = 0.0;
            for (auto e = row_ptr_[static_cast<std::size_t>(i)];
                 e < row_ptr_[static_cast<std::size_t>(i) + 1]; ++e)
                s += val_[e] * v(j_[e]) * w(k_[e]);
            out(i) = s;
        }
        return out;
    }

    /// N_1(v): w -> N(v, w).
    [[nodiscard]] SpMat fix_first(const Eigen::Ref<const Vec>& v) const {
        require_dims(v.size(), n_, "fix_first");
        SpMat out = first_pattern_;
        double* vals = out.valuePtr();
        std::fill(vals, vals + out.nonZeros(), 0.0);
        for (std::size_t e = 0; e < val_.size(); ++e) vals[first_slot_[e]] += val_[e] * v(j_[e]);
        return out;
    }

    /// N_2(w): v -> N(v, w).
    [[nodiscard]] SpMat fix_second(const Eigen::Ref<const Vec>& w) const {
        require_dims(w.size(), n_, "fix_second");
        SpMat out = second_pattern_;
        double* vals = out.valuePtr();
        std::fill(vals, vals + out.nonZeros(), 0.0);
        for (std::size_t e = 0; e < val_.size(); ++e) vals[second_slot_[e]] += val_[e] * w(k_[e]);
        return out;
    }

private:
    void build_patterns() {
        std::vector<Triplet> tf, ts;
        std::vector<Index> rows;
        rows.reserve(val_.size());
        for (Index i = 0; i < n_; ++i)
            for (auto e = row_ptr_[static_cast<std::size_t>(i)];
                 e < row_ptr_[static_cast<std::size_t>(i) + 1]; ++e)
                rows.push_back(i);
        for (std::size_t e = 0; e < val_.size(); ++e) {
            tf.emplace_back(rows[e], k_[e], 1.0);
            ts.emplace_back(rows[e], j_[e], 1.0);
        }
        first_pattern_ = pattern(tf);
        second_pattern_ = pattern(ts);
        first_slot_.resize(val_.size());
        second_slot_.resize(val_.size());
        for (std::size_t e = 0; e < val_.size(); ++e) {
            first_slot_[e] = slot(first_pattern_, rows[e], k_[e]);
            second_slot_[e] = slot(second_pattern_, rows[e], j_[e]);
        }
    }

    SpMat pattern(const std::vector<Triplet>& t) const {
        SpMat P(n_, n_);
        P.setFromTriplets(t.begin(), t.end());
        P.makeCompressed();
        return P;
    }

    static std::ptrdiff_t slot(const SpMat& P, Index row, Index col) {
        const auto* inner = P.innerIndexPtr();
        const auto b = P.outerIndexPtr()[col];
        const auto e = P.outerIndexPtr()[col + 1];
        const auto* it = std::lower_bound(inner + b, inner + e, static_cast<int>(row));
        return it - inner;
    }

    Index n_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<Index> j_, k_;
    std::vector<double> val_;
    SpMat first_pattern_, second_pattern_;
    std::vector<std::ptrdiff_t> first_slot_, second_slot_;
};

/// Quadratic system in DAE form. J with zero rows means unconstrained; f and
/// g of size zero mean no affine forcing (the usual case after shifting to an
/// equilibrium).
struct QuadraticSystem {
    SpMat M;
    SpMat A;
    BilinearOperator N;
    Mat B;
    Mat C;
    SpMat J;
    Vec f;
    Vec g;

    [[nodiscard]] Index n() const { return M.rows(); }
    [[nodiscard]] Index n_p() const { return J.rows(); }
    [[nodiscard]] Index p() const { return B.cols(); }
    [[nodiscard]] Index q() const { return C.rows(); }
    [[nodiscard]] bool constrained() const { return J.rows() > 0; }
    [[nodiscard]] bool has_forcing() const { return f.size() > 0 || g.size() > 0; }

    /// Shape checks only; see check_invariants for the numerical ones.
    void validate_dims() const {
        const Index nn = n();
        require(nn >= 1, "QuadraticSystem: empty state");
        require_dims(M.cols(), nn, "QuadraticSystem M");
        require_dims(A.rows(), nn, "QuadraticSystem A rows");
        require_dims(A.cols(), nn, "QuadraticSystem A cols");
        require_dims(N.dim(), nn, "QuadraticSystem N");
        require_dims(B.rows(), nn, "QuadraticSystem B");
        require_dims(C.cols(), nn, "QuadraticSystem C");
        require(B.cols() >= 1 && C.rows() >= 1, "QuadraticSystem: p, q must be >= 1");
        if (constrained()) require_dims(J.cols(), nn, "QuadraticSystem J");
        if (f.size()) require_dims(f.size(), nn, "QuadraticSystem f");
        if (g.size()) require_dims(g.size(), n_p(), "QuadraticSystem g");
    }
};

namespace detail {

/// Smallest over largest squared Cholesky pivot of S = J M^{-1} J^T; zero
/// when the factorization breaks down.
inline double schur_pivot_ratio(const SpMat& M, const SpMat& J) {
    Vec piv;
    if (is_diagonal(M)) {
        const Vec dinv = Vec(M.diagonal()).cwiseInverse();
        const SpMat S = J * dinv.asDiagonal() * SpMat(J.transpose());
        Eigen::SimplicialLLT<SpMat> llt(S);
        if (llt.info() != Eigen::Success) return 0.0;
        const SpMat L = llt.matrixL();
        piv = L.diagonal();
    } else {
        Eigen::SimplicialLLT<SpMat> mf(M);
        if (mf.info() != Eigen::Success) return 0.0;
        const Mat MinvJt = mf.solve(Mat(J.transpose()));
        const Mat S = J * MinvJt;
        Eigen::LLT<Mat> llt(0.5 * (S + S.transpose()));
        if (llt.info() != Eigen::Success) return 0.0;
        piv = llt.matrixLLT().diagonal();
    }
    if (piv.size() == 0) return 1.0;
    const double mx = piv.cwiseAbs2().maxCoeff();
    return mx > 0.0 ? piv.cwiseAbs2().minCoeff() / mx : 0.0;
}

}  // namespace detail

struct InvariantCheck {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool ok = false;
};

/// Numerical type invariants: M symmetric and positive definite, J of full
/// row rank, N bilinear and consistent with its coefficient extractions.
inline std::vector<InvariantCheck> check_invariants(const QuadraticSystem& sys,
                                                    std::uint64_t seed = 7) {
    sys.validate_dims();
    std::vector<InvariantCheck> out;
    const double mnorm = std::max(SpMat(sys.M).norm(), 1e-300);
    const double asym = SpMat(sys.M - SpMat(sys.M.transpose())).norm() / mnorm;
    out.push_back({"mass_symmetric", asym, 1e-14, asym <= 1e-14});

    Eigen::SimplicialLLT<SpMat> llt(sys.M);
    bool spd = asym <= 1e-14 && llt.info() == Eigen::Success;
    double min_pivot = 0.0;
    if (spd) {
        const SpMat L = llt.matrixL();
        min_pivot = L.diagonal().minCoeff();
        spd = min_pivot > 0.0;
    }
    out.push_back({"mass_positive_definite", min_pivot, 0.0, spd});

    if (sys.constrained() && spd) {
        const double ratio = detail::schur_pivot_ratio(sys.M, sys.J);
        const bool full = sys.n_p() <= sys.n() && ratio > 1e-10;
        out.push_back({"constraint_full_row_rank", ratio, 1e-10, full});
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    auto rnd = [&] {
        Vec x(sys.n());
        for (Index i = 0; i < x.size(); ++i) x(i) = nd(rng);
        return x;
    };
    const Vec v = rnd(), w = rnd(), z = rnd();
    const double a = nd(rng);
    const Vec lhs1 = sys.N.apply(a * v + w, z), rhs1 = a * sys.N.apply(v, z) + sys.N.apply(w, z);
    const Vec lhs2 = sys.N.apply(v, a * w + z), rhs2 = a * sys.N.apply(v, w) + sys.N.apply(v, z);
    const double scale = std::max({lhs1.norm(), lhs2.norm(), 1e-300});
    const double bil = std::max((lhs1 - rhs1).norm(), (lhs2 - rhs2).norm()) / scale;
    out.push_back({"bilinearity", bil, 1e-12, bil <= 1e-12});
    const Vec nvw = sys.N.apply(v, w);
    const double cons = std::max((sys.N.fix_first(v) * w - nvw).norm(),
                                 (sys.N.fix_second(w) * v - nvw).norm()) /
                        std::max(nvw.norm(), 1e-300);
    out.push_back({"coefficient_extraction", cons, 1e-12, cons <= 1e-12});
    return out;
}

/// Throws InvariantError naming the first violated invariant.
inline void validate(const QuadraticSystem& sys) {
    for (const auto& c : check_invariants(sys))
        if (!c.ok)
            throw InvariantError(c.name, detail::concat("measured ", c.value, ", tolerance ",
                                                        c.tolerance));
}

/// Blended SDC coefficient N_lambda(v) = lambda N_1(v) + (1 - lambda) N_2(v).
inline SpMat sdc_coefficient(const QuadraticSystem& sys, const Eigen::Ref<const Vec>& v,
                             double lambda) {
    require_dims(v.size(), sys.n(), "sdc_coefficient");
    require(v.allFinite(), "sdc_coefficient: non-finite state");
    if (lambda < 0.0 || lambda > 1.0)
        std::cerr << "warning: sdc_coefficient blending lambda = " << lambda
                  << " outside [0, 1]\n";
    SpMat out = lambda * sys.N.fix_first(v) + (1.0 - lambda) * sys.N.fix_second(v);
    out.prune(0.0);
    return out;
}

/// Right-hand side N(v, v) + A v + B u (+ f), without M^{-1} and without the
/// constraint force.
inline Vec rhs(const QuadraticSystem& sys, const Eigen::Ref<const Vec>& v,
               const Eigen::Ref<const Vec>& u) {
    require_dims(v.size(), sys.n(), "rhs state");
    require_dims(u.size(), sys.p(), "rhs input");
    Vec out = sys.N.apply(v, v) + sys.A * v + sys.B * u;
    if (sys.f.size()) out += sys.f;
    return out;
}

/// Affine LPV coefficient A0 + sum_k rho_k A_k with rho = encode(v).
///
/// All matrices are unprojected; for constrained systems the Leray
/// projection is applied implicitly by the matrix-equation solvers.
class AffineLpvModel {
public:
    AffineLpvModel(SpMat A0, std::vector<SpMat> coeffs, std::shared_ptr<const PodBasis> basis,
                   double lambda)
        : A0_(std::move(A0)), coeffs_(std::move(coeffs)), basis_(std::move(basis)),
          lambda_(lambda) {
        if (basis_) require_dims(static_cast<Index>(coeffs_.size()), basis_->rank(), "AffineLpvModel");
        else require(coeffs_.empty(), "AffineLpvModel: coefficients without a scheduler");
    }

    [[nodiscard]] Index parameters() const { return static_cast<Index>(coeffs_.size()); }
    [[nodiscard]] const SpMat& A0() const { return A0_; }
    [[nodiscard]] const std::vector<SpMat>& coeffs() const { return coeffs_; }
    [[nodiscard]] const SpMat& coeff(Index k) const { return coeffs_.at(static_cast<std::size_t>(k)); }
    [[nodiscard]] const std::shared_ptr<const PodBasis>& basis() const { return basis_; }
    [[nodiscard]] double lambda() const { return lambda_; }

    [[nodiscard]] Vec schedule(const Eigen::Ref<const Vec>& v) const {
        return basis_ ? basis_->encode(v) : Vec(0);
    }

    [[nodiscard]] SpMat evaluate(const Eigen::Ref<const Vec>& rho) const {
        require_dims(rho.size(), parameters(), "AffineLpvModel::evaluate");
        SpMat out = A0_;
        for (Index k = 0; k < rho.size(); ++k) out += rho(k) * coeffs_[static_cast<std::size_t>(k)];
        return out;
    }

    /// (A0 + sum_k rho_k(v) A_k) v.
    [[nodiscard]] Vec apply_at(const Eigen::Ref<const Vec>& v) const {
        const Vec rho = schedule(v);
        Vec out = A0_ * v;
        for (Index k = 0; k < rho.size(); ++k)
            out += rho(k) * (coeffs_[static_cast<std::size_t>(k)] * v);
        return out;
    }

private:
    SpMat A0_;
    std::vector<SpMat> coeffs_;
    std::shared_ptr<const PodBasis> basis_;
    double lambda_;
};

/// A0 = A, A_k = N_lambda(v_k) for the k-th POD mode v_k.
inline AffineLpvModel build_affine_lpv(const QuadraticSystem& sys,
                                       std::shared_ptr<const PodBasis> basis, double lambda) {
    require(basis != nullptr, "build_affine_lpv: missing basis");
    require(basis->rank() >= 1, "build_affine_lpv: basis rank must be >= 1");
    require_dims(basis->dim(), sys.n(), "build_affine_lpv basis");
    std::vector<SpMat> coeffs;
    coeffs.reserve(static_cast<std::size_t>(basis->rank()));
    for (Index k = 0; k < basis->rank(); ++k)
        coeffs.push_back(sdc_coefficient(sys, basis->modes().col(k), lambda));
    return AffineLpvModel(sys.A, std::move(coeffs), std::move(basis), lambda);
}

/// Exports M, A, B, C, J (if any), f, g (if any) and the N unfolding.
inline void save_system(const std::filesystem::path& dir, const QuadraticSystem& sys) {
    std::filesystem::create_directories(dir);
    io::write_market(dir / "M.mtx", sys.M);
    io::write_market(dir / "A.mtx", sys.A);
    io::write_market_dense(dir / "B.mtx", sys.B);
    io::write_market_dense(dir / "C.mtx", sys.C);
    if (sys.constrained()) io::write_market(dir / "J.mtx", sys.J);
    if (sys.f.size()) io::write_market_dense(dir / "f.mtx", Mat(sys.f));
    if (sys.g.size()) io::write_market_dense(dir / "g.mtx", Mat(sys.g));
    io::write_tensor_market(dir / "N.mtx", sys.n(), sys.N.entries());
}

inline QuadraticSystem load_system(const std::filesystem::path& dir) {
    QuadraticSystem sys;
    sys.M = io::read_market(dir / "M.mtx");
    sys.A = io::read_market(dir / "A.mtx");
    sys.B = io::read_market_dense(dir / "B.mtx");
    sys.C = io::read_market_dense(dir / "C.mtx");
    if (std::filesystem::exists(dir / "J.mtx")) sys.J = io::read_market(dir / "J.mtx");
    else sys.J = SpMat(0, sys.M.rows());
    if (std::filesystem::exists(dir / "f.mtx")) sys.f = io::read_market_dense(dir / "f.mtx").col(0);
    if (std::filesystem::exists(dir / "g.mtx")) sys.g = io::read_market_dense(dir / "g.mtx").col(0);
    auto [n, entries] = io::read_tensor_market(dir / "N.mtx");
    sys.N = BilinearOperator::from_entries(n, std::move(entries));
    sys.validate_dims();
    return sys;
}

}  // namespace lpvsdre
