#include "catch_amalgamated.hpp"

#include "lpvsdre/bench.hpp"
#include "lpvsdre/model.hpp"
#include "support.hpp"

using namespace lpvsdre;
using namespace testsupport;

namespace {

QuadraticSystem small_system(std::uint64_t seed, Index np = 0) {
    BenchmarkSpec spec;
    spec.kind = BenchmarkSpec::Kind::Synthetic;
    spec.n = 40;
    spec.seed = seed;
    spec.constraint_rows = np;
    return make_synthetic(spec);
}

}  // namespace

TEST_CASE("bilinear operator: apply agrees with a dense tensor oracle", "[model]") {
    std::mt19937_64 rng(1);
    const Index n = 6;
    std::vector<TensorEntry> e;
    std::uniform_int_distribution<Index> idx(0, n - 1);
    std::vector<double> T(static_cast<std::size_t>(n * n * n), 0.0);
    for (int k = 0; k < 40; ++k) {
        TensorEntry t{idx(rng), idx(rng), idx(rng), std::normal_distribution<double>()(rng)};
        T[static_cast<std::size_t>((t.i * n + t.j) * n + t.k)] += t.value;
        e.push_back(t);
    }
    const auto N = BilinearOperator::from_entries(n, e);
    const Vec v = random_vec(n, rng), w = random_vec(n, rng);
    Vec ref = Vec::Zero(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            for (Index k = 0; k < n; ++k) ref(i) += T[static_cast<std::size_t>((i * n + j) * n + k)] * v(j) * w(k);
    CHECK((N.apply(v, w) - ref).norm() <= 1e-13 * ref.norm());
    CHECK((N.fix_first(v) * w - ref).norm() <= 1e-13 * ref.norm());
    CHECK((N.fix_second(w) * v - ref).norm() <= 1e-13 * ref.norm());
}

TEST_CASE("generated systems satisfy every type invariant", "[model]") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (Index np : {0, 8}) {
            const auto sys = small_system(seed, np);
            for (const auto& c : check_invariants(sys)) {
                INFO(c.name << " = " << c.value);
                CHECK(c.ok);
            }
            CHECK_NOTHROW(validate(sys));
        }
    }
}

TEST_CASE("corrupted mass matrix fails the named invariant", "[model]") {
    auto sys = small_system(4);
    sys.M.coeffRef(0, 1) += 0.1;
    try {
        validate(sys);
        FAIL("validate accepted an asymmetric mass matrix");
    } catch (const InvariantError& e) {
        CHECK(e.invariant() == "mass_symmetric");
    }
}

TEST_CASE("rank-deficient constraint is rejected", "[model]") {
    auto sys = small_system(5, 6);
    SpMat J = sys.J;
    // duplicate the first row into the last one
    std::vector<Triplet> t;
    for (Index c = 0; c < J.outerSize(); ++c)
        for (SpMat::InnerIterator it(J, c); it; ++it) {
            if (it.row() != J.rows() - 1) t.emplace_back(it.row(), it.col(), it.value());
            if (it.row() == 0) t.emplace_back(J.rows() - 1, it.col(), it.value());
        }
    sys.J.setZero();
    sys.J.setFromTriplets(t.begin(), t.end());
    bool flagged = false;
    for (const auto& c : check_invariants(sys))
        if (c.name == "constraint_full_row_rank") flagged = !c.ok;
    CHECK(flagged);
}

TEST_CASE("SDC blending reproduces N(v, v) for every lambda", "[model]") {
    const auto sys = small_system(6);
    std::mt19937_64 rng(7);
    const Vec v = random_vec(sys.n(), rng);
    const Vec nvv = sys.N.apply(v, v);
    for (double lam : {0.0, 0.25, 0.75, 1.0})
        CHECK((sdc_coefficient(sys, v, lam) * v - nvv).norm() <= 1e-12 * nvv.norm());
}

TEST_CASE("affine LPV model evaluates A0 + sum rho_k A_k", "[model]") {
    const auto sys = small_system(8);
    std::mt19937_64 rng(9);
    SnapshotSet snaps;
    snaps.X = random_mat(sys.n(), 12, rng);
    auto basis = std::make_shared<const PodBasis>(compute_pod(snaps, sys.M, 3));
    const auto lpv = build_affine_lpv(sys, basis, 0.75);
    CHECK(lpv.parameters() == 3);
    CHECK(lpv.lambda() == 0.75);
    const Vec v = random_vec(sys.n(), rng);
    const Vec rho = lpv.schedule(v);
    CHECK((rho - basis->modes().transpose() * (sys.M * v)).norm() <= 1e-12 * rho.norm());
    const Vec direct = lpv.evaluate(rho) * v;
    CHECK((lpv.apply_at(v) - direct).norm() <= 1e-12 * direct.norm());
    // on span(V_r) the quasi-LPV form reproduces the nonlinearity exactly
    const Vec w = basis->decode(rho);
    const Vec exact = sys.A * w + sys.N.apply(w, w);
    CHECK((lpv.evaluate(lpv.schedule(w)) * w - exact).norm() <= 1e-10 * exact.norm());
}

TEST_CASE("system files round trip", "[model][io]") {
    auto sys = small_system(10, 5);
    sys.f = Vec::Ones(sys.n());
    const auto dir = std::filesystem::temp_directory_path() / "lpvsdre_test_model";
    save_system(dir, sys);
    const auto back = load_system(dir);
    CHECK(Mat(back.M - sys.M).norm() == 0.0);
    CHECK(Mat(back.A - sys.A).norm() == 0.0);
    CHECK(Mat(back.J - sys.J).norm() == 0.0);
    CHECK((back.B - sys.B).norm() == 0.0);
    CHECK((back.C - sys.C).norm() == 0.0);
    CHECK((back.f - sys.f).norm() == 0.0);
    std::mt19937_64 rng(11);
    const Vec v = random_vec(sys.n(), rng);
    CHECK((back.N.apply(v, v) - sys.N.apply(v, v)).norm() == 0.0);
}
