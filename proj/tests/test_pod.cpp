#include "catch_amalgamated.hpp"

#include "lpvsdre/pod.hpp"
#include "support.hpp"

using namespace lpvsdre;
using namespace testsupport;

namespace {

/// ||X - V V^T M X||_{M}, the M-weighted Frobenius norm of the residual.
double weighted_error(const SnapshotSet& s, const SpMat& M, const PodBasis& b) {
    const Mat E = s.X - b.modes() * (b.modes().transpose() * (M * s.X));
    return std::sqrt(std::max(0.0, (E.transpose() * (M * E)).trace()));
}

}  // namespace

TEST_CASE("POD modes are M-orthonormal and encode/decode is a projector", "[pod]") {
    std::mt19937_64 rng(1);
    const Index n = 50;
    const SpMat M = random_spd_mass(n, rng);
    SnapshotSet s;
    s.X = random_mat(n, 20, rng);
    const auto b = compute_pod(s, M, 6);
    CHECK((b.modes().transpose() * (M * b.modes()) - Mat::Identity(6, 6)).norm() <= 1e-12);
    const Vec v = random_vec(n, rng);
    const Vec p = b.decode(b.encode(v));
    CHECK((b.decode(b.encode(p)) - p).norm() <= 1e-12 * v.norm());
    for (Index c = 0; c < b.rank(); ++c) {
        Index imax = 0;
        b.modes().col(c).cwiseAbs().maxCoeff(&imax);
        CHECK(b.modes()(imax, c) > 0.0);
    }
}

TEST_CASE("POD truncation error equals the discarded singular values", "[pod]") {
    std::mt19937_64 rng(2);
    const Index n = 60;
    const SpMat M = random_spd_mass(n, rng);
    SnapshotSet s;
    s.X = random_mat(n, 4, rng) * random_mat(4, 30, rng) + 1e-2 * random_mat(n, 30, rng);
    const auto full = compute_pod(s, M, 25);
    double prev = std::numeric_limits<double>::infinity();
    for (Index r = 1; r <= 25; ++r) {
        const auto b = full.truncated(r);
        const double err = weighted_error(s, M, b);
        const double tail = full.sigma().tail(full.sigma().size() - r).norm();
        CHECK(err == Catch::Approx(tail).epsilon(1e-8));
        CHECK(err <= prev);
        prev = err;
    }
}

TEST_CASE("POD rank above numerical rank shrinks with a warning", "[pod]") {
    std::mt19937_64 rng(3);
    const Index n = 30;
    SnapshotSet s;
    s.X = random_mat(n, 2, rng) * random_mat(2, 10, rng);
    const auto b = compute_pod(s, sparse_identity(n), 5);
    CHECK(b.rank() == 2);
    CHECK_FALSE(b.warning().empty());
    CHECK_THROWS_AS(compute_pod(s, sparse_identity(n), 0), ContractError);
}

TEST_CASE("POD basis round trips through the binary container", "[pod][io]") {
    std::mt19937_64 rng(4);
    const Index n = 20;
    const SpMat M = random_spd_mass(n, rng);
    SnapshotSet s;
    s.X = random_mat(n, 8, rng);
    const auto b = compute_pod(s, M, 4);
    const auto path = std::filesystem::temp_directory_path() / "lpvsdre_pod_basis.lpvb";
    save_basis(path, b);
    const auto back = load_basis(path, M);
    CHECK((back.modes() - b.modes()).norm() == 0.0);
    CHECK((back.sigma() - b.sigma()).norm() == 0.0);
}
