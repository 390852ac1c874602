#include "catch_amalgamated.hpp"

#include "lpvsdre/bench.hpp"
#include "lpvsdre/feedback.hpp"
#include "lpvsdre/sim.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

using namespace lpvsdre;
using namespace testsupport;

namespace {

// xdot = a x + c x^2 + b u, y = x
QuadraticSystem scalar_system(double a, double c, double b = 1.0) {
    QuadraticSystem s;
    s.M = SpMat(1, 1);
    s.M.insert(0, 0) = 1.0;
    s.A = SpMat(1, 1);
    s.A.insert(0, 0) = a;
    s.N = BilinearOperator::from_entries(1, c == 0.0 ? std::vector<TensorEntry>{}
                                                     : std::vector<TensorEntry>{{0, 0, 0, c}});
    s.B = Mat::Constant(1, 1, b);
    s.C = Mat::Constant(1, 1, 1.0);
    return s;
}

QuadraticSystem synthetic(Index n, Index np, Index unstable, std::uint64_t seed) {
    BenchmarkSpec spec;
    spec.kind = BenchmarkSpec::Kind::Synthetic;
    spec.n = n;
    spec.constraint_rows = np;
    spec.unstable_modes = unstable;
    spec.seed = seed;
    return make_synthetic(spec);
}

std::shared_ptr<const SdreExpansion> lqr(const QuadraticSystem& sys, double alpha = 1.0) {
    const AffineLpvModel lpv(sys.A, {}, nullptr, 0.0);
    SynthesisOptions o;
    o.dense = true;
    o.alpha = alpha;
    return std::make_shared<const SdreExpansion>(synthesize(sys, lpv, o).expansion);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("linear scalar step is implicit Euler", "[sim]") {
    const auto s = scalar_system(-2.0, 0.0);
    for (double dt : {0.1, 0.01}) {
        const Vec v = Vec::Constant(1, 0.7);
        CHECK(std::abs(imex_step(s, v, Vec::Zero(1), dt)(0) - 0.7 / (1.0 + 2.0 * dt)) <= 1e-15);
    }
}

TEST_CASE("nonlinearity and input enter explicitly", "[sim]") {
    const auto s = scalar_system(-1.0, 3.0, 2.0);
    const double dt = 0.05, v = 0.4, u = -0.3;
    const double ref = (v + dt * (3.0 * v * v + 2.0 * u)) / (1.0 + dt);
    CHECK(imex_step(s, Vec::Constant(1, v), Vec::Constant(1, u), dt)(0) == Catch::Approx(ref).epsilon(1e-15));
}

TEST_CASE("local error is second order in dt", "[sim]") {
    for (Index np : {0, 12}) {
        const auto sys = synthetic(50, np, 0, 31);
        std::mt19937_64 rng(32);
        Vec v0 = random_vec(sys.n(), rng);
        if (np) v0 = LerayProjector(sys.M, sys.J).apply(v0);
        std::vector<double> dts;
        for (int k = 0; k < 6; ++k) dts.push_back(0.02 / std::pow(2.0, k));
        CHECK(loglog_slope(dts, imex_local_errors(sys, v0, dts)) == Catch::Approx(2.0).margin(0.1));
        CHECK(loglog_slope(dts, imex_local_errors(sys, v0, dts, true)) == Catch::Approx(2.0).margin(0.1));
    }
}

TEST_CASE("every iterate satisfies the constraint", "[sim]") {
    const auto sys = synthetic(80, 20, 0, 33);
    SimConfig cfg;
    cfg.dt = 0.01;
    cfg.t_end = 2.0;
    cfg.t_c = 1.0;
    cfg.controller = lqr(sys);
    const auto tr = run(sys, cfg);
    CHECK_FALSE(tr.blowup);
    CHECK(tr.max_constraint_ratio <= 1e-10);
}

TEST_CASE("snapshot schedule: 401 equally spaced samples on [0, 0.5]", "[sim]") {
    const auto sys = synthetic(30, 0, 0, 34);
    const auto s = collect_snapshots(sys);
    REQUIRE(s.X.cols() == 401);
    REQUIRE(s.times.size() == 401);
    CHECK(s.times.front() == 0.0);
    CHECK(s.times.back() == Catch::Approx(0.5).epsilon(1e-15));
    for (std::size_t i = 1; i < s.times.size(); ++i)
        CHECK(s.times[i] - s.times[i - 1] == Catch::Approx(0.5 / 400).epsilon(1e-9));
    CHECK(s.X.col(0).norm() == 0.0);
    CHECK(s.X.allFinite());
    CHECK(s.X.col(400).norm() > 0.0);
}

TEST_CASE("open loop stable system stays bounded", "[sim]") {
    const auto sys = synthetic(40, 0, 0, 35);
    SimConfig cfg;
    cfg.dt = 0.01;
    cfg.t_end = 5.0;
    cfg.t_c = 5.0;
    const auto tr = run(sys, cfg);
    CHECK_FALSE(tr.blowup);
    CHECK(tr.Y.allFinite());
    CHECK(tr.samples() == 501);
}

TEST_CASE("LQR closed-loop decay matches the spectral abscissa", "[sim]") {
    // linear, real spectrum: symmetric diffusion with an unstable shift
    const Index n = 60;
    QuadraticSystem sys;
    sys.M = SpMat(n, n);
    sys.M.setIdentity();
    sys.A = diffusion(n, 0.05, 0.0, 1.0);
    sys.N = BilinearOperator::from_entries(n, {});
    sys.B = Mat::Zero(n, 2);
    sys.B.col(0) = indicator(n, 10, 20).col(0);
    sys.B.col(1) = indicator(n, 40, 50).col(0);
    sys.C = Mat::Ones(1, n) / static_cast<double>(n);
    const auto ctrl = lqr(sys);
    const Mat F = Mat(sys.A) - sys.B * ctrl->gains().K0;
    const double rate = spectral_abscissa(generalized_spectrum(sys.M, F));
    REQUIRE(rate < 0.0);
    std::mt19937_64 rng(36);
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.t_end = 12.0;
    cfg.t_c = 0.0;
    cfg.controller = ctrl;
    cfg.v0 = random_vec(n, rng).cwiseAbs();
    const auto tr = run(sys, cfg);
    // slope of log |y| over the second half, where the slowest mode dominates
    std::vector<double> t, ly;
    for (Index c = tr.samples() / 2; c < tr.samples(); ++c) {
        t.push_back(tr.times[static_cast<std::size_t>(c)]);
        ly.push_back(std::log(tr.Y.col(c).norm()));
    }
    const double mt = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        sxy += (t[i] - mt) * (ly[i] - my);
        sxx += (t[i] - mt) * (t[i] - mt);
    }
    CHECK(sxy / sxx == Catch::Approx(rate).epsilon(0.1));
}

TEST_CASE("bracket must contain a sign change", "[sim]") {
    const auto sys = synthetic(30, 0, 0, 37);
    SimConfig cfg;
    cfg.dt = 0.01;
    cfg.t_end = 10.0;
    cfg.controller = lqr(sys);
    ImexStepper stepper(std::make_shared<const QuadraticSystem>(sys), cfg.dt);
    CHECK_THROWS_AS(find_critical_tc(stepper, cfg, 0.0, 1.0, 0.01), BracketError);
}

TEST_CASE("bisection finds the basin crossing of a scalar system", "[sim]") {
    // xdot = a x + x^2 + u with LQR gain k = a + sqrt(a^2 + 1); the closed
    // loop keeps the exact unstable fixed point x* = sqrt(a^2 + 1), also for
    // the discrete map, so t_c* is the last grid time with x(t) < x*.
    const double a = 0.5, dt = 0.01;
    const auto sys = scalar_system(a, 1.0);
    const auto ctrl = lqr(sys);
    const double k = a + std::sqrt(a * a + 1.0);
    REQUIRE(ctrl->gains().K0(0, 0) == Catch::Approx(k).epsilon(1e-10));
    const double xstar = std::sqrt(a * a + 1.0);
    double x = 0.0;
    long m = 0;
    while (x < xstar) {
        x = (x + dt * (x * x + std::sin(static_cast<double>(m) * dt))) / (1.0 - dt * a);
        ++m;
    }
    const double critical = static_cast<double>(m - 1) * dt;

    SimConfig cfg;
    cfg.dt = dt;
    cfg.t_end = 15.0;
    cfg.controller = ctrl;
    cfg.blowup_norm = 1e3;
    ImexStepper stepper(std::make_shared<const QuadraticSystem>(sys), dt);
    const double tol = 1e-4;
    const auto b = find_critical_tc(stepper, cfg, 0.0, 4.0, tol);
    CHECK(b.hi - b.lo <= tol);
    CHECK(b.lo <= critical + 1e-9);
    CHECK(b.hi >= critical - 1e-9);
    CHECK(critical - b.lo <= tol);
}

TEST_CASE("identical runs write identical CSV", "[sim][io]") {
    const auto sys = synthetic(40, 10, 1, 38);
    SimConfig cfg;
    cfg.dt = 0.01;
    cfg.t_end = 1.0;
    cfg.t_c = 0.3;
    cfg.controller = lqr(sys);
    const auto dir = std::filesystem::temp_directory_path() / "lpvsdre_test_sim";
    std::filesystem::create_directories(dir);
    run(sys, cfg).write_csv(dir / "a.csv");
    run(sys, cfg).write_csv(dir / "b.csv");
    const auto a = slurp(dir / "a.csv");
    CHECK(a == slurp(dir / "b.csv"));
    CHECK(a.substr(0, a.find('\n')) == "time,y_1,y_2,u_norm,blowup_flag");
}

TEST_CASE("steady state of a linear system without forcing is zero", "[sim]") {
    const auto sys = synthetic(30, 8, 0, 39);
    QuadraticSystem lin = sys;
    lin.N = BilinearOperator::from_entries(sys.n(), {});
    const auto ss = steady_state(lin);
    CHECK(ss.v.norm() == 0.0);
}

TEST_CASE("sim config invariants", "[sim]") {
    SimConfig cfg;
    cfg.t_end = 1.0;
    cfg.t_c = 2.0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg.t_c = 0.5;
    cfg.dt = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
}
