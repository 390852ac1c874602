// lpvsdre command-line driver.
//
//   lpvsdre pipeline    --config c.ini --out dir [--jobs k] [--stage name]
//   lpvsdre pod         --config c.ini --out dir
//   lpvsdre solve-mateq --config c.ini --out dir [--jobs k]
//   lpvsdre simulate    --config c.ini --out dir [--jobs k]
//   lpvsdre verify      --config c.ini
//
// Stage results are cached under $LPVSDRE_CACHE_DIR (default <out>/cache).

#include "lpvsdre/pipeline.hpp"
#include "lpvsdre/projector.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace lpvsdre;
namespace lp = lpvsdre::pipeline;

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    unsigned jobs = 1;
    std::string stage = "bisect";
    bool no_cache = false;
};

int run_stages(const Common& c, lp::Stage last) {
    const auto cfg = lp::load_config(c.config);
    lp::PipelineOptions opts;
    opts.last = last;
    opts.jobs = c.jobs;
    opts.no_cache = c.no_cache;
    const auto res = lp::run_pipeline(cfg, c.out, opts);
    lp::print_summary(std::cout, res);
    return 0;
}

// Invariants of the configured system, its steady state and the projector.
int verify(const Common& c) {
    const auto cfg = lp::load_config(c.config);
    const auto sys = make_benchmark(cfg.bench);
    auto checks = check_invariants(sys);

    const auto ss = steady_state(sys, cfg.newton);
    checks.push_back({"steady_state_residual", ss.residual, cfg.newton.tol, ss.residual <= cfg.newton.tol});
    if (sys.constrained()) {
        const double gnorm = sys.g.size() ? sys.g.norm() : 0.0;
        const Vec jv = sys.J * ss.v - (sys.g.size() ? sys.g : Vec::Zero(sys.n_p()));
        const double scale = std::max(gnorm, ss.v.norm());
        const double div = scale > 0.0 ? jv.norm() / scale : jv.norm();
        checks.push_back({"steady_state_divergence", div, 1e-10, div <= 1e-10});

        const LerayProjector P(sys.M, sys.J);
        std::mt19937_64 rng(cfg.bench.seed);
        std::normal_distribution<double> g;
        double idem = 0.0, ker = 0.0, sym = 0.0;
        for (int s = 0; s < 20; ++s) {
            Vec x(sys.n());
            for (Index i = 0; i < x.size(); ++i) x(i) = g(rng);
            const Vec px = P.apply(x);
            const double nx = x.norm();
            idem = std::max(idem, (P.apply(px) - px).norm() / nx);
            ker = std::max(ker, (sys.J * px).norm() / nx);
            sym = std::max(sym, (P.apply_transpose(Vec(sys.M * x)) - sys.M * px).norm() / nx);
        }
        checks.push_back({"projector_idempotent", idem, 1e-10, idem <= 1e-10});
        checks.push_back({"projector_range_in_kernel", ker, 1e-10, ker <= 1e-10});
        checks.push_back({"projector_mass_symmetric", sym, 1e-10, sym <= 1e-10});
    }

    bool ok = true;
    std::cout << kind_name(cfg.bench.kind) << ": n = " << sys.n() << ", n_p = " << sys.n_p() << ", p = " << sys.p()
              << ", q = " << sys.q() << "\n";
    for (const auto& ch : checks) {
        std::cout << "  " << (ch.ok ? "ok    " : "FAILED") << "  " << std::left << std::setw(28) << ch.name
                  << std::setw(14) << std::setprecision(3) << ch.value << "tolerance " << ch.tolerance << "\n";
        ok = ok && ch.ok;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LPV/SDRE feedback design for quadratic systems"};
    app.require_subcommand(1);
    Common c;

    auto add_common = [&](CLI::App* sub, bool with_stage) {
        sub->add_option("--config", c.config, "INI configuration file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", c.out, "output directory")->capture_default_str();
        sub->add_option("--jobs", c.jobs, "parallel workers")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_flag("--no-cache", c.no_cache, "recompute every stage");
        if (with_stage)
            sub->add_option("--stage", c.stage, "last stage: system | pod | mateq | simulate | bisect")
                ->capture_default_str();
    };
    auto* pipe = app.add_subcommand("pipeline", "run all stages (or up to --stage)");
    add_common(pipe, true);
    auto* pod = app.add_subcommand("pod", "steady state, snapshots and POD basis");
    add_common(pod, false);
    auto* mateq = app.add_subcommand("solve-mateq", "Riccati and Lyapunov solves for every alpha");
    add_common(mateq, false);
    auto* sim = app.add_subcommand("simulate", "closed-loop runs for every (alpha, r, t_c)");
    add_common(sim, false);
    auto* ver = app.add_subcommand("verify", "check system, steady-state and projector invariants");
    ver->add_option("--config", c.config, "INI configuration file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*pipe) return run_stages(c, lp::parse_stage(c.stage));
        if (*pod) return run_stages(c, lp::Stage::Pod);
        if (*mateq) return run_stages(c, lp::Stage::Mateq);
        if (*sim) return run_stages(c, lp::Stage::Simulate);
        if (*ver) return verify(c);
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const io::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SolverError& e) {
        std::cerr << "solver failure: " << e.what() << " (residual " << e.report().residual << ")\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
