#pragma once

// Steady states, IMEX Euler time stepping with the switch-on protocol, open
// loop snapshot generation and bisection of the critical switch-on time.

#include "lpvsdre/core.hpp"
#include "lpvsdre/feedback.hpp"
#include "lpvsdre/io.hpp"
#include "lpvsdre/model.hpp"
#include "lpvsdre/pod.hpp"
#include "lpvsdre/projector.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace lpvsdre {

class BracketError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SteadyState {
    Vec v;
    Vec p;
    double residual = 0.0;  // ||N(v,v) + A v + f - J^T p|| / scale
    int iterations = 0;
    QuadraticSystem shifted;  // origin moved to v, no affine terms
};

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
    int continuation_steps = 8;  // homotopy stages on (f, g) if the direct solve fails
};

namespace detail {

inline double steady_residual(const QuadraticSystem& sys, const Vec& v, const Vec& p, double s, Vec* r_out = nullptr) {
    Vec r = sys.N.apply(v, v) + sys.A * v;
    if (sys.f.size()) r += s * sys.f;
    if (sys.constrained()) r -= SpMat(sys.J.transpose()) * p;
    double c = 0.0;
    if (sys.constrained()) {
        Vec jv = sys.J * v;
        if (sys.g.size()) jv -= s * sys.g;
        c = jv.norm();
    }
    if (r_out) *r_out = r;
    return std::hypot(r.norm(), c);
}

/// Damped Newton for the homotopy level s; returns false on failure.
inline bool steady_newton(const QuadraticSystem& sys, Vec& v, Vec& p, double s, double scale,
                          const NewtonOptions& opts, int& iters) {
    const SpMat Jt = sys.constrained() ? SpMat(sys.J.transpose()) : SpMat();
    for (int it = 0; it < opts.max_iter; ++it) {
        Vec r;
        const double res = steady_residual(sys, v, p, s, &r);
        if (!std::isfinite(res)) return false;
        if (res <= opts.tol * scale) return true;
        ++iters;
        const SpMat jac = sys.A + sys.N.fix_first(v) + sys.N.fix_second(v);
        Vec gres;
        if (sys.constrained()) {
            gres = -(sys.J * v);
            if (sys.g.size()) gres += s * sys.g;
        }
        std::pair<Mat, Mat> step;
        try {
            SaddlePointSolver<double> kkt(SpMat(-jac), sys.constrained() ? sys.J : SpMat(0, sys.n()));
            step = kkt.solve(Mat(r), sys.constrained() ? Mat(gres) : Mat());
        } catch (const FactorizationError&) {
            return false;
        }
        const Vec dv = step.first.col(0);
        const Vec dp = sys.constrained() ? Vec(step.second.col(0)) : Vec(0);
        double t = 1.0;
        bool accepted = false;
        for (int b = 0; b < 30; ++b, t *= 0.5) {
            const Vec vt = v + t * dv;
            const Vec pt = sys.constrained() ? Vec(p + t * dp) : p;
            const double rt = steady_residual(sys, vt, pt, s);
            if (std::isfinite(rt) && rt < (1.0 - 1e-4 * t) * res) {
                v = vt;
                p = pt;
                accepted = true;
                break;
            }
        }
        if (!accepted) return steady_residual(sys, v, p, s) <= opts.tol * scale;
    }
    return steady_residual(sys, v, p, s) <= opts.tol * scale;
}

}  // namespace detail

/// Shifted system for the origin at v_ss: A <- A + N(v_ss, .) + N(., v_ss),
/// f and g dropped (they balance at the steady state).
inline QuadraticSystem shift_to(const QuadraticSystem& sys, const Vec& vss) {
    QuadraticSystem out = sys;
    out.A = sys.A + sys.N.fix_first(vss) + sys.N.fix_second(vss);
    out.A.prune(0.0);
    out.f = Vec();
    out.g = Vec();
    return out;
}

/// Steady state for u = 0 by damped Newton, with a homotopy on the affine
/// data (f, g) when the direct iteration fails.
inline SteadyState steady_state(const QuadraticSystem& sys, const NewtonOptions& opts = {},
                                const std::optional<Vec>& guess = std::nullopt) {
    sys.validate_dims();
    const Index n = sys.n();
    SteadyState out;
    out.v = guess ? *guess : Vec::Zero(n);
    require_dims(out.v.size(), n, "steady_state guess");
    out.p = Vec::Zero(sys.n_p());
    const double scale = std::max(1.0, (sys.f.size() ? sys.f.norm() : 0.0) + (sys.g.size() ? sys.g.norm() : 0.0));
    int iters = 0;
    bool ok = detail::steady_newton(sys, out.v, out.p, 1.0, scale, opts, iters);
    if (!ok && sys.has_forcing()) {
        out.v = guess ? *guess : Vec::Zero(n);
        out.p.setZero();
        ok = true;
        for (int k = 1; k <= opts.continuation_steps && ok; ++k) {
            const double s = static_cast<double>(k) / opts.continuation_steps;
            ok = detail::steady_newton(sys, out.v, out.p, s, scale, opts, iters);
        }
    }
    out.iterations = iters;
    out.residual = detail::steady_residual(sys, out.v, out.p, 1.0) / scale;
    if (!ok || !(out.residual <= opts.tol))
        throw ConvergenceError(detail::concat(
            "steady_state: Newton did not converge (residual ", out.residual,
            "); continue in the Reynolds parameter from a smaller value and pass the result as guess"));
    out.shifted = shift_to(sys, out.v);
    return out;
}

/// [[M - dt A, J^T], [J, 0]] (v+, dt p+) = (M v + dt (N(v, v) + B u + f), g),
/// factorized once per dt.
class ImexStepper {
public:
    ImexStepper(std::shared_ptr<const QuadraticSystem> sys, double dt)
        : sys_(std::move(sys)), dt_(dt),
          solver_(SpMat(sys_->M - dt * sys_->A), sys_->constrained() ? sys_->J : SpMat(0, sys_->n())) {
        require(dt > 0.0 && std::isfinite(dt), "ImexStepper: dt must be positive");
    }

    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] const QuadraticSystem& system() const { return *sys_; }

    [[nodiscard]] Vec step(const Vec& v, const Vec& u) const {
        const auto& s = *sys_;
        Vec rhs = s.M * v + dt_ * (s.N.apply(v, v) + s.B * u);
        if (s.f.size()) rhs += dt_ * s.f;
        Mat G;
        if (s.constrained()) G = s.g.size() ? Mat(s.g) : Mat(Mat::Zero(s.n_p(), 1));
        return solver_.solve(Mat(rhs), G).first.col(0);
    }

private:
    std::shared_ptr<const QuadraticSystem> sys_;
    double dt_;
    SaddlePointSolver<double> solver_;
};

/// One IMEX step without caching (convenience; factorizes every call).
inline Vec imex_step(const QuadraticSystem& sys, const Vec& v, const Vec& u, double dt) {
    return ImexStepper(std::make_shared<const QuadraticSystem>(sys), dt).step(v, u);
}

/// u(t) = amplitude * [sin(frequency t), 0, ...]^T, or zero.
struct TestSignal {
    enum class Kind { Zero, Sine };
    Kind kind = Kind::Sine;
    double amplitude = 1.0;
    double frequency = 1.0;

    [[nodiscard]] Vec at(double t, Index p) const {
        Vec u = Vec::Zero(p);
        if (kind == Kind::Sine && p > 0) u(0) = amplitude * std::sin(frequency * t);
        return u;
    }
};

struct SimConfig {
    double dt = 0.5 / 400.0;
    double t_end = 10.0;
    double t_c = 0.0;
    TestSignal test_signal{};
    std::shared_ptr<const SdreExpansion> controller;  // none: open loop after t_c (u = 0)
    int output_stride = 1;
    double blowup_norm = 1e6;       // ||v|| guard
    double stabilized_ratio = 1e-3;  // ||y(t_end)|| <= ratio * max ||y||
    Vec v0;                          // initial deviation (zero if empty)

    void validate() const {
        require(dt > 0.0, "SimConfig: dt must be positive");
        require(t_c >= 0.0 && t_c <= t_end, "SimConfig: need 0 <= t_c <= t_end");
        require(output_stride >= 1, "SimConfig: output_stride must be >= 1");
        require(blowup_norm > 0.0, "SimConfig: blow-up guard must be positive");
    }
};

struct Trajectory {
    std::vector<double> times;
    Mat Y;    // q x samples
    std::vector<double> u_norm;
    Mat rho;  // r x samples
    std::vector<int> blowup_flag;
    bool blowup = false;
    Vec terminal;
    double max_constraint_ratio = 0.0;  // max_t ||J v|| / ||v||

    [[nodiscard]] Index samples() const { return static_cast<Index>(times.size()); }

    void write_csv(const std::filesystem::path& path) const {
        std::vector<std::string> header{"time"};
        for (Index i = 0; i < Y.rows(); ++i) header.push_back("y_" + std::to_string(i + 1));
        header.push_back("u_norm");
        for (Index k = 0; k < rho.rows(); ++k) header.push_back("rho_" + std::to_string(k + 1));
        header.push_back("blowup_flag");
        std::vector<std::vector<double>> rows;
        rows.reserve(times.size());
        for (std::size_t s = 0; s < times.size(); ++s) {
            const auto c = static_cast<Index>(s);
            std::vector<double> row{times[s]};
            for (Index i = 0; i < Y.rows(); ++i) row.push_back(Y(i, c));
            row.push_back(u_norm[s]);
            for (Index k = 0; k < rho.rows(); ++k) row.push_back(rho(k, c));
            row.push_back(blowup_flag[s]);
            rows.push_back(std::move(row));
        }
        io::write_csv(path, header, rows);
    }
};

/// Test signal for t < t_c, then the controller (or u = 0).
inline Trajectory run(const ImexStepper& stepper, const SimConfig& cfg) {
    cfg.validate();
    const auto& sys = stepper.system();
    require(std::abs(stepper.dt() - cfg.dt) <= 1e-14 * cfg.dt, "run: stepper dt differs from config dt");
    const Index n = sys.n();
    const auto steps = static_cast<long>(std::llround(cfg.t_end / cfg.dt));
    const Index r = cfg.controller ? cfg.controller->rank() : 0;
    if (cfg.controller) require_dims(cfg.controller->n(), n, "run controller");
    const auto samples = static_cast<Index>(steps / cfg.output_stride + 1);

    Trajectory tr;
    tr.Y = Mat::Zero(sys.q(), samples);
    tr.rho = Mat::Zero(r, samples);
    tr.times.reserve(static_cast<std::size_t>(samples));
    Vec v = cfg.v0.size() ? cfg.v0 : Vec::Zero(n);
    require_dims(v.size(), n, "run v0");

    auto input = [&](double t) -> Vec {
        if (t < cfg.t_c) return cfg.test_signal.at(t, sys.p());
        if (cfg.controller) return cfg.controller->evaluate(v);
        return Vec::Zero(sys.p());
    };
    Index col = 0;
    for (long i = 0;; ++i) {
        const double t = static_cast<double>(i) * cfg.dt;
        const bool bad = !v.allFinite() || v.norm() > cfg.blowup_norm;
        Vec u = bad ? Vec::Zero(sys.p()) : input(t);
        if (i % cfg.output_stride == 0 && col < samples) {
            tr.times.push_back(t);
            tr.Y.col(col) = sys.C * v;
            tr.u_norm.push_back(u.norm());
            if (r > 0 && t >= cfg.t_c && !bad) tr.rho.col(col) = cfg.controller->schedule(v);
            tr.blowup_flag.push_back(bad ? 1 : 0);
            ++col;
        }
        if (bad) {
            tr.blowup = true;
            break;
        }
        if (i == steps) break;
        v = stepper.step(v, u);
        if (sys.constrained()) {
            const double vn = v.norm();
            if (vn > 0.0) tr.max_constraint_ratio = std::max(tr.max_constraint_ratio, (sys.J * v).norm() / vn);
        }
    }
    if (col < samples) {
        tr.Y.conservativeResize(Eigen::NoChange, col);
        tr.rho.conservativeResize(Eigen::NoChange, col);
    }
    tr.terminal = std::move(v);
    return tr;
}

inline Trajectory run(const QuadraticSystem& sys, const SimConfig& cfg) {
    ImexStepper stepper(std::make_shared<const QuadraticSystem>(sys), cfg.dt);
    return run(stepper, cfg);
}

/// No blow-up and ||y(t_end)|| <= ratio * max_t ||y(t)||.
inline bool stabilized(const Trajectory& tr, double ratio = 1e-3) {
    if (tr.blowup || tr.Y.cols() == 0) return false;
    double mx = 0.0;
    for (Index c = 0; c < tr.Y.cols(); ++c) mx = std::max(mx, tr.Y.col(c).norm());
    if (mx == 0.0) return true;
    return tr.Y.col(tr.Y.cols() - 1).norm() <= ratio * mx;
}

/// `count` equally spaced states on [0, window] under the test signal,
/// starting from the origin (the steady state of the shifted system).
inline SnapshotSet collect_snapshots(const QuadraticSystem& sys, Index count = 401, double window = 0.5,
                                     const TestSignal& signal = {}, int substeps = 1) {
    require(count >= 2 && window > 0.0 && substeps >= 1, "collect_snapshots: invalid schedule");
    SimConfig cfg;
    cfg.dt = window / static_cast<double>((count - 1) * substeps);
    cfg.t_end = window;
    cfg.t_c = window;
    cfg.test_signal = signal;
    ImexStepper stepper(std::make_shared<const QuadraticSystem>(sys), cfg.dt);
    SnapshotSet snaps;
    snaps.X.resize(sys.n(), count);
    Vec v = Vec::Zero(sys.n());
    snaps.X.col(0) = v;
    snaps.times.push_back(0.0);
    for (Index s = 1; s < count; ++s) {
        for (int k = 0; k < substeps; ++k) {
            const double t = static_cast<double>((s - 1) * substeps + k) * cfg.dt;
            v = stepper.step(v, signal.at(t, sys.p()));
        }
        require(v.allFinite(), "collect_snapshots: non-finite state");
        snaps.X.col(s) = v;
        snaps.times.push_back(static_cast<double>(s) * window / static_cast<double>(count - 1));
    }
    snaps.meta = detail::concat("open loop, ", count, " samples on [0, ", window, "], sine amplitude ",
                                signal.amplitude, ", frequency ", signal.frequency);
    return snaps;
}

struct CriticalTc {
    double lo = 0.0;  // stabilized
    double hi = 0.0;  // not stabilized
    int evaluations = 0;
};

/// Bisection of the switch-on time. Requires stabilized(lo) and not
/// stabilized(hi); stabilization is assumed monotone in t_c. `observe`, if
/// set, sees every trajectory.
inline CriticalTc find_critical_tc(const ImexStepper& stepper, SimConfig cfg, double lo, double hi, double tol,
                                   const std::function<void(double, const Trajectory&)>& observe = {}) {
    require(lo < hi && tol > 0.0, "find_critical_tc: need lo < hi and tol > 0");
    CriticalTc out;
    auto ok = [&](double tc) {
        cfg.t_c = tc;
        ++out.evaluations;
        const auto tr = run(stepper, cfg);
        if (observe) observe(tc, tr);
        return stabilized(tr, cfg.stabilized_ratio);
    };
    if (!ok(lo))
        throw BracketError(detail::concat("find_critical_tc: not stabilized at lower end t_c = ", lo));
    if (ok(hi))
        throw BracketError(detail::concat("find_critical_tc: stabilized at upper end t_c = ", hi,
                                          " (no sign change in the bracket)"));
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? lo : hi) = mid;
    }
    out.lo = lo;
    out.hi = hi;
    return out;
}

}  // namespace lpvsdre
