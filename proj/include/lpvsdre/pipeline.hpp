#pragma once

// End-to-end driver: steady state -> snapshots and POD -> Riccati and
// Lyapunov solves per alpha -> closed-loop runs and switch-on-time
// bisection. Stages are cached by a content hash of everything they depend
// on; artifacts and a manifest (no timestamps) go to the output directory.
//
// Needs Boost.PropertyTree (INI), OpenSSL (SHA-256) and nlohmann json.

#include "lpvsdre/bench.hpp"
#include "lpvsdre/feedback.hpp"
#include "lpvsdre/model.hpp"
#include "lpvsdre/pod.hpp"
#include "lpvsdre/sim.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>

namespace lpvsdre::pipeline {

inline constexpr const char* kFormatVersion = "lpvsdre-cache-1";

// ---------------------------------------------------------------------------
// hashing

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io::IoError("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------------------
// configuration

enum class Stage { System, Pod, Mateq, Simulate, Bisect };

inline Stage parse_stage(const std::string& s) {
    if (s == "system") return Stage::System;
    if (s == "pod") return Stage::Pod;
    if (s == "mateq") return Stage::Mateq;
    if (s == "simulate") return Stage::Simulate;
    if (s == "bisect") return Stage::Bisect;
    throw ContractError("unknown stage '" + s + "' (system | pod | mateq | simulate | bisect)");
}

inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::System: return "system";
        case Stage::Pod: return "pod";
        case Stage::Mateq: return "mateq";
        case Stage::Simulate: return "simulate";
        case Stage::Bisect: return "bisect";
    }
    return "?";
}

struct PipelineConfig {
    BenchmarkSpec bench;
    NewtonOptions newton;

    Index snapshots = 401;
    double window = 0.5;
    int snapshot_substeps = 1;
    TestSignal signal{};
    Index pod_rank = 10;
    double lambda = 0.75;

    std::vector<double> alphas{1.0};
    Index max_r = 10;
    bool dense = false;
    double riccati_tol = 1e-7;
    double lyapunov_tol = 1e-7;

    double dt = 0.5 / 400.0;
    double t_end = 10.0;
    std::vector<double> t_cs{0.0};
    std::vector<Index> ranks{0};
    int output_stride = 1;
    double blowup_norm = 1e6;
    double stabilized_ratio = 1e-3;

    bool bisect = false;
    std::vector<Index> bisect_ranks{0};
    double tc_lo = 0.0;
    double tc_hi = 1.0;
    double tc_tol = 0.1;

    void validate() const {
        bench.validate();
        require(snapshots >= 2 && window > 0.0 && snapshot_substeps >= 1, "config [pod]: invalid snapshot schedule");
        require(pod_rank >= 1, "config [pod]: rank must be >= 1");
        require(lambda >= 0.0 && lambda <= 1.0, "config [pod]: lambda must lie in [0, 1]");
        require(!alphas.empty(), "config [synthesis]: need at least one alpha");
        for (double a : alphas) require(a > 0.0, "config [synthesis]: alpha must be positive");
        require(max_r >= 0 && max_r <= pod_rank, "config [synthesis]: max_r must be in [0, pod rank]");
        for (Index r : ranks) require(r >= 0 && r <= max_r, "config [simulation]: rank ", r, " above max_r");
        for (Index r : bisect_ranks) require(r >= 0 && r <= max_r, "config [bisection]: rank ", r, " above max_r");
        SimConfig sc;
        sc.dt = dt;
        sc.t_end = t_end;
        sc.output_stride = output_stride;
        sc.blowup_norm = blowup_norm;
        for (double tc : t_cs) {
            sc.t_c = tc;
            sc.validate();
        }
        if (bisect) require(tc_lo < tc_hi && tc_hi <= t_end && tc_tol > 0.0, "config [bisection]: invalid bracket");
    }
};

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& s) {
    std::vector<T> out;
    for (const auto& f : split_list(s)) {
        std::istringstream is(f);
        T v{};
        is >> v;
        require(!is.fail() && is.eof(), "config: cannot parse list element '", f, "'");
        out.push_back(v);
    }
    return out;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ContractError("config: expected a boolean, got '" + s + "'");
}

// Reader that records which keys were consumed, so typos are reported.
class Ini {
public:
    explicit Ini(const boost::property_tree::ptree& pt) : pt_(pt) {}

    template <class T>
    void get(const std::string& key, T& target) {
        used_.insert(key);
        if (auto v = pt_.get_optional<std::string>(key)) {
            std::istringstream is(*v);
            T out{};
            is >> out;
            require(!is.fail(), "config: cannot parse ", key, " = '", *v, "'");
            target = out;
        }
    }
    void get_bool(const std::string& key, bool& target) {
        used_.insert(key);
        if (auto v = pt_.get_optional<std::string>(key)) target = parse_bool(*v);
    }
    void get_string(const std::string& key, std::string& target) {
        used_.insert(key);
        if (auto v = pt_.get_optional<std::string>(key)) target = *v;
    }
    template <class T>
    void get_list(const std::string& key, std::vector<T>& target) {
        used_.insert(key);
        if (auto v = pt_.get_optional<std::string>(key)) target = parse_list<T>(*v);
    }

    void reject_unknown() const {
        for (const auto& [section, body] : pt_)
            for (const auto& [key, value] : body) {
                const std::string full = section + "." + key;
                if (!used_.count(full)) throw ContractError("config: unknown key '" + full + "'");
            }
    }

private:
    const boost::property_tree::ptree& pt_;
    std::set<std::string> used_;
};

}  // namespace detail

inline PipelineConfig parse_config(const boost::property_tree::ptree& pt) {
    PipelineConfig c;
    detail::Ini ini(pt);
    std::string kind = kind_name(c.bench.kind);
    ini.get_string("benchmark.kind", kind);
    c.bench.kind = parse_kind(kind);
    ini.get("benchmark.seed", c.bench.seed);
    ini.get("benchmark.n", c.bench.n);
    ini.get("benchmark.viscosity", c.bench.viscosity);
    ini.get_bool("benchmark.manufactured", c.bench.manufactured);
    ini.get("benchmark.resolution", c.bench.resolution);
    ini.get("benchmark.reynolds", c.bench.reynolds);
    ini.get("benchmark.length", c.bench.length);
    ini.get("benchmark.height", c.bench.height);
    ini.get("benchmark.center_x", c.bench.center_x);
    ini.get("benchmark.center_y", c.bench.center_y);
    ini.get("benchmark.u_max", c.bench.u_max);
    ini.get("benchmark.actuator_width", c.bench.actuator_width);
    ini.get("benchmark.actuator_depth", c.bench.actuator_depth);
    std::vector<double> sensors;
    ini.get_list("benchmark.sensors", sensors);
    if (!sensors.empty()) {
        require(sensors.size() % 2 == 0, "config: benchmark.sensors needs x, y pairs");
        c.bench.sensors.clear();
        for (std::size_t i = 0; i < sensors.size(); i += 2) c.bench.sensors.push_back({sensors[i], sensors[i + 1]});
    }
    ini.get("benchmark.inputs", c.bench.inputs);
    ini.get("benchmark.outputs", c.bench.outputs);
    ini.get("benchmark.constraint_rows", c.bench.constraint_rows);
    ini.get("benchmark.unstable_modes", c.bench.unstable_modes);
    ini.get_bool("benchmark.identity_mass", c.bench.identity_mass);

    ini.get("steady_state.tol", c.newton.tol);
    ini.get("steady_state.max_iter", c.newton.max_iter);
    ini.get("steady_state.continuation_steps", c.newton.continuation_steps);

    ini.get("pod.snapshots", c.snapshots);
    ini.get("pod.window", c.window);
    ini.get("pod.substeps", c.snapshot_substeps);
    ini.get("pod.signal_amplitude", c.signal.amplitude);
    ini.get("pod.signal_frequency", c.signal.frequency);
    ini.get("pod.rank", c.pod_rank);
    ini.get("pod.lambda", c.lambda);

    ini.get_list("synthesis.alphas", c.alphas);
    ini.get("synthesis.max_r", c.max_r);
    ini.get_bool("synthesis.dense", c.dense);
    ini.get("synthesis.riccati_tol", c.riccati_tol);
    ini.get("synthesis.lyapunov_tol", c.lyapunov_tol);

    ini.get("simulation.dt", c.dt);
    ini.get("simulation.t_end", c.t_end);
    ini.get_list("simulation.t_c", c.t_cs);
    ini.get_list("simulation.ranks", c.ranks);
    ini.get("simulation.output_stride", c.output_stride);
    ini.get("simulation.blowup_norm", c.blowup_norm);
    ini.get("simulation.stabilized_ratio", c.stabilized_ratio);

    ini.get_bool("bisection.enabled", c.bisect);
    ini.get_list("bisection.ranks", c.bisect_ranks);
    ini.get("bisection.lo", c.tc_lo);
    ini.get("bisection.hi", c.tc_hi);
    ini.get("bisection.tol", c.tc_tol);

    ini.reject_unknown();
    c.validate();
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::read_ini(path.string(), pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw io::IoError(std::string("config: ") + e.what());
    }
    return parse_config(pt);
}

// ---------------------------------------------------------------------------
// canonical stage descriptions (hash inputs)

namespace detail {

inline std::string num(double x) { return io::fmt_double(x); }

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if constexpr (std::is_floating_point_v<T>) os << (i ? "," : "") << num(v[i]);
        else os << (i ? "," : "") << v[i];
    }
    return os.str();
}

inline std::string describe_system(const PipelineConfig& c) {
    const auto& b = c.bench;
    std::ostringstream os;
    os << kFormatVersion << "|system|" << kind_name(b.kind) << "|seed=" << b.seed << "|n=" << b.n
       << "|nu=" << num(b.viscosity) << "|mms=" << b.manufactured << "|res=" << b.resolution
       << "|re=" << num(b.reynolds) << "|L=" << num(b.length) << "|H=" << num(b.height)
       << "|cx=" << num(b.center_x) << "|cy=" << num(b.center_y) << "|umax=" << num(b.u_max)
       << "|aw=" << num(b.actuator_width) << "|ad=" << num(b.actuator_depth) << "|sensors=";
    for (const auto& s : b.sensors) os << num(s[0]) << ":" << num(s[1]) << ";";
    os << "|p=" << b.inputs << "|q=" << b.outputs << "|np=" << b.constraint_rows << "|unst=" << b.unstable_modes
       << "|idm=" << b.identity_mass << "|newton=" << num(c.newton.tol) << "," << c.newton.max_iter << ","
       << c.newton.continuation_steps;
    return os.str();
}

inline std::string describe_pod(const PipelineConfig& c) {
    std::ostringstream os;
    os << "|pod|" << c.snapshots << "|" << num(c.window) << "|" << c.snapshot_substeps << "|"
       << num(c.signal.amplitude) << "|" << num(c.signal.frequency) << "|" << c.pod_rank;
    return os.str();
}

inline std::string describe_mateq(const PipelineConfig& c, double alpha) {
    std::ostringstream os;
    os << "|mateq|alpha=" << num(alpha) << "|lambda=" << num(c.lambda) << "|r=" << c.max_r << "|dense=" << c.dense
       << "|tol=" << num(c.riccati_tol) << "," << num(c.lyapunov_tol);
    return os.str();
}

inline std::string describe_run(const PipelineConfig& c) {
    std::ostringstream os;
    os << "|sim|dt=" << num(c.dt) << "|T=" << num(c.t_end) << "|stride=" << c.output_stride
       << "|guard=" << num(c.blowup_norm) << "|ratio=" << num(c.stabilized_ratio);
    return os.str();
}

inline std::string tag(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// cache

/// Stage cache: one subdirectory per content hash. The location comes from
/// LPVSDRE_CACHE_DIR, else `<out>/cache`. An empty path disables caching.
class Cache {
public:
    explicit Cache(std::filesystem::path root) : root_(std::move(root)) {
        if (!root_.empty()) std::filesystem::create_directories(root_);
    }

    static std::filesystem::path default_root(const std::filesystem::path& out) {
        if (const char* env = std::getenv("LPVSDRE_CACHE_DIR"); env && *env) return env;
        return out / "cache";
    }

    [[nodiscard]] bool enabled() const { return !root_.empty(); }
    [[nodiscard]] std::filesystem::path entry(const std::string& key) const { return root_ / key; }
    [[nodiscard]] bool has(const std::string& key, const std::string& file) const {
        return enabled() && std::filesystem::exists(entry(key) / file);
    }

    /// Writes via a temporary name and renames, so a crash never leaves a
    /// half-written entry behind.
    template <class Writer>
    void store(const std::string& key, const std::string& file, Writer&& write) const {
        if (!enabled()) return;
        const auto dir = entry(key);
        std::filesystem::create_directories(dir);
        const auto tmp = dir / (file + ".tmp");
        write(tmp);
        std::filesystem::rename(tmp, dir / file);
    }

private:
    std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// results

struct RunSummary {
    double alpha = 0.0;
    Index r = 0;
    double t_c = 0.0;
    bool stabilized = false;
    bool blowup = false;
    double y_end = 0.0;
    double y_max = 0.0;
    double u_max = 0.0;
    double constraint_ratio = 0.0;
    std::string file;
};

struct BisectSummary {
    double alpha = 0.0;
    Index r = 0;
    bool ok = false;
    double lo = 0.0, hi = 0.0;
    int evaluations = 0;
    std::string message;
};

struct PipelineResult {
    std::map<std::string, std::string> stage_keys;
    std::map<std::string, std::string> artifacts;  // relative path -> sha256
    std::vector<RunSummary> runs;
    std::vector<BisectSummary> bisections;
    std::string manifest_hash;
    std::vector<std::string> warnings;
};

struct PipelineOptions {
    Stage last = Stage::Bisect;
    unsigned jobs = 1;
    std::filesystem::path cache_dir;  // empty: Cache::default_root(out)
    bool no_cache = false;
    std::ostream* log = &std::cerr;
};

namespace detail {

inline RunSummary summarize(const Trajectory& tr, double ratio) {
    RunSummary s;
    s.stabilized = stabilized(tr, ratio);
    s.blowup = tr.blowup;
    for (Index c = 0; c < tr.Y.cols(); ++c) s.y_max = std::max(s.y_max, tr.Y.col(c).norm());
    s.y_end = tr.Y.cols() ? tr.Y.col(tr.Y.cols() - 1).norm() : 0.0;
    for (double u : tr.u_norm) s.u_max = std::max(s.u_max, u);
    s.constraint_ratio = tr.max_constraint_ratio;
    return s;
}

inline void save_factors(const std::filesystem::path& p, const SynthesisResult& syn) {
    io::Container c;
    const auto& e = syn.expansion;
    c["alpha"] = Mat::Constant(1, 1, e.alpha());
    c["P0.Z"] = e.P0().Z;
    for (std::size_t k = 0; k < e.Ls().size(); ++k) {
        c["L" + std::to_string(k + 1) + ".Z"] = e.Ls()[k].Z;
        c["L" + std::to_string(k + 1) + ".D"] = e.Ls()[k].D;
    }
    c["riccati.residual"] = Mat::Constant(1, 1, syn.riccati.residual);
    io::write_container(p, c);
}

inline SdreExpansion load_factors(const std::filesystem::path& p, const std::shared_ptr<const PodBasis>& basis,
                                  const QuadraticSystem& sys, Index r) {
    const auto c = io::read_container(p);
    const double alpha = c.at("alpha")(0, 0);
    LowRankPsd P0{c.at("P0.Z"), alpha};
    std::vector<LowRankIndef> Ls;
    for (Index k = 0; k < r; ++k) {
        const std::string s = "L" + std::to_string(k + 1);
        Ls.push_back({c.at(s + ".Z"), c.at(s + ".D"), alpha});
    }
    return assemble(std::move(P0), std::move(Ls), r ? basis : nullptr, sys.B, sys.M, alpha);
}

}  // namespace detail

/// Runs the stages up to `opts.last`, writing artifacts and manifest.json to
/// `out`. Deterministic: identical config gives byte-identical artifacts.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out,
                                   const PipelineOptions& opts = {}) {
    cfg.validate();
    std::ostream& log = *opts.log;
    std::filesystem::create_directories(out);
    const Cache cache(opts.no_cache ? std::filesystem::path()
                                    : (opts.cache_dir.empty() ? Cache::default_root(out) : opts.cache_dir));
    PipelineResult res;
    auto artifact = [&](const std::filesystem::path& p) {
        res.artifacts[std::filesystem::relative(p, out).generic_string()] = sha256_file(p);
    };

    auto stages = [&] {
        // (0) system and steady state
        const std::string sys_desc = detail::describe_system(cfg);
        const std::string sys_key = sha256_hex(sys_desc);
        res.stage_keys["system"] = sys_key;
        const QuadraticSystem full = make_benchmark(cfg.bench);
        Vec vss, pss;
        if (cache.has(sys_key, "steady.lpvb")) {
            const auto c = io::read_container(cache.entry(sys_key) / "steady.lpvb");
            vss = c.at("v").col(0);
            pss = c.count("p") ? Vec(c.at("p").col(0)) : Vec(0);
            log << "[system] steady state from cache " << sys_key.substr(0, 12) << "\n";
        } else {
            log << "[system] " << kind_name(cfg.bench.kind) << " n = " << full.n() << ", n_p = " << full.n_p()
                << "; Newton for the steady state\n";
            const auto ss = steady_state(full, cfg.newton);
            vss = ss.v;
            pss = ss.p;
            log << "[system] steady-state residual " << ss.residual << " after " << ss.iterations << " iterations\n";
            cache.store(sys_key, "steady.lpvb", [&](const auto& p) {
                io::Container c;
                c["v"] = vss;
                if (pss.size()) c["p"] = pss;
                io::write_container(p, c);
            });
        }
        auto sys = std::make_shared<const QuadraticSystem>(shift_to(full, vss));
        save_system(out / "system", *sys);
        for (const auto& f : std::filesystem::directory_iterator(out / "system")) artifact(f.path());
        {
            io::Container c;
            c["v_ss"] = vss;
            io::write_container(out / "steady_state.lpvb", c);
            artifact(out / "steady_state.lpvb");
        }
        if (opts.last == Stage::System) return;

        {
            // (1) snapshots and POD
            const std::string pod_key = sha256_hex(sys_desc + detail::describe_pod(cfg));
            res.stage_keys["pod"] = pod_key;
            std::shared_ptr<const PodBasis> basis;
            if (cache.has(pod_key, "basis.lpvb")) {
                basis = std::make_shared<const PodBasis>(load_basis(cache.entry(pod_key) / "basis.lpvb", sys->M));
                log << "[pod] basis from cache " << pod_key.substr(0, 12) << "\n";
            } else {
                log << "[pod] " << cfg.snapshots << " snapshots on [0, " << cfg.window << "]\n";
                const auto snaps = collect_snapshots(*sys, cfg.snapshots, cfg.window, cfg.signal, cfg.snapshot_substeps);
                basis = std::make_shared<const PodBasis>(compute_pod(snaps, sys->M, cfg.pod_rank));
                cache.store(pod_key, "basis.lpvb", [&](const auto& p) { save_basis(p, *basis); });
            }
            if (!basis->warning().empty()) {
                res.warnings.push_back(basis->warning());
                log << "[pod] warning: " << basis->warning() << "\n";
            }
            save_basis(out / "pod_basis.lpvb", *basis);
            write_sigma_csv(out / "pod_sigma.csv", basis->sigma());
            artifact(out / "pod_basis.lpvb");
            artifact(out / "pod_sigma.csv");
            if (opts.last == Stage::Pod) return;

            // (2) Riccati + Lyapunov per alpha
            require(cfg.max_r <= basis->rank(), "pipeline: max_r = ", cfg.max_r, " but the POD basis has rank ",
                    basis->rank());
            const auto sched = std::make_shared<const PodBasis>(basis->truncated(cfg.max_r));
            const AffineLpvModel lpv = cfg.max_r > 0 ? build_affine_lpv(*sys, sched, cfg.lambda)
                                                     : AffineLpvModel(sys->A, {}, nullptr, cfg.lambda);
            std::map<double, SdreExpansion> controllers;
            std::map<double, std::string> mateq_keys;
            for (double alpha : cfg.alphas) {
                const std::string key =
                    sha256_hex(sys_desc + detail::describe_pod(cfg) + detail::describe_mateq(cfg, alpha));
                mateq_keys[alpha] = key;
                res.stage_keys["mateq/alpha=" + detail::tag(alpha)] = key;
                if (!cache.has(key, "factors.lpvb")) {
                    log << "[mateq] alpha = " << alpha << ": Riccati + " << cfg.max_r << " Lyapunov solves\n";
                    SynthesisOptions so;
                    so.alpha = alpha;
                    so.dense = cfg.dense;
                    so.riccati.tol = cfg.riccati_tol;
                    so.lyapunov.tol = cfg.lyapunov_tol;
                    so.jobs = opts.jobs;
                    const auto syn = synthesize(*sys, lpv, so);
                    log << "[mateq] alpha = " << alpha << ": Riccati residual " << syn.riccati.residual << ", rank "
                        << syn.expansion.P0().rank() << "\n";
                    cache.store(key, "factors.lpvb", [&](const auto& p) { detail::save_factors(p, syn); });
                    cache.store(key, "riccati.csv", [&](const auto& p) { syn.riccati.write_csv(p); });
                    if (!cache.enabled()) {
                        controllers.emplace(alpha, syn.expansion);
                        syn.riccati.write_csv(out / ("riccati_alpha_" + detail::tag(alpha) + ".csv"));
                    }
                } else {
                    log << "[mateq] alpha = " << alpha << ": factors from cache " << key.substr(0, 12) << "\n";
                }
                if (cache.enabled()) {
                    controllers.emplace(alpha,
                                        detail::load_factors(cache.entry(key) / "factors.lpvb", sched, *sys, cfg.max_r));
                    std::filesystem::copy_file(cache.entry(key) / "riccati.csv",
                                               out / ("riccati_alpha_" + detail::tag(alpha) + ".csv"),
                                               std::filesystem::copy_options::overwrite_existing);
                }
                const auto& e = controllers.at(alpha);
                const auto gpath = out / ("gains_alpha_" + detail::tag(alpha) + ".lpvb");
                e.save_gains(gpath);
                e.write_gains_csv(out / ("gains_alpha_" + detail::tag(alpha) + ".csv"));
                artifact(gpath);
                artifact(out / ("gains_alpha_" + detail::tag(alpha) + ".csv"));
                artifact(out / ("riccati_alpha_" + detail::tag(alpha) + ".csv"));
            }
            if (opts.last == Stage::Mateq) return;

            // (3) closed-loop runs: one job per (alpha, r, t_c)
            const ImexStepper stepper(sys, cfg.dt);
            struct Job {
                double alpha;
                Index r;
                double tc;
            };
            std::vector<Job> jobs;
            for (double a : cfg.alphas)
                for (Index r : cfg.ranks)
                    for (double tc : cfg.t_cs) jobs.push_back({a, r, tc});
            const std::string run_desc = detail::describe_run(cfg);
            auto sim_config = [&](double alpha, Index r) {
                SimConfig sc;
                sc.dt = cfg.dt;
                sc.t_end = cfg.t_end;
                sc.test_signal = cfg.signal;
                sc.output_stride = cfg.output_stride;
                sc.blowup_norm = cfg.blowup_norm;
                sc.stabilized_ratio = cfg.stabilized_ratio;
                sc.controller = std::make_shared<const SdreExpansion>(controllers.at(alpha).truncated(r));
                return sc;
            };
            res.runs.resize(jobs.size());
            std::mutex log_mutex;
            log << "[simulate] " << jobs.size() << " runs, dt = " << cfg.dt << ", t_end = " << cfg.t_end << "\n";
            parallel_for(jobs.size(), opts.jobs, [&](std::size_t i) {
                const auto& j = jobs[i];
                const std::string name = "traj_alpha_" + detail::tag(j.alpha) + "_r" + std::to_string(j.r) + "_tc" +
                                         detail::tag(j.tc) + ".csv";
                const std::string key = sha256_hex(mateq_keys.at(j.alpha) + run_desc + "|r=" + std::to_string(j.r) +
                                                   "|tc=" + detail::num(j.tc));
                RunSummary s;
                if (cache.has(key, "summary.json")) {
                    const auto js = nlohmann::json::parse(read_file(cache.entry(key) / "summary.json"));
                    s.stabilized = js.at("stabilized");
                    s.blowup = js.at("blowup");
                    s.y_end = js.at("y_end");
                    s.y_max = js.at("y_max");
                    s.u_max = js.at("u_max");
                    s.constraint_ratio = js.at("constraint_ratio");
                    std::filesystem::copy_file(cache.entry(key) / "traj.csv", out / name,
                                               std::filesystem::copy_options::overwrite_existing);
                } else {
                    auto sc = sim_config(j.alpha, j.r);
                    sc.t_c = j.tc;
                    const auto tr = run(stepper, sc);
                    s = detail::summarize(tr, cfg.stabilized_ratio);
                    tr.write_csv(out / name);
                    cache.store(key, "traj.csv", [&](const auto& p) { tr.write_csv(p); });
                    cache.store(key, "summary.json", [&](const auto& p) {
                        nlohmann::json js;
                        js["stabilized"] = s.stabilized;
                        js["blowup"] = s.blowup;
                        js["y_end"] = s.y_end;
                        js["y_max"] = s.y_max;
                        js["u_max"] = s.u_max;
                        js["constraint_ratio"] = s.constraint_ratio;
                        std::ofstream(p) << js.dump(2) << "\n";
                    });
                }
                s.alpha = j.alpha;
                s.r = j.r;
                s.t_c = j.tc;
                s.file = name;
                res.runs[i] = s;
                const std::lock_guard<std::mutex> lock(log_mutex);
                log << "[simulate] alpha = " << j.alpha << ", r = " << j.r << ", t_c = " << j.tc << ": "
                    << (s.stabilized ? "stabilized" : (s.blowup ? "blow-up" : "not stabilized")) << "\n";
            });
            {
                std::vector<std::vector<double>> rows;
                for (const auto& s : res.runs) {
                    rows.push_back({s.alpha, static_cast<double>(s.r), s.t_c, s.stabilized ? 1.0 : 0.0,
                                    s.blowup ? 1.0 : 0.0, s.y_end, s.y_max, s.u_max, s.constraint_ratio});
                    artifact(out / s.file);
                }
                io::write_csv(out / "summary.csv",
                              {"alpha", "r", "t_c", "stabilized", "blowup", "y_end", "y_max", "u_max",
                               "constraint_ratio"},
                              rows);
                artifact(out / "summary.csv");
            }
            if (opts.last == Stage::Simulate || !cfg.bisect) return;

            // (4) critical switch-on times
            struct BJob {
                double alpha;
                Index r;
            };
            std::vector<BJob> bjobs;
            for (double a : cfg.alphas)
                for (Index r : cfg.bisect_ranks) bjobs.push_back({a, r});
            res.bisections.resize(bjobs.size());
            log << "[bisect] " << bjobs.size() << " bisections on [" << cfg.tc_lo << ", " << cfg.tc_hi << "]\n";
            parallel_for(bjobs.size(), opts.jobs, [&](std::size_t i) {
                const auto& j = bjobs[i];
                const std::string key = sha256_hex(mateq_keys.at(j.alpha) + run_desc + "|r=" + std::to_string(j.r) +
                                                   "|bisect=" + detail::num(cfg.tc_lo) + "," + detail::num(cfg.tc_hi) +
                                                   "," + detail::num(cfg.tc_tol));
                BisectSummary b;
                if (cache.has(key, "bisect.json")) {
                    const auto js = nlohmann::json::parse(read_file(cache.entry(key) / "bisect.json"));
                    b.ok = js.at("ok");
                    b.lo = js.at("lo");
                    b.hi = js.at("hi");
                    b.evaluations = js.at("evaluations");
                    b.message = js.at("message");
                } else {
                    try {
                        const auto ct = find_critical_tc(stepper, sim_config(j.alpha, j.r), cfg.tc_lo, cfg.tc_hi,
                                                         cfg.tc_tol);
                        b.ok = true;
                        b.lo = ct.lo;
                        b.hi = ct.hi;
                        b.evaluations = ct.evaluations;
                    } catch (const BracketError& e) {
                        b.message = e.what();
                    }
                    cache.store(key, "bisect.json", [&](const auto& p) {
                        nlohmann::json js;
                        js["ok"] = b.ok;
                        js["lo"] = b.lo;
                        js["hi"] = b.hi;
                        js["evaluations"] = b.evaluations;
                        js["message"] = b.message;
                        std::ofstream(p) << js.dump(2) << "\n";
                    });
                }
                b.alpha = j.alpha;
                b.r = j.r;
                res.bisections[i] = b;
                const std::lock_guard<std::mutex> lock(log_mutex);
                log << "[bisect] alpha = " << j.alpha << ", r = " << j.r << ": "
                    << (b.ok ? "t_c* in [" + detail::num(b.lo) + ", " + detail::num(b.hi) + "]" : b.message) << "\n";
            });
            std::vector<std::vector<double>> rows;
            for (const auto& b : res.bisections)
                rows.push_back({b.alpha, static_cast<double>(b.r), b.ok ? 1.0 : 0.0, b.lo, b.hi,
                                static_cast<double>(b.evaluations)});
            io::write_csv(out / "critical_tc.csv", {"alpha", "r", "bracketed", "tc_lo", "tc_hi", "evaluations"}, rows);
            artifact(out / "critical_tc.csv");
        }
    };
    stages();

    nlohmann::json m;
    m["format"] = kFormatVersion;
    m["benchmark"] = kind_name(cfg.bench.kind);
    m["last_stage"] = stage_name(opts.last);
    m["stages"] = res.stage_keys;
    m["artifacts"] = res.artifacts;
    m["warnings"] = res.warnings;
    const std::string body = m.dump(2) + "\n";
    {
        std::ofstream f(out / "manifest.json", std::ios::binary);
        f << body;
    }
    res.manifest_hash = sha256_hex(body);
    return res;
}

/// Fixed-width table of the run and bisection summaries.
inline void print_summary(std::ostream& os, const PipelineResult& r) {
    if (!r.runs.empty()) {
        os << std::left << std::setw(10) << "alpha" << std::setw(5) << "r" << std::setw(9) << "t_c" << std::setw(16)
           << "outcome" << std::setw(13) << "|y(end)|" << std::setw(13) << "max|y|" << "max|u|\n";
        for (const auto& s : r.runs) {
            os << std::left << std::setw(10) << s.alpha << std::setw(5) << s.r << std::setw(9) << s.t_c
               << std::setw(16) << (s.stabilized ? "stabilized" : (s.blowup ? "blow-up" : "not stabilized"))
               << std::setw(13) << std::setprecision(4) << s.y_end << std::setw(13) << s.y_max << s.u_max << "\n";
        }
    }
    if (!r.bisections.empty()) {
        os << "\ncritical switch-on time\n";
        for (const auto& b : r.bisections) {
            os << "  alpha = " << b.alpha << ", r = " << b.r << ": ";
            if (b.ok) os << "t_c* in [" << b.lo << ", " << b.hi << "]\n";
            else os << "no bracket (" << b.message << ")\n";
        }
    }
    os << "manifest sha256 " << r.manifest_hash << "\n";
}

}  // namespace lpvsdre::pipeline
