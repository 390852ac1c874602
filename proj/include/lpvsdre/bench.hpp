#pragma once

// Desk-scale benchmark generators: 1D viscous Burgers, a staggered-grid
// channel flow past a cylinder, and random synthetic systems.

#include "lpvsdre/core.hpp"
#include "lpvsdre/model.hpp"

#include <array>
#include <random>

namespace lpvsdre {

struct BenchmarkSpec {
    enum class Kind { Burgers, CylinderFd, Synthetic };
    Kind kind = Kind::CylinderFd;
    std::uint64_t seed = 1;

    // Burgers / synthetic
    Index n = 200;
    double viscosity = 0.1;
    bool manufactured = false;  // Burgers: forcing for the exact steady state sin(pi x)

    // cylinder_fd: lengths in units of the diameter D = 1
    Index resolution = 6;  // cells per diameter
    double reynolds = 60.0;  // U_mean D / nu
    double length = 10.0;
    double height = 4.0;
    double center_x = 2.0;
    double center_y = 2.0;
    double u_max = 1.5;  // parabolic inflow peak (U_mean = 2/3 u_max)
    double actuator_width = 0.5;
    double actuator_depth = 1.0 / 3.0;
    std::vector<std::array<double, 2>> sensors{{{2.0, 0.5}, {2.0, -0.5}, {4.0, 0.0}}};  // relative to center

    // synthetic
    Index inputs = 2;
    Index outputs = 2;
    Index constraint_rows = 0;
    Index unstable_modes = 0;
    bool identity_mass = false;

    void validate() const {
        switch (kind) {
            case Kind::Burgers:
                require(n >= 3, "burgers: resolution must be >= 3");
                require(viscosity > 0.0, "burgers: viscosity must be positive");
                break;
            case Kind::CylinderFd:
                require(resolution >= 2, "cylinder_fd: resolution must be >= 2 cells per diameter");
                require(reynolds > 0.0, "cylinder_fd: Reynolds parameter must be positive");
                require(length > center_x + 1.0 && height > 1.0, "cylinder_fd: domain too small");
                require(center_x - 0.5 >= 1.0 / static_cast<double>(resolution) &&
                            center_y - 0.5 >= 1.0 / static_cast<double>(resolution) &&
                            center_y + 0.5 <= height - 1.0 / static_cast<double>(resolution),
                        "cylinder_fd: obstacle touches the channel boundary");
                break;
            case Kind::Synthetic:
                require(n >= 2 && inputs >= 1 && outputs >= 1, "synthetic: invalid sizes");
                require(constraint_rows >= 0 && constraint_rows < n, "synthetic: constraint rows must be < n");
                require(unstable_modes >= 0 && unstable_modes <= n, "synthetic: invalid unstable mode count");
                break;
        }
    }
};

inline BenchmarkSpec::Kind parse_kind(const std::string& s) {
    if (s == "burgers") return BenchmarkSpec::Kind::Burgers;
    if (s == "cylinder_fd") return BenchmarkSpec::Kind::CylinderFd;
    if (s == "synthetic") return BenchmarkSpec::Kind::Synthetic;
    throw ContractError("unknown benchmark kind '" + s + "' (burgers | cylinder_fd | synthetic)");
}

inline std::string kind_name(BenchmarkSpec::Kind k) {
    switch (k) {
        case BenchmarkSpec::Kind::Burgers: return "burgers";
        case BenchmarkSpec::Kind::CylinderFd: return "cylinder_fd";
        case BenchmarkSpec::Kind::Synthetic: return "synthetic";
    }
    return "?";
}

/// v' = nu v_xx - v v_x (+ forcing) on (0, 1), zero Dirichlet data, central
/// differences on n interior nodes, M = I. Two indicator actuators and two
/// local-average sensors.
inline QuadraticSystem make_burgers(const BenchmarkSpec& spec) {
    spec.validate();
    const Index n = spec.n;
    const double h = 1.0 / static_cast<double>(n + 1);
    const double nu = spec.viscosity;
    QuadraticSystem sys;
    sys.M = sparse_identity(n);
    std::vector<Triplet> t;
    std::vector<TensorEntry> te;
    for (Index i = 0; i < n; ++i) {
        t.emplace_back(i, i, -2.0 * nu / (h * h));
        if (i > 0) {
            t.emplace_back(i, i - 1, nu / (h * h));
            te.push_back({i, i, i - 1, 1.0 / (2.0 * h)});
        }
        if (i + 1 < n) {
            t.emplace_back(i, i + 1, nu / (h * h));
            te.push_back({i, i, i + 1, -1.0 / (2.0 * h)});
        }
    }
    sys.A.resize(n, n);
    sys.A.setFromTriplets(t.begin(), t.end());
    sys.N = BilinearOperator::from_entries(n, std::move(te));
    auto x = [&](Index i) { return static_cast<double>(i + 1) * h; };
    auto window = [&](double a, double b) {
        Vec w = Vec::Zero(n);
        for (Index i = 0; i < n; ++i)
            if (x(i) >= a && x(i) <= b) w(i) = 1.0;
        require(w.sum() > 0.0, "burgers: actuator/sensor window contains no node");
        return w;
    };
    sys.B.resize(n, 2);
    sys.B.col(0) = window(0.2, 0.3);
    sys.B.col(1) = window(0.6, 0.7);
    sys.C.resize(2, n);
    const Vec c0 = window(0.4, 0.5), c1 = window(0.75, 0.85);
    sys.C.row(0) = c0.transpose() / c0.sum();
    sys.C.row(1) = c1.transpose() / c1.sum();
    sys.J = SpMat(0, n);
    if (spec.manufactured) {
        constexpr double pi = 3.14159265358979323846;
        sys.f.resize(n);
        for (Index i = 0; i < n; ++i)
            sys.f(i) = nu * pi * pi * std::sin(pi * x(i)) + pi * std::sin(pi * x(i)) * std::cos(pi * x(i));
    }
    return sys;
}

/// Nodal coordinates of the Burgers grid (for manufactured-solution checks).
inline Vec burgers_nodes(Index n) {
    Vec x(n);
    for (Index i = 0; i < n; ++i) x(i) = static_cast<double>(i + 1) / static_cast<double>(n + 1);
    return x;
}

/// Description of the staggered grid behind make_cylinder_fd.
struct CylinderGrid {
    Index nx = 0, ny = 0;
    double h = 0.0;
    std::vector<char> solid;  // nx * ny cells
    std::vector<Index> u_id;  // (nx + 1) * ny, -1 if not an unknown
    std::vector<Index> v_id;  // nx * (ny + 1)
    Index n_u = 0, n_v = 0, n_p = 0;

    [[nodiscard]] bool is_solid(Index i, Index j) const {
        return i >= 0 && i < nx && j >= 0 && j < ny && solid[static_cast<std::size_t>(j * nx + i)] != 0;
    }
};

namespace detail {

using Combo = std::vector<std::pair<Index, double>>;  // extended face index, coefficient

class CylinderBuilder {
public:
    explicit CylinderBuilder(const BenchmarkSpec& s) : spec(s) {
        g.h = 1.0 / static_cast<double>(s.resolution);
        g.nx = static_cast<Index>(std::llround(s.length * static_cast<double>(s.resolution)));
        g.ny = static_cast<Index>(std::llround(s.height * static_cast<double>(s.resolution)));
        g.solid.assign(static_cast<std::size_t>(g.nx * g.ny), 0);
        for (Index j = 0; j < g.ny; ++j)
            for (Index i = 0; i < g.nx; ++i) {
                const double xc = (static_cast<double>(i) + 0.5) * g.h - s.center_x;
                const double yc = (static_cast<double>(j) + 0.5) * g.h - s.center_y;
                if (xc * xc + yc * yc < 0.25) g.solid[static_cast<std::size_t>(j * g.nx + i)] = 1;
            }
        const double nsolid = static_cast<double>(std::count(g.solid.begin(), g.solid.end(), 1));
        require(nsolid > 0.0, "cylinder_fd: obstacle is not resolved by the grid");
        // unknown faces: u first, then v
        Index id = 0;
        g.u_id.assign(static_cast<std::size_t>((g.nx + 1) * g.ny), -1);
        for (Index j = 0; j < g.ny; ++j)
            for (Index i = 1; i <= g.nx; ++i)
                if (!g.is_solid(i - 1, j) && !g.is_solid(i, j)) g.u_id[uidx(i, j)] = id++;
        g.n_u = id;
        g.v_id.assign(static_cast<std::size_t>(g.nx * (g.ny + 1)), -1);
        for (Index j = 1; j < g.ny; ++j)
            for (Index i = 0; i < g.nx; ++i)
                if (!g.is_solid(i, j - 1) && !g.is_solid(i, j)) g.v_id[vidx(i, j)] = id++;
        g.n_v = id - g.n_u;
        n = id;
        // known nonzero faces: inflow u(0, j)
        for (Index j = 0; j < g.ny; ++j) {
            const double y = (static_cast<double>(j) + 0.5) * g.h / s.height;
            known.push_back(4.0 * s.u_max * y * (1.0 - y));
        }
    }

    [[nodiscard]] std::size_t uidx(Index i, Index j) const { return static_cast<std::size_t>(j * (g.nx + 1) + i); }
    [[nodiscard]] std::size_t vidx(Index i, Index j) const { return static_cast<std::size_t>(j * g.nx + i); }

    /// u at face (i, j) as a combination of extended unknowns, seen from the
    /// equation row at face (ci, cj) (used for ghost values).
    [[nodiscard]] Combo u_at(Index i, Index j, Index ci, Index cj) const {
        if (i > g.nx) return u_at(g.nx, j, ci, cj);  // outflow: zero normal derivative
        if (j < 0 || j >= g.ny) return scaled(u_at(ci, cj, ci, cj), -1.0);  // channel wall
        if (i == 0) return {{n + j, 1.0}};
        const Index id = g.u_id[uidx(i, j)];
        if (id >= 0) return {{id, 1.0}};
        const bool left = g.is_solid(i - 1, j), right = i < g.nx && g.is_solid(i, j);
        if (left && (right || i == g.nx) && j != cj) return scaled(u_at(ci, cj, ci, cj), -1.0);
        return {};
    }

    [[nodiscard]] Combo v_at(Index i, Index j, Index ci, Index cj) const {
        if (i >= g.nx) return v_at(g.nx - 1, j, ci, cj);  // outflow
        if (i < 0) return scaled(v_at(ci, cj, ci, cj), -1.0);  // inflow edge, v = 0
        if (j <= 0 || j >= g.ny) return {};
        const Index id = g.v_id[vidx(i, j)];
        if (id >= 0) return {{id, 1.0}};
        if (g.is_solid(i, j - 1) && g.is_solid(i, j) && i != ci) return scaled(v_at(ci, cj, ci, cj), -1.0);
        return {};
    }

    static Combo scaled(Combo c, double s) {
        for (auto& e : c) e.second *= s;
        return c;
    }

    static Combo add(Combo a, const Combo& b, double s = 1.0) {
        for (const auto& e : b) a.emplace_back(e.first, s * e.second);
        return a;
    }

    [[nodiscard]] double known_value(Index ext) const { return known[static_cast<std::size_t>(ext - n)]; }

    BenchmarkSpec spec;
    CylinderGrid g;
    Index n = 0;
    std::vector<double> known;
};

}  // namespace detail

/// Grid metadata for a cylinder spec (face numbering as in make_cylinder_fd).
inline CylinderGrid cylinder_grid(const BenchmarkSpec& spec) {
    spec.validate();
    return detail::CylinderBuilder(spec).g;
}

/// Channel flow past a cylinder on a MAC grid, origin at the zero state (not
/// the steady state): M = h^2 I, J = h div with one row per fluid cell and an
/// open outflow boundary, central differences for diffusion and advection.
/// Boundary data enter through f (momentum) and g (divergence).
inline QuadraticSystem make_cylinder_fd(const BenchmarkSpec& spec) {
    spec.validate();
    detail::CylinderBuilder b(spec);
    const auto& g = b.g;
    const Index n = b.n;
    const double h = g.h;
    const double u_mean = 2.0 * spec.u_max / 3.0;
    const double nu = u_mean * 1.0 / spec.reynolds;

    std::vector<Triplet> at;
    Vec f = Vec::Zero(n);
    std::vector<TensorEntry> ext;  // over extended indices
    auto linear = [&](Index row, const detail::Combo& c, double s) {
        for (const auto& [k, w] : c) {
            if (k < n) at.emplace_back(row, k, s * w);
            else f(row) += s * w * b.known_value(k);
        }
    };
    auto bilinear = [&](Index row, const detail::Combo& a, const detail::Combo& d, double s) {
        for (const auto& [ka, wa] : a)
            for (const auto& [kd, wd] : d) ext.push_back({row, ka, kd, s * wa * wd});
    };

    for (Index j = 0; j < g.ny; ++j)
        for (Index i = 1; i <= g.nx; ++i) {
            const Index row = g.u_id[b.uidx(i, j)];
            if (row < 0) continue;
            // nu h^2 laplacian
            at.emplace_back(row, row, -4.0 * nu);
            for (auto c : {b.u_at(i + 1, j, i, j), b.u_at(i - 1, j, i, j), b.u_at(i, j + 1, i, j),
                           b.u_at(i, j - 1, i, j)})
                linear(row, c, nu);
            // -h^2 (u u_x + vbar u_y)
            const detail::Combo self{{row, 1.0}};
            const auto dx = detail::CylinderBuilder::add(b.u_at(i + 1, j, i, j), b.u_at(i - 1, j, i, j), -1.0);
            const auto dy = detail::CylinderBuilder::add(b.u_at(i, j + 1, i, j), b.u_at(i, j - 1, i, j), -1.0);
            detail::Combo vbar;
            for (auto c : {b.v_at(i - 1, j, i - 1, j), b.v_at(i, j, i, j), b.v_at(i - 1, j + 1, i - 1, j + 1),
                           b.v_at(i, j + 1, i, j + 1)})
                vbar = detail::CylinderBuilder::add(vbar, c, 0.25);
            bilinear(row, self, dx, -0.5 * h);
            bilinear(row, vbar, dy, -0.5 * h);
        }
    for (Index j = 1; j < g.ny; ++j)
        for (Index i = 0; i < g.nx; ++i) {
            const Index row = g.v_id[b.vidx(i, j)];
            if (row < 0) continue;
            at.emplace_back(row, row, -4.0 * nu);
            for (auto c : {b.v_at(i + 1, j, i, j), b.v_at(i - 1, j, i, j), b.v_at(i, j + 1, i, j),
                           b.v_at(i, j - 1, i, j)})
                linear(row, c, nu);
            const detail::Combo self{{row, 1.0}};
            const auto dx = detail::CylinderBuilder::add(b.v_at(i + 1, j, i, j), b.v_at(i - 1, j, i, j), -1.0);
            const auto dy = detail::CylinderBuilder::add(b.v_at(i, j + 1, i, j), b.v_at(i, j - 1, i, j), -1.0);
            detail::Combo ubar;
            for (auto c : {b.u_at(i, j - 1, i, j - 1), b.u_at(i + 1, j - 1, i + 1, j - 1), b.u_at(i, j, i, j),
                           b.u_at(i + 1, j, i + 1, j)})
                ubar = detail::CylinderBuilder::add(ubar, c, 0.25);
            bilinear(row, ubar, dx, -0.5 * h);
            bilinear(row, self, dy, -0.5 * h);
        }

    // split the extended tensor: unknown x unknown -> N, cross terms -> A,
    // boundary x boundary -> f
    std::vector<TensorEntry> te;
    for (const auto& e : ext) {
        const bool ja = e.j < n, kb = e.k < n;
        if (ja && kb) te.push_back(e);
        else if (ja) at.emplace_back(e.i, e.j, e.value * b.known_value(e.k));
        else if (kb) at.emplace_back(e.i, e.k, e.value * b.known_value(e.j));
        else f(e.i) += e.value * b.known_value(e.j) * b.known_value(e.k);
    }

    QuadraticSystem sys;
    sys.M = (h * h) * sparse_identity(n);
    sys.A.resize(n, n);
    sys.A.setFromTriplets(at.begin(), at.end());
    sys.A.prune(0.0);
    sys.N = BilinearOperator::from_entries(n, std::move(te));

    // divergence, one row per fluid cell
    std::vector<Triplet> jt;
    std::vector<double> gv;
    Index prow = 0;
    for (Index j = 0; j < g.ny; ++j)
        for (Index i = 0; i < g.nx; ++i) {
            if (g.is_solid(i, j)) continue;
            double rhs = 0.0;
            auto face = [&](const detail::Combo& c, double s) {
                for (const auto& [k, w] : c) {
                    if (k < n) jt.emplace_back(prow, k, s * w);
                    else rhs -= s * w * b.known_value(k);
                }
            };
            auto uface = [&](Index fi) -> detail::Combo {
                if (fi == 0) return {{n + j, 1.0}};
                const Index id = g.u_id[b.uidx(fi, j)];
                return id >= 0 ? detail::Combo{{id, 1.0}} : detail::Combo{};
            };
            auto vface = [&](Index fj) -> detail::Combo {
                const Index id = g.v_id[b.vidx(i, fj)];
                return id >= 0 ? detail::Combo{{id, 1.0}} : detail::Combo{};
            };
            face(uface(i + 1), 1.0);
            face(uface(i), -1.0);
            face(vface(j + 1), 1.0);
            face(vface(j), -1.0);
            gv.push_back(rhs);
            ++prow;
        }
    sys.J.resize(prow, n);
    sys.J.setFromTriplets(jt.begin(), jt.end());
    sys.g = Eigen::Map<const Vec>(gv.data(), static_cast<Index>(gv.size()));
    sys.f = f;
    if (sys.f.norm() == 0.0) sys.f = Vec();
    if (sys.g.norm() == 0.0) sys.g = Vec();

    // actuators: vertical volume forcing above and below the rear half of the obstacle
    sys.B = Mat::Zero(n, 2);
    const double x0 = spec.center_x, x1 = spec.center_x + spec.actuator_width;
    for (Index j = 1; j < g.ny; ++j)
        for (Index i = 0; i < g.nx; ++i) {
            const Index id = g.v_id[b.vidx(i, j)];
            if (id < 0) continue;
            const double x = (static_cast<double>(i) + 0.5) * h, y = static_cast<double>(j) * h;
            if (x < x0 || x > x1) continue;
            const double above = y - (spec.center_y + 0.5), below = (spec.center_y - 0.5) - y;
            if (above >= 0.0 && above <= spec.actuator_depth) sys.B(id, 0) = h * h;
            if (below >= 0.0 && below <= spec.actuator_depth) sys.B(id, 1) = -h * h;
        }
    require(sys.B.col(0).norm() > 0.0 && sys.B.col(1).norm() > 0.0,
            "cylinder_fd: actuator regions contain no velocity unknowns");

    // sensors: u and v averaged over the 3 x 3 nearest faces of each point
    sys.C = Mat::Zero(2 * static_cast<Index>(spec.sensors.size()), n);
    for (std::size_t s = 0; s < spec.sensors.size(); ++s) {
        const double px = spec.center_x + spec.sensors[s][0], py = spec.center_y + spec.sensors[s][1];
        require(px > 0.0 && px < spec.length && py > 0.0 && py < spec.height, "cylinder_fd: sensor outside domain");
        const auto ui = static_cast<Index>(std::llround(px / h)), uj = static_cast<Index>(std::floor(py / h));
        const auto vi = static_cast<Index>(std::floor(px / h)), vj = static_cast<Index>(std::llround(py / h));
        for (Index dj = -1; dj <= 1; ++dj)
            for (Index di = -1; di <= 1; ++di) {
                const Index i = ui + di, j = uj + dj;
                if (i >= 1 && i <= g.nx && j >= 0 && j < g.ny && g.u_id[b.uidx(i, j)] >= 0)
                    sys.C(static_cast<Index>(2 * s), g.u_id[b.uidx(i, j)]) = 1.0 / 9.0;
                const Index k = vi + di, l = vj + dj;
                if (k >= 0 && k < g.nx && l >= 1 && l < g.ny && g.v_id[b.vidx(k, l)] >= 0)
                    sys.C(static_cast<Index>(2 * s + 1), g.v_id[b.vidx(k, l)]) = 1.0 / 9.0;
            }
    }
    return sys;
}

/// Frobenius norm of the coefficient tensor: a Lipschitz bound for
/// v -> N_lambda(v) (spectral norm) for every lambda in [0, 1].
inline double lipschitz_bound(const BilinearOperator& N) {
    double s = 0.0;
    for (const auto& e : N.entries()) s += e.value * e.value;
    return std::sqrt(s);
}

/// Random sparse system: A = R - D with a few unstable diagonal entries on
/// request, dense random B and C, sparse random N, spd tridiagonal M unless
/// identity_mass, and an optional full-row-rank J.
inline QuadraticSystem make_synthetic(const BenchmarkSpec& spec) {
    spec.validate();
    const Index n = spec.n;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::uniform_int_distribution<Index> col(0, n - 1);
    QuadraticSystem sys;
    std::vector<Triplet> t;
    if (spec.identity_mass) {
        sys.M = sparse_identity(n);
    } else {
        for (Index i = 0; i < n; ++i) {
            t.emplace_back(i, i, 2.0 + ud(rng));
            if (i + 1 < n) {
                const double c = 0.5 * ud(rng);
                t.emplace_back(i, i + 1, c);
                t.emplace_back(i + 1, i, c);
            }
        }
        sys.M.resize(n, n);
        sys.M.setFromTriplets(t.begin(), t.end());
    }
    t.clear();
    const int per_row = 4;
    for (Index i = 0; i < n; ++i) {
        const double d = i < spec.unstable_modes ? 1.0 + ud(rng) : -(3.0 + 3.0 * ud(rng));
        t.emplace_back(i, i, d);
        for (int k = 0; k < per_row; ++k) t.emplace_back(i, col(rng), 0.25 * nd(rng));
    }
    sys.A.resize(n, n);
    sys.A.setFromTriplets(t.begin(), t.end());
    sys.A = sys.M * sys.A;
    sys.A.prune(0.0);
    sys.B.resize(n, spec.inputs);
    for (Index j = 0; j < spec.inputs; ++j)
        for (Index i = 0; i < n; ++i) sys.B(i, j) = nd(rng);
    sys.C.resize(spec.outputs, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < spec.outputs; ++i) sys.C(i, j) = nd(rng) / std::sqrt(static_cast<double>(n));
    std::vector<TensorEntry> te;
    for (Index i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) te.push_back({i, col(rng), col(rng), nd(rng) / std::sqrt(static_cast<double>(n))});
    sys.N = BilinearOperator::from_entries(n, std::move(te));
    sys.J = SpMat(0, n);
    if (spec.constraint_rows > 0) {
        const Index np = spec.constraint_rows;
        std::vector<Triplet> jt;
        for (Index i = 0; i < np; ++i) {
            jt.emplace_back(i, (i * n) / np, 2.0 + std::abs(nd(rng)));
            for (int k = 0; k < 3; ++k) {
                Index c = col(rng);
                if (c % (n / np) == 0 && c / (n / np) < np) c = (c + 1) % n;  // keep the pivot columns private
                jt.emplace_back(i, c, 0.3 * nd(rng));
            }
        }
        sys.J.resize(np, n);
        sys.J.setFromTriplets(jt.begin(), jt.end());
    }
    return sys;
}

inline QuadraticSystem make_benchmark(const BenchmarkSpec& spec) {
    switch (spec.kind) {
        case BenchmarkSpec::Kind::Burgers: return make_burgers(spec);
        case BenchmarkSpec::Kind::CylinderFd: return make_cylinder_fd(spec);
        case BenchmarkSpec::Kind::Synthetic: return make_synthetic(spec);
    }
    throw ContractError("unknown benchmark kind");
}

}  // namespace lpvsdre
