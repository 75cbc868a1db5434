#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "engine.hpp"
#include "stats.hpp"

namespace cpdre {

// Direction index i < d is +e_i, i >= d is -e_{i-d}.
inline Site direction(int d, int i) { return i < d ? unit(i, 1) : unit(i - d, -1); }
inline int direction_count(int d) { return 2 * d; }

// Level-indexed Bernoulli field on directed macroscopic edges. Edge
// (level k, site x, direction u) connects (x, k-1) to (x+u, k). Level ranges
// over 1..levels and sites over [-R, R]^d.
class OrientedField {
public:
    OrientedField(int d, int levels, int radius, double p, int dependence = 0)
        : d_(d), levels_(levels), radius_(radius), p_(p), dependence_(dependence), win_(window(d, radius)) {
        if (levels < 0) throw std::invalid_argument("field levels must be >= 0");
        const std::size_t n = static_cast<std::size_t>(levels) * win_.site_count() * static_cast<std::size_t>(2 * d);
        open_.assign(n, 0);
        tracked_.assign(n, 0);
    }

    int dim() const { return d_; }
    int levels() const { return levels_; }
    int radius() const { return radius_; }
    double p() const { return p_; }
    int dependence() const { return dependence_; }
    const Window& sites() const { return win_; }

    std::size_t slot(int level, std::uint32_t site, int dir) const {
        return ((static_cast<std::size_t>(level - 1) * win_.site_count() + site) * static_cast<std::size_t>(2 * d_)) +
               static_cast<std::size_t>(dir);
    }
    bool open(int level, std::uint32_t site, int dir) const { return open_[slot(level, site, dir)] != 0; }
    void set(int level, std::uint32_t site, int dir, bool v, bool tracked = false) {
        open_[slot(level, site, dir)] = v;
        tracked_[slot(level, site, dir)] = tracked;
    }
    bool tracked(int level, std::uint32_t site, int dir) const { return tracked_[slot(level, site, dir)] != 0; }

private:
    int d_, levels_, radius_;
    double p_;
    int dependence_;
    Window win_;
    std::vector<std::uint8_t> open_, tracked_;
};

// i.i.d. Bernoulli(p) on every edge. Edge states are pure functions of
// (seed, level, site, direction), so coupled fields at different p share
// their uniforms.
inline OrientedField sample_independent_field(int d, double p, int levels, int radius, std::uint64_t seed) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("field density must lie in [0,1]");
    OrientedField f(d, levels, radius, p, 0);
    CounterRng g(seed, Role::Field);
    for (int k = 1; k <= levels; ++k)
        for (std::uint32_t s = 0; s < f.sites().site_count(); ++s)
            for (int u = 0; u < 2 * d; ++u)
                f.set(k, s, u, g.uniform_at(static_cast<std::uint64_t>(k), s * 8ull + static_cast<std::uint64_t>(u)) < p);
    return f;
}

// Same law without materializing: edges sampled on demand from the counter
// stream. Used when most of the box is never visited.
class LazyField {
public:
    LazyField(int d, double p, int levels, int radius, std::uint64_t seed)
        : d_(d), levels_(levels), p_(p), win_(window(d, radius)), g_(seed, Role::Field) {}
    int dim() const { return d_; }
    int levels() const { return levels_; }
    const Window& sites() const { return win_; }
    bool open(int level, std::uint32_t site, int dir) const {
        return g_.uniform_at(static_cast<std::uint64_t>(level), site * 8ull + static_cast<std::uint64_t>(dir)) < p_;
    }

private:
    int d_, levels_;
    double p_;
    Window win_;
    CounterRng g_;
};

struct ClusterResult {
    std::vector<std::vector<std::uint32_t>> levels;  // P_k for k = 0..reached level, sorted site ids
    bool overflow = false;                           // an open edge left the box
};

// P_k^{W,A}: level-by-level reachability from the set A placed at level
// `from`. Stops after level `to` or when the cluster dies.
template <class Field>
ClusterResult cluster(const Field& f, std::vector<std::uint32_t> start, int to, int from = 0) {
    if (to > f.levels()) throw std::invalid_argument("cluster: level beyond the field");
    const Window& w = f.sites();
    const int d = f.dim();
    ClusterResult r;
    std::sort(start.begin(), start.end());
    start.erase(std::unique(start.begin(), start.end()), start.end());
    r.levels.push_back(start);
    std::vector<std::uint8_t> mark(w.site_count(), 0);
    for (int k = from + 1; k <= to && !r.levels.back().empty(); ++k) {
        std::vector<std::uint32_t> next;
        for (auto s : r.levels.back()) {
            const Site x = w.site(s);
            for (int u = 0; u < 2 * d; ++u) {
                if (!f.open(k, s, u)) continue;
                auto y = w.find(x + direction(d, u));
                if (!y) {
                    r.overflow = true;
                    continue;
                }
                if (!mark[*y]) {
                    mark[*y] = 1;
                    next.push_back(*y);
                }
            }
        }
        for (auto y : next) mark[y] = 0;
        std::sort(next.begin(), next.end());
        r.levels.push_back(std::move(next));
    }
    return r;
}

// tau^W: first empty level, or nullopt if alive after the last level.
template <class Field>
std::optional<int> extinction_level(const Field& f, std::uint32_t start, int from = 0) {
    auto c = cluster(f, {start}, f.levels(), from);
    for (std::size_t k = 0; k < c.levels.size(); ++k)
        if (c.levels[k].empty()) return from + static_cast<int>(k);
    return std::nullopt;
}

struct HitCounts {
    std::vector<int> R;             // R_1, R_2, ... observed within the horizon
    std::optional<int> R_hat1;      // first hit that is itself alive at the horizon
};

template <class Field>
HitCounts hit_counts(const Field& f, std::uint32_t start, std::uint32_t target, int n) {
    HitCounts h;
    auto c = cluster(f, {start}, f.levels());
    for (std::size_t k = 1; k < c.levels.size(); ++k) {
        const auto& L = c.levels[k];
        if (!std::binary_search(L.begin(), L.end(), target)) continue;
        if (static_cast<int>(h.R.size()) < n) h.R.push_back(static_cast<int>(k));
        if (!h.R_hat1 && !extinction_level(f, target, static_cast<int>(k))) h.R_hat1 = static_cast<int>(k);
        if (static_cast<int>(h.R.size()) >= n && h.R_hat1) break;
    }
    return h;
}

// Even sites of the first axis inside the box (the 2Z layer).
template <class Field>
std::vector<std::uint32_t> even_layer(const Field& f) {
    std::vector<std::uint32_t> out;
    const Window& w = f.sites();
    for (std::uint32_t s = 0; s < w.site_count(); ++s) {
        const Site x = w.site(s);
        bool axis = true;
        for (int i = 1; i < w.dim(); ++i) axis = axis && x[i] == 0;
        if (axis && x[0] % 2 == 0) out.push_back(s);
    }
    return out;
}

// |P_n intersect B_r intersect (Z x {0}^{d-1})|.
template <class Field>
std::size_t density_slab(const Field& f, const std::vector<std::uint32_t>& start, int n, int r) {
    auto c = cluster(f, start, n);
    if (static_cast<int>(c.levels.size()) <= n) return 0;
    std::size_t cnt = 0;
    const Window& w = f.sites();
    for (auto s : c.levels[static_cast<std::size_t>(n)]) {
        const Site x = w.site(s);
        bool axis = true;
        for (int i = 1; i < w.dim(); ++i) axis = axis && x[i] == 0;
        if (axis && std::abs(x[0]) <= r) ++cnt;
    }
    return cnt;
}

// ------------------------------------------------------------ cubes

// Whether center + [-n, n]^d lies in eta (all sites inside the window).
inline bool cube_full(const Window& w, const std::vector<std::uint8_t>& eta, const Site& center, int n) {
    const Box b = Box::cube(w.dim(), center, n);
    if (!w.box().contains(b)) return false;
    bool full = true;
    b.for_each([&](const Site& x) {
        if (full && !eta[w.index(x)]) full = false;
    });
    return full;
}

// Lexicographically smallest center in `region` whose cube is full.
inline std::optional<Site> find_cube(const Window& w, const std::vector<std::uint8_t>& eta, const Box& region, int n) {
    std::optional<Site> hit;
    region.for_each([&](const Site& y) {
        if (!hit && cube_full(w, eta, y, n)) hit = y;
    });
    return hit;
}

// Smallest center in `region` whose cube is full and contains site z.
inline std::optional<Site> find_cube_through(const Window& w, const std::vector<std::uint8_t>& eta, const Box& region,
                                             const Site& z, int n) {
    Box around = Box::cube(w.dim(), z, n);
    for (int i = 0; i < w.dim(); ++i) {
        around.lo[i] = std::max(around.lo[i], region.lo[i]);
        around.hi[i] = std::min(around.hi[i], region.hi[i]);
        if (around.lo[i] > around.hi[i]) return std::nullopt;
    }
    return find_cube(w, eta, around, n);
}

struct CubeHit {
    double time;
    Site center;
};

// First time in [t1, t2] (or [t1, t2) when open_end) at which copy i holds
// a full cube with center in `region`. The copy is left at the hit time, or
// at t2 when there is none.
inline std::optional<CubeHit> first_cube(CoupledRun& run, std::size_t i, const Box& region, int n, double t1, double t2,
                                         bool open_end = false) {
    const Window& w = run.window();
    run.advance(i, t1);
    if (run.copy(i).time() < t1) return std::nullopt;
    if (auto y = find_cube(w, run.copy(i).state().eta, region, n)) return CubeHit{t1, *y};
    std::optional<CubeHit> hit;
    run.advance(i, t2, [&](const Copy& c, const InfectionChange& ch) {
        if (ch.value == 0) return false;
        if (open_end && ch.time >= t2) return false;
        if (auto y = find_cube_through(w, c.state().eta, region, w.site(ch.site), n)) {
            hit = CubeHit{ch.time, *y};
            return true;
        }
        return false;
    });
    return hit;
}

inline Configuration cube_configuration(const Window& w, const Site& center, int n, std::uint8_t level = 0) {
    Configuration c{std::vector<std::uint8_t>(w.site_count(), 0), std::vector<std::uint8_t>(w.cell_count(), level)};
    Box::cube(w.dim(), center, n).for_each([&](const Site& x) {
        auto i = w.find(x);
        if (!i) throw std::out_of_range("cube leaves the window");
        c.eta[*i] = 1;
    });
    return c;
}

// ------------------------------------------------ finite space-time events

struct SpaceTimeProbe {
    std::size_t trials = 0;
    std::size_t e1 = 0, e1_reflected = 0, e2 = 0, e3 = 0;
    stats::Interval ci1{0, 1}, ci1r{0, 1}, ci2{0, 1}, ci3{0, 1};
};

inline Box orthant_box(int d, int lo0, int hi0, int lo, int hi) {
    Box b{d, Site{}, Site{}};
    b.lo[0] = lo0;
    b.hi[0] = hi0;
    for (int i = 1; i < d; ++i) {
        b.lo[i] = lo;
        b.hi[i] = hi;
    }
    return b;
}

// E1: truncation radius L+n, cube at time T+1 centered in [0,L)^d (also the
// reflected box (-L,0]^d). E2: radius L+2n, cube at some time in [1, T+1)
// centered in {L+n} x [0,L)^{d-1}. E3: radius 2L+3n, cube at some time in
// [T, 2T) centered in [L+n, 2L+n] x [0,2L)^{d-1}. All from [-n,n]^d with the
// all-zero background.
inline SpaceTimeProbe probe_finite_spacetime(const Model& m, int d, int n, int L, double T, std::size_t trials,
                                             std::uint64_t seed) {
    if (n < 0 || L < 1 || !(T > 0)) throw std::invalid_argument("probe_finite_spacetime: need n >= 0, L >= 1, T > 0");
    SpaceTimeProbe r;
    r.trials = trials;
    auto c1 = make_catalog(window(d, L + n), m);
    auto c2 = make_catalog(window(d, L + 2 * n), m);
    auto c3 = make_catalog(window(d, 2 * L + 3 * n), m);
    CopyOptions opt;
    opt.stop_on_extinction = true;
    opt.snapshots = false;
    Box b1{d, Site{}, Site{}}, b1r{d, Site{}, Site{}};
    for (int i = 0; i < d; ++i) {
        b1.lo[i] = 0;
        b1.hi[i] = L - 1;
        b1r.lo[i] = -(L - 1);
        b1r.hi[i] = 0;
    }
    const Box b2 = orthant_box(d, L + n, L + n, 0, L - 1);
    const Box b3 = orthant_box(d, L + n, 2 * L + n, 0, 2 * L - 1);
    for (std::size_t i = 0; i < trials; ++i) {
        const std::uint64_t s = derive_trial_seed(seed, i);
        {
            CoupledRun run(c1, T + 1, derive_trial_seed(s, 1));
            auto c = run.add_copy("e1", cube_configuration(c1->window(), Site{}, n), opt);
            run.advance(c, T + 1);
            const auto& eta = run.copy(c).state().eta;
            r.e1 += find_cube(c1->window(), eta, b1, n).has_value();
            r.e1_reflected += find_cube(c1->window(), eta, b1r, n).has_value();
        }
        {
            CoupledRun run(c2, T + 1, derive_trial_seed(s, 2));
            auto c = run.add_copy("e2", cube_configuration(c2->window(), Site{}, n), opt);
            r.e2 += first_cube(run, c, b2, n, 1.0, T + 1, true).has_value();
        }
        {
            CoupledRun run(c3, 2 * T, derive_trial_seed(s, 3));
            auto c = run.add_copy("e3", cube_configuration(c3->window(), Site{}, n), opt);
            r.e3 += first_cube(run, c, b3, n, T, 2 * T, true).has_value();
        }
    }
    r.ci1 = stats::wilson(r.e1, trials);
    r.ci1r = stats::wilson(r.e1_reflected, trials);
    r.ci2 = stats::wilson(r.e2, trials);
    r.ci3 = stats::wilson(r.e3, trials);
    return r;
}

// ------------------------------------------------------ block construction

struct MacroParams {
    int n = 1;     // seed cube half-width
    int a = 3;     // macro box half-width
    double b = 1;  // macro time unit
    void validate() const {
        if (n < 0 || a <= n || !(b > 0)) throw std::invalid_argument("macro parameters need 0 <= n < a and b > 0");
    }
};

// B_{x,a} = 2a x + [-a, a]^d.
inline Box macro_box(int d, const Site& xhat, int a) { return Box::cube(d, xhat.scaled(2 * a), a); }
// Spatial part of H(x, j): 2a x + [-5a, 5a]^d.
inline Box macro_house(int d, const Site& xhat, int a) { return Box::cube(d, xhat.scaled(2 * a), 5 * a); }

struct BlockEvent {
    bool occurred = false;
    CubeHit target{0, Site{}};
};

// E^u for every direction from one seed cube (x, s) in S(xhat, j): a copy
// restarted at s from x + [-n,n]^d with the all-zero background, using only
// arrows inside the spatial part of H(xhat, j), must fully infect a cube
// centered in B_{xhat+u, a} at some time in [(j+5)b, (j+6)b]. Macro
// coordinates are taken relative to the space-time origin (x0, t0). One
// entry per direction in the order +e_1..+e_d, -e_1..-e_d.
inline std::vector<BlockEvent> block_events(CoupledRun& run, const Site& xhat, int j, const Site& x, double s,
                                            const MacroParams& mp, const Site& x0 = Site{}, double t0 = 0.0) {
    const Window& w = run.window();
    const int d = w.dim();
    const Box house = Box::cube(d, xhat.scaled(2 * mp.a) + x0, 5 * mp.a);
    if (!w.box().contains(house)) throw std::out_of_range("block event: H box leaves the window");
    const double t1 = t0 + (j + 5) * mp.b, t2 = t0 + (j + 6) * mp.b;
    if (t2 > run.horizon()) throw StreamExhausted("block event needs a longer stream");
    CopyOptions opt;
    opt.restrict_to = house;
    opt.stop_on_extinction = true;
    opt.snapshots = false;
    auto c = run.restart_copy("E", s, cube_configuration(w, x, mp.n), opt);
    std::vector<BlockEvent> out(static_cast<std::size_t>(2 * d));
    std::vector<Box> targets;
    for (int u = 0; u < 2 * d; ++u) targets.push_back(Box::cube(d, (xhat + direction(d, u)).scaled(2 * mp.a) + x0, mp.a));
    run.advance(c, t1);
    std::size_t missing = 0;
    for (int u = 0; u < 2 * d; ++u) {
        if (auto y = find_cube(w, run.copy(c).state().eta, targets[static_cast<std::size_t>(u)], mp.n))
            out[static_cast<std::size_t>(u)] = {true, {t1, *y}};
        else
            ++missing;
    }
    if (missing > 0 && !run.copy(c).extinct()) {
        run.advance(c, t2, [&](const Copy& cp, const InfectionChange& ch) {
            if (ch.value == 0) return false;
            for (int u = 0; u < 2 * d; ++u) {
                auto& o = out[static_cast<std::size_t>(u)];
                if (o.occurred) continue;
                if (auto y = find_cube_through(w, cp.state().eta, targets[static_cast<std::size_t>(u)], w.site(ch.site), mp.n)) {
                    o = {true, {ch.time, *y}};
                    --missing;
                }
            }
            return missing == 0;
        });
    }
    return out;
}

struct BlockCoupling {
    OrientedField field;
    // seeds[k] maps macro site id -> Y_{x,k}; only non-dagger entries stored.
    std::vector<std::map<std::uint32_t, CubeHit>> seeds;
    std::size_t tracked_edges = 0, tracked_open = 0;
    std::size_t audited = 0, violations = 0;
    bool overflow = false;  // some H box left the window; construction stopped early
    int levels_built = 0;
    std::optional<int> extinction;  // tau of the field from the origin
};

// Builds the 5-dependent field from a seed cube at (x0, t0) on the live run.
// Macro coordinates are relative to x0 and time to t0. Untracked edges are
// filler Bernoulli(p). If `audit` names a copy that dominates the seed
// (started at time <= t0 with the seed cube inside it), every reached macro
// site is checked against it: Y_{x,k} = (y,t) must be a full cube of that
// copy at time t.
inline BlockCoupling build_block_coupling(CoupledRun& run, const Site& x0, double t0, const MacroParams& mp, int levels,
                                          double p_fill, std::uint64_t seed, std::optional<std::size_t> audit = std::nullopt) {
    mp.validate();
    const Window& w = run.window();
    const int d = w.dim();
    BlockCoupling bc{OrientedField(d, levels, levels, p_fill, 5), {}, 0, 0, 0, 0, false, 0, std::nullopt};
    const Window& mw = bc.field.sites();
    CounterRng filler(seed, Role::Filler);
    bc.seeds.resize(static_cast<std::size_t>(levels) + 1);
    bc.seeds[0][mw.index(Site{})] = CubeHit{t0, x0};
    for (int k = 1; k <= levels; ++k) {
        const int j = 5 * (k - 1);
        std::map<std::uint32_t, std::vector<BlockEvent>> ev;
        for (const auto& [ms, y] : bc.seeds[static_cast<std::size_t>(k - 1)]) {
            const Site xhat = mw.site(ms);
            const Site center = xhat.scaled(2 * mp.a) + x0;
            if (!w.box().contains(Box::cube(d, center, 5 * mp.a))) {
                bc.overflow = true;
                break;
            }
            ev[ms] = block_events(run, xhat, j, y.center, y.time, mp, x0, t0);
        }
        if (bc.overflow) break;
        for (std::uint32_t ms = 0; ms < mw.site_count(); ++ms)
            for (int u = 0; u < 2 * d; ++u) {
                auto it = ev.find(ms);
                if (it != ev.end()) {
                    const bool o = it->second[static_cast<std::size_t>(u)].occurred;
                    bc.field.set(k, ms, u, o, true);
                    ++bc.tracked_edges;
                    bc.tracked_open += o;
                } else {
                    bc.field.set(k, ms, u, filler.uniform_at(static_cast<std::uint64_t>(k), ms * 8ull + static_cast<std::uint64_t>(u)) < p_fill);
                }
            }
        auto& next = bc.seeds[static_cast<std::size_t>(k)];
        for (std::uint32_t ms = 0; ms < mw.site_count(); ++ms) {
            const Site xhat = mw.site(ms);
            for (int u = 0; u < 2 * d; ++u) {
                auto from = mw.find(xhat - direction(d, u));
                if (!from) continue;
                auto it = ev.find(*from);
                if (it == ev.end() || !it->second[static_cast<std::size_t>(u)].occurred) continue;
                next[ms] = it->second[static_cast<std::size_t>(u)].target;
                break;
            }
        }
        bc.levels_built = k;
        if (next.empty()) {
            bc.extinction = k;
            break;
        }
    }
    // Field cluster must coincide with the set of non-dagger seeds.
    auto cl = cluster(bc.field, {mw.index(Site{})}, bc.levels_built);
    for (int k = 0; k <= bc.levels_built; ++k) {
        const auto& P = k < static_cast<int>(cl.levels.size()) ? cl.levels[static_cast<std::size_t>(k)] : std::vector<std::uint32_t>{};
        const auto& Y = bc.seeds[static_cast<std::size_t>(k)];
        if (P.size() != Y.size()) ++bc.violations;
        for (auto ms : P)
            if (!Y.count(ms)) ++bc.violations;
    }
    if (audit) {
        std::vector<std::pair<CubeHit, Site>> checks;
        for (int k = 0; k <= bc.levels_built; ++k)
            for (const auto& [ms, y] : bc.seeds[static_cast<std::size_t>(k)]) {
                const Site xhat = mw.site(ms);
                const Box S = Box::cube(d, xhat.scaled(2 * mp.a) + x0, mp.a);
                const double lo = t0 + 5 * k * mp.b, hi = t0 + (5 * k + 1) * mp.b;
                if (!S.contains(y.center) || y.time < lo || y.time > hi) ++bc.violations;
                checks.push_back({y, xhat});
            }
        std::sort(checks.begin(), checks.end(), [](const auto& l, const auto& r) { return l.first.time < r.first.time; });
        for (const auto& [y, xhat] : checks) {
            run.advance(*audit, y.time);
            ++bc.audited;
            if (!cube_full(w, run.copy(*audit).state().eta, y.center, mp.n)) ++bc.violations;
        }
    }
    return bc;
}

// Monte Carlo estimate of P(E^u(x, s)) with xhat = 0, j = 0: fresh stream per
// trial on a window equal to the H box.
struct BlockProbe {
    std::size_t trials = 0, hits = 0;
    stats::Interval ci{0, 1};
    double estimate() const { return trials ? static_cast<double>(hits) / static_cast<double>(trials) : 0.0; }
};

inline BlockProbe probe_block_event(const Model& m, int d, const MacroParams& mp, int dir, const Site& x, double s,
                                    std::size_t trials, std::uint64_t seed) {
    mp.validate();
    if (!macro_box(d, Site{}, mp.a).contains(x) || s < 0 || s > mp.b)
        throw std::invalid_argument("probe_block_event: (x, s) must lie in S(0, 0)");
    auto cat = make_catalog(window(d, 5 * mp.a), m);
    BlockProbe r;
    r.trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        CoupledRun run(cat, 6 * mp.b, derive_trial_seed(seed, i));
        auto ev = block_events(run, Site{}, 0, x, s, mp);
        r.hits += ev[static_cast<std::size_t>(dir)].occurred;
    }
    r.ci = stats::wilson(r.hits, trials);
    return r;
}

}  // namespace cpdre
