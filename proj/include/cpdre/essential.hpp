#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "observables.hpp"
#include "percolation.hpp"

namespace cpdre {

// Survival surrogate used throughout: a copy "survives" if it touches the
// collar of the window (the truncated process stops being exact there) or is
// still alive at the run horizon having had at least t_surv time units. A
// copy alive at the horizon with less than t_surv behind it is undecided.
// With the same rule for base and restarts, a surviving restart (which the
// base dominates) forces a surviving base on every path.
enum class Fate : std::uint8_t { Dies, Survives, Undecided };

struct FateResult {
    Fate fate = Fate::Undecided;
    double death = kInf;  // absolute extinction time when Dies
};

inline FateResult run_to_fate(CoupledRun& run, std::size_t i, double t_surv) {
    Copy& c = run.copy(i);
    if (!c.boundary_time() && !c.extinct())
        run.advance(i, run.horizon(), [](const Copy& cp, const InfectionChange&) { return cp.boundary_time().has_value(); });
    if (c.boundary_time()) return {Fate::Survives, kInf};
    if (c.extinct()) return {Fate::Dies, *c.extinction_time()};
    if (run.horizon() - c.start_time() >= t_surv) return {Fate::Survives, kInf};
    return {Fate::Undecided, kInf};
}

struct Iteration {
    double l = 0, u = kInf, v = kInf;
    Fate restart = Fate::Undecided;
};

struct EssentialRecord {
    Site x;
    std::vector<Iteration> iterations;
    std::optional<int> K;          // set when determined
    CensoredTime sigma = CensoredTime::at_horizon(0);
    CensoredTime t_first = CensoredTime::at_horizon(0);
    Fate base = Fate::Undecided;   // survival surrogate of the base copy
    std::optional<double> collar;  // censored because the base had reached the collar by then
    bool censored() const { return !K.has_value(); }
};

// Essential hitting time of x for the base copy (started at time t0 = its
// start time). Times in the record are relative to t0. u_1 = t(x); for
// k >= 2, l_k is the first time >= v_{k-1} at which x is healthy and u_k the
// first infection of x after l_k. v_k = u_k + lifetime of (delta_x, 0)
// restarted at u_k, +inf when that copy survives (see run_to_fate).
inline EssentialRecord essential_hitting(CoupledRun& run, std::size_t base, const Site& x, double t_surv) {
    const Window& w = run.window();
    const auto xi_idx = w.find(x);
    if (!xi_idx) throw std::out_of_range("essential_hitting: site outside the window");
    const std::uint32_t xs = *xi_idx;
    const double t0 = run.copy(base).start_time();
    const double H = run.horizon();
    EssentialRecord rec;
    rec.x = x;
    CopyOptions ropt;
    ropt.stop_on_extinction = true;
    ropt.snapshots = false;

    // Advances the base until x changes to `value` at a time >= `from`;
    // returns the time or +inf (base dead) or nullopt (horizon, or the answer
    // would need the base past its collar time, where the window distorts it).
    auto next_change = [&](double from, std::uint8_t value) -> std::optional<double> {
        auto past_collar = [&](double t) {
            const auto bt = run.copy(base).boundary_time();
            if (bt && *bt < t) {
                rec.collar = *bt - t0;
                return true;
            }
            return false;
        };
        run.advance(base, std::max(from, run.copy(base).time()));
        const Copy& b = run.copy(base);
        if (b.state().eta[xs] == value) return past_collar(b.time()) ? std::nullopt : std::optional<double>(b.time());
        std::optional<double> hit;
        if (!b.extinct())
            run.advance(base, H, [&](const Copy&, const InfectionChange& ch) {
                if (ch.site == xs && ch.value == value) {
                    hit = ch.time;
                    return true;
                }
                return false;
            });
        if (hit) return past_collar(*hit) ? std::nullopt : hit;
        if (run.copy(base).extinct()) {
            if (past_collar(kInf)) return std::nullopt;
            return value ? std::optional<double>(kInf) : std::optional<double>(run.copy(base).time());
        }
        return std::nullopt;
    };

    double from = t0;
    for (int k = 1;; ++k) {
        Iteration it;
        if (k == 1) {
            it.l = t0;
        } else {
            auto l = next_change(from, 0);
            if (!l) break;
            it.l = *l;
        }
        auto u = next_change(it.l, 1);
        if (!u) break;
        it.u = *u;
        if (k == 1) rec.t_first = it.u == kInf ? CensoredTime::infinite() : CensoredTime::observed(it.u - t0);
        if (it.u == kInf) {
            // Base died: K is the previous iteration.
            rec.iterations.push_back(it);
            rec.K = k - 1;
            break;
        }
        auto c = run.restart_copy("restart", it.u, make_configuration(w, {x}), ropt);
        auto f = run_to_fate(run, c, t_surv);
        it.restart = f.fate;
        it.v = f.fate == Fate::Dies ? f.death : kInf;
        rec.iterations.push_back(it);
        if (f.fate == Fate::Undecided) break;
        if (f.fate == Fate::Survives) {
            rec.K = k;
            break;
        }
        from = it.v;
    }
    if (rec.K) {
        if (*rec.K >= 1) {
            rec.sigma = CensoredTime::observed(rec.iterations[static_cast<std::size_t>(*rec.K - 1)].u - t0);
        } else {
            rec.sigma = CensoredTime::infinite();  // x never hit before extinction
        }
    } else {
        rec.sigma = CensoredTime::at_horizon(H - t0);
    }
    // Base fate judged on its own by the same rule.
    rec.base = run_to_fate(run, base, t_surv).fate;
    return rec;
}

// Audit of one record at the censored level:
// (K = k and base survives) <=> (u_k < inf and v_k = inf), and
// u_k >= l_k >= v_{k-1}, sigma >= t(x), x infected at each finite u_k.
struct RecordAudit {
    bool equivalence = true;
    bool ordering = true;
    bool sigma_ge_first = true;
    bool ok() const { return equivalence && ordering && sigma_ge_first; }
};

inline RecordAudit audit_record(const EssentialRecord& r) {
    RecordAudit a;
    if (r.censored()) return a;
    const int K = *r.K;
    for (std::size_t i = 0; i < r.iterations.size(); ++i) {
        const auto& it = r.iterations[i];
        if (it.u < it.l) a.ordering = false;
        if (i > 0 && it.l < r.iterations[i - 1].v) a.ordering = false;
        if (it.u < kInf && it.v < it.u) a.ordering = false;
    }
    for (int k = 1; k <= static_cast<int>(r.iterations.size()); ++k) {
        const auto& it = r.iterations[static_cast<std::size_t>(k - 1)];
        const bool lhs = K == k && r.base == Fate::Survives;
        const bool rhs = it.u < kInf && it.v == kInf;
        if (lhs != rhs) a.equivalence = false;
    }
    if (r.sigma.finite() && r.t_first.finite() && r.sigma.value < r.t_first.value) a.sigma_ge_first = false;
    return a;
}

// s^xi(x): after sigma^xi(0) of the base, a fresh (delta_0, all-zero) copy
// is started at that time and its essential hitting time of x returned.
inline EssentialRecord shifted_essential(CoupledRun& run, std::size_t base, const Site& x, double t_surv) {
    auto r0 = essential_hitting(run, base, Site{}, t_surv);
    if (!r0.sigma.finite()) {
        EssentialRecord r;
        r.x = x;
        r.sigma = r0.sigma;
        return r;
    }
    const double s = run.copy(base).start_time() + r0.sigma.value;
    CopyOptions opt;
    opt.snapshots = false;
    auto c = run.restart_copy("shifted", s, make_configuration(run.window(), {Site{}}), opt);
    return essential_hitting(run, c, x, t_surv);
}

// ------------------------------------------------------------ bad growth

struct BadGrowthParams {
    double t = 4;      // scale
    double M = 3;      // linear growth constant
    double c = 0.5;    // at-least-linear constant
    double t_surv = 20;
    double gamma() const { return 3 * M * (1 + 1 / c); }
};

struct BadGrowthSample {
    bool no_recovery = false;  // no effective recovery at y in [0, t/2)
    bool escapes = false;      // H_t not inside B_{Mt}(y)
    bool late_death_zero = false;  // t/2 < tau^{y,0} < inf
    bool late_death = false;       // t/2 < tau^{y,xi} < inf
    bool slow_return = false;      // survives but x not infected in [2t, gamma t]
    bool any() const { return no_recovery || escapes || late_death_zero || late_death || slow_return; }
};

// One draw of the five constituents of E^{y,xi}(x,t) on the run, from time s
// with background xi_s given explicitly.
inline BadGrowthSample bad_growth_sample(CoupledRun& run, const Site& x, const Site& y, double s,
                                         const std::vector<std::uint8_t>& xi, const BadGrowthParams& p) {
    const Window& w = run.window();
    const Catalog& cat = run.catalog();
    const auto yi = w.find(y), xi_site = w.find(x);
    if (!yi || !xi_site) throw std::out_of_range("bad growth: sites outside the window");
    BadGrowthSample b;
    CopyOptions rec;
    rec.record_background = true;
    rec.snapshots = false;
    Configuration init{make_configuration(w, {y}).eta, xi};
    auto cy = run.restart_copy("y", s, init, rec);
    auto cz = run.restart_copy("y0", s, make_configuration(w, {y}, 0), CopyOptions{false, true, false, {}});

    // Effective recoveries at y read against the background of copy cy.
    run.advance(cy, std::min(s + p.t / 2, run.horizon()));
    {
        const Copy& c = run.copy(cy);
        std::vector<std::uint8_t> bg = xi;
        std::size_t bi = 0;
        const auto& log = c.background_log();
        b.no_recovery = true;
        for (std::size_t i = run.stream().first_after(s);; ++i) {
            const Event* e = run.stream().get(i);
            if (!e || e->time >= s + p.t / 2) break;
            while (bi < log.size() && log[bi].time <= e->time) {
                bg[log[bi].cell] = log[bi].to;
                ++bi;
            }
            const auto& f = cat.families()[e->family];
            if (f.kind == MapKind::Recovery && e->location == *yi && cat.ordering().G[bg[*yi]] <= f.level) {
                b.no_recovery = false;
                break;
            }
        }
    }
    run.advance(cy, std::min(s + p.t, run.horizon()));
    for (std::size_t i = 0; i < w.site_count(); ++i)
        if (run.copy(cy).first_hit()[i] <= s + p.t && l1_dist(w.site(i), y) > p.M * p.t) b.escapes = true;

    auto fz = run_to_fate(run, cz, p.t_surv);
    b.late_death_zero = fz.fate == Fate::Dies && fz.death - s > p.t / 2;
    // Return of x after 2t, then fate of the y copy.
    std::optional<double> ret;
    run.advance(cy, std::min(s + 2 * p.t, run.horizon()));
    if (run.copy(cy).state().eta[*xi_site]) ret = run.copy(cy).time();
    if (!ret && !run.copy(cy).extinct()) {
        run.advance(cy, std::min(s + p.gamma() * p.t, run.horizon()), [&](const Copy&, const InfectionChange& ch) {
            if (ch.site == *xi_site && ch.value == 1) {
                ret = ch.time;
                return true;
            }
            return false;
        });
    }
    auto fy = run_to_fate(run, cy, p.t_surv);
    b.late_death = fy.fate == Fate::Dies && fy.death - s > p.t / 2;
    b.slow_return = fy.fate == Fate::Survives && (!ret || *ret - s > p.gamma() * p.t);
    return b;
}

struct BadGrowthEstimate {
    std::size_t trials = 0;
    std::size_t no_recovery = 0, escapes = 0, late_death_zero = 0, late_death = 0, slow_return = 0, any = 0;
};

inline BadGrowthEstimate bad_growth_probe(std::shared_ptr<const Catalog> cat, const Site& x, const Site& y, std::uint8_t level,
                                          const BadGrowthParams& p, double horizon, std::size_t trials, std::uint64_t seed) {
    BadGrowthEstimate e;
    e.trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        CoupledRun run(cat, horizon, derive_trial_seed(seed, i));
        auto b = bad_growth_sample(run, x, y, 0.0, std::vector<std::uint8_t>(cat->window().cell_count(), level), p);
        e.no_recovery += b.no_recovery;
        e.escapes += b.escapes;
        e.late_death_zero += b.late_death_zero;
        e.late_death += b.late_death;
        e.slow_return += b.slow_return;
        e.any += b.any();
    }
    return e;
}

// N_L(x,t) restricted to probe points y in B_{Mt+2}(x) inside the window and
// the atoms s in {0, L} plus the recovery and infection marks of y and its
// edges. `bg` must be a copy recording its background from time 0.
inline std::size_t bad_growth_count(CoupledRun& run, std::size_t bg, const Site& x, double L, const BadGrowthParams& p) {
    const Window& w = run.window();
    const Catalog& cat = run.catalog();
    run.advance(bg, L);
    const Copy& b = run.copy(bg);
    std::size_t n = 0;
    for (const Site& y : ball(p.M * p.t + 2, x, w.dim())) {
        const auto yi = w.find(y);
        if (!yi) continue;
        std::vector<double> atoms{0.0, L};
        for (std::size_t i = 0;; ++i) {
            const Event* e = run.stream().get(i);
            if (!e || e->time > L) break;
            const auto& f = cat.families()[e->family];
            if (f.kind == MapKind::Recovery && e->location == *yi) atoms.push_back(e->time);
            if (f.kind == MapKind::Infection) {
                const Arrow& a = w.arrows()[e->location];
                if (a.from == *yi || a.to == *yi) atoms.push_back(e->time);
            }
        }
        std::sort(atoms.begin(), atoms.end());
        atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
        for (double s : atoms) n += bad_growth_sample(run, x, y, s, b.background_at(s), p).any();
    }
    return n;
}

// ------------------------------------------------------- restart procedure

struct RestartStep {
    double U = 0;          // restart time
    Site from;             // restart site
    std::optional<int> N;  // steps until death or a full cube
    bool seeded = false;
    Site seed;
    std::optional<int> M;  // macro extinction level; nullopt = alive at the macro horizon
    int levels_tracked = 0;
    std::size_t violations = 0;
};

struct RestartRecord {
    std::vector<RestartStep> steps;
    std::optional<int> L;
    double sigma = kInf;
    Site Y;
    bool censored = true;
    std::string reason;
    bool base_alive = false;        // base alive at U_{L-1}
    std::optional<bool> cube_holds;  // Y + [-n,n]^d inside the base at sigma
    double b = 1;

    // sigma recomputed from its parts.
    double recompute() const {
        double s = 0;
        for (std::size_t i = 0; i + 1 < steps.size(); ++i) s += *steps[i].N + 1 + 6 * b * steps[i].M.value_or(0);
        return s + *steps.back().N + 1;
    }
};

// Infected site closest to the origin in l1, ties lexicographic.
inline std::optional<Site> restart_site(const Window& w, const std::vector<std::uint8_t>& eta) {
    std::optional<Site> best;
    for (std::size_t s = 0; s < eta.size(); ++s) {
        if (!eta[s]) continue;
        const Site x = w.site(s);
        if (!best || l1_norm(x) < l1_norm(*best) || (l1_norm(x) == l1_norm(*best) && x < *best)) best = x;
    }
    return best;
}

// Iterated reseeding from the base copy (delta_0, xi). Each restart uses the
// all-zero background and a single site; N counts unit steps until the copy
// dies or holds a full (2n+1)^d cube; a seeded attempt builds the block
// coupling from that cube and M is the field's extinction level.
inline RestartRecord restart_procedure(CoupledRun& run, std::size_t base, const MacroParams& mp, int macro_levels,
                                       double p_fill, std::uint64_t seed, int max_attempts = 1000) {
    mp.validate();
    const Window& w = run.window();
    RestartRecord r;
    r.b = mp.b;
    CopyOptions opt;
    opt.stop_on_extinction = true;
    opt.snapshots = false;
    double U = 0;
    for (int ell = 1; ell <= max_attempts; ++ell) {
        RestartStep st;
        st.U = U;
        if (U > run.horizon()) {
            r.reason = "horizon";
            return r;
        }
        run.advance(base, U);
        auto from = restart_site(w, run.copy(base).state().eta);
        const bool alive = from.has_value();
        st.from = alive ? *from : Site{};
        auto c = run.restart_copy("restart", U, make_configuration(w, {st.from}), opt);
        for (int k = 0;; ++k) {
            const double t = U + k + 1;
            if (t > run.horizon()) {
                r.steps.push_back(st);
                r.reason = "horizon";
                return r;
            }
            run.advance(c, t);
            if (run.copy(c).extinct()) {
                st.N = k;
                st.M = 0;
                break;
            }
            if (auto y = find_cube(w, run.copy(c).state().eta, w.box(), mp.n)) {
                st.N = k;
                st.seeded = true;
                st.seed = *y;
                break;
            }
        }
        if (st.seeded) {
            BlockCoupling bc = [&] {
                try {
                    return build_block_coupling(run, st.seed, U + *st.N + 1, mp, macro_levels, p_fill,
                                                derive_trial_seed(seed, static_cast<std::uint64_t>(ell)));
                } catch (const StreamExhausted&) {
                    return BlockCoupling{OrientedField(w.dim(), 0, 0, p_fill, 5), {}, 0, 0, 0, 0, true, 0, std::nullopt};
                }
            }();
            st.levels_tracked = bc.levels_built;
            st.violations = bc.violations;
            if (bc.overflow) {
                r.steps.push_back(st);
                r.reason = "window";
                return r;
            }
            st.M = bc.extinction;  // nullopt: alive at the macro horizon
        }
        r.steps.push_back(st);
        if (st.seeded && !st.M) {
            r.L = ell;
            r.sigma = U + *st.N + 1;
            r.Y = st.seed;
            r.censored = false;
            r.base_alive = alive;
            if (alive) {
                run.advance(base, r.sigma);
                r.cube_holds = cube_full(w, run.copy(base).state().eta, r.Y, mp.n);
            }
            return r;
        }
        U = U + *st.N + 1 + 6 * mp.b * st.M.value_or(0);
    }
    r.reason = "attempts";
    return r;
}

}  // namespace cpdre
