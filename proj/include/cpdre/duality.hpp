#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "engine.hpp"
#include "stats.hpp"

namespace cpdre {

// lambda-check(i,j,k) = lambda(k,j,i); recovery unchanged.
inline RateTable mirror_rates(const RateTable& rt) {
    const int m = rt.states();
    std::vector<double> l(static_cast<std::size_t>(m * m * m));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < m; ++k) l[rt.triple(i, j, k)] = rt.lambda(k, j, i);
    return RateTable(rt.levels(), l, rt.recovery_values());
}

struct DualResult {
    std::vector<std::uint8_t> eta_hat;     // dual state at dual time t
    std::vector<InfectionChange> log;      // dual-time stamps t - u
};

// Runs the dual from eta' over [0, t] on the events the forward copy used,
// taken in reverse order with arrows flipped. Usability and recovery
// effectiveness are read off the forward background at the event time, so
// the forward copy must have started at 0, been advanced to t and have its
// background recorded.
inline DualResult dual_run(CoupledRun& run, std::size_t forward, const std::vector<std::uint8_t>& eta_prime, double t) {
    const Copy& fc = run.copy(forward);
    if (fc.start_time() != 0.0) throw std::invalid_argument("dual_run: forward copy must start at time 0");
    if (!fc.records_background()) throw std::invalid_argument("dual_run: background trajectory was not recorded");
    if (fc.time() < t) throw std::invalid_argument("dual_run: forward copy has not reached t");
    if (fc.maximal() || fc.options().restrict_to) throw std::invalid_argument("dual_run: forward copy must be a plain copy");
    const Catalog& cat = run.catalog();
    const auto& fams = cat.families();
    const auto& arrows = cat.window().arrows();
    const auto& F = cat.ordering().F;
    const auto& G = cat.ordering().G;

    std::vector<std::uint8_t> xi = fc.background_at(t);
    const auto& bg = fc.background_log();
    std::size_t b = bg.size();
    while (b > 0 && bg[b - 1].time > t) --b;

    DualResult r;
    r.eta_hat = eta_prime;
    const std::size_t n_events = run.stream().first_after(t);
    for (std::size_t i = n_events; i-- > 0;) {
        const Event& e = *run.stream().get(i);
        const MapFamily& f = fams[e.family];
        const double s = t - e.time;
        switch (f.kind) {
            case MapKind::Background:
                // Undo the forward change made by this event, if any.
                while (b > 0 && bg[b - 1].time == e.time) {
                    xi[bg[b - 1].cell] = bg[b - 1].from;
                    --b;
                }
                break;
            case MapKind::Infection: {
                const Arrow& a = arrows[e.location];
                if (r.eta_hat[a.to] && !r.eta_hat[a.from] && F[cat.triple(a, xi.data())] >= f.level) {
                    r.eta_hat[a.from] = 1;
                    r.log.push_back({s, a.from, 1});
                }
                break;
            }
            case MapKind::Recovery:
                if (r.eta_hat[e.location] && G[xi[e.location]] <= f.level) {
                    r.eta_hat[e.location] = 0;
                    r.log.push_back({s, e.location, 0});
                }
                break;
        }
    }
    if (b != 0) throw std::logic_error("dual_run: background log out of step with the stream");
    return r;
}

inline bool intersects(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && b[i]) return true;
    return false;
}

struct DualityPair {
    bool forward = false;  // eta_t^eta meets eta'
    bool dual = false;     // eta meets eta-hat_t^eta'
    bool agree() const { return forward == dual; }
};

inline DualityPair conditional_duality_check(CoupledRun& run, std::size_t forward, const std::vector<std::uint8_t>& eta_prime,
                                             double t) {
    run.advance(forward, t);
    const Copy& fc = run.copy(forward);
    DualityPair p;
    p.forward = intersects(fc.infection_at(t), eta_prime);
    p.dual = intersects(fc.initial().eta, dual_run(run, forward, eta_prime, t).eta_hat);
    return p;
}

// Exact product-form stationary background for IU and DP backgrounds and for
// range-0 spin systems.
inline std::vector<std::uint8_t> sample_stationary(const Catalog& cat, CounterRng& g) {
    const Window& w = cat.window();
    std::vector<std::uint8_t> xi(w.cell_count());
    std::vector<double> ps, pe;
    const auto& bgs = cat.model().background;
    if (const auto* iu = std::get_if<IndependentUpdates>(&bgs)) {
        ps = stationary_dist(iu->site);
        pe = stationary_dist(iu->edge);
    } else if (const auto* dp = std::get_if<DynamicalPercolation>(&bgs)) {
        ps = stationary_dist(Generator::two_state(dp->alpha_v, dp->beta_v));
        pe = stationary_dist(Generator::two_state(dp->alpha_e, dp->beta_e));
    } else {
        const auto& sp = std::get<SpinSystem>(bgs);
        if (sp.range != 0) throw std::invalid_argument("stationary sampling needs a range-0 spin system");
        ps = stationary_dist(Generator::two_state(sp.site.up_at(0), sp.site.down_at(0)));
        pe = stationary_dist(Generator::two_state(sp.edge.up_at(0), sp.edge.down_at(0)));
    }
    for (std::size_t c = 0; c < xi.size(); ++c) {
        const auto& p = w.is_site_cell(c) ? ps : pe;
        double u = g.uniform(), acc = 0;
        std::size_t v = 0;
        for (; v + 1 < p.size(); ++v) {
            acc += p[v];
            if (u < acc) break;
        }
        xi[c] = static_cast<std::uint8_t>(v);
    }
    return xi;
}

struct StationaryDuality {
    std::size_t trials = 0;
    std::size_t hits_forward = 0, hits_dual = 0;
    double p_forward = 0, p_dual = 0, z = 0;
};

// One side of the stationary duality: P(eta_t^{A,pi} meets B).
inline std::size_t stationary_hits(std::shared_ptr<const Catalog> cat, const std::vector<std::uint8_t>& A,
                                   const std::vector<std::uint8_t>& B, double t, std::size_t trials, std::uint64_t seed,
                                   std::size_t first_trial = 0) {
    std::size_t hits = 0;
    CopyOptions opt;
    opt.stop_on_extinction = true;
    opt.snapshots = false;
    for (std::size_t i = first_trial; i < first_trial + trials; ++i) {
        const std::uint64_t s = derive_trial_seed(seed, i);
        CounterRng g(s, Role::Stationary);
        Configuration init{A, sample_stationary(*cat, g)};
        if (t <= 0) {
            hits += intersects(A, B);
            continue;
        }
        CoupledRun run(cat, t, s);
        auto c = run.add_copy("fwd", std::move(init), opt);
        run.advance(c, t);
        hits += intersects(run.copy(c).state().eta, B);
    }
    return hits;
}

inline void require_reversible(const Catalog& cat) {
    if (!cat.diagnostics().reversible)
        throw std::invalid_argument("stationary duality needs a reversible background");
}

// Forward runs of (eta, pi) against independent runs of the mirrored model
// from (eta', pi).
inline StationaryDuality stationary_duality_check(const Window& w, const Model& m, const std::vector<std::uint8_t>& eta,
                                                  const std::vector<std::uint8_t>& eta_prime, double t, std::size_t trials,
                                                  std::uint64_t seed) {
    auto fwd = make_catalog(w, m);
    require_reversible(*fwd);
    auto dual = make_catalog(w, Model{mirror_rates(m.rates), m.background});
    StationaryDuality r;
    r.trials = trials;
    r.hits_forward = stationary_hits(fwd, eta, eta_prime, t, trials, derive_trial_seed(seed, 0));
    r.hits_dual = stationary_hits(dual, eta_prime, eta, t, trials, derive_trial_seed(seed, 1));
    r.p_forward = static_cast<double>(r.hits_forward) / static_cast<double>(trials);
    r.p_dual = static_cast<double>(r.hits_dual) / static_cast<double>(trials);
    r.z = stats::two_proportion_z(r.hits_forward, trials, r.hits_dual, trials);
    return r;
}

// Time-direction statistic of one cell's background path on [0, t]: the
// start level, the level after the first jump and the time of that jump.
// Reversing a stationary reversible path leaves its law unchanged, so the
// forward and reversed versions must match in distribution.
inline double path_signature(std::uint8_t start, std::uint8_t next, double first_jump, double t) {
    return 10.0 * start + next + std::min(first_jump, t) / (t * 1.0000001);
}

struct ReversalCheck {
    std::vector<double> forward, reversed;
    stats::KsResult ks{0, 1};
};

inline ReversalCheck reversal_check(std::shared_ptr<const Catalog> cat, std::uint32_t cell, double t, std::size_t trials,
                                    std::uint64_t seed) {
    require_reversible(*cat);
    ReversalCheck r;
    CopyOptions opt;
    opt.record_background = true;
    opt.snapshots = false;
    for (std::size_t i = 0; i < trials; ++i) {
        const std::uint64_t s = derive_trial_seed(seed, i);
        CounterRng g(s, Role::Stationary);
        Configuration init{std::vector<std::uint8_t>(cat->window().site_count(), 0), sample_stationary(*cat, g)};
        CoupledRun run(cat, t, s);
        auto c = run.add_copy("bg", init, opt);
        run.advance(c, t);
        const Copy& cp = run.copy(c);
        std::vector<BackgroundChange> mine;
        for (const auto& ch : cp.background_log())
            if (ch.cell == cell) mine.push_back(ch);
        const std::uint8_t x0 = init.xi[cell], xt = cp.state().xi[cell];
        if (mine.empty()) {
            r.forward.push_back(path_signature(x0, x0, t, t));
            r.reversed.push_back(path_signature(xt, xt, t, t));
        } else {
            r.forward.push_back(path_signature(x0, mine.front().to, mine.front().time, t));
            r.reversed.push_back(path_signature(xt, mine.back().from, t - mine.back().time, t));
        }
    }
    r.ks = stats::ks_two_sample(r.forward, r.reversed);
    return r;
}

}  // namespace cpdre
