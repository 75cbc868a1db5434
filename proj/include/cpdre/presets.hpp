#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "duality.hpp"
#include "essential.hpp"
#include "harness.hpp"
#include "observables.hpp"
#include "oracle.hpp"
#include "percolation.hpp"

namespace cpdre {

// ------------------------------------------------------------- helpers

inline std::string str(std::size_t v) { return std::to_string(v); }
inline std::string str(int v) { return std::to_string(v); }
inline std::string yes(bool b) { return b ? "1" : "0"; }

inline std::string site_str(const Site& x, int d) {
    std::string s;
    for (int i = 0; i < d; ++i) s += (i ? " " : "") + std::to_string(x[static_cast<std::size_t>(i)]);
    return s;
}

inline Site site_from_json(const json& j, int d, const std::string& where) {
    if (!j.is_array() || static_cast<int>(j.size()) != d) throw ConfigError(where + ": expected " + std::to_string(d) + " integer coordinates");
    Site x;
    for (int i = 0; i < d; ++i) {
        const auto& v = j[static_cast<std::size_t>(i)];
        if (!v.is_number_integer()) throw ConfigError(where + ": coordinates must be integers");
        x[static_cast<std::size_t>(i)] = v.get<int>();
    }
    return x;
}

inline std::vector<Site> sites_param(const ExperimentConfig& c, const char* key) {
    if (!c.params.contains(key) || !c.params.at(key).is_array()) throw ConfigError("params." + std::string(key) + ": expected a list of sites");
    std::vector<Site> out;
    for (const auto& s : c.params.at(key)) out.push_back(site_from_json(s, c.dimension, "params." + std::string(key)));
    return out;
}

inline bool bparam(const ExperimentConfig& c, const char* key) {
    if (!c.params.contains(key) || !c.params.at(key).is_boolean()) throw ConfigError("params." + std::string(key) + ": expected true or false");
    return c.params.at(key).get<bool>();
}

inline std::size_t uparam(const ExperimentConfig& c, const char* key) {
    const int v = c.iparam(key);
    if (v < 0) throw ConfigError("params." + std::string(key) + ": must be >= 0");
    return static_cast<std::size_t>(v);
}

inline std::uint8_t level_param(const ExperimentConfig& c, const char* key) {
    const int v = c.iparam(key);
    if (v < 0 || v >= c.model.rates.states()) throw ConfigError("params." + std::string(key) + ": background level must lie in [0, N]");
    return static_cast<std::uint8_t>(v);
}

inline MacroParams macro_param(const ExperimentConfig& c) {
    MacroParams mp{c.iparam("n"), c.iparam("a"), c.param("b")};
    try {
        mp.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("params: ") + e.what());
    }
    return mp;
}

// Model JSON with its scalar lambda replaced; used by calibration.
inline json with_lambda(json model, double lambda) {
    auto& r = model.at("rates");
    const auto k = r.value("kind", "");
    if (k != "constant" && k != "edge_linear") throw ConfigError("lambda calibration needs rates of kind constant or edge_linear");
    r["lambda"] = lambda;
    return model;
}

inline Check check(std::string name, bool pass, std::string detail) { return {std::move(name), pass, std::move(detail)}; }

inline std::string kv(const std::string& k, double v) { return k + "=" + fmt(v); }

// Single-site start from the origin with a constant background level.
inline Configuration origin_start(const Window& w, std::uint8_t level) { return make_configuration(w, {Site{}}, level); }

// ------------------------------------------------------------- oracle

inline PresetOutput run_oracle(const ExperimentConfig& c, unsigned jobs) {
    auto times = c.vparam("times");
    if (times.empty() || !std::is_sorted(times.begin(), times.end()) || times.front() <= 0)
        throw ConfigError("params.times: expected ascending positive times");
    const double zmax = c.param("z_max");
    if (c.trials == 0) throw ConfigError("trials: the oracle comparison needs at least one trial");
    PresetOutput out;
    CsvTable states("oracle_states",
                    {{"case", "", "micro-case name"},
                     {"time", "time", "observation time"},
                     {"state", "", "chain state code (eta bits, then background digits)"},
                     {"exact", "probability", "uniformization transient law"},
                     {"count", "trials", "simulated trials in the state"},
                     {"z", "", "standardized difference"}},
                    "simulator vs exact chain, per state");
    CsvTable cases("oracle_cases",
                   {{"case", "", "micro-case name"}, {"states", "", "chain size"}, {"trials", "trials", "simulated trials"},
                    {"max_abs_z", "", "largest |z| over states and times"}},
                   "per-case summary");
    const auto mcs = micro_cases();
    for (std::size_t k = 0; k < mcs.size(); ++k) {
        const auto& mc = mcs[k];
        ExactChain chain(mc.box, mc.model);
        auto cat = make_catalog(chain.window(), mc.model);
        const std::uint64_t case_seed = derive_trial_seed(c.seed, k);
        auto sims = parallel_trials<std::vector<std::size_t>>(
            c.trials, jobs, [&](std::size_t i) { return simulate_trial(chain, cat, mc, times, derive_trial_seed(case_seed, i)); });
        const auto p0 = point_mass(chain.size(), initial_state(chain, mc));
        double worst = 0;
        for (std::size_t ti = 0; ti < times.size(); ++ti) {
            std::vector<std::size_t> counts(chain.size(), 0);
            for (const auto& s : sims) ++counts[s[ti]];
            const auto exact = transient_dist(chain, p0, times[ti]);
            const auto cmp = compare_mc(exact, counts, c.trials);
            worst = std::max(worst, cmp.max_abs_z);
            for (std::size_t s = 0; s < chain.size(); ++s)
                if (exact[s] > 0 || counts[s] > 0) states.row({mc.name, fmt(times[ti]), str(s), fmt(exact[s]), str(counts[s]), fmt(cmp.z[s])});
        }
        cases.row({mc.name, str(chain.size()), str(c.trials), fmt(worst)});
        out.checks.push_back(check("oracle_" + mc.name, worst < zmax, kv("max_abs_z", worst) + " " + kv("limit", zmax)));
    }
    out.tables.push_back(std::move(states));
    out.tables.push_back(std::move(cases));
    return out;
}

// ------------------------------------------------------------ couplings

struct CouplingAudit {
    std::size_t additivity = 0, additivity_bad = 0;
    std::size_t sandwich = 0, sandwich_bad = 0;
    std::size_t worst_case = 0, worst_case_bad = 0;
    std::size_t duality = 0, duality_bad = 0, duality_hits = 0;
};

inline bool leq(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] > b[i]) return false;
    return true;
}

inline std::vector<std::uint8_t> random_bits(std::size_t n, CounterRng& g, double p) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = g.bernoulli(p);
    return v;
}

inline std::vector<std::uint8_t> random_levels(std::size_t n, CounterRng& g, int states) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = static_cast<std::uint8_t>(g.below(static_cast<std::uint64_t>(states)));
    return v;
}

// One realization of every pathwise audit. Each check compares copies on a
// shared stream at every grid time up to the horizon.
inline CouplingAudit coupling_realization(std::shared_ptr<const Catalog> cat, double T, double dt, double p_inf, double p_target,
                                          std::uint64_t seed) {
    CouplingAudit a;
    const Window& w = cat->window();
    const int m = cat->states();
    CounterRng g(seed, Role::InitialState);
    const bool mono = cat->diagnostics().monotone;
    CopyOptions plain;
    plain.snapshots = false;
    {
        CoupledRun run(cat, T, derive_trial_seed(seed, 1));
        Configuration c1{random_bits(w.site_count(), g, p_inf), random_levels(w.cell_count(), g, m)};
        Configuration c2{random_bits(w.site_count(), g, p_inf), c1.xi};
        Configuration cu = c1;
        for (std::size_t i = 0; i < cu.eta.size(); ++i) cu.eta[i] = c1.eta[i] | c2.eta[i];
        const auto i1 = run.add_copy("a", c1, plain), i2 = run.add_copy("b", c2, plain), iu = run.add_copy("union", cu, plain);
        std::optional<std::size_t> lo, hi, zero, any;
        if (mono) {
            Configuration l{random_bits(w.site_count(), g, p_inf), random_levels(w.cell_count(), g, m)};
            Configuration h = l;
            for (std::size_t i = 0; i < h.eta.size(); ++i) h.eta[i] |= g.bernoulli(p_inf);
            for (auto& x : h.xi) x = static_cast<std::uint8_t>(x + g.below(static_cast<std::uint64_t>(m - x)));
            lo = run.add_copy("lo", l, plain);
            hi = run.add_copy("hi", h, plain);
            Configuration z{random_bits(w.site_count(), g, p_inf), std::vector<std::uint8_t>(w.cell_count(), 0)};
            Configuration y{z.eta, random_levels(w.cell_count(), g, m)};
            zero = run.add_copy("zero", z, plain);
            any = run.add_copy("any", y, plain);
        }
        const int steps = static_cast<int>(std::floor(T / dt + 1e-9));
        for (int k = 1; k <= steps; ++k) {
            const double t = k == steps ? T : k * dt;
            run.evolve(t);
            ++a.additivity;
            bool ok = true;
            for (std::size_t s = 0; s < w.site_count(); ++s)
                if (run.copy(iu).state().eta[s] != (run.copy(i1).state().eta[s] | run.copy(i2).state().eta[s])) ok = false;
            a.additivity_bad += !ok;
            if (mono) {
                ++a.sandwich;
                a.sandwich_bad += !(leq(run.copy(*lo).state().eta, run.copy(*hi).state().eta) &&
                                    leq(run.copy(*lo).state().xi, run.copy(*hi).state().xi));
                ++a.worst_case;
                a.worst_case_bad += !leq(run.copy(*zero).state().eta, run.copy(*any).state().eta);
            }
        }
    }
    {
        CoupledRun run(cat, T, derive_trial_seed(seed, 2));
        Configuration init{random_bits(w.site_count(), g, p_inf), random_levels(w.cell_count(), g, m)};
        CopyOptions rec;
        rec.record_background = true;
        rec.snapshots = false;
        auto f = run.add_copy("forward", init, rec);
        const double t = T * (0.1 + 0.9 * g.uniform());
        auto p = conditional_duality_check(run, f, random_bits(w.site_count(), g, p_target), t);
        ++a.duality;
        a.duality_bad += !p.agree();
        a.duality_hits += p.forward;
    }
    return a;
}

inline PresetOutput run_couplings(const ExperimentConfig& c, unsigned jobs) {
    const double dt = c.param("grid_step"), p_inf = c.param("p_infected"), p_target = c.param("p_target");
    if (!(p_target > 0 && p_target < 1)) throw ConfigError("params.p_target: must lie in (0, 1)");
    if (!(dt > 0)) throw ConfigError("params.grid_step: must be > 0");
    if (!(p_inf > 0 && p_inf < 1)) throw ConfigError("params.p_infected: must lie in (0, 1)");
    const std::size_t need = uparam(c, "min_realizations");
    auto cat = make_catalog(window(c.dimension, c.window), c.model);
    auto res = parallel_trials<CouplingAudit>(c.trials, jobs, [&](std::size_t i) {
        return coupling_realization(cat, c.horizon, dt, p_inf, p_target, derive_trial_seed(c.seed, i));
    });
    CouplingAudit s;
    std::size_t real_mono = 0;
    for (const auto& a : res) {
        s.additivity += a.additivity;
        s.additivity_bad += a.additivity_bad;
        s.sandwich += a.sandwich;
        s.sandwich_bad += a.sandwich_bad;
        s.worst_case += a.worst_case;
        s.worst_case_bad += a.worst_case_bad;
        s.duality += a.duality;
        s.duality_bad += a.duality_bad;
        s.duality_hits += a.duality_hits;
        real_mono += a.sandwich > 0;
    }
    const bool mono = cat->diagnostics().monotone;
    PresetOutput out;
    CsvTable t("couplings",
               {{"property", "", "audited identity"},
                {"realizations", "runs", "independent realizations"},
                {"comparisons", "", "grid-time comparisons"},
                {"violations", "", "comparisons that failed"},
                {"applicable", "bool", "0 when the model does not satisfy the precondition"}},
               "pathwise coupling audits");
    t.row({"additivity", str(c.trials), str(s.additivity), str(s.additivity_bad), "1"});
    t.row({"monotone_sandwich", str(real_mono), str(s.sandwich), str(s.sandwich_bad), yes(mono)});
    t.row({"worst_case", str(real_mono), str(s.worst_case), str(s.worst_case_bad), yes(mono)});
    t.row({"conditional_duality", str(c.trials), str(s.duality), str(s.duality_bad), "1"});
    out.tables.push_back(std::move(t));
    out.checks.push_back(check("additivity", s.additivity_bad == 0 && c.trials >= need,
                               kv("realizations", static_cast<double>(c.trials)) + " " + kv("violations", static_cast<double>(s.additivity_bad))));
    if (mono) {
        out.checks.push_back(check("monotone_sandwich", s.sandwich_bad == 0 && real_mono >= need,
                                   kv("realizations", static_cast<double>(real_mono)) + " " + kv("violations", static_cast<double>(s.sandwich_bad))));
        out.checks.push_back(check("worst_case", s.worst_case_bad == 0 && real_mono >= need,
                                   kv("realizations", static_cast<double>(real_mono)) + " " + kv("violations", static_cast<double>(s.worst_case_bad))));
    }
    out.checks.push_back(check("conditional_duality", s.duality_bad == 0 && c.trials >= need,
                               kv("realizations", static_cast<double>(c.trials)) + " " + kv("violations", static_cast<double>(s.duality_bad)) +
                                   " " + kv("hit_fraction", static_cast<double>(s.duality_hits) / std::max<double>(1, static_cast<double>(c.trials)))));
    return out;
}

// --------------------------------------------------------------- stream

// Whether telescoped map rates rebuild every entry of the rate table.
inline bool rates_reconstruct(const Catalog& cat, double tol = 1e-12) {
    const auto& o = cat.ordering();
    const auto& rt = cat.rates();
    for (std::size_t t = 0; t < rt.lambda_values().size(); ++t) {
        double s = 0;
        for (const auto& f : cat.families())
            if (f.kind == MapKind::Infection && f.level <= o.F[t]) s += f.rate;
        if (std::abs(s - rt.lambda_at(t)) > tol) return false;
    }
    for (int b = 0; b < rt.states(); ++b) {
        double s = 0;
        for (const auto& f : cat.families())
            if (f.kind == MapKind::Recovery && f.level >= o.G[static_cast<std::size_t>(b)]) s += f.rate;
        if (std::abs(s - rt.recovery(b)) > tol) return false;
    }
    return true;
}

inline PresetOutput run_stream(const ExperimentConfig& c, unsigned jobs) {
    const std::size_t streams = uparam(c, "streams"), tables = uparam(c, "tables");
    const double alpha = c.param("p_min");
    if (streams == 0) throw ConfigError("params.streams: must be >= 1");
    PresetOutput out;
    // Rate reconstruction over random tables with N <= 2 on a birth-death background.
    std::size_t rebuilt = 0, total = 0;
    CounterRng g(derive_trial_seed(c.seed, 0), Role::Probe);
    for (int N = 0; N <= 2; ++N)
        for (std::size_t rep = 0; rep < tables; ++rep) {
            const std::size_t m = static_cast<std::size_t>(N + 1);
            std::vector<double> l(m * m * m), r(m);
            for (auto& v : l) v = std::floor(6 * g.uniform()) * 0.5;
            for (auto& v : r) v = std::floor(6 * g.uniform()) * 0.5;
            std::vector<double> q(m * m, 0.0);
            for (std::size_t i = 0; i + 1 < m; ++i) q[i * m + i + 1] = q[(i + 1) * m + i] = 1.0;
            for (std::size_t i = 0; i < m; ++i) q[i * m + i] = -static_cast<double>((i > 0) + (i + 1 < m));
            Catalog cat(window(1, 1), {RateTable(N, l, r), IndependentUpdates{Generator(m, q), Generator(m, q)}});
            rebuilt += rates_reconstruct(cat);
            ++total;
        }
    auto cat = make_catalog(window(c.dimension, c.window), c.model);
    rebuilt += rates_reconstruct(*cat);
    ++total;
    // Per-map Poisson counts: Pearson statistic summed over streams.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> maps;
    std::vector<double> rate;
    for (std::uint32_t f = 0; f < cat->families().size(); ++f)
        for (std::uint32_t i = 0; i < cat->families()[f].count; ++i) {
            maps.push_back({f, cat->families()[f].location(i)});
            rate.push_back(cat->families()[f].rate);
        }
    if (maps.empty()) throw ConfigError("model: the catalog has no maps to test");
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> index;
    for (std::size_t k = 0; k < maps.size(); ++k) index[maps[k]] = k;
    const double T = c.horizon;
    auto stats_per = parallel_trials<double>(streams, jobs, [&](std::size_t i) {
        EventStream s(cat, T, derive_trial_seed(c.seed, i + 1));
        std::vector<double> counts(maps.size(), 0.0);
        for (const auto& e : s.materialize()) counts[index.at({e.family, e.location})] += 1;
        double x = 0;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            const double ex = rate[k] * T;
            x += (counts[k] - ex) * (counts[k] - ex) / ex;
        }
        return x;
    });
    CsvTable st("stream_chi_square",
                {{"stream", "", "stream index"}, {"statistic", "", "Pearson statistic over maps"}, {"df", "", "number of maps"},
                 {"p", "probability", "upper tail"}},
                "per-stream Poisson count test");
    double total_stat = 0;
    std::size_t low = 0;
    for (std::size_t i = 0; i < streams; ++i) {
        const double p = stats::chi_square_sf(stats_per[i], static_cast<double>(maps.size()));
        low += p <= alpha;
        total_stat += stats_per[i];
        st.row({str(i), fmt(stats_per[i]), str(maps.size()), fmt(p)});
    }
    const double df = static_cast<double>(maps.size() * streams);
    const double p_all = stats::chi_square_sf(total_stat, df);
    CsvTable sum("stream_summary",
                 {{"quantity", "", "name"}, {"value", "", "value"}}, "catalog reconstruction and aggregate count test");
    sum.row({"tables_rebuilt", str(rebuilt)});
    sum.row({"tables", str(total)});
    sum.row({"maps", str(maps.size())});
    sum.row({"streams", str(streams)});
    sum.row({"aggregate_statistic", fmt(total_stat)});
    sum.row({"aggregate_df", fmt(df)});
    sum.row({"aggregate_p", fmt(p_all)});
    sum.row({"streams_below_p_min", str(low)});
    out.tables.push_back(std::move(st));
    out.tables.push_back(std::move(sum));
    out.checks.push_back(check("rate_reconstruction", rebuilt == total, kv("rebuilt", static_cast<double>(rebuilt)) + " " + kv("tables", static_cast<double>(total))));
    out.checks.push_back(check("poisson_counts", p_all > alpha, kv("p", p_all) + " " + kv("streams", static_cast<double>(streams)) +
                                                                    " " + kv("streams_below", static_cast<double>(low))));
    return out;
}

// ------------------------------------------------------------- duality

inline PresetOutput run_duality(const ExperimentConfig& c, unsigned jobs) {
    const Window w = window(c.dimension, c.window);
    const double t = c.param("t"), zmax = c.param("z_max");
    if (t < 0) throw ConfigError("params.t: must be >= 0");
    if (c.trials == 0) throw ConfigError("trials: need at least one trial per side");
    std::vector<std::uint8_t> eta, etap;
    try {
        eta = make_configuration(w, sites_param(c, "eta")).eta;
        etap = make_configuration(w, sites_param(c, "eta_prime")).eta;
    } catch (const std::out_of_range& e) {
        throw ConfigError(std::string("params: ") + e.what());
    }
    auto fwd = make_catalog(w, c.model);
    if (!fwd->diagnostics().reversible) throw ConfigError("model: stationary duality needs a reversible background");
    auto dual = make_catalog(w, Model{mirror_rates(c.model.rates), c.model.background});
    const std::uint64_t sf = derive_trial_seed(c.seed, 0), sd = derive_trial_seed(c.seed, 1);
    auto hf = parallel_trials<std::uint8_t>(c.trials, jobs, [&](std::size_t i) {
        return static_cast<std::uint8_t>(stationary_hits(fwd, eta, etap, t, 1, sf, i));
    });
    auto hd = parallel_trials<std::uint8_t>(c.trials, jobs, [&](std::size_t i) {
        return static_cast<std::uint8_t>(stationary_hits(dual, etap, eta, t, 1, sd, i));
    });
    std::size_t nf = 0, nd = 0;
    for (auto v : hf) nf += v;
    for (auto v : hd) nd += v;
    const double z = stats::two_proportion_z(nf, c.trials, nd, c.trials);
    const auto cf = stats::wilson(nf, c.trials), cd = stats::wilson(nd, c.trials);
    PresetOutput out;
    CsvTable tab("duality",
                 {{"side", "", "forward or mirrored dual"},
                  {"trials", "trials", "independent runs from stationarity"},
                  {"hits", "trials", "runs whose final set meets the target"},
                  {"p_hat", "probability", "hits / trials"},
                  {"ci_lo", "probability", "Wilson 95% lower"},
                  {"ci_hi", "probability", "Wilson 95% upper"}},
                 "stationary duality, two independent samples");
    tab.row({"forward", str(c.trials), str(nf), fmt(static_cast<double>(nf) / c.trials), fmt(cf.lo), fmt(cf.hi)});
    tab.row({"dual", str(c.trials), str(nd), fmt(static_cast<double>(nd) / c.trials), fmt(cd.lo), fmt(cd.hi)});
    out.tables.push_back(std::move(tab));
    out.checks.push_back(check("stationary_duality", std::abs(z) < zmax, kv("z", z) + " " + kv("limit", zmax)));
    return out;
}

// --------------------------------------------------------------- tails

struct Lifetime {
    double tau = kInf;        // extinction time, +inf if not observed
    bool collar = false;      // reached the collar
    bool alive_at_horizon = false;
};

inline Lifetime lifetime(std::shared_ptr<const Catalog> cat, double horizon, std::uint8_t level, std::uint64_t seed) {
    CoupledRun run(std::move(cat), horizon, seed);
    CopyOptions o;
    o.stop_on_extinction = true;
    o.snapshots = false;
    auto c = run.add_copy("base", origin_start(run.window(), level), o);
    run.advance(c, horizon, [](const Copy& cp, const InfectionChange&) { return cp.boundary_time().has_value(); });
    Lifetime l;
    const Copy& cp = run.copy(c);
    if (cp.boundary_time())
        l.collar = true;
    else if (cp.extinct())
        l.tau = *cp.extinction_time();
    else
        l.alive_at_horizon = true;
    return l;
}

inline double survival_rate(const Model& m, int d, int radius, double horizon, std::uint8_t level, std::size_t trials,
                            std::uint64_t seed, unsigned jobs) {
    auto cat = make_catalog(window(d, radius), m);
    auto v = parallel_trials<Lifetime>(trials, jobs, [&](std::size_t i) { return lifetime(cat, horizon, level, derive_trial_seed(seed, i)); });
    std::size_t s = 0;
    for (const auto& l : v) s += !std::isfinite(l.tau);
    return static_cast<double>(s) / static_cast<double>(trials);
}

struct LambdaCalibration {
    std::vector<std::pair<double, double>> grid;  // (lambda, survival rate)
    std::optional<double> chosen;
};

// First lambda on the grid whose smoke-run survival rate reaches `target`.
inline LambdaCalibration calibrate_lambda(const json& model, const std::vector<double>& lambdas, int d, int radius, double horizon,
                                          std::uint8_t level, std::size_t trials, double target, std::uint64_t seed, unsigned jobs) {
    LambdaCalibration r;
    if (lambdas.empty()) throw ConfigError("params.lambda_grid: at least one value needed");
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        const Model m = model_from_json(with_lambda(model, lambdas[k]));
        const double s = survival_rate(m, d, radius, horizon, level, trials, derive_trial_seed(seed, k), jobs);
        r.grid.push_back({lambdas[k], s});
        if (s >= target) {
            r.chosen = lambdas[k];
            break;
        }
    }
    return r;
}

inline CsvTable lambda_table(const LambdaCalibration& cal, std::size_t trials) {
    CsvTable t("lambda_smoke",
               {{"lambda", "rate", "infection rate"}, {"trials", "trials", "smoke-run trials"},
                {"survival", "probability", "fraction reaching the collar or the horizon alive"}},
               "survival-rate smoke runs");
    for (const auto& [l, s] : cal.grid) t.row({fmt(l), str(trials), fmt(s)});
    return t;
}

inline PresetOutput run_tails(const ExperimentConfig& c, unsigned jobs) {
    const auto grid = c.vparam("grid");
    if (grid.size() < 3) throw ConfigError("params.grid: need at least 3 times");
    const std::uint8_t level = level_param(c, "level");
    PresetOutput out;
    Model model = c.model;
    double lambda = std::nan("");
    if (bparam(c, "calibrate")) {
        const auto cal = calibrate_lambda(c.raw.at("model"), c.vparam("lambda_grid"), c.dimension, c.window, c.horizon, level,
                                          uparam(c, "smoke_trials"), c.param("survival_min"), derive_trial_seed(c.seed, 1), jobs);
        out.tables.push_back(lambda_table(cal, uparam(c, "smoke_trials")));
        const double chosen = cal.chosen.value_or(cal.grid.back().first);
        out.checks.push_back(check("lambda_calibration", cal.chosen.has_value(),
                                   kv("lambda", chosen) + " " + kv("survival", cal.grid.back().second)));
        model = model_from_json(with_lambda(c.raw.at("model"), chosen));
        lambda = chosen;
    }
    auto cat = make_catalog(window(c.dimension, c.window), model);
    const std::uint64_t s0 = derive_trial_seed(c.seed, 0);
    auto v = parallel_trials<Lifetime>(c.trials, jobs, [&](std::size_t i) { return lifetime(cat, c.horizon, level, derive_trial_seed(s0, i)); });
    CsvTable raw("extinction",
                 {{"trial", "", "trial id"}, {"tau", "time", "extinction time"},
                  {"censor", "", "observed, collar (reached the collar) or horizon (alive at the horizon)"}},
                 "per-trial extinction times");
    std::vector<double> taus;
    std::size_t collar = 0, alive = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        taus.push_back(v[i].tau);
        collar += v[i].collar;
        alive += v[i].alive_at_horizon;
        raw.row({str(i), std::isfinite(v[i].tau) ? fmt(v[i].tau) : "NA", std::isfinite(v[i].tau) ? "observed" : v[i].collar ? "collar" : "horizon"});
    }
    const auto fit = stats::tail_fit(taus, grid, derive_trial_seed(c.seed, 2));
    CsvTable tail("extinction_tail",
                  {{"t", "time", "grid time"}, {"p_hat", "probability", "fraction with t < tau < inf"}},
                  "tail of finite extinction times");
    for (std::size_t k = 0; k < fit.grid.size(); ++k) tail.row({fmt(fit.grid[k]), fmt(fit.survival[k])});
    CsvTable sum("tails_summary", {{"quantity", "", "name"}, {"value", "", "value"}}, "fit and censoring summary");
    sum.row({"lambda", fmt(lambda)});
    sum.row({"trials", str(c.trials)});
    sum.row({"collar", str(collar)});
    sum.row({"alive_at_horizon", str(alive)});
    sum.row({"survival", fmt(static_cast<double>(collar + alive) / std::max<std::size_t>(1, c.trials))});
    sum.row({"fit_points", str(fit.grid.size())});
    sum.row({"slope", fmt(fit.ok ? fit.fit.slope : std::nan(""))});
    sum.row({"slope_ci_lo", fmt(fit.ok ? fit.fit.slope_ci.lo : std::nan(""))});
    sum.row({"slope_ci_hi", fmt(fit.ok ? fit.fit.slope_ci.hi : std::nan(""))});
    sum.row({"bootstrap_lo", fmt(fit.ok ? fit.bootstrap.lo : std::nan(""))});
    sum.row({"bootstrap_hi", fmt(fit.ok ? fit.bootstrap.hi : std::nan(""))});
    out.tables.push_back(std::move(raw));
    out.tables.push_back(std::move(tail));
    out.tables.push_back(std::move(sum));
    out.checks.push_back(check("extinction_tail", fit.ok && fit.fit.slope < 0 && fit.fit.slope_ci.hi < 0,
                               fit.ok ? kv("slope", fit.fit.slope) + " " + kv("ci_hi", fit.fit.slope_ci.hi) + " " +
                                            kv("points", static_cast<double>(fit.grid.size()))
                                      : "too few grid points with data"));
    return out;
}

// --------------------------------------------------------------- shape

struct ShapeTrial {
    bool survived = false, died = false;
    std::vector<double> times;  // ray-major, radius-minor; +inf if not hit
    bool linear_ok = true;      // H_t inside B_{Mt} at the check time
    bool linear_all_t = true;   // same at every t
    std::vector<double> first_hit;  // kept for survivors only
};

inline std::vector<Site> axis_rays(int d) {
    std::vector<Site> r;
    for (int u = 0; u < 2 * d; ++u) r.push_back(direction(d, u));
    return r;
}

inline ShapeTrial shape_trial(std::shared_ptr<const Catalog> cat, double horizon, std::uint8_t level, const std::vector<Site>& rays,
                              const std::vector<int>& radii, double M, double t_lin, std::uint64_t seed) {
    const Window& w = cat->window();
    std::vector<std::uint32_t> targets;
    for (const auto& u : rays)
        for (int n : radii) targets.push_back(w.index(u.scaled(n)));
    CoupledRun run(cat, horizon, seed);
    CopyOptions o;
    o.stop_on_extinction = true;
    o.snapshots = false;
    auto c = run.add_copy("base", origin_start(w, level), o);
    std::set<std::uint32_t> open(targets.begin(), targets.end());
    open.erase(w.index(Site{}));
    if (!open.empty())
        run.advance(c, horizon, [&](const Copy&, const InfectionChange& ch) {
            if (ch.value) open.erase(ch.site);
            return open.empty() && ch.time >= t_lin;
        });
    if (run.copy(c).time() < t_lin && !run.copy(c).extinct()) run.advance(c, std::min(t_lin, horizon));
    ShapeTrial t;
    const Copy& cp = run.copy(c);
    for (auto s : targets) t.times.push_back(cp.first_hit()[s]);
    t.survived = open.empty();
    t.died = !t.survived && cp.extinct();
    t.linear_ok = linear_bound_at(w, cp, M, t_lin);
    t.linear_all_t = linear_bound_holds(w, cp, M);
    if (t.survived) t.first_hit = cp.first_hit();
    return t;
}

struct ShapeArm {
    std::uint8_t level = 0;
    std::size_t trials = 0, died = 0, censored = 0;
    std::vector<ShapeTrial> survivors;
    std::vector<std::size_t> survivor_ids;
    std::size_t linear_bad_all = 0, linear_bad_surv = 0, linear_bad_any_t = 0;
};

inline PresetOutput run_shape(const ExperimentConfig& c, unsigned jobs) {
    std::vector<int> radii;
    for (double r : c.vparam("radii")) {
        if (r < 1 || r != std::floor(r)) throw ConfigError("params.radii: positive integers expected");
        radii.push_back(static_cast<int>(r));
    }
    if (radii.size() < 3 || !std::is_sorted(radii.begin(), radii.end())) throw ConfigError("params.radii: need at least 3 ascending radii");
    if (radii.back() > c.window - 2) throw ConfigError("params.radii: the largest radius must be at most window - 2");
    std::vector<std::uint8_t> levels;
    for (double l : c.vparam("initial_levels")) {
        if (l < 0 || l >= c.model.rates.states() || l != std::floor(l)) throw ConfigError("params.initial_levels: levels in [0, N]");
        levels.push_back(static_cast<std::uint8_t>(l));
    }
    if (levels.empty()) throw ConfigError("params.initial_levels: at least one arm");
    const std::size_t target = uparam(c, "target_survivors"), min_surv = uparam(c, "min_survivors");
    if (c.trials < kMinShapeTrials) throw ConfigError("trials: at least 10 surviving trials required, so trials must be >= 10");
    if (min_surv < kMinShapeTrials) throw ConfigError("params.min_survivors: at least 10 surviving trials required");
    const double tol = c.param("secant_tol"), vmax = c.param("violation_max"), t_lin = c.param("linear_t");
    if (!(t_lin > 0) || t_lin > c.horizon) throw ConfigError("params.linear_t: must lie in (0, horizon]");
    const auto eps = c.vparam("eps");
    const auto times = c.vparam("times");
    const int resamples = c.iparam("resamples");
    const int d = c.dimension;
    const double M = 3 * c.model.rates.lambda_max() * 2 * d;
    const auto rays = axis_rays(d);
    auto cat = make_catalog(window(d, c.window), c.model);
    const std::size_t batch = 100;

    std::vector<ShapeArm> arms;
    for (std::size_t a = 0; a < levels.size(); ++a) {
        ShapeArm arm;
        arm.level = levels[a];
        const std::uint64_t as = derive_trial_seed(c.seed, a);
        while (arm.survivors.size() < target && arm.trials < c.trials) {
            const std::size_t n = std::min(batch, c.trials - arm.trials), first = arm.trials;
            auto v = parallel_trials<ShapeTrial>(n, jobs, [&](std::size_t i) {
                return shape_trial(cat, c.horizon, arm.level, rays, radii, M, t_lin, derive_trial_seed(as, first + i));
            });
            for (std::size_t i = 0; i < n; ++i) {
                arm.linear_bad_all += !v[i].linear_ok;
                if (v[i].survived) {
                    arm.linear_bad_surv += !v[i].linear_ok;
                    arm.linear_bad_any_t += !v[i].linear_all_t;
                    arm.survivors.push_back(std::move(v[i]));
                    arm.survivor_ids.push_back(first + i);
                } else if (v[i].died) {
                    ++arm.died;
                } else {
                    ++arm.censored;
                }
            }
            arm.trials += n;
        }
        arms.push_back(std::move(arm));
    }

    PresetOutput out;
    CsvTable hits("hitting_times",
                  {{"arm", "", "initial background level"}, {"trial", "", "trial id"}, {"ray", "", "ray direction"},
                   {"n", "sites", "radius"}, {"t", "time", "first hitting time of n times the ray"}, {"censor", "", "observed"}},
                  "hitting times on surviving trials");
    CsvTable shape("shape",
                   {{"arm", "", "initial background level"}, {"ray", "", "ray direction"}, {"n", "sites", "radius"},
                    {"mean_t", "time", "mean hitting time"}, {"mu_hat", "time/site", "mean t(n x)/n"},
                    {"ci_lo", "time/site", "bootstrap 95% lower"}, {"ci_hi", "time/site", "bootstrap 95% upper"},
                    {"secant", "time/site", "increment to the previous radius"},
                    {"secant_lo", "time/site", "bootstrap 95% lower"}, {"secant_hi", "time/site", "bootstrap 95% upper"}},
                   "shape estimates");
    CsvTable arms_t("shape_arms",
                    {{"arm", "", "initial background level"}, {"trials", "trials", "trials run"}, {"survivors", "trials", "reached every target"},
                     {"died", "trials", "extinct first"}, {"censored", "trials", "alive at the horizon without all targets"},
                     {"linear_violations", "trials", "survivors with H_t outside B_{Mt} at t = linear_t"},
                     {"linear_violations_all", "trials", "same over every trial"},
                     {"linear_violations_any_t", "trials", "survivors with H_s outside B_{Ms} for some s"},
                     {"M", "sites/time", "linear bound constant"}, {"linear_t", "time", "check time"}},
                    "per-arm counts");
    CsvTable incl("inclusion",
                  {{"arm", "", "initial background level"}, {"t", "time", "snapshot time"}, {"eps", "", "relative margin"},
                   {"inner_rate", "probability", "fraction with (1-eps) t B inside H_t"},
                   {"outer_rate", "probability", "fraction with H_t inside (1+eps) t B"}, {"trials", "trials", "survivors used"}},
                  "inclusion rates against the axis gauge");
    std::vector<std::optional<RayEstimate>> plus_e1(arms.size());
    for (std::size_t a = 0; a < arms.size(); ++a) {
        const auto& arm = arms[a];
        const std::string an = str(static_cast<int>(arm.level));
        arms_t.row({an, str(arm.trials), str(arm.survivors.size()), str(arm.died), str(arm.censored), str(arm.linear_bad_surv),
                    str(arm.linear_bad_all), str(arm.linear_bad_any_t), fmt(M), fmt(t_lin)});
        const std::size_t ns = arm.survivors.size();
        out.checks.push_back(check("survivors_arm" + an, ns >= min_surv, kv("survivors", static_cast<double>(ns)) + " " + kv("min", static_cast<double>(min_surv))));
        const double rate = ns ? static_cast<double>(arm.linear_bad_surv) / static_cast<double>(ns) : 1.0;
        out.checks.push_back(check("linear_bound_arm" + an, ns > 0 && rate < vmax, kv("violation_rate", rate) + " " + kv("M", M) + " " + kv("t", t_lin)));
        for (std::size_t s = 0; s < ns; ++s)
            for (std::size_t r = 0; r < rays.size(); ++r)
                for (std::size_t k = 0; k < radii.size(); ++k)
                    hits.row({an, str(arm.survivor_ids[s]), site_str(rays[r], d), str(radii[k]), fmt(arm.survivors[s].times[r * radii.size() + k]), "observed"});
        if (ns < kMinShapeTrials) continue;
        std::vector<double> plus(static_cast<std::size_t>(d)), minus(static_cast<std::size_t>(d));
        for (std::size_t r = 0; r < rays.size(); ++r) {
            RaySample rs{rays[r], radii, {}};
            for (const auto& t : arm.survivors) rs.times.emplace_back(t.times.begin() + static_cast<long>(r * radii.size()),
                                                                      t.times.begin() + static_cast<long>((r + 1) * radii.size()));
            const auto e = estimate_ray(rs, derive_trial_seed(c.seed, 100 + a * 16 + r), resamples);
            for (std::size_t k = 0; k < radii.size(); ++k)
                shape.row({an, site_str(rays[r], d), str(radii[k]), fmt(e.mean_time[k]), fmt(e.mean_time[k] / radii[k]),
                           k + 1 == radii.size() ? fmt(e.ci.lo) : "NA", k + 1 == radii.size() ? fmt(e.ci.hi) : "NA", fmt(e.secant[k]),
                           fmt(e.secant_ci[k].lo), fmt(e.secant_ci[k].hi)});
            const std::size_t m = radii.size();
            const double rel = std::abs(e.secant[m - 1] - e.secant[m - 2]) / e.mu_hat;
            out.checks.push_back(check("secant_arm" + an + "_ray" + str(r), rel < tol,
                                       kv("relative_change", rel) + " " + kv("mu_hat", e.mu_hat) + " " + kv("limit", tol)));
            (r < static_cast<std::size_t>(d) ? plus : minus)[r % static_cast<std::size_t>(d)] = e.mu_hat;
            if (r == 0) plus_e1[a] = e;
        }
        const AxisGauge mu(d, plus, minus);
        const Window& w = cat->window();
        for (double t : times)
            for (double ep : eps) {
                std::size_t in = 0, outr = 0;
                for (const auto& s : arm.survivors) {
                    std::vector<std::uint8_t> H(s.first_hit.size());
                    for (std::size_t i = 0; i < H.size(); ++i) H[i] = s.first_hit[i] <= t;
                    const auto inc = inclusion(w, H, mu, t, ep);
                    in += inc.inner;
                    outr += inc.outer;
                }
                incl.row({an, fmt(t), fmt(ep), fmt(static_cast<double>(in) / ns), fmt(static_cast<double>(outr) / ns), str(ns)});
            }
    }
    if (arms.size() >= 2) {
        if (plus_e1[0] && plus_e1[1]) {
            const auto& a0 = *plus_e1[0];
            const auto& a1 = *plus_e1[1];
            out.checks.push_back(check("initial_configuration_independence", a0.ci.overlaps(a1.ci),
                                       "arm0=[" + fmt(a0.ci.lo) + "," + fmt(a0.ci.hi) + "] arm1=[" + fmt(a1.ci.lo) + "," + fmt(a1.ci.hi) + "]"));
        } else {
            out.checks.push_back(check("initial_configuration_independence", false, "too few survivors for an estimate"));
        }
    }
    out.tables.push_back(std::move(hits));
    out.tables.push_back(std::move(shape));
    out.tables.push_back(std::move(arms_t));
    out.tables.push_back(std::move(incl));
    return out;
}

// ------------------------------------------------------------ essential

inline PresetOutput run_essential(const ExperimentConfig& c, unsigned jobs) {
    const Site x = site_from_json(c.params.at("x"), c.dimension, "params.x");
    const double t_surv = c.param("t_surv");
    if (!(t_surv > 0)) throw ConfigError("params.t_surv: must be > 0");
    const std::uint8_t level = level_param(c, "level");
    auto cat = make_catalog(window(c.dimension, c.window), c.model);
    if (!cat->window().find(x) || cat->window().depth(x) < cat->collar_width())
        throw ConfigError("params.x: must lie inside the window, off the collar");
    struct Rec {
        EssentialRecord r;
        RecordAudit a;
        bool x_infected_at_u = true;
    };
    auto recs = parallel_trials<Rec>(c.trials, jobs, [&](std::size_t i) {
        CoupledRun run(cat, c.horizon, derive_trial_seed(c.seed, i));
        CopyOptions o;
        o.snapshots = false;
        auto base = run.add_copy("base", origin_start(cat->window(), level), o);
        Rec out{essential_hitting(run, base, x, t_surv), {}, true};
        out.a = audit_record(out.r);
        const auto xs = cat->window().index(x);
        for (const auto& it : out.r.iterations) {
            if (!std::isfinite(it.u)) continue;
            if (run.copy(base).infection_at(it.u)[xs] != 1) out.x_infected_at_u = false;
        }
        return out;
    });
    const int d = c.dimension;
    CsvTable tab("essential",
                 {{"trial", "", "trial id"}, {"x", "", "target site"}, {"K", "", "iterations needed; NA if censored"},
                  {"sigma", "time", "essential hitting time"}, {"censor", "", "observed, infinite, horizon, or collar (base left the window first)"},
                  {"u_1", "time", "first u"}, {"t_first", "time", "first hitting time"},
                  {"base", "", "survival surrogate of the base copy"}, {"audit_ok", "bool", "record audit"}},
                 "essential hitting records");
    std::vector<double> K;
    std::size_t bad_sigma = 0, bad_equiv = 0, bad_order = 0, bad_x = 0, censored = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i].r;
        const auto& a = recs[i].a;
        bad_sigma += !a.sigma_ge_first;
        bad_equiv += !a.equivalence;
        bad_order += !a.ordering;
        bad_x += !recs[i].x_infected_at_u;
        censored += r.censored();
        if (!r.censored()) K.push_back(*r.K);
        const char* fate = r.base == Fate::Dies ? "dies" : r.base == Fate::Survives ? "survives" : "undecided";
        tab.row({str(i), site_str(x, d), r.K ? str(*r.K) : "NA", r.sigma.finite() ? fmt(r.sigma.value) : "NA", r.collar ? "collar" : censor_name(r.sigma.status),
                 r.iterations.empty() ? "NA" : fmt(r.iterations[0].u), r.t_first.finite() ? fmt(r.t_first.value) : "NA", fate,
                 yes(a.ok() && recs[i].x_infected_at_u)});
    }
    std::vector<double> grid;
    double kmax = 0;
    for (double k : K) kmax = std::max(kmax, k);
    for (int n = 0; n <= static_cast<int>(kmax); ++n) grid.push_back(n);
    stats::TailFit fit;
    if (grid.size() >= 3) fit = stats::tail_fit(K, grid, derive_trial_seed(c.seed, 1 << 20));
    CsvTable tail("essential_K_tail", {{"n", "", "iteration count"}, {"p_hat", "probability", "fraction with K > n"}},
                  "tail of K among determined records");
    for (std::size_t k = 0; k < fit.grid.size(); ++k) tail.row({fmt(fit.grid[k]), fmt(fit.survival[k])});
    PresetOutput out;
    out.tables.push_back(std::move(tab));
    out.tables.push_back(std::move(tail));
    CsvTable sum("essential_summary", {{"quantity", "", "name"}, {"value", "", "value"}}, "audit counts and tail fit");
    sum.row({"trials", str(c.trials)});
    sum.row({"censored", str(censored)});
    sum.row({"sigma_below_first_hit", str(bad_sigma)});
    sum.row({"equivalence_failures", str(bad_equiv)});
    sum.row({"ordering_failures", str(bad_order)});
    sum.row({"x_not_infected_at_u", str(bad_x)});
    sum.row({"slope", fmt(fit.ok ? fit.fit.slope : std::nan(""))});
    sum.row({"slope_ci_hi", fmt(fit.ok ? fit.fit.slope_ci.hi : std::nan(""))});
    out.tables.push_back(std::move(sum));
    out.checks.push_back(check("K_tail", fit.ok && fit.fit.slope < 0 && fit.fit.slope_ci.hi < 0,
                               fit.ok ? kv("slope", fit.fit.slope) + " " + kv("ci_hi", fit.fit.slope_ci.hi) + " " +
                                            kv("points", static_cast<double>(fit.grid.size()))
                                      : "too few tail points"));
    out.checks.push_back(check("sigma_ge_first_hit", bad_sigma == 0, kv("violations", static_cast<double>(bad_sigma))));
    out.checks.push_back(check("K_equivalence", bad_equiv == 0 && bad_order == 0 && bad_x == 0,
                               kv("equivalence", static_cast<double>(bad_equiv)) + " " + kv("ordering", static_cast<double>(bad_order)) + " " +
                                   kv("x_at_u", static_cast<double>(bad_x)) + " " + kv("records", static_cast<double>(c.trials))));

    // Bad-growth constituents on a small grid of scales.
    const std::size_t bg_trials = uparam(c, "bad_growth_trials");
    if (bg_trials > 0) {
        BadGrowthParams p;
        p.M = 3 * c.model.rates.lambda_max() * 2 * d;
        p.c = c.param("c");
        p.t_surv = t_surv;
        CsvTable bg("bad_growth",
                    {{"t", "time", "scale"}, {"trials", "trials", "samples"}, {"no_recovery", "probability", "no effective recovery at y in [0,t/2)"},
                     {"escapes", "probability", "H_t leaves B_{Mt}(y)"}, {"late_death_zero", "probability", "t/2 < tau < inf, zero background"},
                     {"late_death", "probability", "t/2 < tau < inf"}, {"slow_return", "probability", "survives, x not hit in [2t, gamma t]"},
                     {"any", "probability", "union"}, {"gamma", "", "3M(1+1/c)"}},
                    "bad-growth event frequencies at y = origin");
        for (double t : c.vparam("bad_growth_t")) {
            p.t = t;
            const double H = std::min(c.horizon, std::max(p.gamma() * t, t) + t_surv + 1);
            const auto e = bad_growth_probe(cat, x, Site{}, level, p, H, bg_trials, derive_trial_seed(c.seed, 1u << 21));
            const double n = static_cast<double>(bg_trials);
            bg.row({fmt(t), str(bg_trials), fmt(e.no_recovery / n), fmt(e.escapes / n), fmt(e.late_death_zero / n), fmt(e.late_death / n),
                    fmt(e.slow_return / n), fmt(e.any / n), fmt(p.gamma())});
        }
        out.tables.push_back(std::move(bg));
    }
    return out;
}

// ----------------------------------------------------- percolation field

struct TauSample {
    int tau = -1;       // extinction level; -1 if it reached the width cap or the level horizon
    double weight = 1;  // likelihood ratio of the target law to the sampling law on the explored edges
};

// Cluster of the origin in the independent field, sampled at density q and
// reweighted to density p. Exploration stops when the cluster dies, when it
// holds `cap` sites, or after `levels` levels.
inline TauSample explore_tau(int d, double p, double q, int levels, std::size_t cap, std::uint64_t seed) {
    const Window w = window(d, levels + 1);
    CounterRng g(seed, Role::Field);
    TauSample s;
    const double lo = std::log(p / q), lc = std::log((1 - p) / (1 - q));
    double logw = 0;
    std::vector<std::uint32_t> cur{w.index(Site{})}, next;
    std::vector<std::uint8_t> mark(w.site_count(), 0);
    for (int k = 1; k <= levels; ++k) {
        next.clear();
        for (auto x : cur)
            for (int u = 0; u < 2 * d; ++u) {
                const bool open = g.uniform_at(static_cast<std::uint64_t>(k), x * 8ull + static_cast<std::uint64_t>(u)) < q;
                logw += open ? lo : lc;
                if (!open) continue;
                const auto y = w.index(w.site(x) + direction(d, u));
                if (!mark[y]) {
                    mark[y] = 1;
                    next.push_back(y);
                }
            }
        for (auto y : next) mark[y] = 0;
        if (next.empty()) {
            s.tau = k;
            break;
        }
        if (next.size() >= cap) break;
        cur.swap(next);
    }
    s.weight = std::exp(logw);
    return s;
}

// ---------------------------------------------------------------- block

struct BlockProbeAll {
    std::size_t trials = 0;
    std::vector<std::size_t> hits;  // per direction
    double min_rate() const {
        std::size_t m = trials;
        for (auto h : hits) m = std::min(m, h);
        return trials ? static_cast<double>(m) / static_cast<double>(trials) : 0.0;
    }
};

// P(E^u(x, s)) for every direction at once, fresh stream per trial.
inline BlockProbeAll probe_block_all(const Model& m, int d, const MacroParams& mp, const Site& x, double s, std::size_t trials,
                                     std::uint64_t seed, unsigned jobs) {
    auto cat = make_catalog(window(d, 5 * mp.a), m);
    auto v = parallel_trials<std::vector<std::uint8_t>>(trials, jobs, [&](std::size_t i) {
        CoupledRun run(cat, 6 * mp.b, derive_trial_seed(seed, i));
        auto ev = block_events(run, Site{}, 0, x, s, mp);
        std::vector<std::uint8_t> o;
        for (const auto& e : ev) o.push_back(e.occurred);
        return o;
    });
    BlockProbeAll r;
    r.trials = trials;
    r.hits.assign(static_cast<std::size_t>(2 * d), 0);
    for (const auto& o : v)
        for (std::size_t u = 0; u < o.size(); ++u) r.hits[u] += o[u];
    return r;
}

// Worst of the seed at the macro-box center at time 0 and at the corner
// farthest from +e_1 at time b.
inline double block_probe_min(const Model& m, int d, const MacroParams& mp, std::size_t trials, std::uint64_t seed, unsigned jobs) {
    const auto center = probe_block_all(m, d, mp, Site{}, 0.0, trials, derive_trial_seed(seed, 0), jobs);
    Site corner;
    for (int i = 0; i < d; ++i) corner[static_cast<std::size_t>(i)] = -mp.a;
    const auto far = probe_block_all(m, d, mp, corner, mp.b, trials, derive_trial_seed(seed, 1), jobs);
    return std::min(center.min_rate(), far.min_rate());
}

struct MacroCalibration {
    struct Row {
        MacroParams mp;
        double probe;
    };
    std::vector<Row> grid;
    std::optional<MacroParams> chosen;
};

inline MacroCalibration calibrate_macro(const Model& m, int d, const std::vector<double>& ns, const std::vector<double>& as,
                                        const std::vector<double>& bs, std::size_t trials, double target, std::uint64_t seed,
                                        unsigned jobs) {
    MacroCalibration r;
    std::uint64_t k = 0;
    // Smallest b first: the horizon of a coupling grows with b.
    for (double b : bs)
        for (double n : ns)
            for (double a : as) {
                MacroParams mp{static_cast<int>(n), static_cast<int>(a), b};
                if (mp.a <= mp.n) continue;
                const double p = block_probe_min(m, d, mp, trials, derive_trial_seed(seed, k++), jobs);
                r.grid.push_back({mp, p});
                if (p >= target) {
                    r.chosen = mp;
                    return r;
                }
            }
    return r;
}

inline CsvTable macro_table(const MacroCalibration& cal, std::size_t trials) {
    CsvTable t("macro_calibration",
               {{"n", "sites", "seed cube half-width"}, {"a", "sites", "macro box half-width"}, {"b", "time", "macro time unit"},
                {"trials", "trials", "probe trials per seed position"}, {"probe_min", "probability", "smallest block-event rate over directions and seed positions"}},
               "block-event calibration grid");
    for (const auto& row : cal.grid) t.row({str(row.mp.n), str(row.mp.a), fmt(row.mp.b), str(trials), fmt(row.probe)});
    return t;
}

inline int block_window_needed(const MacroParams& mp, int levels) { return 2 * mp.a * levels + 5 * mp.a; }

inline PresetOutput run_block(const ExperimentConfig& c, unsigned jobs) {
    const MacroParams mp = macro_param(c);
    const int levels = c.iparam("levels");
    if (levels < 1) throw ConfigError("params.levels: must be >= 1");
    const double p_fill = c.param("p_fill"), probe_min = c.param("probe_min");
    if (c.window < block_window_needed(mp, levels))
        throw ConfigError("window: must be at least 2*a*levels + 5*a = " + std::to_string(block_window_needed(mp, levels)));
    if (c.horizon < (5 * levels + 1) * mp.b) throw ConfigError("horizon: must be at least (5*levels + 1)*b = " + fmt((5 * levels + 1) * mp.b));
    const std::size_t probe_trials = uparam(c, "probe_trials"), min_levels = uparam(c, "min_levels");
    PresetOutput out;
    const double probe = block_probe_min(c.model, c.dimension, mp, probe_trials, derive_trial_seed(c.seed, 1), jobs);
    out.checks.push_back(check("block_probe", probe >= probe_min, kv("probe_min", probe) + " " + kv("target", probe_min)));
    auto cat = make_catalog(window(c.dimension, c.window), c.model);
    struct Res {
        int levels = 0;
        std::size_t violations = 0, audited = 0, tracked = 0, open = 0;
        bool overflow = false;
        std::optional<int> extinction;
    };
    const std::uint64_t s0 = derive_trial_seed(c.seed, 2);
    auto v = parallel_trials<Res>(c.trials, jobs, [&](std::size_t i) {
        const std::uint64_t s = derive_trial_seed(s0, i);
        CoupledRun run(cat, c.horizon, s);
        CopyOptions o;
        o.snapshots = false;
        auto main = run.add_copy("main", cube_configuration(cat->window(), Site{}, mp.n), o);
        auto bc = build_block_coupling(run, Site{}, 0.0, mp, levels, p_fill, derive_trial_seed(s, 1), main);
        return Res{bc.levels_built, bc.violations, bc.audited, bc.tracked_edges, bc.tracked_open, bc.overflow, bc.extinction};
    });
    CsvTable tab("block",
                 {{"trial", "", "trial id"}, {"levels", "", "cluster levels built"}, {"extinction", "", "field extinction level; NA if alive"},
                  {"tracked_edges", "", "edges read off the simulator"}, {"tracked_open", "", "of which open"},
                  {"audited", "", "seed cubes checked against the main copy"}, {"violations", "", "implication failures"},
                  {"overflow", "bool", "an H box left the window"}},
                 "block coupling per trial");
    std::size_t total_levels = 0, viol = 0, overflow = 0, tracked = 0, open = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& r = v[i];
        total_levels += static_cast<std::size_t>(r.levels);
        viol += r.violations;
        overflow += r.overflow;
        tracked += r.tracked;
        open += r.open;
        tab.row({str(i), str(r.levels), r.extinction ? str(*r.extinction) : "NA", str(r.tracked), str(r.open), str(r.audited), str(r.violations), yes(r.overflow)});
    }
    out.tables.push_back(std::move(tab));
    CsvTable sum("block_summary", {{"quantity", "", "name"}, {"value", "", "value"}}, "aggregate block coupling");
    sum.row({"n", str(mp.n)});
    sum.row({"a", str(mp.a)});
    sum.row({"b", fmt(mp.b)});
    sum.row({"probe_min", fmt(probe)});
    sum.row({"tracked_levels", str(total_levels)});
    sum.row({"tracked_edges", str(tracked)});
    sum.row({"open_fraction", fmt(tracked ? static_cast<double>(open) / tracked : std::nan(""))});
    sum.row({"violations", str(viol)});
    sum.row({"overflow_trials", str(overflow)});
    out.tables.push_back(std::move(sum));
    // Independent field at density g against the built field: survival to the last level.
    const double g = c.param("g");
    if (!(g > 0 && g <= 1)) throw ConfigError("params.g: must lie in (0, 1]");
    const std::uint64_t sg = derive_trial_seed(c.seed, 3);
    auto ind = parallel_trials<TauSample>(c.trials, jobs, [&](std::size_t i) {
        return explore_tau(c.dimension, g, g, levels, std::numeric_limits<std::size_t>::max(), derive_trial_seed(sg, i));
    });
    std::size_t built_alive = 0, ind_alive = 0;
    for (const auto& r : v) built_alive += r.levels == levels && !r.extinction;
    for (const auto& t : ind) ind_alive += t.tau < 0;
    CsvTable cmp("field_comparison",
                 {{"field", "", "built (coupled) or independent at density g"}, {"density", "probability", "open-edge fraction or g"},
                  {"trials", "fields", "fields"}, {"alive_at_last_level", "probability", "cluster of the origin reaches the last level"}},
                 "built field against an independent comparison field");
    const double n = std::max<double>(1, static_cast<double>(c.trials));
    cmp.row({"built", fmt(tracked ? static_cast<double>(open) / tracked : std::nan("")), str(c.trials), fmt(built_alive / n)});
    cmp.row({"independent", fmt(g), str(c.trials), fmt(ind_alive / n)});
    out.tables.push_back(std::move(cmp));
    out.checks.push_back(check("block_implication", viol == 0 && total_levels >= min_levels,
                               kv("tracked_levels", static_cast<double>(total_levels)) + " " + kv("violations", static_cast<double>(viol)) + " " +
                                   kv("overflow", static_cast<double>(overflow))));
    return out;
}

// ------------------------------------------------------------ calibrate

inline PresetOutput run_calibrate(const ExperimentConfig& c, unsigned jobs) {
    PresetOutput out;
    const std::uint8_t level = level_param(c, "level");
    if (!c.vparam("lambda_grid").empty()) {
        const auto lam = calibrate_lambda(c.raw.at("model"), c.vparam("lambda_grid"), c.dimension, c.window, c.horizon, level,
                                          uparam(c, "smoke_trials"), c.param("survival_min"), derive_trial_seed(c.seed, 0), jobs);
        out.tables.push_back(lambda_table(lam, uparam(c, "smoke_trials")));
        out.checks.push_back(check("lambda_calibration", lam.chosen.has_value(), lam.chosen ? kv("lambda", *lam.chosen) : "no lambda reached the target"));
    }
    const auto cal = calibrate_macro(c.model, c.dimension, c.vparam("n_grid"), c.vparam("a_grid"), c.vparam("b_grid"),
                                     uparam(c, "probe_trials"), c.param("probe_min"), derive_trial_seed(c.seed, 1), jobs);
    out.tables.push_back(macro_table(cal, uparam(c, "probe_trials")));
    out.checks.push_back(check("macro_calibration", cal.chosen.has_value(),
                               cal.chosen ? "n=" + str(cal.chosen->n) + " a=" + str(cal.chosen->a) + " b=" + fmt(cal.chosen->b)
                                          : "no grid point reached the target"));
    return out;
}

// -------------------------------------------------------------- restart

inline std::string join_steps(const RestartRecord& r, bool use_n) {
    std::string s;
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        const auto& st = r.steps[i];
        if (i) s += ";";
        if (use_n)
            s += st.N ? std::to_string(*st.N) : "NA";
        else
            s += st.seeded ? (st.M ? std::to_string(*st.M) : "inf") : (st.N ? "0" : "NA");
    }
    return s;
}

inline PresetOutput run_restart(const ExperimentConfig& c, unsigned jobs) {
    const MacroParams mp = macro_param(c);
    const int levels = c.iparam("macro_levels");
    if (levels < 1) throw ConfigError("params.macro_levels: must be >= 1");
    const double p_fill = c.param("p_fill");
    const std::uint8_t level = level_param(c, "level");
    const int attempts = c.iparam("max_attempts");
    const double p_min = c.param("p_min");
    auto cat = make_catalog(window(c.dimension, c.window), c.model);
    const std::uint64_t s0 = derive_trial_seed(c.seed, 0);
    struct Res {
        RestartRecord r;
        bool alive_at_horizon = false;
    };
    auto v = parallel_trials<Res>(c.trials, jobs, [&](std::size_t i) {
        const std::uint64_t s = derive_trial_seed(s0, i);
        CoupledRun run(cat, c.horizon, s);
        CopyOptions o;
        o.snapshots = false;
        o.stop_on_extinction = true;
        auto base = run.add_copy("base", origin_start(cat->window(), level), o);
        Res out{restart_procedure(run, base, mp, levels, p_fill, derive_trial_seed(s, 1), attempts), false};
        run.advance(base, c.horizon);
        out.alive_at_horizon = !run.copy(base).extinct();
        return out;
    });
    const int d = c.dimension;
    CsvTable tab("restart",
                 {{"trial", "", "trial id"}, {"L", "", "successful restart index; NA if censored"}, {"sigma", "time", "restart time sigma"},
                  {"Y", "", "seed cube center"}, {"censor", "", "observed or the censoring reason"},
                  {"base_alive", "bool", "base alive at the last restart"}, {"base_alive_at_horizon", "bool", "base alive at the horizon"},
                  {"cube_holds", "bool", "Y cube inside the base at sigma; NA if not applicable"},
                  {"N", "steps", "per-restart step counts"}, {"M", "levels", "per-restart macro extinction level; inf if alive"},
                  {"violations", "", "block coupling implication failures"}},
                 "restart procedure records");
    std::vector<long> Ls;
    std::vector<double> sig;
    std::size_t cube_bad = 0, cube_checked = 0, viol = 0, censored = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& r = v[i].r;
        std::size_t vi = 0;
        for (const auto& st : r.steps) vi += st.violations;
        viol += vi;
        censored += r.censored;
        if (!r.censored) {
            Ls.push_back(*r.L);
            sig.push_back(r.sigma);
            if (r.cube_holds) {
                ++cube_checked;
                cube_bad += !*r.cube_holds;
            }
            if (v[i].alive_at_horizon && !r.cube_holds) ++cube_bad;  // must have been checked
        }
        tab.row({str(i), r.L ? str(*r.L) : "NA", r.censored ? "NA" : fmt(r.sigma), r.censored ? "NA" : site_str(r.Y, d),
                 r.censored ? r.reason : "observed", yes(r.base_alive), yes(v[i].alive_at_horizon),
                 r.cube_holds ? yes(*r.cube_holds) : "NA", join_steps(r, true), join_steps(r, false), str(vi)});
    }
    PresetOutput out;
    out.tables.push_back(std::move(tab));
    const auto gof = Ls.empty() ? stats::ChiSquare{0, 0, 0} : stats::geometric_gof(Ls);
    std::vector<double> grid;
    if (!sig.empty()) {
        const double hi = stats::quantile(sig, 0.99);
        for (int k = 0; k < 12; ++k) grid.push_back(hi * k / 12.0);
    }
    stats::TailFit fit;
    if (grid.size() >= 3) fit = stats::tail_fit(sig, grid, derive_trial_seed(c.seed, 1));
    CsvTable tail("restart_sigma_tail", {{"t", "time", "grid time"}, {"p_hat", "probability", "fraction with sigma > t"}}, "tail of sigma");
    for (std::size_t k = 0; k < fit.grid.size(); ++k) tail.row({fmt(fit.grid[k]), fmt(fit.survival[k])});
    out.tables.push_back(std::move(tail));
    CsvTable sum("restart_summary", {{"quantity", "", "name"}, {"value", "", "value"}}, "restart procedure aggregate");
    sum.row({"trials", str(c.trials)});
    sum.row({"censored", str(censored)});
    sum.row({"mean_L", fmt(Ls.empty() ? std::nan("") : stats::mean(std::vector<double>(Ls.begin(), Ls.end())))});
    sum.row({"geometric_chi2", fmt(gof.stat)});
    sum.row({"geometric_df", fmt(gof.df)});
    sum.row({"geometric_p", fmt(gof.p)});
    sum.row({"cube_checked", str(cube_checked)});
    sum.row({"cube_failures", str(cube_bad)});
    sum.row({"sigma_slope", fmt(fit.ok ? fit.fit.slope : std::nan(""))});
    sum.row({"sigma_slope_ci_hi", fmt(fit.ok ? fit.fit.slope_ci.hi : std::nan(""))});
    sum.row({"coupling_violations", str(viol)});
    out.tables.push_back(std::move(sum));
    out.checks.push_back(check("L_geometric", !Ls.empty() && gof.df > 0 && gof.p > p_min,
                               kv("p", gof.p) + " " + kv("df", gof.df) + " " + kv("records", static_cast<double>(Ls.size()))));
    out.checks.push_back(check("cube_at_sigma", cube_bad == 0 && cube_checked > 0,
                               kv("checked", static_cast<double>(cube_checked)) + " " + kv("failures", static_cast<double>(cube_bad))));
    out.checks.push_back(check("sigma_tail", fit.ok && fit.fit.slope < 0 && fit.fit.slope_ci.hi < 0,
                               fit.ok ? kv("slope", fit.fit.slope) + " " + kv("ci_hi", fit.fit.slope_ci.hi) : "too few tail points"));
    out.checks.push_back(check("restart_coupling", viol == 0, kv("violations", static_cast<double>(viol))));
    return out;
}

// ---------------------------------------------------------- percolation

inline PresetOutput run_percolation(const ExperimentConfig& c, unsigned jobs) {
    const double p = c.param("p"), q = c.param("proposal_p"), beta = c.param("beta");
    if (!(p > 0 && p < 1) || !(q > 0 && q < 1)) throw ConfigError("params.p, params.proposal_p: must lie in (0, 1)");
    if (!(beta > 0 && beta < 1)) throw ConfigError("params.beta: must lie in (0, 1)");
    const int levels = c.iparam("tau_levels"), slab_level = c.iparam("slab_level");
    const std::size_t cap = uparam(c, "width_cap"), plain = uparam(c, "plain_fields");
    std::vector<int> rs;
    for (double r : c.vparam("r_grid")) {
        if (r < 0 || r != std::floor(r)) throw ConfigError("params.r_grid: nonnegative integers expected");
        rs.push_back(static_cast<int>(r));
    }
    if (rs.size() < 3 || !std::is_sorted(rs.begin(), rs.end())) throw ConfigError("params.r_grid: at least 3 ascending radii");
    if (slab_level < 1 || levels < 3) throw ConfigError("params.slab_level >= 1 and params.tau_levels >= 3 required");
    const int d = c.dimension;
    PresetOutput out;

    // tau on extinction: importance-sampled fields plus plain fields at p.
    const std::uint64_t st = derive_trial_seed(c.seed, 0), sp = derive_trial_seed(c.seed, 1);
    auto is = parallel_trials<TauSample>(c.trials, jobs, [&](std::size_t i) { return explore_tau(d, p, q, levels, cap, derive_trial_seed(st, i)); });
    auto pl = parallel_trials<TauSample>(plain, jobs, [&](std::size_t i) { return explore_tau(d, p, p, levels, cap, derive_trial_seed(sp, i)); });
    std::vector<double> kgrid;
    for (int k = 0; k < levels; ++k) kgrid.push_back(k);
    auto tau_tail = [&](const std::vector<std::size_t>* idx, std::vector<double>* count) {
        std::vector<double> est(kgrid.size(), 0.0);
        const std::size_t n = idx ? idx->size() : is.size();
        for (std::size_t j = 0; j < n; ++j) {
            const auto& s = is[idx ? (*idx)[j] : j];
            if (s.tau < 0) continue;
            for (std::size_t k = 0; k < kgrid.size(); ++k)
                if (s.tau > kgrid[k]) {
                    est[k] += s.weight;
                    if (count) (*count)[k] += 1;
                }
        }
        for (auto& e : est) e /= static_cast<double>(n);
        return est;
    };
    std::vector<double> contrib(kgrid.size(), 0.0);
    const auto est = tau_tail(nullptr, &contrib);
    std::vector<double> plain_tail(kgrid.size(), 0.0);
    for (const auto& s : pl)
        if (s.tau >= 0)
            for (std::size_t k = 0; k < kgrid.size(); ++k) plain_tail[k] += s.tau > kgrid[k];
    CsvTable tt("tau_tail",
                {{"k", "levels", "level"}, {"p_is", "probability", "importance-sampled P(k < tau < inf)"},
                 {"contributing", "fields", "sampled fields in the event"}, {"p_plain", "probability", "plain Monte Carlo at p"},
                 {"plain_count", "fields", "plain fields in the event"}},
                "extinction-level tail of the origin cluster");
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < kgrid.size(); ++k) {
        tt.row({fmt(kgrid[k]), fmt(est[k]), fmt(contrib[k]), fmt(plain ? plain_tail[k] / static_cast<double>(plain) : std::nan("")), fmt(plain_tail[k])});
        if (contrib[k] >= 5 && est[k] > 0) {
            xs.push_back(kgrid[k]);
            ys.push_back(std::log(est[k]));
        }
    }
    out.tables.push_back(std::move(tt));
    std::optional<stats::LinearFit> tf;
    stats::Interval tboot{std::nan(""), std::nan("")};
    if (xs.size() >= 3) {
        tf = stats::linear_fit(xs, ys);
        const auto used = xs;
        tboot = stats::bootstrap_ci(
            is.size(),
            [&](const std::vector<std::size_t>& idx) {
                const auto e = tau_tail(&idx, nullptr);
                std::vector<double> bx, by;
                for (double k : used)
                    if (e[static_cast<std::size_t>(k)] > 0) {
                        bx.push_back(k);
                        by.push_back(std::log(e[static_cast<std::size_t>(k)]));
                    }
                return bx.size() >= 3 ? stats::linear_fit(bx, by).slope : std::nan("");
            },
            derive_trial_seed(c.seed, 2), c.iparam("resamples"));
    }
    out.checks.push_back(check("tau_tail", tf && tf->slope < 0 && tboot.hi < 0,
                               tf ? kv("slope", tf->slope) + " " + kv("bootstrap_hi", tboot.hi) + " " + kv("points", static_cast<double>(xs.size()))
                                  : "too few levels with at least 5 contributing fields"));

    // Slab-density shortfall from the 2Z layer.
    const int R = rs.back() + slab_level + 2;
    const std::uint64_t ss = derive_trial_seed(c.seed, 3);
    auto counts = parallel_trials<std::vector<std::size_t>>(c.trials, jobs, [&](std::size_t i) {
        LazyField f(d, p, slab_level, R, derive_trial_seed(ss, i));
        auto cl = cluster(f, even_layer(f), slab_level);
        std::vector<std::size_t> out_counts(rs.size(), 0);
        if (static_cast<int>(cl.levels.size()) <= slab_level) return out_counts;
        const Window& w = f.sites();
        for (auto s : cl.levels[static_cast<std::size_t>(slab_level)]) {
            const Site x = w.site(s);
            bool axis = true;
            for (int k = 1; k < d; ++k) axis = axis && x[static_cast<std::size_t>(k)] == 0;
            if (!axis) continue;
            for (std::size_t k = 0; k < rs.size(); ++k)
                if (std::abs(x[0]) <= rs[k]) ++out_counts[k];
        }
        return out_counts;
    });
    CsvTable sl("slab_shortfall",
                {{"r", "sites", "half-width"}, {"fields", "fields", "sampled fields"}, {"shortfall", "fields", "fields with count < beta (r+1)"},
                 {"p_hat", "probability", "shortfall fraction"}, {"mean_density", "", "mean count / (r+1)"}},
                "slab density shortfall at the slab level");
    std::vector<double> sx, sy;
    std::vector<std::vector<std::uint8_t>> ind(rs.size(), std::vector<std::uint8_t>(c.trials, 0));
    for (std::size_t k = 0; k < rs.size(); ++k) {
        std::size_t sh = 0;
        double dens = 0;
        for (std::size_t i = 0; i < c.trials; ++i) {
            const double cnt = static_cast<double>(counts[i][k]);
            const bool s = cnt < beta * (rs[k] + 1);
            ind[k][i] = s;
            sh += s;
            dens += cnt / (rs[k] + 1);
        }
        sl.row({str(rs[k]), str(c.trials), str(sh), fmt(static_cast<double>(sh) / c.trials), fmt(dens / c.trials)});
        if (sh >= 5) {
            sx.push_back(rs[k]);
            sy.push_back(std::log(static_cast<double>(sh) / c.trials));
        }
    }
    out.tables.push_back(std::move(sl));
    std::optional<stats::LinearFit> sfit;
    stats::Interval sboot{std::nan(""), std::nan("")};
    if (sx.size() >= 3) {
        sfit = stats::linear_fit(sx, sy);
        std::vector<std::size_t> used;
        for (std::size_t k = 0; k < rs.size(); ++k)
            if (std::find(sx.begin(), sx.end(), static_cast<double>(rs[k])) != sx.end()) used.push_back(k);
        sboot = stats::bootstrap_ci(
            c.trials,
            [&](const std::vector<std::size_t>& idx) {
                std::vector<double> bx, by;
                for (auto k : used) {
                    double sh = 0;
                    for (auto i : idx) sh += ind[k][i];
                    if (sh > 0) {
                        bx.push_back(rs[k]);
                        by.push_back(std::log(sh / static_cast<double>(idx.size())));
                    }
                }
                return bx.size() >= 3 ? stats::linear_fit(bx, by).slope : std::nan("");
            },
            derive_trial_seed(c.seed, 4), c.iparam("resamples"));
    }
    out.checks.push_back(check("slab_shortfall", sfit && sfit->slope < 0 && sboot.hi < 0,
                               sfit ? kv("slope", sfit->slope) + " " + kv("bootstrap_hi", sboot.hi) + " " + kv("points", static_cast<double>(sx.size()))
                                    : "too few radii with at least 5 shortfalls"));
    CsvTable sum("percolation_summary", {{"quantity", "", "name"}, {"value", "", "value"}}, "fits");
    sum.row({"p", fmt(p)});
    sum.row({"proposal_p", fmt(q)});
    sum.row({"fields", str(c.trials)});
    sum.row({"plain_fields", str(plain)});
    sum.row({"tau_slope", fmt(tf ? tf->slope : std::nan(""))});
    sum.row({"tau_bootstrap_lo", fmt(tboot.lo)});
    sum.row({"tau_bootstrap_hi", fmt(tboot.hi)});
    sum.row({"slab_slope", fmt(sfit ? sfit->slope : std::nan(""))});
    sum.row({"slab_bootstrap_lo", fmt(sboot.lo)});
    sum.row({"slab_bootstrap_hi", fmt(sboot.hi)});
    out.tables.push_back(std::move(sum));
    return out;
}

// -------------------------------------------------------------- regions

inline PresetOutput run_regions(const ExperimentConfig& c, unsigned jobs) {
    const auto times = c.vparam("times");
    if (times.empty() || !std::is_sorted(times.begin(), times.end()) || times.back() > c.horizon)
        throw ConfigError("params.times: ascending times up to the horizon");
    auto cat = make_catalog(window(c.dimension, c.window), c.model);
    if (!cat->diagnostics().background_monotone) throw ConfigError("model: coupled background regions need a monotone background");
    const std::uint8_t level = level_param(c, "level");
    const int L = spin_range(c.model.background);
    struct Row {
        std::vector<std::array<std::size_t, 5>> sizes;
        std::size_t bad = 0;
    };
    auto v = parallel_trials<Row>(c.trials, jobs, [&](std::size_t i) {
        const Window& w = cat->window();
        CoupledRun run(cat, c.horizon, derive_trial_seed(c.seed, i));
        CopyOptions rec;
        rec.record_background = true;
        rec.snapshots = false;
        const auto a = run.add_copy("origin", origin_start(w, level), rec);
        Configuration full{std::vector<std::uint8_t>(w.site_count(), 1), std::vector<std::uint8_t>(w.cell_count(), level)};
        const auto b = run.add_copy("full", full, rec);
        const auto lo = run.add_copy("bg_low", make_configuration(w, {}, 0), rec);
        const auto hi = run.add_copy("bg_high", make_configuration(w, {}, static_cast<std::uint8_t>(cat->states() - 1)), rec);
        run.evolve(c.horizon);
        const auto kend = infection_coupling_end(run.copy(a), run.copy(b), c.horizon);
        const auto cend = background_coupling_end(*cat, run.copy(lo), run.copy(hi), c.horizon);
        const auto pend = phi_end(w, cend, L);
        Row r;
        std::vector<std::uint8_t> prev_kbar(w.site_count(), 0), prev_h(w.site_count(), 0);
        for (double t : times) {
            const auto H = ever_infected(run.copy(a), t);
            const auto K = infection_coupled_region(run.copy(a), run.copy(b), t);
            const auto Kb = permanently_coupled(kend, t);
            const auto Psi = background_coupled_region(*cat, run.copy(lo), run.copy(hi), t);
            const auto Phi = permanently_coupled(pend, t);
            for (std::size_t s = 0; s < w.site_count(); ++s) {
                if (Kb[s] && !K[s]) ++r.bad;
                if (Phi[s] && !Psi[s]) ++r.bad;
                if (prev_kbar[s] && !Kb[s]) ++r.bad;
                if (prev_h[s] && !H[s]) ++r.bad;
            }
            prev_kbar = Kb;
            prev_h = H;
            r.sizes.push_back({count(H), count(K), count(Kb), count(Psi), count(Phi)});
        }
        return r;
    });
    CsvTable tab("regions",
                 {{"trial", "", "trial id"}, {"time", "time", "snapshot time"}, {"H", "sites", "|H_t|"}, {"K", "sites", "|K_t|"},
                  {"K_bar", "sites", "|K-bar_t|, horizon censored"}, {"Psi", "cells", "|Psi_t|"}, {"Phi", "sites", "|Phi_t|, horizon censored"}},
                 "coupled-region sizes");
    std::size_t bad = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        bad += v[i].bad;
        for (std::size_t k = 0; k < times.size(); ++k) {
            const auto& s = v[i].sizes[k];
            tab.row({str(i), fmt(times[k]), str(s[0]), str(s[1]), str(s[2]), str(s[3]), str(s[4])});
        }
    }
    PresetOutput out;
    out.tables.push_back(std::move(tab));
    out.checks.push_back(check("region_invariants", bad == 0, kv("violations", static_cast<double>(bad))));
    return out;
}

// ------------------------------------------------------------- registry

struct PresetInfo {
    std::string name, description;
    json defaults;
    std::function<PresetOutput(const ExperimentConfig&, unsigned)> run;
};

inline json default_model() {
    return {{"rates", {{"kind", "edge_linear"}, {"lambda", 4.0}, {"r", 1.0}}},
            {"background", {{"kind", "dp"}, {"alpha_v", 1.0}, {"beta_v", 1.0}, {"alpha_e", 1.0}, {"beta_e", 1.0}}}};
}

inline json preset_doc(const std::string& name, int d, int window, double horizon, std::size_t trials, json params, json model = default_model()) {
    return {{"preset", name}, {"seed", std::uint64_t{1}},      {"dimension", d}, {"window", window}, {"horizon", horizon},
            {"dt", 0.1},      {"trials", trials}, {"model", model}, {"params", params}};
}

inline const std::vector<PresetInfo>& presets() {
    static const std::vector<PresetInfo> all = [] {
        std::vector<PresetInfo> v;
        v.push_back({"oracle", "simulator against the exact chain on four micro-cases",
                     preset_doc("oracle", 1, 1, 8, 100000, {{"times", {0.5, 2.0, 8.0}}, {"z_max", 4.0}}), run_oracle});
        v.push_back({"couplings", "pathwise additivity, monotone sandwich, worst case and conditional duality audits",
                     preset_doc("couplings", 2, 4, 3, 10000, {{"grid_step", 0.5}, {"p_infected", 0.2}, {"p_target", 0.03}, {"min_realizations", 10000}},
                                {{"rates", {{"kind", "edge_linear"}, {"lambda", 2.0}, {"r", 1.0}}},
                                 {"background", {{"kind", "dp"}, {"alpha_v", 0.7}, {"beta_v", 1.2}, {"alpha_e", 0.8}, {"beta_e", 1.1}}}}),
                     run_couplings});
        v.push_back({"stream", "telescoped rate reconstruction and per-map Poisson counts",
                     preset_doc("stream", 1, 2, 200, 0, {{"streams", 100}, {"tables", 100}, {"p_min", 0.001}},
                                {{"rates", {{"kind", "switching"}, {"l00", 0.2}, {"l01", 0.9}, {"l10", 0.4}, {"l11", 1.3}, {"r0", 1.0}, {"r1", 0.5}}},
                                 {"background", {{"kind", "dp"}, {"alpha_v", 0.3}, {"beta_v", 0.6}, {"alpha_e", 0.9}, {"beta_e", 1.2}}}}),
                     run_stream});
        v.push_back({"duality", "stationary self-duality of the dynamical-graph model",
                     preset_doc("duality", 1, 25, 5, 100000,
                                {{"t", 5.0}, {"eta", {{0}}}, {"eta_prime", {{3}, {4}, {5}}}, {"z_max", 4.0}},
                                {{"rates", {{"kind", "edge_linear"}, {"lambda", 2.0}, {"r", 1.0}}},
                                 {"background", {{"kind", "dp"}, {"alpha_v", 1.0}, {"beta_v", 1.0}, {"alpha_e", 1.0}, {"beta_e", 1.0}}}}),
                     run_duality});
        v.push_back({"tails", "finite extinction-time tail with lambda calibration",
                     preset_doc("tails", 1, 60, 40, 20000,
                                {{"grid", {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20}},
                                 {"level", 0},
                                 {"calibrate", true},
                                 {"lambda_grid", {4, 5, 6, 7, 8}},
                                 {"smoke_trials", 400},
                                 {"survival_min", 0.3}}),
                     run_tails});
        v.push_back({"shape", "hitting-time ratios, secants, linear growth bound and initial-background arms",
                     preset_doc("shape", 1, 60, 200, 6000,
                                {{"radii", {7, 14, 28, 56}},
                                 {"initial_levels", {0, 1}},
                                 {"target_survivors", 300},
                                 {"min_survivors", 200},
                                 {"secant_tol", 0.15},
                                 {"violation_max", 0.01},
                                 {"linear_t", 20.0},
                                 {"eps", {0.1, 0.2, 0.3}},
                                 {"times", {10, 20, 30}},
                                 {"resamples", 1000}},
                                with_lambda(default_model(), 6.0)),
                     run_shape});
        v.push_back({"essential", "essential hitting times, K tail and record audits",
                     preset_doc("essential", 1, 30, 60, 2000,
                                {{"x", {5}}, {"t_surv", 20.0}, {"level", 0}, {"c", 0.5}, {"bad_growth_t", {0.5, 1.0, 2.0}}, {"bad_growth_trials", 200}},
                                with_lambda(default_model(), 6.0)),
                     run_essential});
        v.push_back({"block", "block-event probe and block coupling implication audit",
                     preset_doc("block", 1, 52, 84, 300,
                                {{"n", 3}, {"a", 4}, {"b", 4.0}, {"levels", 4}, {"p_fill", 0.9}, {"probe_trials", 400}, {"probe_min", 0.9},
                                 {"min_levels", 1000}, {"g", 0.9}},
                                with_lambda(default_model(), 32.0)),
                     run_block});
        v.push_back({"calibrate", "lambda smoke runs and (n, a, b) block-event sweep",
                     preset_doc("calibrate", 1, 60, 40, 0,
                                {{"level", 0},
                                 {"lambda_grid", {4, 5, 6, 7, 8}},
                                 {"smoke_trials", 400},
                                 {"survival_min", 0.3},
                                 {"n_grid", {2, 3, 4}},
                                 {"a_grid", {4, 5, 6}},
                                 {"b_grid", {4.0, 8.0}},
                                 {"probe_trials", 400},
                                 {"probe_min", 0.95}},
                                with_lambda(default_model(), 32.0)),
                     run_calibrate});
        v.push_back({"restart", "restart procedure: L, sigma and the seed cube",
                     preset_doc("restart", 1, 80, 200, 1000,
                                {{"n", 3}, {"a", 4}, {"b", 4.0}, {"macro_levels", 3}, {"p_fill", 0.9}, {"level", 0}, {"max_attempts", 1000}, {"p_min", 0.001}},
                                with_lambda(default_model(), 32.0)),
                     run_restart});
        v.push_back({"percolation", "oriented percolation extinction-level tail and slab shortfall",
                     preset_doc("percolation", 1, 1, 1, 10000,
                                {{"p", 0.95},
                                 {"proposal_p", 0.7},
                                 {"tau_levels", 12},
                                 {"width_cap", 12},
                                 {"plain_fields", 100000},
                                 {"slab_level", 50},
                                 {"beta", 0.98},
                                 {"r_grid", {10, 20, 40, 60, 80, 100, 120, 160, 200}},
                                 {"resamples", 200}}),
                     run_percolation});
        v.push_back({"regions", "sizes of H, K, K-bar, Psi and Phi over time",
                     preset_doc("regions", 1, 20, 10, 50, {{"times", {1, 2, 4, 6, 8}}, {"level", 0}}), run_regions});
        return v;
    }();
    return all;
}

inline const PresetInfo& find_preset(const std::string& name) {
    for (const auto& p : presets())
        if (p.name == name) return p;
    std::string known;
    for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown preset \"" + name + "\" (known: " + known + ")");
}

// Preset defaults, then the user document, then overrides, then --seed.
inline ExperimentConfig resolve_config(const std::optional<json>& user, const std::optional<std::string>& preset,
                                       const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
    std::string name;
    if (preset)
        name = *preset;
    else if (user && user->contains("preset") && user->at("preset").is_string())
        name = user->at("preset").get<std::string>();
    else
        throw ConfigError("no preset given: use --preset NAME or set \"preset\" in the config");
    json doc = find_preset(name).defaults;
    if (user) {
        if (!user->is_object()) throw ConfigError("config: top level must be an object");
        if (user->contains("model")) doc.erase("model");  // a user model replaces the default wholesale
        merge_into(doc, *user);
    }
    doc["preset"] = name;
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    if (doc.contains("params") && doc.at("params").is_object()) {
        const json& known = find_preset(name).defaults.at("params");
        for (auto it = doc.at("params").begin(); it != doc.at("params").end(); ++it)
            if (!known.contains(it.key())) throw ConfigError("params: unknown key \"" + it.key() + "\" for preset " + name);
    }
    return config_from_json(doc);
}

inline PresetOutput run_preset(const ExperimentConfig& c, unsigned jobs) { return find_preset(c.preset).run(c, jobs); }

}  // namespace cpdre
