#include <gtest/gtest.h>

#include <cmath>

#include "cpdre/essential.hpp"

using namespace cpdre;

namespace {

const IndependentUpdates kTrivial{Generator(1, {0.0}), Generator(1, {0.0})};

std::shared_ptr<const Catalog> cpdp(int radius, double lambda) {
    return make_catalog(window(1, radius), {RateTable::edge_linear(lambda, 1.0), DynamicalPercolation{}});
}

CopyOptions plain() {
    CopyOptions o;
    o.snapshots = false;
    return o;
}

}  // namespace

TEST(Essential, OriginWithImmediateSurvival) {
    auto cat = cpdp(40, 8.0);
    int immediate = 0;
    for (std::uint64_t i = 0; i < 40; ++i) {
        CoupledRun run(cat, 30.0, derive_trial_seed(1, i));
        auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
        auto r = essential_hitting(run, base, Site{}, 10.0);
        ASSERT_FALSE(r.censored());
        EXPECT_EQ(r.t_first.value, 0.0);
        EXPECT_EQ(r.iterations[0].u, 0.0);
        if (r.iterations[0].restart == Fate::Survives) {
            ++immediate;
            EXPECT_EQ(*r.K, 1);
            EXPECT_EQ(r.sigma.value, 0.0);
        }
    }
    EXPECT_GT(immediate, 10);
}

TEST(Essential, RecordsAreConsistent) {
    auto cat = cpdp(40, 5.0);
    const Site x = make_site({5});
    std::size_t determined = 0;
    for (std::uint64_t i = 0; i < 200; ++i) {
        CoupledRun run(cat, 40.0, derive_trial_seed(2, i));
        auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
        auto r = essential_hitting(run, base, x, 10.0);
        const auto a = audit_record(r);
        EXPECT_TRUE(a.ok()) << "trial " << i;
        if (r.censored()) continue;
        ++determined;
        if (r.sigma.finite()) {
            EXPECT_GE(r.sigma.value, r.t_first.value);
            EXPECT_EQ(r.sigma.value, r.iterations[static_cast<std::size_t>(*r.K - 1)].u);
        }
        // x infected at every finite u_k: the base copy's log holds a 0 -> 1
        // change of x at that time (or x infected from the start).
        const auto xi = cat->window().index(x);
        for (const auto& it : r.iterations) {
            if (it.u == kInf || it.u == 0.0) continue;
            bool seen = false;
            for (const auto& ch : run.copy(base).infection_log())
                if (ch.site == xi && ch.value == 1 && ch.time == it.u) seen = true;
            EXPECT_TRUE(seen);
        }
    }
    EXPECT_GT(determined, 150u);
}

TEST(Essential, DeadModelNeverHits) {
    auto cat = make_catalog(window(1, 10), {RateTable::constant(0.0, 1.0), kTrivial});
    CoupledRun run(cat, 30.0, 1);
    auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
    auto r = essential_hitting(run, base, make_site({3}), 5.0);
    ASSERT_FALSE(r.censored());
    EXPECT_EQ(*r.K, 0);
    EXPECT_EQ(r.sigma.status, Censor::Infinite);
    EXPECT_EQ(r.base, Fate::Dies);
    EXPECT_THROW(essential_hitting(run, base, make_site({30}), 5.0), std::out_of_range);
}

TEST(Essential, ShortHorizonIsCensored) {
    auto cat = cpdp(40, 8.0);
    int censored = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
        CoupledRun run(cat, 2.0, derive_trial_seed(3, i));
        auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
        auto r = essential_hitting(run, base, Site{}, 10.0);
        // The collar is out of reach by time 2, so only extinction decides.
        if (run.copy(base).extinct()) {
            EXPECT_FALSE(r.censored());
            continue;
        }
        ++censored;
        EXPECT_TRUE(r.censored());
        EXPECT_EQ(r.sigma.status, Censor::AtHorizon);
        EXPECT_EQ(r.base, Fate::Undecided);
    }
    EXPECT_GT(censored, 4);
}

TEST(Essential, ShiftedEssential) {
    auto cat = cpdp(40, 6.0);
    for (std::uint64_t i = 0; i < 50; ++i) {
        CoupledRun run(cat, 60.0, derive_trial_seed(4, i));
        auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
        auto s = shifted_essential(run, base, make_site({2}), 10.0);
        if (s.sigma.finite()) { EXPECT_GE(s.sigma.value, 0.0); }
        EXPECT_TRUE(audit_record(s).ok());
    }
}

// CPDP with constant r: every recovery mark is effective, so
// P(no effective recovery at y in [0, t/2)) = e^{-r t / 2}.
TEST(Essential, NoRecoveryClosedForm) {
    auto cat = cpdp(30, 2.0);
    BadGrowthParams p;
    p.t = 1.2;
    p.M = 3 * 2.0 * 2;
    p.t_surv = 5;
    const std::size_t n = 3000;
    auto e = bad_growth_probe(cat, make_site({1}), Site{}, 0, p, 20.0, n, 5);
    const double q = std::exp(-p.t / 2);
    EXPECT_NEAR(static_cast<double>(e.no_recovery) / n, q, 4 * std::sqrt(q * (1 - q) / n));
    const std::size_t mx = std::max({e.no_recovery, e.escapes, e.late_death_zero, e.late_death, e.slow_return});
    EXPECT_GE(e.any, mx);
    EXPECT_LE(e.late_death_zero, n);
}

TEST(Essential, GammaFromConstants) {
    BadGrowthParams p;
    p.M = 2;
    p.c = 0.5;
    EXPECT_DOUBLE_EQ(p.gamma(), 18.0);
}

TEST(Essential, EscapeRateFallsWithScale) {
    auto cat = cpdp(60, 3.0);
    BadGrowthParams p;
    p.M = 1.5;
    p.t_surv = 5;
    std::vector<double> rate;
    for (double t : {0.5, 2.0, 6.0}) {
        p.t = t;
        auto e = bad_growth_probe(cat, make_site({1}), Site{}, 0, p, 30.0, 600, 6);
        rate.push_back(static_cast<double>(e.escapes) / 600.0);
    }
    EXPECT_GE(rate[0] + 0.02, rate[2]);
}

TEST(Essential, BadGrowthCountSmall) {
    auto cat = cpdp(30, 3.0);
    BadGrowthParams p;
    p.t = 0.5;
    p.M = 1;
    p.t_surv = 3;
    CoupledRun run(cat, 25.0, 7);
    CopyOptions rec;
    rec.record_background = true;
    rec.snapshots = false;
    auto bg = run.add_copy("bg", make_configuration(cat->window(), {}), rec);
    const auto n = bad_growth_count(run, bg, Site{}, 0.5, p);
    EXPECT_GE(n, 1u);  // B_{Mt+2} has 5 sites and e^{-r t/2} is large at t = 0.5
}

TEST(Essential, RestartSite) {
    const Window w = window(1, 5);
    EXPECT_FALSE(restart_site(w, make_configuration(w, {}).eta).has_value());
    EXPECT_EQ(*restart_site(w, make_configuration(w, {make_site({3}), make_site({-2}), make_site({2})}).eta), make_site({-2}));
}

TEST(Essential, RestartProcedureIdentity) {
    const MacroParams mp{1, 3, 1};
    auto cat = cpdp(80, 8.0);
    int done = 0;
    for (std::uint64_t i = 0; i < 8; ++i) {
        CoupledRun run(cat, 60.0, derive_trial_seed(8, i));
        auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
        auto r = restart_procedure(run, base, mp, 3, 0.9, i);
        for (const auto& st : r.steps) EXPECT_EQ(st.violations, 0u);
        if (r.censored) continue;
        ++done;
        EXPECT_DOUBLE_EQ(r.recompute(), r.sigma);
        EXPECT_EQ(static_cast<std::size_t>(*r.L), r.steps.size());
        if (r.base_alive) {
            ASSERT_TRUE(r.cube_holds.has_value());
            EXPECT_TRUE(*r.cube_holds);
        }
    }
    EXPECT_GT(done, 4);
}

TEST(Essential, RestartProcedureDeadModel) {
    auto cat = make_catalog(window(1, 30), {RateTable::constant(0.0, 1.0), kTrivial});
    CoupledRun run(cat, 10.0, 1);
    auto base = run.add_copy("base", make_configuration(cat->window(), {Site{}}), plain());
    auto r = restart_procedure(run, base, MacroParams{1, 3, 1}, 2, 0.9, 1);
    EXPECT_TRUE(r.censored);
    EXPECT_EQ(r.reason, "horizon");
    for (const auto& st : r.steps)
        if (st.N) { EXPECT_FALSE(st.seeded); }
}
