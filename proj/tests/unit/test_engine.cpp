#include <gtest/gtest.h>

#include "cpdre/engine.hpp"

using namespace cpdre;

namespace {

const IndependentUpdates kTrivial{Generator(1, {0.0}), Generator(1, {0.0})};

Configuration random_config(const Window& w, CounterRng& g, double p_inf, double p_bg) {
    Configuration c{std::vector<std::uint8_t>(w.site_count()), std::vector<std::uint8_t>(w.cell_count())};
    for (auto& v : c.eta) v = g.bernoulli(p_inf);
    for (auto& v : c.xi) v = g.bernoulli(p_bg);
    return c;
}

bool leq(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] > b[i]) return false;
    return true;
}

}  // namespace

TEST(Engine, NoInfectionDiesAtFirstRecovery) {
    auto cat = make_catalog(window(1, 3), {RateTable::constant(0.0, 1.3), kTrivial});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        CoupledRun run(cat, 50.0, seed);
        auto i = run.add_copy("a", make_configuration(cat->window(), {Site{}}));
        run.evolve(50.0);
        double first_rec = kInf;
        for (const auto& e : run.stream().materialize())
            if (e.location == cat->window().index(Site{})) {
                first_rec = e.time;
                break;
            }
        ASSERT_TRUE(run.copy(i).extinction_time().has_value());
        EXPECT_EQ(*run.copy(i).extinction_time(), first_rec);
    }
}

TEST(Engine, NoRecoveryGrowsLikeFirstPassage) {
    auto cat = make_catalog(window(2, 6), {RateTable::constant(0.7, 0.0), kTrivial});
    CoupledRun run(cat, 4.0, 11);
    auto a = run.add_copy("a", make_configuration(cat->window(), {Site{}}));
    auto m = run.add_maximal("max", make_configuration(cat->window(), {Site{}}).eta);
    std::size_t last = 0;
    for (double t = 0.5; t <= 4.0; t += 0.5) {
        run.evolve(t);
        EXPECT_GE(run.copy(a).infected_count(), last);
        last = run.copy(a).infected_count();
        EXPECT_EQ(run.copy(a).state().eta, run.copy(m).state().eta);
    }
}

TEST(Engine, MaximalDominatesAndEmptyStaysEmpty) {
    auto cat = make_catalog(window(1, 15), {RateTable::switching(0.5, 2.0, 1.5, 0.3, 1.0, 0.6), DynamicalPercolation{}});
    CounterRng g(4, Role::Probe);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        CoupledRun run(cat, 3.0, seed);
        auto init = random_config(cat->window(), g, 0.2, 0.5);
        auto a = run.add_copy("a", init);
        auto m = run.add_maximal("max", init.eta);
        auto z = run.add_maximal("empty", std::vector<std::uint8_t>(cat->window().site_count(), 0));
        for (double t = 0.25; t <= 3.0; t += 0.25) {
            run.evolve(t);
            ASSERT_TRUE(leq(run.copy(a).state().eta, run.copy(m).state().eta));
            ASSERT_EQ(run.copy(z).infected_count(), 0u);
        }
    }
}

// Maximal process at rate 1 in d=1: front speed is 1, so B_{10 t} is loose.
TEST(Engine, MaximalStaysInLinearBall) {
    auto cat = make_catalog(window(1, 210), {RateTable::constant(1.0, 0.0), kTrivial});
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        CoupledRun run(cat, 20.0, derive_trial_seed(5, seed));
        auto m = run.add_maximal("max", make_configuration(cat->window(), {Site{}}).eta);
        run.advance(m, 20.0);
        bool inside = true;
        for (std::size_t s = 0; s < cat->window().site_count(); ++s)
            if (run.copy(m).state().eta[s] && l1_norm(cat->window().site(s)) > 200) inside = false;
        ok += inside;
    }
    EXPECT_GE(ok, 999);
}

TEST(Engine, TruncationCertificate) {
    auto cat = make_catalog(window(1, 5), {RateTable::constant(1.0, 1.0), kTrivial});
    CoupledRun run(cat, 10.0, 3);
    auto m = run.add_maximal("max", make_configuration(cat->window(), {Site{}}).eta);
    EXPECT_TRUE(run.truncation_ok(m, 0.0).ok);
    auto b = run.add_maximal("edge", make_configuration(cat->window(), {make_site({5})}).eta);
    auto rep = run.truncation_ok(b, 0.0);
    EXPECT_FALSE(rep.ok);
    EXPECT_EQ(*rep.first_violation, 0.0);
    run.advance(m, 10.0);
    auto r = run.truncation_ok(m, 10.0);
    if (!r.ok) {
        EXPECT_GT(*r.first_violation, 0.0);
    }
}

TEST(Engine, EvolveBeyondHorizonThrows) {
    auto cat = make_catalog(window(1, 2), {RateTable::constant(1.0, 1.0), kTrivial});
    CoupledRun run(cat, 1.0, 3);
    run.add_copy("a", make_configuration(cat->window(), {Site{}}));
    EXPECT_THROW(run.evolve(2.0), StreamExhausted);
}

TEST(Engine, RestartWithCurrentStateContinuesIdentically) {
    auto cat = make_catalog(window(2, 5), {RateTable::switching(0.5, 2.0, 1.5, 0.3, 1.0, 0.6), DynamicalPercolation{}});
    CounterRng g(6, Role::Probe);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CoupledRun run(cat, 6.0, seed);
        auto a = run.add_copy("a", random_config(cat->window(), g, 0.3, 0.5));
        run.evolve(2.0);
        auto b = run.restart_copy("b", 2.0, run.copy(a).state());
        for (double t = 2.5; t <= 6.0; t += 0.5) {
            run.evolve(t);
            ASSERT_EQ(run.copy(a).state(), run.copy(b).state());
        }
        auto e = run.restart_copy("empty", 3.0, make_configuration(cat->window(), {}));
        run.evolve(6.0);
        EXPECT_EQ(run.copy(e).infected_count(), 0u);
    }
}

TEST(Engine, Additivity) {
    auto cat = make_catalog(window(2, 6), {RateTable::switching(0.5, 2.0, 1.5, 0.3, 1.0, 0.6), DynamicalPercolation{}});
    CounterRng g(7, Role::Probe);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        CoupledRun run(cat, 3.0, seed);
        auto c1 = random_config(cat->window(), g, 0.1, 0.5);
        auto c2 = c1;
        for (auto& v : c2.eta) v = g.bernoulli(0.1);
        auto cu = c1;
        for (std::size_t i = 0; i < cu.eta.size(); ++i) cu.eta[i] = c1.eta[i] | c2.eta[i];
        auto a = run.add_copy("1", c1), b = run.add_copy("2", c2), u = run.add_copy("u", cu);
        for (double t = 0.5; t <= 3.0; t += 0.5) {
            run.evolve(t);
            for (std::size_t i = 0; i < cu.eta.size(); ++i)
                ASSERT_EQ(run.copy(u).state().eta[i], run.copy(a).state().eta[i] | run.copy(b).state().eta[i]);
        }
    }
}

TEST(Engine, MonotoneSandwichAndWorstCase) {
    auto cat = make_catalog(window(2, 6), {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{0.7, 1.2, 0.8, 1.1}});
    ASSERT_TRUE(cat->diagnostics().monotone);
    CounterRng g(8, Role::Probe);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        CoupledRun run(cat, 3.0, seed);
        auto lo = random_config(cat->window(), g, 0.1, 0.4);
        auto hi = lo;
        for (auto& v : hi.eta) v |= g.bernoulli(0.2);
        for (auto& v : hi.xi) v |= g.bernoulli(0.3);
        auto zero = make_configuration(cat->window(), {Site{}}, 0);
        auto any = zero;
        for (auto& v : any.xi) v = g.bernoulli(0.5);
        auto a = run.add_copy("lo", lo), b = run.add_copy("hi", hi);
        auto w0 = run.add_copy("zero", zero), w1 = run.add_copy("any", any);
        for (double t = 0.5; t <= 3.0; t += 0.5) {
            run.evolve(t);
            ASSERT_TRUE(leq(run.copy(a).state().eta, run.copy(b).state().eta));
            ASSERT_TRUE(leq(run.copy(a).state().xi, run.copy(b).state().xi));
            ASSERT_TRUE(leq(run.copy(w0).state().eta, run.copy(w1).state().eta));
        }
    }
}

TEST(Engine, SnapshotsMatchReplay) {
    auto cat = make_catalog(window(1, 8), {RateTable::edge_linear(3.0, 1.0), DynamicalPercolation{}});
    CoupledRun run(cat, 5.0, 21, 0.25);
    auto a = run.add_copy("a", make_configuration(cat->window(), {Site{}}, 1), CopyOptions{true, false, true, {}});
    run.evolve(5.0);
    const auto& c = run.copy(a);
    ASSERT_EQ(c.snapshots().size(), 21u);
    for (const auto& s : c.snapshots()) {
        const auto eta = c.infection_at(s.time);
        std::size_t n = 0;
        for (auto v : eta) n += v;
        EXPECT_EQ(n, s.infected);
    }
    EXPECT_EQ(c.infection_at(5.0), c.state().eta);
    EXPECT_EQ(c.background_at(5.0), c.state().xi);
}

TEST(Engine, Deterministic) {
    auto cat = make_catalog(window(2, 5), {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{}});
    auto go = [&] {
        CoupledRun run(cat, 4.0, 1234);
        auto a = run.add_copy("a", make_configuration(cat->window(), {Site{}}, 1));
        run.evolve(4.0);
        return run.copy(a).infection_log().size() * 1000003u + run.copy(a).infected_count();
    };
    EXPECT_EQ(go(), go());
}

TEST(Engine, RestrictedCopyStaysInBox) {
    auto cat = make_catalog(window(1, 10), {RateTable::constant(3.0, 0.2), kTrivial});
    CoupledRun run(cat, 5.0, 2);
    CopyOptions o;
    o.restrict_to = Box::cube(1, Site{}, 2);
    auto a = run.add_copy("a", make_configuration(cat->window(), {Site{}}), o);
    auto b = run.add_copy("b", make_configuration(cat->window(), {Site{}}));
    run.evolve(5.0);
    for (std::size_t s = 0; s < cat->window().site_count(); ++s) {
        if (run.copy(a).state().eta[s]) {
            EXPECT_LE(std::abs(cat->window().site(s)[0]), 2);
        }
        EXPECT_LE(run.copy(a).state().eta[s], run.copy(b).state().eta[s]);
    }
}

TEST(Engine, ObserverStopsEarlyAndResumes) {
    auto cat = make_catalog(window(1, 10), {RateTable::constant(3.0, 0.2), kTrivial});
    CoupledRun run(cat, 5.0, 2);
    auto a = run.add_copy("a", make_configuration(cat->window(), {Site{}}));
    auto b = run.add_copy("b", make_configuration(cat->window(), {Site{}}));
    run.advance(a, 5.0, [](const Copy&, const InfectionChange& ch) { return ch.value == 1; });
    EXPECT_LT(run.copy(a).time(), 5.0);
    run.advance(a, 5.0);
    run.advance(b, 5.0);
    EXPECT_EQ(run.copy(a).state(), run.copy(b).state());
}
