#include <gtest/gtest.h>

#include <cmath>

#include "cpdre/duality.hpp"

using namespace cpdre;

namespace {

const CopyOptions kRecord{true, false, false, {}};

std::vector<std::uint8_t> indicator(const Window& w, const std::vector<Site>& xs) {
    return make_configuration(w, xs).eta;
}

std::vector<std::uint8_t> random_set(const Window& w, CounterRng& g, double p) {
    std::vector<std::uint8_t> v(w.site_count());
    for (auto& b : v) b = g.bernoulli(p);
    return v;
}

}  // namespace

TEST(Duality, MirrorRates) {
    auto sym = RateTable::edge_linear(2.0, 1.0);
    EXPECT_EQ(mirror_rates(sym), sym);
    auto sw = RateTable::switching(0.5, 2.0, 1.5, 0.3, 1.0, 0.6);
    EXPECT_EQ(mirror_rates(sw), RateTable::switching(0.5, 1.5, 2.0, 0.3, 1.0, 0.6));
    EXPECT_EQ(mirror_rates(mirror_rates(sw)), sw);
    EXPECT_EQ(mirror_rates(sw).lambda_max(), sw.lambda_max());
    const BackgroundSpec bg = DynamicalPercolation{};
    auto mono = RateTable::switching(0.5, 1.0, 1.0, 2.0, 1.0, 0.5);
    EXPECT_EQ(validate_model(mono, bg).monotone, validate_model(mirror_rates(mono), bg).monotone);
}

TEST(Duality, DualRunTrivialCases) {
    auto cat = make_catalog(window(1, 6), {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{}});
    const Window& w = cat->window();
    CoupledRun run(cat, 3.0, 1);
    auto f = run.add_copy("f", make_configuration(w, {Site{}}), kRecord);
    run.advance(f, 3.0);
    auto empty = dual_run(run, f, std::vector<std::uint8_t>(w.site_count(), 0), 3.0);
    EXPECT_FALSE(intersects(empty.eta_hat, std::vector<std::uint8_t>(w.site_count(), 1)));
    auto zero = dual_run(run, f, indicator(w, {make_site({2})}), 0.0);
    EXPECT_EQ(zero.eta_hat, indicator(w, {make_site({2})}));
}

TEST(Duality, DualRunPreconditions) {
    auto cat = make_catalog(window(1, 4), {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{}});
    const Window& w = cat->window();
    CoupledRun run(cat, 3.0, 1);
    auto plain = run.add_copy("plain", make_configuration(w, {Site{}}));
    run.advance(plain, 3.0);
    EXPECT_THROW(dual_run(run, plain, indicator(w, {Site{}}), 2.0), std::invalid_argument);
    auto late = run.restart_copy("late", 1.0, make_configuration(w, {Site{}}), kRecord);
    run.advance(late, 3.0);
    EXPECT_THROW(dual_run(run, late, indicator(w, {Site{}}), 2.0), std::invalid_argument);
    auto early = run.add_copy("early", make_configuration(w, {Site{}}), kRecord);
    run.advance(early, 1.0);
    EXPECT_THROW(dual_run(run, early, indicator(w, {Site{}}), 2.0), std::invalid_argument);
}

TEST(Duality, NoRecoveryNoInfection) {
    auto cat = make_catalog(window(1, 3), {RateTable::constant(0.0, 0.0), IndependentUpdates{Generator(1, {0.0}), Generator(1, {0.0})}});
    const Window& w = cat->window();
    CoupledRun run(cat, 2.0, 1);
    auto f = run.add_copy("f", make_configuration(w, {Site{}}), kRecord);
    auto p = conditional_duality_check(run, f, indicator(w, {Site{}}), 2.0);
    EXPECT_TRUE(p.forward);
    EXPECT_TRUE(p.dual);
}

TEST(Duality, ConditionalIdentityRandomInstances) {
    const std::vector<Model> models{
        {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{0.8, 1.2, 0.6, 0.9}},
        {RateTable::switching(0.5, 2.0, 1.5, 0.3, 1.0, 0.6), IndependentUpdates{Generator::two_state(0.7, 1.1), Generator::two_state(0.9, 0.4)}},
    };
    std::size_t violations = 0, hits = 0, n = 0;
    for (const auto& m : models) {
        auto cat = make_catalog(window(2, 4), m);
        const Window& w = cat->window();
        CounterRng g(5, Role::Probe);
        for (std::uint64_t i = 0; i < 500; ++i) {
            CoupledRun run(cat, 2.0, derive_trial_seed(7, i));
            Configuration init{random_set(w, g, 0.2), std::vector<std::uint8_t>(w.cell_count())};
            for (auto& x : init.xi) x = g.bernoulli(0.5);
            auto f = run.add_copy("f", init, kRecord);
            const double t = 0.2 + 1.8 * g.uniform();
            auto p = conditional_duality_check(run, f, random_set(w, g, 0.15), t);
            violations += !p.agree();
            hits += p.forward;
            ++n;
        }
    }
    EXPECT_EQ(violations, 0u);
    EXPECT_GT(hits, n / 10);
    EXPECT_LT(hits, n);
}

TEST(Duality, FullTargetIsSurvival) {
    auto cat = make_catalog(window(1, 8), {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{}});
    const Window& w = cat->window();
    for (std::uint64_t i = 0; i < 100; ++i) {
        CoupledRun run(cat, 3.0, i);
        auto f = run.add_copy("f", make_configuration(w, {Site{}}), kRecord);
        auto p = conditional_duality_check(run, f, std::vector<std::uint8_t>(w.site_count(), 1), 3.0);
        EXPECT_EQ(p.forward, !run.copy(f).extinct());
        EXPECT_TRUE(p.agree());
    }
}

TEST(Duality, SampleStationaryMarginals) {
    auto cat = make_catalog(window(1, 50), {RateTable::edge_linear(1.0, 1.0), DynamicalPercolation{0.5, 1.5, 2.0, 1.0}});
    CounterRng g(3, Role::Stationary);
    double sites = 0, edges = 0, ns = 0, ne = 0;
    for (int r = 0; r < 200; ++r) {
        auto xi = sample_stationary(*cat, g);
        for (std::size_t c = 0; c < xi.size(); ++c) {
            if (cat->window().is_site_cell(c)) {
                sites += xi[c];
                ++ns;
            } else {
                edges += xi[c];
                ++ne;
            }
        }
    }
    EXPECT_NEAR(sites / ns, 0.25, 4 * std::sqrt(0.25 * 0.75 / ns));
    EXPECT_NEAR(edges / ne, 2.0 / 3.0, 4 * std::sqrt(2.0 / 9.0 / ne));
}

TEST(Duality, StationaryTimeZero) {
    const Window w = window(1, 4);
    const Model m{RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{}};
    auto r = stationary_duality_check(w, m, indicator(w, {Site{}}), indicator(w, {Site{}, make_site({1})}), 0.0, 20, 1);
    EXPECT_EQ(r.hits_forward, 20u);
    EXPECT_EQ(r.hits_dual, 20u);
    auto s = stationary_duality_check(w, m, indicator(w, {Site{}}), indicator(w, {make_site({1})}), 0.0, 20, 1);
    EXPECT_EQ(s.hits_forward, 0u);
    EXPECT_EQ(s.hits_dual, 0u);
}

// lambda = 0: both sides are the survival of an isolated site, e^{-r t}.
TEST(Duality, StationaryClosedForm) {
    const Window w = window(1, 3);
    const Model m{RateTable::edge_linear(0.0, 1.0), DynamicalPercolation{}};
    const double t = 0.7, p = std::exp(-t);
    const std::size_t n = 4000;
    auto r = stationary_duality_check(w, m, indicator(w, {Site{}}), indicator(w, {Site{}}), t, n, 2);
    const double se = std::sqrt(p * (1 - p) / static_cast<double>(n));
    EXPECT_NEAR(r.p_forward, p, 4 * se);
    EXPECT_NEAR(r.p_dual, p, 4 * se);
}

TEST(Duality, StationarySelfDualSmall) {
    const Window w = window(1, 8);
    const Model m{RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{1.0, 1.0, 1.0, 1.0}};
    auto r = stationary_duality_check(w, m, indicator(w, {Site{}}), indicator(w, {make_site({1}), make_site({2})}), 2.0, 5000, 3);
    EXPECT_LT(std::abs(r.z), 4.0);
}

TEST(Duality, NonReversibleRefused) {
    Generator cyc(3, {-1, 1, 0, 0, -1, 1, 1, 0, -1});
    std::vector<double> lam(27, 1.0);
    const Model m{RateTable(2, lam, {1, 1, 1}), IndependentUpdates{cyc, cyc}};
    const Window w = window(1, 2);
    EXPECT_THROW(stationary_duality_check(w, m, indicator(w, {Site{}}), indicator(w, {Site{}}), 1.0, 10, 1), std::invalid_argument);
}

TEST(Duality, ReversedBackgroundPathsMatch) {
    auto cat = make_catalog(window(1, 1), {RateTable::edge_linear(1.0, 1.0), DynamicalPercolation{0.6, 1.4, 0.6, 1.4}});
    auto r = reversal_check(cat, 0, 2.0, 4000, 4);
    EXPECT_GT(r.ks.p, 0.001);
    EXPECT_EQ(r.forward.size(), 4000u);
}
