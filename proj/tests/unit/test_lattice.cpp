#include <gtest/gtest.h>

#include <set>

#include "cpdre/lattice.hpp"

using namespace cpdre;

TEST(Lattice, L1NormExamples) {
    EXPECT_EQ(l1_norm(make_site({0, 0})), 0);
    EXPECT_EQ(l1_norm(make_site({2, -3})), 5);
    EXPECT_EQ(l1_norm(make_site({1, 1, 1})), 3);
}

TEST(Lattice, BallExamples) {
    auto b1 = ball(1, Site{}, 1);
    ASSERT_EQ(b1.size(), 3u);
    EXPECT_EQ(b1[0], make_site({-1}));
    EXPECT_EQ(b1[2], make_site({1}));
    EXPECT_EQ(ball(1, Site{}, 2).size(), 5u);
    EXPECT_EQ(ball(3, Site{}, 2).size(), 25u);
}

// Brute force over a bounding box for the ball cardinality.
TEST(Lattice, BallMatchesBoxEnumeration) {
    for (int d = 1; d <= 3; ++d)
        for (int r = 0; r <= 4; ++r) {
            std::size_t n = 0;
            Box::cube(d, Site{}, r).for_each([&](const Site& x) { n += l1_norm(x) <= r; });
            EXPECT_EQ(ball(r, Site{}, d).size(), n) << "d=" << d << " r=" << r;
        }
}

TEST(Lattice, BallSymmetricAndTranslationEquivariant) {
    const Site c = make_site({3, -2, 1});
    for (int d = 1; d <= 3; ++d) {
        Site cd;
        for (int i = 0; i < d; ++i) cd[i] = c[i];
        auto b0 = ball(2.5, Site{}, d);
        auto bx = ball(2.5, cd, d);
        ASSERT_EQ(b0.size(), bx.size());
        std::set<Site> s0(b0.begin(), b0.end());
        for (std::size_t i = 0; i < b0.size(); ++i) EXPECT_EQ(bx[i], b0[i] + cd);
        for (int i = 0; i < d; ++i)
            for (Site y : b0) {
                y[i] = -y[i];
                EXPECT_TRUE(s0.count(y));
            }
    }
}

TEST(Lattice, EdgeBallExamples) {
    EXPECT_EQ(edge_ball(0, Site{}, 1).size(), 2u);
    EXPECT_EQ(edge_ball(0, Site{}, 2).size(), 4u);
    EXPECT_EQ(edge_ball(1, Site{}, 2).size(), 16u);
}

TEST(Lattice, EdgeBallProperties) {
    for (int d = 1; d <= 3; ++d) {
        const Site c = unit(0, 2);
        auto sites = ball(2, c, d);
        std::set<Site> in(sites.begin(), sites.end());
        auto edges = edge_ball(2, c, d);
        std::set<Edge> es(edges.begin(), edges.end());
        for (const Edge& e : edges) EXPECT_TRUE(in.count(e.a) || in.count(e.b));
        for (const Site& x : sites)
            for (int i = 0; i < d; ++i) {
                const Site y = x + unit(i);
                if (in.count(y)) { EXPECT_TRUE(es.count(Edge(x, y))); }
            }
    }
}

TEST(Lattice, EdgeRequiresNeighbors) {
    EXPECT_THROW(Edge(Site{}, make_site({1, 1})), std::invalid_argument);
    EXPECT_EQ(Edge(unit(0), Site{}).a, Site{});
}

TEST(Lattice, WindowExamples) {
    auto w1 = window(1, 2);
    EXPECT_EQ(w1.site_count(), 5u);
    EXPECT_EQ(w1.edge_count(), 6u);
    auto w2 = window(2, 0);
    EXPECT_EQ(w2.site_count(), 1u);
    EXPECT_EQ(w2.edge_count(), 4u);
    EXPECT_EQ(window(2, 1).site_count(), 9u);
}

TEST(Lattice, WindowExhaustive) {
    for (int d = 1; d <= 3; ++d)
        for (int L = 0; L <= 3; ++L) {
            auto w = window(d, L);
            std::size_t expect = 1;
            for (int i = 0; i < d; ++i) expect *= static_cast<std::size_t>(2 * L + 1);
            ASSERT_EQ(w.site_count(), expect);
            std::set<Site> seen;
            for (std::size_t s = 0; s < w.site_count(); ++s) {
                const Site x = w.site(s);
                EXPECT_LE(linf_norm(x), L);
                EXPECT_EQ(w.index(x), s);
                seen.insert(x);
            }
            EXPECT_EQ(seen.size(), expect);
            // Edges meeting V_L, counted by brute force.
            std::set<Edge> ebrute;
            for (const Site& x : seen)
                for (int i = 0; i < d; ++i) {
                    ebrute.emplace(x, x + unit(i));
                    ebrute.emplace(x, x - unit(i));
                }
            ASSERT_EQ(w.edge_count(), ebrute.size());
            for (std::size_t c = w.site_count(); c < w.cell_count(); ++c) {
                const Edge e = w.edge(c);
                EXPECT_TRUE(ebrute.count(e));
                EXPECT_EQ(*w.find(e), c);
            }
        }
}

TEST(Lattice, ArrowsAndIncidence) {
    auto w = window(2, 2);
    // Directed edges with both endpoints inside: 2 * d * (2L+1)^(d-1) * 2L.
    EXPECT_EQ(w.arrows().size(), 2u * 2u * 5u * 4u);
    for (std::size_t s = 0; s < w.site_count(); ++s) EXPECT_EQ(w.incident_edges(static_cast<std::uint32_t>(s)).size(), 4u);
    for (const auto& a : w.arrows()) {
        const Edge e = w.edge(a.edge);
        EXPECT_EQ(Edge(w.site(a.from), w.site(a.to)), e);
    }
}

TEST(Lattice, RejectsDimension) {
    EXPECT_THROW(window(4, 1), std::invalid_argument);
    EXPECT_THROW(window(0, 1), std::invalid_argument);
    EXPECT_THROW(window(1, -1), std::invalid_argument);
}

TEST(Lattice, GeneralBoxWindow) {
    Box b{1, make_site({0}), make_site({1})};
    Window w(b);
    EXPECT_EQ(w.site_count(), 2u);
    EXPECT_EQ(w.edge_count(), 3u);
    EXPECT_EQ(w.arrows().size(), 2u);
    EXPECT_EQ(w.depth(make_site({0})), 0);
}
