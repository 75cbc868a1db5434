#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "engine.hpp"
#include "graphical.hpp"

namespace cpdre {

inline constexpr std::size_t kMaxOracleStates = 4096;

// Exact CTMC of (eta, xi) on a closed micro-window: sites of the box plus
// the edges between them. Infection never crosses the box boundary.
class ExactChain {
public:
    ExactChain(const Box& box, const Model& model) : window_(box), model_(model) {
        validate_model(model.rates, model.background);
        if (std::holds_alternative<SpinSystem>(model.background))
            throw std::invalid_argument("oracle: spin-system backgrounds are not supported");
        const std::size_t ns = window_.site_count();
        for (const auto& a : window_.arrows())
            if (std::find(edges_.begin(), edges_.end(), a.edge) == edges_.end()) edges_.push_back(a.edge);
        std::sort(edges_.begin(), edges_.end());
        m_ = static_cast<std::size_t>(model.rates.states());
        bg_cells_ = ns + edges_.size();
        double count = std::pow(2.0, static_cast<double>(ns)) * std::pow(static_cast<double>(m_), static_cast<double>(bg_cells_));
        if (count > static_cast<double>(kMaxOracleStates))
            throw std::invalid_argument("oracle: state space of " + std::to_string(static_cast<long long>(count)) +
                                        " exceeds " + std::to_string(kMaxOracleStates));
        n_states_ = static_cast<std::size_t>(count);
        build_background_generators();
        assemble();
    }

    std::size_t size() const { return n_states_; }
    const Window& window() const { return window_; }
    const std::vector<std::uint32_t>& internal_edges() const { return edges_; }
    const std::vector<std::vector<std::pair<std::size_t, double>>>& rows() const { return rows_; }
    double exit_rate(std::size_t s) const { return exit_[s]; }

    // Generator entry by search; for tests.
    double q(std::size_t i, std::size_t j) const {
        if (i == j) return -exit_[i];
        for (const auto& [k, r] : rows_[i])
            if (k == j) return r;
        return 0.0;
    }

    // State encoding: eta bits (site s -> bit s), then background digits base N+1
    // over sites then internal edges.
    std::size_t encode(const std::vector<std::uint8_t>& eta, const std::vector<std::uint8_t>& bg) const {
        std::size_t code = 0;
        for (std::size_t c = bg_cells_; c-- > 0;) code = code * m_ + bg[c];
        for (std::size_t s = eta.size(); s-- > 0;) code = code * 2 + eta[s];
        return code;
    }
    void decode(std::size_t code, std::vector<std::uint8_t>& eta, std::vector<std::uint8_t>& bg) const {
        eta.assign(window_.site_count(), 0);
        bg.assign(bg_cells_, 0);
        for (auto& e : eta) {
            e = static_cast<std::uint8_t>(code % 2);
            code /= 2;
        }
        for (auto& b : bg) {
            b = static_cast<std::uint8_t>(code % m_);
            code /= m_;
        }
    }

    // Projects a simulator configuration on the same box (boundary edges dropped).
    std::size_t project(const Configuration& c) const {
        std::vector<std::uint8_t> bg(bg_cells_);
        const std::size_t ns = window_.site_count();
        for (std::size_t s = 0; s < ns; ++s) bg[s] = c.xi[s];
        for (std::size_t k = 0; k < edges_.size(); ++k) bg[ns + k] = c.xi[edges_[k]];
        return encode(c.eta, bg);
    }

    std::size_t infected_bits(std::size_t code) const { return code % (std::size_t{1} << window_.site_count()); }

    // Makes every state with eta(site)=1 absorbing; used for first-passage laws.
    void absorb_on_infection(std::uint32_t site) {
        for (std::size_t s = 0; s < n_states_; ++s)
            if ((s >> site) & 1u) {
                rows_[s].clear();
                exit_[s] = 0;
            }
    }

private:
    void build_background_generators() {
        if (const auto* iu = std::get_if<IndependentUpdates>(&model_.background)) {
            qsite_ = iu->site;
            qedge_ = iu->edge;
        } else {
            const auto& dp = std::get<DynamicalPercolation>(model_.background);
            qsite_ = Generator::two_state(dp.alpha_v, dp.beta_v);
            qedge_ = Generator::two_state(dp.alpha_e, dp.beta_e);
        }
    }

    void assemble() {
        rows_.assign(n_states_, {});
        exit_.assign(n_states_, 0.0);
        const std::size_t ns = window_.site_count();
        std::vector<std::uint8_t> eta, bg;
        std::vector<std::uint8_t> cellxi(window_.cell_count(), 0);
        for (std::size_t s = 0; s < n_states_; ++s) {
            decode(s, eta, bg);
            for (std::size_t c = 0; c < ns; ++c) cellxi[c] = bg[c];
            for (std::size_t k = 0; k < edges_.size(); ++k) cellxi[edges_[k]] = bg[ns + k];
            auto add = [&](std::vector<std::uint8_t> e2, std::vector<std::uint8_t> b2, double rate) {
                if (rate <= 0) return;
                const std::size_t t = encode(e2, b2);
                auto it = std::find_if(rows_[s].begin(), rows_[s].end(), [&](const auto& p) { return p.first == t; });
                if (it == rows_[s].end())
                    rows_[s].emplace_back(t, rate);
                else
                    it->second += rate;
                exit_[s] += rate;
            };
            for (const auto& a : window_.arrows())
                if (eta[a.from] && !eta[a.to]) {
                    auto e2 = eta;
                    e2[a.to] = 1;
                    add(e2, bg, model_.rates.lambda(cellxi[a.from], cellxi[a.edge], cellxi[a.to]));
                }
            for (std::size_t x = 0; x < ns; ++x)
                if (eta[x]) {
                    auto e2 = eta;
                    e2[x] = 0;
                    add(e2, bg, model_.rates.recovery(cellxi[x]));
                }
            for (std::size_t c = 0; c < bg_cells_; ++c) {
                const Generator& Q = c < ns ? qsite_ : qedge_;
                for (std::size_t j = 0; j < m_; ++j) {
                    if (j == bg[c]) continue;
                    auto b2 = bg;
                    b2[c] = static_cast<std::uint8_t>(j);
                    add(eta, b2, Q(bg[c], j));
                }
            }
            std::sort(rows_[s].begin(), rows_[s].end());
        }
    }

    Window window_;
    Model model_;
    std::vector<std::uint32_t> edges_;
    std::size_t m_ = 1, bg_cells_ = 0, n_states_ = 0;
    Generator qsite_, qedge_;
    std::vector<std::vector<std::pair<std::size_t, double>>> rows_;
    std::vector<double> exit_;
};

// Uniformization: p(t) = sum_k Pois(k; Lt) p0 P^k with P = I + Q/L, truncated
// once the remaining Poisson mass is below tol.
inline std::vector<double> transient_dist(const ExactChain& chain, const std::vector<double>& p0, double t,
                                          double tol = 1e-10) {
    if (t < 0) throw std::invalid_argument("transient_dist: t must be >= 0");
    const std::size_t n = chain.size();
    if (p0.size() != n) throw std::invalid_argument("transient_dist: initial law has the wrong size");
    double L = 0;
    for (std::size_t s = 0; s < n; ++s) L = std::max(L, chain.exit_rate(s));
    if (t == 0 || L == 0) return p0;
    const double lt = L * t;
    std::vector<double> cur = p0, next(n), out(n, 0.0);
    double mass = 0;
    for (std::size_t k = 0;; ++k) {
        const double w = std::exp(-lt + static_cast<double>(k) * std::log(lt) - std::lgamma(static_cast<double>(k) + 1.0));
        for (std::size_t s = 0; s < n; ++s) out[s] += w * cur[s];
        mass += w;
        if (1.0 - mass < tol && static_cast<double>(k) > lt) break;
        if (k > 100000) throw std::runtime_error("transient_dist: uniformization did not converge");
        for (std::size_t s = 0; s < n; ++s) next[s] = cur[s] * (1.0 - chain.exit_rate(s) / L);
        for (std::size_t s = 0; s < n; ++s) {
            if (cur[s] == 0) continue;
            for (const auto& [j, r] : chain.rows()[s]) next[j] += cur[s] * r / L;
        }
        std::swap(cur, next);
    }
    return out;
}

inline std::vector<double> point_mass(std::size_t n, std::size_t i) {
    std::vector<double> p(n, 0.0);
    p.at(i) = 1.0;
    return p;
}

struct OracleComparison {
    std::vector<double> z;
    double max_abs_z = 0;
    std::size_t n_trials = 0;
};

// Per-state z = (phat - p) / sqrt(p(1-p)/n); states with p in {0,1} give
// z = 0 when matched exactly and +inf otherwise.
inline OracleComparison compare_mc(const std::vector<double>& exact, const std::vector<std::size_t>& counts,
                                   std::size_t n_trials) {
    if (n_trials == 0) throw std::invalid_argument("compare_mc: zero trials");
    if (exact.size() != counts.size()) throw std::invalid_argument("compare_mc: mismatched state spaces");
    OracleComparison c;
    c.n_trials = n_trials;
    const double n = static_cast<double>(n_trials);
    for (std::size_t s = 0; s < exact.size(); ++s) {
        const double p = std::clamp(exact[s], 0.0, 1.0);
        const double ph = static_cast<double>(counts[s]) / n;
        double z;
        const double var = p * (1 - p) / n;
        if (var < 1e-300)
            z = std::abs(ph - p) < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
        else
            z = (ph - p) / std::sqrt(var);
        c.z.push_back(z);
        c.max_abs_z = std::max(c.max_abs_z, std::abs(z));
    }
    return c;
}

struct MicroCase {
    std::string name;
    Box box;
    Model model;
    std::vector<Site> infected;  // initial infection, background all zero
};

// The four reference instances used to anchor the simulator.
inline std::vector<MicroCase> micro_cases() {
    const Box one{1, Site{}, Site{}};
    const Box two{1, Site{}, make_site({1})};
    const IndependentUpdates trivial{Generator(1, {0.0}), Generator(1, {0.0})};
    return {
        {"cpdp_1site", one, {RateTable(1, {0, 0, 2, 2, 0, 0, 2, 2}, {1.2, 0.6}), DynamicalPercolation{0.8, 1.3, 1.0, 1.0}}, {Site{}}},
        {"cp_2site_n0", two, {RateTable::constant(1.5, 1.0), trivial}, {Site{}}},
        {"switching_2site", two,
         {RateTable::switching(0.5, 2.0, 1.5, 0.3, 1.0, 0.6),
          IndependentUpdates{Generator::two_state(0.7, 1.1), Generator::two_state(0.9, 0.4)}},
         {Site{}}},
        {"dyngraph_1edge", two, {RateTable::edge_linear(2.0, 1.0), DynamicalPercolation{1.0, 1.0, 1.0, 1.0}}, {Site{}}},
    };
}

inline std::size_t initial_state(const ExactChain& chain, const MicroCase& mc) {
    return chain.project(make_configuration(chain.window(), mc.infected));
}

// Chain states of one simulated trajectory at each (ascending) time.
inline std::vector<std::size_t> simulate_trial(const ExactChain& chain, std::shared_ptr<const Catalog> cat, const MicroCase& mc,
                                               const std::vector<double>& times, std::uint64_t seed) {
    CopyOptions opt;
    opt.snapshots = false;
    CoupledRun run(std::move(cat), times.back(), seed);
    auto c = run.add_copy("sim", make_configuration(chain.window(), mc.infected), opt);
    std::vector<std::size_t> out;
    for (double t : times) {
        run.advance(c, t);
        out.push_back(chain.project(run.copy(c).state()));
    }
    return out;
}

// Simulator state counts at each time; one run per trial up to the last time.
inline std::vector<std::vector<std::size_t>> simulate_counts(const ExactChain& chain, const MicroCase& mc,
                                                             const std::vector<double>& times, std::size_t trials,
                                                             std::uint64_t seed, std::size_t first_trial = 0) {
    if (times.empty() || !std::is_sorted(times.begin(), times.end())) throw std::invalid_argument("simulate_counts: times must be ascending");
    auto cat = make_catalog(chain.window(), mc.model);
    std::vector<std::vector<std::size_t>> counts(times.size(), std::vector<std::size_t>(chain.size(), 0));
    for (std::size_t i = first_trial; i < first_trial + trials; ++i) {
        const auto st = simulate_trial(chain, cat, mc, times, derive_trial_seed(seed, i));
        for (std::size_t k = 0; k < times.size(); ++k) ++counts[k][st[k]];
    }
    return counts;
}

}  // namespace cpdre
