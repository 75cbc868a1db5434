#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cpdre {

struct ModelError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline void require_rate(double v, const std::string& what) {
    if (!std::isfinite(v) || v < 0) throw ModelError(what + " must be finite and >= 0, got " + std::to_string(v));
}

class RateTable {
public:
    RateTable() : RateTable(0, {0.0}, {0.0}) {}
    RateTable(int N, std::vector<double> lambda, std::vector<double> r)
        : N_(N), lambda_(std::move(lambda)), r_(std::move(r)) {
        if (N < 0) throw ModelError("N must be >= 0");
        const auto m = static_cast<std::size_t>(N + 1);
        if (lambda_.size() != m * m * m) throw ModelError("lambda table must have (N+1)^3 entries");
        if (r_.size() != m) throw ModelError("recovery table must have N+1 entries");
        for (double v : lambda_) require_rate(v, "infection rate");
        for (double v : r_) require_rate(v, "recovery rate");
    }

    static RateTable constant(double lambda, double r) { return RateTable(0, {lambda}, {r}); }
    // Dynamical-graph model: infection only across open edges.
    static RateTable edge_linear(double lambda, double r) {
        std::vector<double> l(8);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k) l[static_cast<std::size_t>(i * 4 + j * 2 + k)] = lambda * j;
        return RateTable(1, l, {r, r});
    }
    // Switching model: rate lambda_{ik} from a site in state i to one in state k.
    static RateTable switching(double l00, double l01, double l10, double l11, double r0, double r1) {
        std::vector<double> l(8);
        const double t[2][2] = {{l00, l01}, {l10, l11}};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k) l[static_cast<std::size_t>(i * 4 + j * 2 + k)] = t[i][k];
        return RateTable(1, l, {r0, r1});
    }

    int levels() const { return N_; }
    int states() const { return N_ + 1; }
    std::size_t triple(int i, int j, int k) const {
        const auto m = static_cast<std::size_t>(N_ + 1);
        return (static_cast<std::size_t>(i) * m + static_cast<std::size_t>(j)) * m + static_cast<std::size_t>(k);
    }
    double lambda(int i, int j, int k) const { return lambda_[triple(i, j, k)]; }
    double lambda_at(std::size_t t) const { return lambda_[t]; }
    double recovery(int b) const { return r_[static_cast<std::size_t>(b)]; }
    const std::vector<double>& lambda_values() const { return lambda_; }
    const std::vector<double>& recovery_values() const { return r_; }
    double lambda_max() const { return *std::max_element(lambda_.begin(), lambda_.end()); }

    bool operator==(const RateTable&) const = default;

private:
    int N_;
    std::vector<double> lambda_, r_;
};

// Dense generator of a finite chain, row-major.
struct Generator {
    std::size_t n = 0;
    std::vector<double> q;

    Generator() = default;
    Generator(std::size_t n_, std::vector<double> q_) : n(n_), q(std::move(q_)) {
        if (q.size() != n * n) throw ModelError("generator must be square");
    }
    static Generator two_state(double up, double down) { return Generator(2, {-up, up, down, -down}); }

    double operator()(std::size_t i, std::size_t j) const { return q[i * n + j]; }
    double exit_rate(std::size_t i) const { return -q[i * n + i]; }
};

struct IndependentUpdates {
    Generator site, edge;
};

struct DynamicalPercolation {
    double alpha_v = 1, beta_v = 1, alpha_e = 1, beta_e = 1;
};

// Attractive binary spin system. The flip rate of a cell depends on the
// number of same-kind cells in state 1 within l1 distance `range` (distance
// between midpoints for edges); counts beyond the table reuse its last entry.
struct SpinRates {
    std::vector<double> up{1.0}, down{1.0};

    double up_at(std::size_t count) const { return up[std::min(count, up.size() - 1)]; }
    double down_at(std::size_t count) const { return down[std::min(count, down.size() - 1)]; }
};

struct SpinSystem {
    int range = 0;
    SpinRates site, edge;
};

using BackgroundSpec = std::variant<IndependentUpdates, DynamicalPercolation, SpinSystem>;

inline int background_states(const BackgroundSpec& bg) {
    if (const auto* iu = std::get_if<IndependentUpdates>(&bg)) return static_cast<int>(iu->site.n);
    return 2;
}

inline int spin_range(const BackgroundSpec& bg) {
    if (const auto* s = std::get_if<SpinSystem>(&bg)) return s->range;
    return 0;
}

struct LevelOrdering {
    std::vector<int> F;        // triple index -> rank in 1..(N+1)^3
    std::vector<std::size_t> a;  // rank-1 -> triple index
    std::vector<int> G;        // level -> rank in 1..N+1
    std::vector<int> b;        // rank-1 -> level
};

inline LevelOrdering level_ordering(const RateTable& rt) {
    LevelOrdering o;
    const auto& l = rt.lambda_values();
    o.a.resize(l.size());
    std::iota(o.a.begin(), o.a.end(), std::size_t{0});
    std::stable_sort(o.a.begin(), o.a.end(), [&](std::size_t x, std::size_t y) { return l[x] < l[y]; });
    o.F.resize(l.size());
    for (std::size_t k = 0; k < o.a.size(); ++k) o.F[o.a[k]] = static_cast<int>(k + 1);

    const auto& r = rt.recovery_values();
    o.b.resize(r.size());
    std::iota(o.b.begin(), o.b.end(), 0);
    std::stable_sort(o.b.begin(), o.b.end(), [&](int x, int y) { return r[static_cast<std::size_t>(x)] > r[static_cast<std::size_t>(y)]; });
    o.G.resize(r.size());
    for (std::size_t k = 0; k < o.b.size(); ++k) o.G[static_cast<std::size_t>(o.b[k])] = static_cast<int>(k + 1);
    return o;
}

inline void validate_generator(const Generator& Q, const std::string& name) {
    if (Q.n == 0) throw ModelError(name + ": empty generator");
    for (std::size_t i = 0; i < Q.n; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < Q.n; ++j) {
            const double v = Q(i, j);
            if (!std::isfinite(v)) throw ModelError(name + ": non-finite entry");
            if (i != j && v < 0) throw ModelError(name + ": negative off-diagonal rate");
            row += v;
        }
        if (std::abs(row) > 1e-9 * (1 + Q.exit_rate(i))) throw ModelError(name + ": rows must sum to 0");
    }
}

inline bool irreducible(const Generator& Q) {
    const std::size_t n = Q.n;
    auto reach_all = [&](bool transpose) {
        std::vector<char> seen(n, 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < n; ++j) {
                const double v = transpose ? Q(j, i) : Q(i, j);
                if (j != i && v > 0 && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    };
    return reach_all(false) && reach_all(true);
}

// Solves pi Q = 0, sum pi = 1 by Gaussian elimination with partial pivoting.
inline std::vector<double> stationary_dist(const Generator& Q) {
    validate_generator(Q, "stationary_dist");
    if (!irreducible(Q)) throw ModelError("stationary_dist: generator is reducible");
    const std::size_t n = Q.n;
    // Rows of A are the equations: A = Q^T with the last row replaced by ones.
    std::vector<double> A(n * n), rhs(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) A[i * n + j] = Q(j, i);
    for (std::size_t j = 0; j < n; ++j) A[(n - 1) * n + j] = 1.0;
    rhs[n - 1] = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(A[r * n + c]) > std::abs(A[p * n + c])) p = r;
        if (std::abs(A[p * n + c]) < 1e-300) throw ModelError("stationary_dist: singular system");
        if (p != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(A[p * n + j], A[c * n + j]);
            std::swap(rhs[p], rhs[c]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = A[r * n + c] / A[c * n + c];
            if (f == 0) continue;
            for (std::size_t j = c; j < n; ++j) A[r * n + j] -= f * A[c * n + j];
            rhs[r] -= f * rhs[c];
        }
    }
    std::vector<double> pi(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = rhs[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= A[i * n + j] * pi[j];
        pi[i] = s / A[i * n + i];
    }
    for (double& v : pi) v = std::max(v, 0.0);
    const double tot = std::accumulate(pi.begin(), pi.end(), 0.0);
    for (double& v : pi) v /= tot;
    return pi;
}

inline bool check_reversible(const Generator& Q, const std::vector<double>& pi, double tol = 1e-10) {
    for (std::size_t i = 0; i < Q.n; ++i)
        for (std::size_t j = i + 1; j < Q.n; ++j)
            if (std::abs(pi[i] * Q(i, j) - pi[j] * Q(j, i)) > tol) return false;
    return true;
}

// Uniformization constant making I + Q/Lambda stochastically monotone
// whenever Q admits a monotone coupling at all.
inline double uniformization_rate(const Generator& Q) {
    double lam = 0;
    for (std::size_t i = 0; i < Q.n; ++i) {
        lam = std::max(lam, Q.exit_rate(i));
        for (std::size_t j = i + 1; j < Q.n; ++j) lam = std::max(lam, Q.exit_rate(i) + Q.exit_rate(j));
    }
    return lam;
}

inline bool stochastically_monotone(const Generator& Q) {
    const double lam = uniformization_rate(Q);
    if (lam == 0) return true;
    const std::size_t n = Q.n;
    auto P = [&](std::size_t i, std::size_t j) { return (i == j ? 1.0 : 0.0) + Q(i, j) / lam; };
    for (std::size_t m = 1; m < n; ++m) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
            double up_i = 0, up_j = 0;
            for (std::size_t k = m; k < n; ++k) up_i += P(i, k), up_j += P(i + 1, k);
            if (up_i > up_j + 1e-12) return false;
        }
    }
    return true;
}

// A single-cell background map: new level as a function of the old one.
struct LevelMap {
    std::vector<std::uint8_t> target;
    double rate;
};

// Quantile coupling of the uniformized kernel; identity maps are dropped.
inline std::vector<LevelMap> quantile_maps(const Generator& Q) {
    const double lam = uniformization_rate(Q);
    std::vector<LevelMap> maps;
    if (lam == 0) return maps;
    const std::size_t n = Q.n;
    std::vector<std::vector<double>> cum(n, std::vector<double>(n));
    std::vector<double> cuts;
    for (std::size_t i = 0; i < n; ++i) {
        double c = 0;
        for (std::size_t k = 0; k < n; ++k) {
            c += (i == k ? 1.0 : 0.0) + Q(i, k) / lam;
            cum[i][k] = c;
            cuts.push_back(std::min(c, 1.0));
        }
        cum[i][n - 1] = 1.0;
    }
    cuts.push_back(0.0);
    cuts.push_back(1.0);
    std::sort(cuts.begin(), cuts.end());
    double prev = 0.0;
    for (double c : cuts) {
        if (c - prev <= 1e-14) continue;
        const double mid = 0.5 * (prev + c);
        LevelMap m{std::vector<std::uint8_t>(n), lam * (c - prev)};
        bool identity = true;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t k = 0;
            while (k + 1 < n && cum[i][k] < mid) ++k;
            m.target[i] = static_cast<std::uint8_t>(k);
            identity = identity && k == i;
        }
        prev = c;
        if (identity) continue;
        auto same = std::find_if(maps.begin(), maps.end(), [&](const LevelMap& o) { return o.target == m.target; });
        if (same != maps.end())
            same->rate += m.rate;
        else
            maps.push_back(std::move(m));
    }
    return maps;
}

struct SpinBounds {
    double alpha_v_lo, beta_v_hi, alpha_e_lo, beta_e_hi;
};

inline SpinBounds spin_bounds(const SpinSystem& s) {
    auto mn = [](const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); };
    auto mx = [](const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); };
    return {mn(s.site.up), mx(s.site.down), mn(s.edge.up), mx(s.edge.down)};
}

struct ModelDiagnostics {
    bool monotone = false;
    bool rates_monotone = false;
    bool background_monotone = false;
    bool worst_case_necessary = false;
    bool reversible = false;
    std::vector<std::string> messages;
};

inline void validate_spin_rates(const SpinRates& s, const std::string& kind) {
    if (s.up.empty() || s.down.empty()) throw ModelError(kind + " spin rate tables must be nonempty");
    for (double v : s.up) require_rate(v, kind + " up-flip rate");
    for (double v : s.down) require_rate(v, kind + " down-flip rate");
}

inline ModelDiagnostics validate_model(const RateTable& rt, const BackgroundSpec& bg) {
    ModelDiagnostics d;
    const int states = background_states(bg);
    if (states != rt.states())
        throw ModelError("background has " + std::to_string(states) + " levels but the rate table has N+1=" +
                         std::to_string(rt.states()));

    const int m = rt.states();
    bool lam_mono = true;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            for (int k = 0; k < m; ++k) {
                const double v = rt.lambda(i, j, k);
                if (i + 1 < m && rt.lambda(i + 1, j, k) < v) lam_mono = false;
                if (j + 1 < m && rt.lambda(i, j + 1, k) < v) lam_mono = false;
                if (k + 1 < m && rt.lambda(i, j, k + 1) < v) lam_mono = false;
            }
    bool r_mono = true;
    for (int b = 0; b + 1 < m; ++b)
        if (rt.recovery(b + 1) > rt.recovery(b)) r_mono = false;
    if (!lam_mono) d.messages.push_back("infection rates are not nondecreasing in the background");
    if (!r_mono) d.messages.push_back("recovery rates are not nonincreasing in the background");
    d.rates_monotone = lam_mono && r_mono;

    const double lmin = *std::min_element(rt.lambda_values().begin(), rt.lambda_values().end());
    const double rmax = *std::max_element(rt.recovery_values().begin(), rt.recovery_values().end());
    d.worst_case_necessary = rt.lambda(0, 0, 0) == lmin && rt.recovery(0) == rmax;
    if (!d.worst_case_necessary) d.messages.push_back("the all-zero background is not the worst case for the rates");

    std::visit(
        [&](const auto& spec) {
            using T = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<T, IndependentUpdates>) {
                validate_generator(spec.site, "site generator");
                validate_generator(spec.edge, "edge generator");
                if (spec.site.n != spec.edge.n) throw ModelError("site and edge generators differ in size");
                if (!irreducible(spec.site) || !irreducible(spec.edge)) throw ModelError("background generators must be irreducible");
                d.background_monotone = stochastically_monotone(spec.site) && stochastically_monotone(spec.edge);
                d.reversible = check_reversible(spec.site, stationary_dist(spec.site)) &&
                               check_reversible(spec.edge, stationary_dist(spec.edge));
            } else if constexpr (std::is_same_v<T, DynamicalPercolation>) {
                for (double v : {spec.alpha_v, spec.beta_v, spec.alpha_e, spec.beta_e})
                    if (!std::isfinite(v) || v <= 0) throw ModelError("dynamical percolation rates must be > 0");
                d.background_monotone = true;
                d.reversible = true;
            } else {
                if (spec.range < 0) throw ModelError("spin range must be >= 0");
                validate_spin_rates(spec.site, "site");
                validate_spin_rates(spec.edge, "edge");
                auto attractive = [](const SpinRates& s) {
                    return std::is_sorted(s.up.begin(), s.up.end()) &&
                           std::is_sorted(s.down.begin(), s.down.end(), std::greater<>());
                };
                if (!attractive(spec.site) || !attractive(spec.edge))
                    throw ModelError("spin system must be attractive: up rates nondecreasing and down rates "
                                     "nonincreasing in the neighbor count");
                const auto b = spin_bounds(spec);
                if (b.alpha_v_lo <= 0 || b.alpha_e_lo <= 0) d.messages.push_back("spin system has zero minimal up-flip rate");
                d.background_monotone = true;
                // Count-based attractive rates with positive entries are not
                // reversible in general; stationary duality requires an explicit check.
                d.reversible = spec.range == 0;
            }
        },
        bg);
    if (!d.background_monotone) d.messages.push_back("background chain is not stochastically monotone");
    d.monotone = d.rates_monotone && d.background_monotone;
    return d;
}

struct Model {
    RateTable rates;
    BackgroundSpec background = DynamicalPercolation{};
};

}  // namespace cpdre
