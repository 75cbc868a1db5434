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

enum class Censor : std::uint8_t { Observed, AtHorizon, Infinite };

inline const char* censor_name(Censor c) {
    switch (c) {
        case Censor::Observed: return "observed";
        case Censor::AtHorizon: return "horizon";
        case Censor::Infinite: return "infinite";
    }
    return "?";
}

struct CensoredTime {
    double value = 0;
    Censor status = Censor::Observed;

    static CensoredTime observed(double t) { return {t, Censor::Observed}; }
    static CensoredTime at_horizon(double h) { return {h, Censor::AtHorizon}; }
    static CensoredTime infinite() { return {kInf, Censor::Infinite}; }
    bool finite() const { return status == Censor::Observed; }
    // +inf for anything not observed; convenient for tail statistics.
    double or_inf() const { return finite() ? value : kInf; }
};

inline CensoredTime extinction_time(const Copy& c) {
    if (auto t = c.extinction_time()) return CensoredTime::observed(*t);
    return CensoredTime::at_horizon(c.time());
}

inline CensoredTime hitting_time(const Copy& c, std::uint32_t site) {
    const double t = c.first_hit().at(site);
    if (t <= c.time()) return CensoredTime::observed(t);
    return CensoredTime::at_horizon(c.time());
}

inline CensoredTime hitting_time(const Copy& c, const Window& w, const Site& x) {
    auto idx = w.find(x);
    if (!idx) throw std::out_of_range("hitting_time: site outside the window");
    return hitting_time(c, *idx);
}

// H_t: sites infected at least once in [start, t].
inline std::vector<std::uint8_t> ever_infected(const Copy& c, double t) {
    std::vector<std::uint8_t> h(c.first_hit().size(), 0);
    for (std::size_t s = 0; s < h.size(); ++s) h[s] = c.first_hit()[s] <= t;
    return h;
}

inline std::size_t count(const std::vector<std::uint8_t>& v) {
    std::size_t n = 0;
    for (auto b : v) n += b != 0;
    return n;
}

// K_t for a pair of copies on one stream.
inline std::vector<std::uint8_t> infection_coupled_region(const Copy& a, const Copy& b, double t) {
    const auto ea = a.infection_at(t), eb = b.infection_at(t);
    std::vector<std::uint8_t> k(ea.size());
    for (std::size_t s = 0; s < k.size(); ++s) k[s] = ea[s] == eb[s];
    return k;
}

// For two logged trajectories of a vector state, the time at which the last
// disagreement of each coordinate ended, looking only at changes <= horizon.
// 0 if the coordinate always agreed, +inf if it still disagrees at the horizon.
// Changes sharing a timestamp are applied together before comparing.
template <class LogA, class LogB, class Idx, class Val>
std::vector<double> coupling_end(std::vector<std::uint8_t> xa, std::vector<std::uint8_t> xb, const LogA& la,
                                 const LogB& lb, double horizon, Idx idx, Val val) {
    const std::size_t n = xa.size();
    std::vector<double> end(n, 0.0);
    std::vector<std::uint8_t> open(n, 0);
    for (std::size_t s = 0; s < n; ++s) open[s] = xa[s] != xb[s];
    std::size_t i = 0, j = 0;
    std::vector<std::uint32_t> touched;
    while (true) {
        const double ta = i < la.size() ? la[i].time : kInf;
        const double tb = j < lb.size() ? lb[j].time : kInf;
        const double t = std::min(ta, tb);
        if (t > horizon || t == kInf) break;
        touched.clear();
        while (i < la.size() && la[i].time == t) {
            xa[idx(la[i])] = val(la[i]);
            touched.push_back(idx(la[i]));
            ++i;
        }
        while (j < lb.size() && lb[j].time == t) {
            xb[idx(lb[j])] = val(lb[j]);
            touched.push_back(idx(lb[j]));
            ++j;
        }
        for (auto s : touched) {
            const bool dis = xa[s] != xb[s];
            if (open[s] && !dis) end[s] = t;
            open[s] = dis;
        }
    }
    for (std::size_t s = 0; s < n; ++s)
        if (open[s]) end[s] = kInf;
    return end;
}

// Per-site end of the last infection disagreement; K-bar_t = {end <= t}.
inline std::vector<double> infection_coupling_end(const Copy& a, const Copy& b, double horizon) {
    return coupling_end(
        a.initial().eta, b.initial().eta, a.infection_log(), b.infection_log(), horizon,
        [](const InfectionChange& c) { return c.site; }, [](const InfectionChange& c) { return c.value; });
}

inline std::vector<std::uint8_t> permanently_coupled(const std::vector<double>& end, double t) {
    std::vector<std::uint8_t> k(end.size());
    for (std::size_t s = 0; s < k.size(); ++s) k[s] = end[s] <= t;
    return k;
}

inline void require_monotone_background(const Catalog& cat) {
    if (!cat.diagnostics().background_monotone)
        throw std::invalid_argument("coupled background region needs a monotonically representable background");
}

// Psi_t from the two extreme background copies (all 0 and all N).
inline std::vector<std::uint8_t> background_coupled_region(const Catalog& cat, const Copy& lo, const Copy& hi, double t) {
    require_monotone_background(cat);
    const auto a = lo.background_at(t), b = hi.background_at(t);
    std::vector<std::uint8_t> k(a.size());
    for (std::size_t c = 0; c < k.size(); ++c) k[c] = a[c] == b[c];
    return k;
}

inline std::vector<double> background_coupling_end(const Catalog& cat, const Copy& lo, const Copy& hi, double horizon) {
    require_monotone_background(cat);
    if (!lo.records_background() || !hi.records_background())
        throw std::logic_error("background coupling needs recorded background logs");
    return coupling_end(
        lo.initial().xi, hi.initial().xi, lo.background_log(), hi.background_log(), horizon,
        [](const BackgroundChange& c) { return c.cell; }, [](const BackgroundChange& c) { return c.to; });
}

// Cells whose state matters to site x for a spin range L: sites within L of
// x and every edge incident to one of them. Cells outside the window are
// reported through `complete = false`.
inline std::vector<std::uint32_t> neighborhood_cells(const Window& w, const Site& x, int L, bool* complete = nullptr) {
    std::vector<std::uint32_t> out;
    bool ok = true;
    for (const Site& y : ball(L, x, w.dim())) {
        auto i = w.find(y);
        if (!i) {
            ok = false;
            continue;
        }
        out.push_back(*i);
    }
    for (const Edge& e : edge_ball(L, x, w.dim())) {
        auto i = w.find(e);
        if (!i) {
            ok = false;
            continue;
        }
        out.push_back(*i);
    }
    if (complete) *complete = ok;
    return out;
}

// Per-site time from which x and its range-L neighborhood stay coupled:
// Phi_t = {x : phi_end[x] <= t}. Sites whose neighborhood leaves the window
// get +inf.
inline std::vector<double> phi_end(const Window& w, const std::vector<double>& cell_end, int L) {
    std::vector<double> out(w.site_count(), 0.0);
    for (std::size_t s = 0; s < w.site_count(); ++s) {
        bool complete = true;
        const auto cells = neighborhood_cells(w, w.site(s), L, &complete);
        double m = complete ? 0.0 : kInf;
        for (auto c : cells) m = std::max(m, cell_end[c]);
        out[s] = m;
    }
    return out;
}

// ---------------------------------------------------------------- shape

struct RaySample {
    Site direction;
    std::vector<int> radii;                 // ascending
    std::vector<std::vector<double>> times; // times[trial][radius index], finite only
};

struct RayEstimate {
    Site direction;
    int n = 0;                 // largest radius used
    std::size_t trials = 0;
    double mu_hat = 0;         // mean t(n x) / n
    stats::Interval ci{0, 0};  // bootstrap
    std::vector<double> mean_time;  // per radius
    std::vector<double> secant;     // per radius (index 0 unused, nan)
    std::vector<stats::Interval> secant_ci;
};

struct ShapeEstimate {
    std::vector<RayEstimate> rays;
    std::size_t surviving = 0;
};

inline constexpr std::size_t kMinShapeTrials = 10;

// Secant at radius index k: (mean t(n_k) - mean t(n_{k-1})) / (n_k - n_{k-1}).
inline RayEstimate estimate_ray(const RaySample& r, std::uint64_t seed, int resamples = 1000) {
    if (r.times.size() < kMinShapeTrials)
        throw std::invalid_argument("shape estimate needs at least 10 surviving trials, got " + std::to_string(r.times.size()));
    const std::size_t m = r.radii.size();
    if (m == 0) throw std::invalid_argument("shape estimate: no radii");
    RayEstimate e;
    e.direction = r.direction;
    e.n = r.radii.back();
    e.trials = r.times.size();
    auto mean_at = [&](const std::vector<std::size_t>* idx, std::size_t k) {
        double s = 0;
        const std::size_t n = idx ? idx->size() : r.times.size();
        for (std::size_t i = 0; i < n; ++i) s += r.times[idx ? (*idx)[i] : i][k];
        return s / static_cast<double>(n);
    };
    for (std::size_t k = 0; k < m; ++k) e.mean_time.push_back(mean_at(nullptr, k));
    e.mu_hat = e.mean_time.back() / e.n;
    e.ci = stats::bootstrap_ci(
        r.times.size(), [&](const std::vector<std::size_t>& idx) { return mean_at(&idx, m - 1) / e.n; }, seed, resamples);
    e.secant.assign(m, std::nan(""));
    e.secant_ci.assign(m, {std::nan(""), std::nan("")});
    for (std::size_t k = 1; k < m; ++k) {
        const double dn = r.radii[k] - r.radii[k - 1];
        e.secant[k] = (e.mean_time[k] - e.mean_time[k - 1]) / dn;
        e.secant_ci[k] = stats::bootstrap_ci(
            r.times.size(),
            [&](const std::vector<std::size_t>& idx) { return (mean_at(&idx, k) - mean_at(&idx, k - 1)) / dn; },
            seed + k, resamples);
    }
    return e;
}

inline ShapeEstimate shape_estimate(const std::vector<RaySample>& rays, std::uint64_t seed, int resamples = 1000) {
    ShapeEstimate s;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        s.rays.push_back(estimate_ray(rays[i], derive_trial_seed(seed, i), resamples));
        s.surviving = std::max(s.surviving, rays[i].times.size());
    }
    return s;
}

// mu-hat extended to a gauge by l1 interpolation between the estimated axis
// rays. Exact in d = 1; an upper bound of the convex gauge otherwise.
class AxisGauge {
public:
    AxisGauge(int d, std::vector<double> plus, std::vector<double> minus) : d_(d), plus_(std::move(plus)), minus_(std::move(minus)) {
        if (static_cast<int>(plus_.size()) != d || static_cast<int>(minus_.size()) != d)
            throw std::invalid_argument("AxisGauge: one value per axis and sign");
    }
    double operator()(const Site& x) const {
        double s = 0;
        for (int i = 0; i < d_; ++i) {
            const auto k = static_cast<std::size_t>(i);
            s += x[k] >= 0 ? x[k] * plus_[k] : -x[k] * minus_[k];
        }
        return s;
    }

private:
    int d_;
    std::vector<double> plus_, minus_;
};

struct Inclusion {
    bool inner = false;  // (1-eps) t B_mu inside H_t
    bool outer = false;  // H_t inside (1+eps) t B_mu
};

// B_mu = {x : mu(x) <= 1}; a lattice site belongs to s B_mu iff mu(x) <= s.
inline Inclusion inclusion(const Window& w, const std::vector<std::uint8_t>& H, const AxisGauge& mu, double t, double eps) {
    Inclusion r{true, true};
    const double lo = (1 - eps) * t, hi = (1 + eps) * t;
    bool inner_fits = false;
    for (std::size_t s = 0; s < H.size(); ++s) {
        const double m = mu(w.site(s));
        if (m <= lo && !H[s]) r.inner = false;
        if (H[s] && m > hi) r.outer = false;
        if (w.depth(w.site(s)) == 0 && m <= lo) inner_fits = true;
    }
    // The inner ball must fit in the window for the check to mean anything.
    if (inner_fits) r.inner = false;
    return r;
}

// H_t inside B_{Mt} at every t: fails iff some site was first hit at a time
// s with |x|_1 > M s.
inline bool linear_bound_holds(const Window& w, const Copy& c, double M, const Site& origin = Site{}) {
    for (std::size_t s = 0; s < c.first_hit().size(); ++s) {
        const double t = c.first_hit()[s];
        if (t == kInf) continue;
        if (l1_dist(w.site(s), origin) > M * (t - c.start_time())) return false;
    }
    return true;
}

// H_t inside B_{Mt} at one time t.
inline bool linear_bound_at(const Window& w, const Copy& c, double M, double t, const Site& origin = Site{}) {
    for (std::size_t s = 0; s < c.first_hit().size(); ++s) {
        const double h = c.first_hit()[s];
        if (h <= t && l1_dist(w.site(s), origin) > M * (t - c.start_time())) return false;
    }
    return true;
}

}  // namespace cpdre
