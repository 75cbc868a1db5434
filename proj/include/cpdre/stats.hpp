#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "rng.hpp"

namespace cpdre::stats {

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
    if (v.size() < 2) return std::nan("");
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline double std_error(const std::vector<double>& v) { return std::sqrt(variance(v) / static_cast<double>(v.size())); }

inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Interval {
    double lo, hi;
    bool contains(double x) const { return lo <= x && x <= hi; }
    bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
};

inline Interval wilson(std::size_t successes, std::size_t n, double z = 1.959963984540054) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n), p = static_cast<double>(successes) / nn;
    const double den = 1 + z * z / nn;
    const double c = (p + z * z / (2 * nn)) / den;
    const double h = z * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / den;
    return {std::max(0.0, c - h), std::min(1.0, c + h)};
}

// Pooled two-proportion z statistic; 0 when both samples are degenerate alike.
inline double two_proportion_z(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2) {
    if (n1 == 0 || n2 == 0) throw std::invalid_argument("two_proportion_z: empty sample");
    const double p1 = static_cast<double>(x1) / static_cast<double>(n1);
    const double p2 = static_cast<double>(x2) / static_cast<double>(n2);
    const double p = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
    const double se = std::sqrt(p * (1 - p) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
    if (se == 0) return 0.0;
    return (p1 - p2) / se;
}

inline double chi_square_sf(double stat, double df) {
    if (df <= 0) throw std::invalid_argument("chi-square needs positive degrees of freedom");
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), std::max(stat, 0.0)));
}

struct ChiSquare {
    double stat;
    double df;
    double p;
};

// Pearson statistic; `fitted` is the number of parameters estimated from the data.
inline ChiSquare chi_square_gof(const std::vector<double>& observed, const std::vector<double>& expected, int fitted = 0) {
    if (observed.size() != expected.size() || observed.empty()) throw std::invalid_argument("chi_square_gof: size mismatch");
    double s = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0) throw std::invalid_argument("chi_square_gof: nonpositive expected count");
        s += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    }
    const double df = static_cast<double>(observed.size()) - 1.0 - fitted;
    return {s, df, chi_square_sf(s, df)};
}

// Kolmogorov distribution tail Q(x) = 2 sum (-1)^(k-1) exp(-2 k^2 x^2).
inline double kolmogorov_sf(double x) {
    if (x <= 0) return 1.0;
    if (x < 0.2) return 1.0;
    double s = 0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * x * x);
        s += (k % 2 ? 1.0 : -1.0) * term;
        if (term < 1e-16) break;
    }
    return std::clamp(2 * s, 0.0, 1.0);
}

struct KsResult {
    double d;
    double p;
};

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = na * nb / (na + nb);
    const double sq = std::sqrt(ne);
    return {d, kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)};
}

inline KsResult ks_one_sample(std::vector<double> a, const std::function<double(double)>& cdf) {
    if (a.empty()) throw std::invalid_argument("ks_one_sample: empty sample");
    std::sort(a.begin(), a.end());
    const double n = static_cast<double>(a.size());
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double f = cdf(a[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    const double sq = std::sqrt(n);
    return {d, kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)};
}

struct LinearFit {
    double slope = 0, intercept = 0, slope_se = 0;
    std::size_t n = 0;
    Interval slope_ci{0, 0};
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y, double level = 0.95) {
    if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("linear_fit needs at least 3 points");
    const double mx = mean(x), my = mean(y);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("linear_fit: constant abscissa");
    LinearFit f;
    f.n = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        rss += r * r;
    }
    const double dof = static_cast<double>(x.size()) - 2;
    f.slope_se = std::sqrt(rss / dof / sxx);
    const double q = boost::math::quantile(boost::math::students_t(dof), 0.5 + level / 2);
    f.slope_ci = {f.slope - q * f.slope_se, f.slope + q * f.slope_se};
    return f;
}

// Percentile bootstrap over indices 0..n-1.
inline Interval bootstrap_ci(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                             std::uint64_t seed, int resamples = 1000, double level = 0.95) {
    if (n == 0) throw std::invalid_argument("bootstrap_ci: empty sample");
    CounterRng g(seed, Role::Bootstrap);
    std::vector<double> reps;
    reps.reserve(static_cast<std::size_t>(resamples));
    std::vector<std::size_t> idx(n);
    for (int r = 0; r < resamples; ++r) {
        for (auto& i : idx) i = static_cast<std::size_t>(g.below(n));
        const double v = stat(idx);
        if (std::isfinite(v)) reps.push_back(v);
    }
    if (reps.empty()) return {std::nan(""), std::nan("")};
    return {quantile(reps, (1 - level) / 2), quantile(reps, 1 - (1 - level) / 2)};
}

// Log-linear decay fit of the empirical tail S(t) = #{t < v_i} / n over the
// grid points where the count is at least min_count. v_i = +inf entries are
// excluded from the event (they never count as "in the tail").
struct TailFit {
    std::vector<double> grid;
    std::vector<double> survival;
    LinearFit fit;
    Interval bootstrap{0, 0};
    bool ok = false;
};

inline std::vector<double> tail_counts(const std::vector<double>& v, const std::vector<std::size_t>* idx,
                                       const std::vector<double>& grid) {
    std::vector<double> c(grid.size(), 0.0);
    const std::size_t n = idx ? idx->size() : v.size();
    for (std::size_t k = 0; k < n; ++k) {
        const double x = v[idx ? (*idx)[k] : k];
        if (!std::isfinite(x)) continue;
        for (std::size_t g = 0; g < grid.size(); ++g)
            if (x > grid[g]) c[g] += 1;
    }
    return c;
}

inline TailFit tail_fit(const std::vector<double>& v, const std::vector<double>& grid, std::uint64_t seed,
                        double min_count = 5, int resamples = 1000) {
    TailFit t;
    const double n = static_cast<double>(v.size());
    const auto c = tail_counts(v, nullptr, grid);
    std::vector<double> xs, ys;
    for (std::size_t g = 0; g < grid.size(); ++g)
        if (c[g] >= min_count) {
            xs.push_back(grid[g]);
            ys.push_back(std::log(c[g] / n));
            t.grid.push_back(grid[g]);
            t.survival.push_back(c[g] / n);
        }
    if (xs.size() < 3) return t;
    t.fit = linear_fit(xs, ys);
    t.bootstrap = bootstrap_ci(
        v.size(),
        [&](const std::vector<std::size_t>& idx) {
            const auto cc = tail_counts(v, &idx, t.grid);
            std::vector<double> bx, by;
            for (std::size_t g = 0; g < t.grid.size(); ++g)
                if (cc[g] > 0) {
                    bx.push_back(t.grid[g]);
                    by.push_back(std::log(cc[g] / n));
                }
            if (bx.size() < 3) return std::nan("");
            return linear_fit(bx, by).slope;
        },
        seed, resamples);
    t.ok = true;
    return t;
}

// Chi-square goodness of fit of positive integer samples to a geometric law
// on {1,2,...} with p = 1/mean; bins are merged until each expects >= 5.
inline ChiSquare geometric_gof(const std::vector<long>& v) {
    if (v.empty()) throw std::invalid_argument("geometric_gof: empty sample");
    double m = 0;
    for (long x : v) {
        if (x < 1) throw std::invalid_argument("geometric_gof: values must be >= 1");
        m += static_cast<double>(x);
    }
    m /= static_cast<double>(v.size());
    const double p = 1.0 / m;
    const double n = static_cast<double>(v.size());
    const long vmax = *std::max_element(v.begin(), v.end());
    std::vector<double> obs, exp;
    double o = 0, e = 0;
    double tail = 1.0;  // P(X >= k)
    for (long k = 1;; ++k) {
        const double pk = p * std::pow(1 - p, static_cast<double>(k - 1));
        o += static_cast<double>(std::count(v.begin(), v.end(), k));
        e += n * pk;
        tail -= pk;
        if (e >= 5 && n * tail >= 5) {
            obs.push_back(o);
            exp.push_back(e);
            o = e = 0;
        }
        if (n * tail < 5 || k > vmax + 1000) {
            // Remaining mass goes into the last bin.
            double rest = 0;
            for (long x : v) rest += x > k ? 1 : 0;
            o += rest;
            e += n * tail;
            break;
        }
    }
    if (!obs.empty() && e < 5) {
        obs.back() += o;
        exp.back() += e;
    } else {
        obs.push_back(o);
        exp.push_back(e);
    }
    if (obs.size() < 3) return {0.0, 0.0, 1.0};
    return chi_square_gof(obs, exp, 1);
}

}  // namespace cpdre::stats
