#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace cpdre {

enum class MapKind : std::uint8_t { Infection, Recovery, Background };
enum class BgOp : std::uint8_t { Level, SpinUp, SpinDown };

// All maps of one family share kind, level and rate and differ only in the
// location they act on (arrow id, site id or cell id).
struct MapFamily {
    MapKind kind = MapKind::Infection;
    int level = 0;  // Inf/Rec: rank k; spin maps: neighbor-count threshold
    double rate = 0;
    BgOp op = BgOp::Level;
    std::vector<std::uint8_t> target;        // Level maps only
    std::uint32_t count = 0;                 // number of locations
    std::uint32_t offset = 0;                // location = offset + i when explicit list empty
    std::vector<std::uint32_t> locations;    // explicit locations (truncated spin maps)

    std::uint32_t location(std::uint32_t i) const { return locations.empty() ? offset + i : locations[i]; }
};

struct MapDescriptor {
    MapKind kind;
    int level;
    double rate;
    std::uint32_t family;
    std::uint32_t location;
};

struct Event {
    double time;
    std::uint32_t family;
    std::uint32_t location;
};

struct Configuration {
    std::vector<std::uint8_t> eta;  // per site
    std::vector<std::uint8_t> xi;   // per cell (sites first, then edges)
    bool operator==(const Configuration&) const = default;
};

class Catalog {
public:
    Catalog(Window w, Model m) : window_(std::move(w)), model_(std::move(m)) {
        diagnostics_ = validate_model(model_.rates, model_.background);
        ordering_ = level_ordering(model_.rates);
        states_ = model_.rates.states();
        build_infection();
        build_recovery();
        build_background();
        cumulative_.reserve(families_.size());
        double acc = 0;
        for (const auto& f : families_) {
            acc += f.rate * f.count;
            cumulative_.push_back(acc);
        }
        total_rate_ = acc;
        for (std::size_t s = 0; s < window_.site_count(); ++s)
            if (window_.depth(window_.site(s)) < collar_width()) collar_.push_back(static_cast<std::uint32_t>(s));
        in_collar_.assign(window_.site_count(), 0);
        for (auto s : collar_) in_collar_[s] = 1;
    }

    const Window& window() const { return window_; }
    const Model& model() const { return model_; }
    const RateTable& rates() const { return model_.rates; }
    const LevelOrdering& ordering() const { return ordering_; }
    const ModelDiagnostics& diagnostics() const { return diagnostics_; }
    const std::vector<MapFamily>& families() const { return families_; }
    double total_rate() const { return total_rate_; }
    int states() const { return states_; }
    int collar_width() const { return spin_range(model_.background) + 1; }
    bool in_collar(std::uint32_t site) const { return in_collar_[site] != 0; }

    std::size_t map_count() const {
        std::size_t n = 0;
        for (const auto& f : families_) n += f.count;
        return n;
    }
    MapDescriptor descriptor(std::uint32_t family, std::uint32_t location) const {
        const auto& f = families_[family];
        return {f.kind, f.level, f.rate, family, location};
    }

    // Maps a uniform in [0,1) to (family, location) with probability
    // proportional to the map rates.
    std::pair<std::uint32_t, std::uint32_t> pick(double u) const {
        const double x = u * total_rate_;
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
        if (it == cumulative_.end()) --it;
        const auto fam = static_cast<std::uint32_t>(it - cumulative_.begin());
        const double before = fam == 0 ? 0.0 : cumulative_[fam - 1];
        const auto& f = families_[fam];
        auto i = static_cast<std::uint32_t>(std::max(0.0, (x - before) / f.rate));
        if (i >= f.count) i = f.count - 1;
        return {fam, f.location(i)};
    }

    std::size_t triple(const Arrow& a, const std::uint8_t* xi) const {
        const auto m = static_cast<std::size_t>(states_);
        return (xi[a.from] * m + xi[a.edge]) * m + xi[a.to];
    }

    // Whether an infection event could set its head under background xi.
    bool usable(const Event& e, const std::vector<std::uint8_t>& xi) const {
        const auto& f = families_[e.family];
        if (f.kind != MapKind::Infection) throw std::invalid_argument("usable: not an infection event");
        const Arrow& a = window_.arrows()[e.location];
        return ordering_.F[triple(a, xi.data())] >= f.level;
    }
    bool recovery_effective(const Event& e, const std::vector<std::uint8_t>& xi) const {
        const auto& f = families_[e.family];
        return ordering_.G[xi[e.location]] <= f.level;
    }

    std::uint8_t background_target(const MapFamily& f, std::uint32_t cell, const std::uint8_t* xi) const {
        switch (f.op) {
            case BgOp::Level:
                return f.target[xi[cell]];
            case BgOp::SpinUp:
                return count_ones(cell, xi) >= static_cast<std::size_t>(f.level) ? 1 : xi[cell];
            case BgOp::SpinDown:
                return count_ones(cell, xi) <= static_cast<std::size_t>(f.level) ? 0 : xi[cell];
        }
        return xi[cell];
    }

    // Same-kind cells within the spin range (inside the window only).
    const std::vector<std::uint32_t>& spin_neighbors(std::uint32_t cell) const { return neighbors_[cell]; }

private:
    std::size_t count_ones(std::uint32_t cell, const std::uint8_t* xi) const {
        std::size_t n = 0;
        for (auto c : neighbors_[cell]) n += xi[c];
        return n;
    }

    void build_infection() {
        const auto& l = model_.rates.lambda_values();
        double prev = 0;
        for (std::size_t k = 0; k < ordering_.a.size(); ++k) {
            const double v = l[ordering_.a[k]];
            const double h = v - prev;
            prev = v;
            if (h <= 0 || window_.arrows().empty()) continue;
            MapFamily f;
            f.kind = MapKind::Infection;
            f.level = static_cast<int>(k + 1);
            f.rate = h;
            f.count = static_cast<std::uint32_t>(window_.arrows().size());
            families_.push_back(std::move(f));
        }
    }

    void build_recovery() {
        const auto& r = model_.rates.recovery_values();
        const std::size_t m = ordering_.b.size();
        for (std::size_t k = 0; k < m; ++k) {
            const double next = k + 1 < m ? r[static_cast<std::size_t>(ordering_.b[k + 1])] : 0.0;
            const double h = r[static_cast<std::size_t>(ordering_.b[k])] - next;
            if (h <= 0) continue;
            MapFamily f;
            f.kind = MapKind::Recovery;
            f.level = static_cast<int>(k + 1);
            f.rate = h;
            f.count = static_cast<std::uint32_t>(window_.site_count());
            families_.push_back(std::move(f));
        }
    }

    void add_level_maps(const Generator& Q, bool sites) {
        for (auto& lm : quantile_maps(Q)) {
            MapFamily f;
            f.kind = MapKind::Background;
            f.op = BgOp::Level;
            f.level = ++bg_templates_;
            f.rate = lm.rate;
            f.target = lm.target;
            f.offset = sites ? 0u : static_cast<std::uint32_t>(window_.site_count());
            f.count = static_cast<std::uint32_t>(sites ? window_.site_count() : window_.edge_count());
            if (f.count > 0) families_.push_back(std::move(f));
        }
    }

    void build_background() {
        neighbors_.assign(window_.cell_count(), {});
        if (const auto* iu = std::get_if<IndependentUpdates>(&model_.background)) {
            add_level_maps(iu->site, true);
            add_level_maps(iu->edge, false);
        } else if (const auto* dp = std::get_if<DynamicalPercolation>(&model_.background)) {
            add_level_maps(Generator::two_state(dp->alpha_v, dp->beta_v), true);
            add_level_maps(Generator::two_state(dp->alpha_e, dp->beta_e), false);
        } else {
            build_spin(std::get<SpinSystem>(model_.background));
        }
    }

    void build_spin(const SpinSystem& s) {
        const int d = window_.dim();
        const int L = s.range;
        // Full neighborhood sizes in Z^d (independent of the window).
        const std::size_t site_nb = ball(L, Site{}, d).size() - 1;
        std::vector<std::uint8_t> complete(window_.cell_count(), 1);
        for (std::size_t c = 0; c < window_.cell_count(); ++c) {
            const Site P = window_.doubled_position(c);
            const bool is_site = window_.is_site_cell(c);
            std::size_t inside = 0, total = 0;
            if (is_site) {
                for (const Site& y : ball(L, window_.site(c), d)) {
                    if (y == window_.site(c)) continue;
                    ++total;
                    if (auto idx = window_.find(y)) {
                        neighbors_[c].push_back(*idx);
                        ++inside;
                    }
                }
            } else {
                const Edge e = window_.edge(c);
                for (const Edge& o : edge_ball(L + 1, e.a, d)) {
                    if (o == e || l1_norm((o.a + o.b) - P) > 2 * L) continue;
                    ++total;
                    if (auto idx = window_.find(o)) {
                        neighbors_[c].push_back(*idx);
                        ++inside;
                    }
                }
            }
            complete[c] = inside == total;
        }
        const std::size_t edge_nb = [&] {
            // neighborhood size of an interior edge
            const Edge e(Site{}, unit(0));
            std::size_t n = 0;
            for (const Edge& o : edge_ball(L + 1, Site{}, d))
                if (o != e && l1_norm((o.a + o.b) - (e.a + e.b)) <= 2 * L) ++n;
            return n;
        }();
        add_spin_kind(s.site, site_nb, true, complete);
        add_spin_kind(s.edge, edge_nb, false, complete);
    }

    void add_spin_kind(const SpinRates& r, std::size_t cmax, bool sites, const std::vector<std::uint8_t>& complete) {
        const std::size_t lo = sites ? 0 : window_.site_count();
        const std::size_t hi = sites ? window_.site_count() : window_.cell_count();
        auto add = [&](BgOp op, std::size_t thr, double rate, bool always) {
            if (rate <= 0 || hi == lo) return;
            MapFamily f;
            f.kind = MapKind::Background;
            f.op = op;
            f.level = static_cast<int>(thr);
            f.rate = rate;
            if (always) {
                f.offset = static_cast<std::uint32_t>(lo);
                f.count = static_cast<std::uint32_t>(hi - lo);
            } else {
                for (std::size_t c = lo; c < hi; ++c)
                    if (complete[c]) f.locations.push_back(static_cast<std::uint32_t>(c));
                f.count = static_cast<std::uint32_t>(f.locations.size());
                if (f.count == 0) return;
            }
            families_.push_back(std::move(f));
        };
        for (std::size_t c = 0; c <= cmax; ++c) {
            const double h = r.up_at(c) - (c == 0 ? 0.0 : r.up_at(c - 1));
            add(BgOp::SpinUp, c, h, c == 0);
        }
        for (std::size_t c = 0; c <= cmax; ++c) {
            const double h = r.down_at(c) - (c == cmax ? 0.0 : r.down_at(c + 1));
            add(BgOp::SpinDown, c, h, c == cmax);
        }
    }

    Window window_;
    Model model_;
    ModelDiagnostics diagnostics_;
    LevelOrdering ordering_;
    int states_ = 1;
    int bg_templates_ = 0;
    std::vector<MapFamily> families_;
    std::vector<double> cumulative_;
    double total_rate_ = 0;
    std::vector<std::vector<std::uint32_t>> neighbors_;
    std::vector<std::uint32_t> collar_;
    std::vector<std::uint8_t> in_collar_;
};

struct StreamExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One merged Poisson stream over the whole catalog, generated lazily in
// time order. Event i is a pure function of (catalog, seed, i).
class EventStream {
public:
    EventStream(std::shared_ptr<const Catalog> catalog, double horizon, std::uint64_t seed)
        : catalog_(std::move(catalog)), horizon_(horizon), rng_(seed, Role::Events) {
        if (!(horizon > 0)) throw std::invalid_argument("stream horizon must be > 0");
    }

    const Catalog& catalog() const { return *catalog_; }
    double horizon() const { return horizon_; }

    const Event* get(std::size_t i) {
        while (i >= events_.size() && !done_) generate(1024);
        return i < events_.size() ? &events_[i] : nullptr;
    }

    // Index of the first event strictly after t.
    std::size_t first_after(double t) {
        while (!done_ && (events_.empty() || events_.back().time <= t)) generate(1024);
        return static_cast<std::size_t>(
            std::upper_bound(events_.begin(), events_.end(), t, [](double v, const Event& e) { return v < e.time; }) -
            events_.begin());
    }

    const std::vector<Event>& materialize() {
        while (!done_) generate(4096);
        return events_;
    }

private:
    void generate(std::size_t n) {
        const double R = catalog_->total_rate();
        if (R <= 0) {
            done_ = true;
            return;
        }
        for (std::size_t k = 0; k < n; ++k) {
            const auto bits = rng_.at(counter_++, 0);
            double t = now_ + exp1_from_bits(bits[0]) / R;
            // Equal timestamps need a zero exponential gap; keep them ordered.
            if (t <= now_) t = std::nextafter(now_, horizon_ + 1);
            if (t > horizon_) {
                done_ = true;
                return;
            }
            now_ = t;
            const auto [fam, loc] = catalog_->pick(u01_from_bits(bits[1]));
            events_.push_back({t, fam, loc});
        }
    }

    std::shared_ptr<const Catalog> catalog_;
    double horizon_;
    CounterRng rng_;
    std::uint64_t counter_ = 0;
    double now_ = 0;
    bool done_ = false;
    std::vector<Event> events_;
};

// In-place application. Returns the infection change (site, new value) if
// eta changed, or -1 otherwise; background changes go through on_bg.
template <class OnBg>
inline long apply_event(const Catalog& cat, const Event& e, Configuration& s, OnBg&& on_bg) {
    const auto& f = cat.families()[e.family];
    switch (f.kind) {
        case MapKind::Infection: {
            const Arrow& a = cat.window().arrows()[e.location];
            if (s.eta[a.from] && !s.eta[a.to] && cat.ordering().F[cat.triple(a, s.xi.data())] >= f.level) {
                s.eta[a.to] = 1;
                return a.to;
            }
            return -1;
        }
        case MapKind::Recovery:
            if (s.eta[e.location] && cat.ordering().G[s.xi[e.location]] <= f.level) {
                s.eta[e.location] = 0;
                return e.location;
            }
            return -1;
        case MapKind::Background: {
            const std::uint8_t old = s.xi[e.location];
            const std::uint8_t v = cat.background_target(f, e.location, s.xi.data());
            if (v != old) {
                s.xi[e.location] = v;
                on_bg(e.location, old, v);
            }
            return -1;
        }
    }
    return -1;
}

inline Configuration apply_map(const Catalog& cat, const MapDescriptor& m, Configuration s) {
    const std::size_t limit = m.kind == MapKind::Infection ? cat.window().arrows().size()
                              : m.kind == MapKind::Recovery ? cat.window().site_count()
                                                            : cat.window().cell_count();
    if (m.location >= limit) throw std::out_of_range("apply_map: location outside the window");
    apply_event(cat, Event{0.0, m.family, m.location}, s, [](auto, auto, auto) {});
    return s;
}

inline const char* kind_name(MapKind k) {
    switch (k) {
        case MapKind::Infection: return "inf";
        case MapKind::Recovery: return "rec";
        case MapKind::Background: return "bg";
    }
    return "?";
}

inline std::string location_label(const Catalog& cat, const Event& e) {
    const auto& w = cat.window();
    const int d = w.dim();
    const auto& f = cat.families()[e.family];
    if (f.kind == MapKind::Infection) {
        const Arrow& a = w.arrows()[e.location];
        return to_string(w.site(a.from), d) + "->" + to_string(w.site(a.to), d);
    }
    if (w.is_site_cell(e.location)) return to_string(w.site(e.location), d);
    const Edge ed = w.edge(e.location);
    return to_string(ed.a, d) + "-" + to_string(ed.b, d);
}

// Debug dump: time, kind, level, location.
inline void write_stream_csv(std::ostream& os, const Catalog& cat, const std::vector<Event>& events) {
    os << "time,kind,level,location\n";
    char buf[64];
    for (const auto& e : events) {
        std::snprintf(buf, sizeof buf, "%.17g", e.time);
        const auto& f = cat.families()[e.family];
        os << buf << ',' << kind_name(f.kind) << ',' << f.level << ",\"" << location_label(cat, e) << "\"\n";
    }
}

}  // namespace cpdre
