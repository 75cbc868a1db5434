#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "graphical.hpp"

namespace cpdre {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct InfectionChange {
    double time;
    std::uint32_t site;
    std::uint8_t value;
};

struct BackgroundChange {
    double time;
    std::uint32_t cell;
    std::uint8_t from, to;
};

struct Snapshot {
    double time;
    std::size_t infected;
    bool boundary;  // some infected site lies in the collar
};

struct CopyOptions {
    bool record_background = false;
    // Stop consuming events once eta is empty; xi is then left stale.
    bool stop_on_extinction = false;
    bool snapshots = true;
    // Infection arrows are used only when both endpoints lie in this box.
    std::optional<Box> restrict_to;
};

inline Configuration make_configuration(const Window& w, const std::vector<Site>& infected, std::uint8_t level = 0) {
    Configuration c{std::vector<std::uint8_t>(w.site_count(), 0), std::vector<std::uint8_t>(w.cell_count(), level)};
    for (const Site& x : infected) {
        auto idx = w.find(x);
        if (!idx) throw std::out_of_range("initial infection outside the window: " + to_string(x, w.dim()));
        c.eta[*idx] = 1;
    }
    return c;
}

inline std::vector<Site> infected_sites(const Window& w, const std::vector<std::uint8_t>& eta) {
    std::vector<Site> out;
    for (std::size_t i = 0; i < eta.size(); ++i)
        if (eta[i]) out.push_back(w.site(i));
    return out;
}

class CoupledRun;

class Copy {
public:
    const std::string& label() const { return label_; }
    double start_time() const { return start_; }
    bool maximal() const { return maximal_; }
    double time() const { return time_; }
    const Configuration& state() const { return state_; }
    const Configuration& initial() const { return initial_; }
    std::size_t infected_count() const { return infected_; }
    bool extinct() const { return infected_ == 0; }
    std::optional<double> extinction_time() const { return extinction_; }
    std::optional<double> boundary_time() const { return boundary_; }
    // Absolute time of the first infection of each site; +inf if never.
    const std::vector<double>& first_hit() const { return first_hit_; }
    const std::vector<InfectionChange>& infection_log() const { return log_; }
    const std::vector<BackgroundChange>& background_log() const { return bg_log_; }
    const std::vector<Snapshot>& snapshots() const { return snaps_; }
    bool records_background() const { return opt_.record_background; }
    const CopyOptions& options() const { return opt_; }

    std::vector<std::uint8_t> infection_at(double t) const {
        std::vector<std::uint8_t> eta = initial_.eta;
        for (const auto& ch : log_) {
            if (ch.time > t) break;
            eta[ch.site] = ch.value;
        }
        return eta;
    }
    std::vector<std::uint8_t> background_at(double t) const {
        if (!opt_.record_background) throw std::logic_error("background was not recorded for copy " + label_);
        std::vector<std::uint8_t> xi = initial_.xi;
        for (const auto& ch : bg_log_) {
            if (ch.time > t) break;
            xi[ch.cell] = ch.to;
        }
        return xi;
    }

private:
    friend class CoupledRun;

    void snapshot_until(double t, bool inclusive) {
        if (!opt_.snapshots) return;
        for (;;) {
            const double g = start_ + static_cast<double>(next_snap_) * dt_;
            if (inclusive ? g > t : g >= t) return;
            snaps_.push_back({g, infected_, collar_infected_ > 0});
            ++next_snap_;
        }
    }

    void set_infected(const Catalog& cat, std::uint32_t site, std::uint8_t v, double t) {
        if (v) {
            ++infected_;
            if (cat.in_collar(site)) {
                ++collar_infected_;
                if (!boundary_) boundary_ = t;
            }
            if (first_hit_[site] == kInf) first_hit_[site] = t;
        } else {
            --infected_;
            if (cat.in_collar(site)) --collar_infected_;
            if (infected_ == 0) extinction_ = t;
        }
        log_.push_back({t, site, v});
    }

    std::string label_;
    double start_ = 0, time_ = 0, dt_ = 0.1;
    bool maximal_ = false;
    CopyOptions opt_;
    Configuration initial_, state_;
    std::vector<std::uint8_t> allowed_;  // per site, when restricted
    std::size_t cursor_ = 0, next_snap_ = 0;
    std::size_t infected_ = 0, collar_infected_ = 0;
    std::optional<double> extinction_, boundary_;
    std::vector<double> first_hit_;
    std::vector<InfectionChange> log_;
    std::vector<BackgroundChange> bg_log_;
    std::vector<Snapshot> snaps_;
};

struct TruncationReport {
    bool ok;
    std::optional<double> first_violation;
};

// Several copies of (eta, xi) driven by one event stream. Each copy keeps its
// own cursor, so copies may be advanced independently and restarted at any
// time; they all see the same events.
class CoupledRun {
public:
    CoupledRun(std::shared_ptr<const Catalog> catalog, double horizon, std::uint64_t seed, double snapshot_dt = 0.1)
        : catalog_(catalog), stream_(catalog, horizon, seed), dt_(snapshot_dt) {
        if (!(snapshot_dt > 0)) throw std::invalid_argument("snapshot interval must be > 0");
    }

    const Catalog& catalog() const { return *catalog_; }
    const Window& window() const { return catalog_->window(); }
    EventStream& stream() { return stream_; }
    double horizon() const { return stream_.horizon(); }
    std::size_t size() const { return copies_.size(); }
    Copy& copy(std::size_t i) { return copies_[i]; }
    const Copy& copy(std::size_t i) const { return copies_[i]; }

    std::size_t add_copy(std::string label, Configuration init, CopyOptions opt = {}) {
        return restart_copy(std::move(label), 0.0, std::move(init), std::move(opt));
    }

    // New copy that sees exactly the events after t0.
    std::size_t restart_copy(std::string label, double t0, Configuration init, CopyOptions opt = {}) {
        if (t0 > horizon()) throw StreamExhausted("restart time beyond the stream horizon");
        const Window& w = window();
        if (init.eta.size() != w.site_count() || init.xi.size() != w.cell_count())
            throw std::invalid_argument("configuration does not match the window");
        Copy c;
        c.label_ = std::move(label);
        c.start_ = c.time_ = t0;
        c.dt_ = dt_;
        c.opt_ = std::move(opt);
        c.cursor_ = t0 <= 0 ? 0 : stream_.first_after(t0);
        c.first_hit_.assign(w.site_count(), kInf);
        if (c.opt_.restrict_to) {
            c.allowed_.assign(w.site_count(), 0);
            for (std::size_t s = 0; s < w.site_count(); ++s) c.allowed_[s] = c.opt_.restrict_to->contains(w.site(s));
            for (std::size_t s = 0; s < w.site_count(); ++s)
                if (init.eta[s] && !c.allowed_[s]) throw std::invalid_argument("initial infection outside the restriction box");
        }
        for (std::size_t s = 0; s < w.site_count(); ++s)
            if (init.eta[s]) {
                ++c.infected_;
                c.first_hit_[s] = t0;
                if (catalog_->in_collar(static_cast<std::uint32_t>(s))) {
                    ++c.collar_infected_;
                    if (!c.boundary_) c.boundary_ = t0;
                }
            }
        if (c.infected_ == 0) c.extinction_ = t0;
        c.initial_ = init;
        c.state_ = std::move(init);
        copies_.push_back(std::move(c));
        return copies_.size() - 1;
    }

    // Recovery-free, background-free process using every infection event.
    std::size_t add_maximal(std::string label, const std::vector<std::uint8_t>& eta0, double t0 = 0.0) {
        Configuration init{eta0, std::vector<std::uint8_t>(window().cell_count(), 0)};
        const auto i = restart_copy(std::move(label), t0, std::move(init));
        copies_[i].maximal_ = true;
        return i;
    }

    // Advances copy i through every event with time <= T. obs(copy, change)
    // is called after each infection change; returning true stops early.
    template <class Obs>
    void advance(std::size_t i, double T, Obs&& obs) {
        if (T > horizon()) throw StreamExhausted("requested time beyond the stream horizon");
        Copy& c = copies_[i];
        if (T <= c.time_) return;
        const Catalog& cat = *catalog_;
        const auto& fams = cat.families();
        const auto& arrows = cat.window().arrows();
        if (c.infected_ == 0 && (c.maximal_ || c.opt_.stop_on_extinction)) {
            c.snapshot_until(T, true);
            c.time_ = T;
            return;
        }
        for (;;) {
            const Event* e = stream_.get(c.cursor_);
            if (!e || e->time > T) break;
            c.snapshot_until(e->time, false);
            ++c.cursor_;
            long changed = -1;
            const MapFamily& f = fams[e->family];
            if (c.maximal_) {
                if (f.kind == MapKind::Infection) {
                    const Arrow& a = arrows[e->location];
                    if (c.state_.eta[a.from] && !c.state_.eta[a.to]) {
                        c.state_.eta[a.to] = 1;
                        changed = a.to;
                    }
                }
            } else {
                bool blocked = false;
                if (f.kind == MapKind::Infection && !c.allowed_.empty()) {
                    const Arrow& a = arrows[e->location];
                    blocked = !c.allowed_[a.from] || !c.allowed_[a.to];
                }
                if (blocked) {
                } else if (c.opt_.record_background) {
                    changed = apply_event(cat, *e, c.state_, [&](std::uint32_t cell, std::uint8_t from, std::uint8_t to) {
                        c.bg_log_.push_back({e->time, cell, from, to});
                    });
                } else {
                    changed = apply_event(cat, *e, c.state_, [](auto, auto, auto) {});
                }
            }
            if (changed >= 0) {
                const auto site = static_cast<std::uint32_t>(changed);
                c.set_infected(cat, site, c.state_.eta[site], e->time);
                if (obs(static_cast<const Copy&>(c), c.log_.back())) {
                    c.time_ = e->time;
                    return;
                }
                if (c.infected_ == 0 && c.opt_.stop_on_extinction) break;
            }
        }
        c.snapshot_until(T, true);
        c.time_ = T;
    }

    void advance(std::size_t i, double T) {
        advance(i, T, [](const Copy&, const InfectionChange&) { return false; });
    }

    void evolve(double T) {
        for (std::size_t i = 0; i < copies_.size(); ++i) advance(i, T);
    }

    // Certificate: the maximal copy never touched the collar before T.
    TruncationReport truncation_ok(std::size_t maximal_copy, double T) const {
        const Copy& m = copies_[maximal_copy];
        if (!m.maximal_) throw std::logic_error("truncation_ok needs a maximal copy");
        if (m.boundary_ && *m.boundary_ <= T) return {false, m.boundary_};
        return {true, std::nullopt};
    }

private:
    std::shared_ptr<const Catalog> catalog_;
    EventStream stream_;
    double dt_;
    std::deque<Copy> copies_;  // stable references
};

inline std::shared_ptr<const Catalog> make_catalog(const Window& w, const Model& m) {
    return std::make_shared<const Catalog>(w, m);
}

}  // namespace cpdre
