#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cpdre {

inline constexpr int kMaxDim = 3;

// Unused trailing coordinates are always zero, so comparisons and norms can
// ignore the dimension.
struct Site {
    std::array<int, kMaxDim> c{};

    int& operator[](int i) { return c[static_cast<std::size_t>(i)]; }
    int operator[](int i) const { return c[static_cast<std::size_t>(i)]; }
    auto operator<=>(const Site&) const = default;

    Site operator+(const Site& o) const {
        Site s;
        for (int i = 0; i < kMaxDim; ++i) s[i] = c[i] + o[i];
        return s;
    }
    Site operator-(const Site& o) const {
        Site s;
        for (int i = 0; i < kMaxDim; ++i) s[i] = c[i] - o[i];
        return s;
    }
    Site operator-() const { return Site{} - *this; }
    Site scaled(int k) const {
        Site s;
        for (int i = 0; i < kMaxDim; ++i) s[i] = k * c[i];
        return s;
    }
};

inline Site make_site(std::initializer_list<int> coords) {
    if (coords.size() > static_cast<std::size_t>(kMaxDim)) throw std::invalid_argument("too many coordinates");
    Site s;
    int i = 0;
    for (int v : coords) s[i++] = v;
    return s;
}

inline Site unit(int dim, int sign = 1) {
    Site s;
    s[dim] = sign;
    return s;
}

inline int l1_norm(const Site& x) {
    return std::abs(x[0]) + std::abs(x[1]) + std::abs(x[2]);
}

inline int linf_norm(const Site& x) {
    return std::max({std::abs(x[0]), std::abs(x[1]), std::abs(x[2])});
}

inline int l1_dist(const Site& a, const Site& b) { return l1_norm(a - b); }

inline std::string to_string(const Site& x, int d) {
    std::string s = "(";
    for (int i = 0; i < d; ++i) {
        if (i) s += ',';
        s += std::to_string(x[i]);
    }
    return s + ")";
}

struct Edge {
    Site a, b;  // a < b lexicographically

    Edge() = default;
    Edge(const Site& x, const Site& y) : a(std::min(x, y)), b(std::max(x, y)) {
        if (l1_dist(x, y) != 1) throw std::invalid_argument("edge endpoints must be at l1 distance 1");
    }
    int direction() const {
        for (int i = 0; i < kMaxDim; ++i)
            if (a[i] != b[i]) return i;
        return -1;
    }
    auto operator<=>(const Edge&) const = default;
};

using Cell = std::variant<Site, Edge>;

inline void check_dim(int d) {
    if (d < 1 || d > kMaxDim) throw std::invalid_argument("dimension must be in [1,3], got " + std::to_string(d));
}

// Sites with ||y - center||_1 <= r, in lexicographic order.
inline std::vector<Site> ball(double r, const Site& center, int d) {
    check_dim(d);
    if (r < 0) throw std::invalid_argument("ball radius must be nonnegative");
    const int R = static_cast<int>(std::floor(r + 1e-12));
    std::vector<Site> out;
    Site off;
    const int lo1 = d > 1 ? -R : 0, lo2 = d > 2 ? -R : 0;
    for (off[0] = -R; off[0] <= R; ++off[0])
        for (off[1] = lo1; off[1] <= -lo1; ++off[1])
            for (off[2] = lo2; off[2] <= -lo2; ++off[2])
                if (l1_norm(off) <= R) out.push_back(center + off);
    return out;
}

inline std::vector<Edge> edge_ball(double r, const Site& center, int d) {
    std::vector<Edge> out;
    for (const Site& y : ball(r, center, d))
        for (int i = 0; i < d; ++i) {
            out.emplace_back(y, y + unit(i));
            out.emplace_back(y, y - unit(i));
        }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// Axis-aligned box of sites [lo_i, hi_i] in each of the first d coordinates.
struct Box {
    int d = 1;
    Site lo, hi;

    static Box cube(int d, const Site& center, int radius) {
        Box b{d, center, center};
        for (int i = 0; i < d && i < kMaxDim; ++i) {
            b.lo[i] -= radius;
            b.hi[i] += radius;
        }
        return b;
    }
    bool contains(const Site& x) const {
        for (int i = 0; i < d; ++i)
            if (x[i] < lo[i] || x[i] > hi[i]) return false;
        for (int i = d; i < kMaxDim; ++i)
            if (x[i] != 0) return false;
        return true;
    }
    bool contains(const Box& o) const { return contains(o.lo) && contains(o.hi); }
    std::size_t volume() const {
        std::size_t v = 1;
        for (int i = 0; i < d; ++i) v *= static_cast<std::size_t>(hi[i] - lo[i] + 1);
        return v;
    }
    template <class F>
    void for_each(F&& f) const {
        Site x;
        const int h1 = d > 1 ? hi[1] : 0, l1 = d > 1 ? lo[1] : 0;
        const int h2 = d > 2 ? hi[2] : 0, l2 = d > 2 ? lo[2] : 0;
        for (x[0] = lo[0]; x[0] <= hi[0]; ++x[0])
            for (x[1] = l1; x[1] <= h1; ++x[1])
                for (x[2] = l2; x[2] <= h2; ++x[2]) f(x);
    }
};

struct Arrow {
    std::uint32_t from, to, edge;  // site, site, cell index of the edge
};

// Finite window V_L = box of sites, E_L = every edge meeting V_L. Cells are
// indexed sites first (row-major), then edges grouped by direction.
class Window {
public:
    Window(const Box& box) : box_(box) {
        check_dim(box.d);
        for (int i = 0; i < box.d; ++i) {
            if (box.hi[i] < box.lo[i]) throw std::invalid_argument("empty window box");
            ext_[i] = box.hi[i] - box.lo[i] + 1;
        }
        n_sites_ = box.volume();
        std::size_t off = n_sites_;
        for (int dir = 0; dir < box.d; ++dir) {
            edge_offset_[dir] = off;
            std::size_t cnt = 1;
            for (int i = 0; i < box.d; ++i) cnt *= static_cast<std::size_t>(ext_[i] + (i == dir ? 1 : 0));
            off += cnt;
        }
        n_cells_ = off;
        build_adjacency();
    }

    int dim() const { return box_.d; }
    const Box& box() const { return box_; }
    std::size_t site_count() const { return n_sites_; }
    std::size_t edge_count() const { return n_cells_ - n_sites_; }
    std::size_t cell_count() const { return n_cells_; }
    bool is_site_cell(std::size_t cell) const { return cell < n_sites_; }

    bool contains(const Site& x) const { return box_.contains(x); }

    std::uint32_t index(const Site& x) const {
        std::size_t idx = 0;
        for (int i = 0; i < box_.d; ++i) idx = idx * static_cast<std::size_t>(ext_[i]) + static_cast<std::size_t>(x[i] - box_.lo[i]);
        return static_cast<std::uint32_t>(idx);
    }
    std::optional<std::uint32_t> find(const Site& x) const {
        if (!contains(x)) return std::nullopt;
        return index(x);
    }
    Site site(std::size_t idx) const {
        Site x;
        for (int i = box_.d - 1; i >= 0; --i) {
            x[i] = box_.lo[i] + static_cast<int>(idx % static_cast<std::size_t>(ext_[i]));
            idx /= static_cast<std::size_t>(ext_[i]);
        }
        return x;
    }

    // Edge cells are indexed by their lower endpoint; in direction dir the
    // lower endpoint ranges over [lo-1, hi] in that coordinate.
    std::optional<std::uint32_t> find(const Edge& e) const {
        const int dir = e.direction();
        if (dir >= box_.d || dir < 0) return std::nullopt;
        std::size_t idx = 0;
        for (int i = 0; i < box_.d; ++i) {
            const int lo = box_.lo[i] - (i == dir ? 1 : 0);
            const int ext = ext_[i] + (i == dir ? 1 : 0);
            const int v = e.a[i] - lo;
            if (v < 0 || v >= ext) return std::nullopt;
            idx = idx * static_cast<std::size_t>(ext) + static_cast<std::size_t>(v);
        }
        for (int i = box_.d; i < kMaxDim; ++i)
            if (e.a[i] != 0) return std::nullopt;
        return static_cast<std::uint32_t>(edge_offset_[dir] + idx);
    }
    Edge edge(std::size_t cell) const {
        int dir = box_.d - 1;
        while (dir > 0 && cell < edge_offset_[dir]) --dir;
        std::size_t idx = cell - edge_offset_[dir];
        Site a;
        for (int i = box_.d - 1; i >= 0; --i) {
            const int lo = box_.lo[i] - (i == dir ? 1 : 0);
            const int ext = ext_[i] + (i == dir ? 1 : 0);
            a[i] = lo + static_cast<int>(idx % static_cast<std::size_t>(ext));
            idx /= static_cast<std::size_t>(ext);
        }
        return Edge(a, a + unit(dir));
    }
    Cell cell(std::size_t idx) const {
        if (idx < n_sites_) return site(idx);
        return edge(idx);
    }
    std::optional<std::uint32_t> find(const Cell& c) const {
        return std::visit([this](const auto& v) { return find(v); }, c);
    }
    // Twice the midpoint, so edge and site positions stay integral.
    Site doubled_position(std::size_t cell) const {
        if (cell < n_sites_) return site(cell).scaled(2);
        const Edge e = edge(cell);
        return e.a + e.b;
    }

    // Directed edges with both endpoints inside V_L.
    const std::vector<Arrow>& arrows() const { return arrows_; }
    // The 2d edges incident to a site (all inside E_L).
    const std::vector<std::uint32_t>& incident_edges(std::uint32_t site) const { return incident_[site]; }

    // Distance from x to the complement of the box, in lattice steps.
    int depth(const Site& x) const {
        int m = std::numeric_limits<int>::max();
        for (int i = 0; i < box_.d; ++i) m = std::min({m, x[i] - box_.lo[i], box_.hi[i] - x[i]});
        return m;
    }

private:
    void build_adjacency() {
        incident_.resize(n_sites_);
        for (std::size_t s = 0; s < n_sites_; ++s) {
            const Site x = site(s);
            for (int i = 0; i < box_.d; ++i)
                for (int sg : {1, -1}) {
                    const Site y = x + unit(i, sg);
                    const auto e = *find(Edge(x, y));
                    incident_[s].push_back(e);
                    if (contains(y)) arrows_.push_back({static_cast<std::uint32_t>(s), index(y), e});
                }
        }
    }

    Box box_;
    std::array<int, kMaxDim> ext_{1, 1, 1};
    std::array<std::size_t, kMaxDim> edge_offset_{};
    std::size_t n_sites_ = 0, n_cells_ = 0;
    std::vector<Arrow> arrows_;
    std::vector<std::vector<std::uint32_t>> incident_;
};

inline Window window(int d, int radius) {
    if (radius < 0) throw std::invalid_argument("window radius must be nonnegative");
    return Window(Box::cube(d, Site{}, radius));
}

}  // namespace cpdre
