#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lattice.hpp"
#include "model.hpp"
#include "stats.hpp"

#ifndef CPDRE_VERSION
#define CPDRE_VERSION "0.0.0"
#endif

namespace cpdre {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------ model JSON

namespace detail {

inline double num(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing \"" + key + "\"");
    if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

inline double num_or(const json& j, const char* key, double def, const std::string& where) {
    return j.contains(key) ? num(j, key, where) : def;
}

inline std::vector<double> nums(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_array()) throw ConfigError(where + ": \"" + key + "\" must be an array of numbers");
    std::vector<double> v;
    for (const auto& x : j.at(key)) {
        if (!x.is_number()) throw ConfigError(where + "." + key + ": expected numbers only");
        v.push_back(x.get<double>());
    }
    return v;
}

inline std::string kind(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    if (!j.contains("kind") || !j.at("kind").is_string()) throw ConfigError(where + ": missing string \"kind\"");
    return j.at("kind").get<std::string>();
}

inline Generator generator(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected {\"n\": .., \"q\": [..]}");
    const double n = num(j, "n", where);
    if (n < 1 || n != std::floor(n)) throw ConfigError(where + ".n: must be a positive integer");
    auto q = nums(j, "q", where);
    if (q.size() != static_cast<std::size_t>(n * n)) throw ConfigError(where + ".q: needs n*n entries, row-major");
    return Generator(static_cast<std::size_t>(n), q);
}

inline SpinRates spin_rates(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected {\"up\": [..], \"down\": [..]}");
    return SpinRates{nums(j, "up", where), nums(j, "down", where)};
}

}  // namespace detail

inline RateTable rates_from_json(const json& j) {
    const std::string w = "model.rates";
    const auto k = detail::kind(j, w);
    if (k == "constant") return RateTable::constant(detail::num(j, "lambda", w), detail::num(j, "r", w));
    if (k == "edge_linear") return RateTable::edge_linear(detail::num(j, "lambda", w), detail::num(j, "r", w));
    if (k == "switching")
        return RateTable::switching(detail::num(j, "l00", w), detail::num(j, "l01", w), detail::num(j, "l10", w),
                                    detail::num(j, "l11", w), detail::num(j, "r0", w), detail::num(j, "r1", w));
    if (k == "table") {
        const double N = detail::num(j, "N", w);
        if (N < 0 || N != std::floor(N)) throw ConfigError(w + ".N: must be a nonnegative integer");
        return RateTable(static_cast<int>(N), detail::nums(j, "lambda", w), detail::nums(j, "r", w));
    }
    throw ConfigError(w + ".kind: unknown \"" + k + "\" (constant, edge_linear, switching, table)");
}

inline BackgroundSpec background_from_json(const json& j) {
    const std::string w = "model.background";
    const auto k = detail::kind(j, w);
    if (k == "none") return IndependentUpdates{Generator(1, {0.0}), Generator(1, {0.0})};
    if (k == "dp")
        return DynamicalPercolation{detail::num_or(j, "alpha_v", 1, w), detail::num_or(j, "beta_v", 1, w),
                                    detail::num_or(j, "alpha_e", 1, w), detail::num_or(j, "beta_e", 1, w)};
    if (k == "iu") {
        if (!j.contains("site") || !j.contains("edge")) throw ConfigError(w + ": independent updates need \"site\" and \"edge\"");
        return IndependentUpdates{detail::generator(j.at("site"), w + ".site"), detail::generator(j.at("edge"), w + ".edge")};
    }
    if (k == "spin") {
        if (!j.contains("site") || !j.contains("edge")) throw ConfigError(w + ": spin systems need \"site\" and \"edge\"");
        const double r = detail::num_or(j, "range", 0, w);
        if (r < 0 || r != std::floor(r)) throw ConfigError(w + ".range: must be a nonnegative integer");
        return SpinSystem{static_cast<int>(r), detail::spin_rates(j.at("site"), w + ".site"), detail::spin_rates(j.at("edge"), w + ".edge")};
    }
    throw ConfigError(w + ".kind: unknown \"" + k + "\" (none, dp, iu, spin)");
}

inline Model model_from_json(const json& j) {
    if (!j.is_object() || !j.contains("rates") || !j.contains("background"))
        throw ConfigError("model: needs \"rates\" and \"background\"");
    try {
        Model m{rates_from_json(j.at("rates")), background_from_json(j.at("background"))};
        validate_model(m.rates, m.background);
        return m;
    } catch (const ModelError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
}

// ------------------------------------------------------------- config

struct ExperimentConfig {
    std::string preset;
    std::uint64_t seed = 1;
    int dimension = 1;
    int window = 25;
    double horizon = 20;
    double dt = 0.1;
    std::size_t trials = 100;
    Model model;
    json params = json::object();
    json raw;  // canonical merged document

    double param(const char* key) const {
        if (!params.contains(key) || !params.at(key).is_number())
            throw ConfigError("params." + std::string(key) + ": expected a number");
        return params.at(key).get<double>();
    }
    int iparam(const char* key) const {
        const double v = param(key);
        if (v != std::floor(v)) throw ConfigError("params." + std::string(key) + ": expected an integer");
        return static_cast<int>(v);
    }
    std::vector<double> vparam(const char* key) const {
        if (!params.contains(key) || !params.at(key).is_array()) throw ConfigError("params." + std::string(key) + ": expected an array");
        std::vector<double> v;
        for (const auto& x : params.at(key)) {
            if (!x.is_number()) throw ConfigError("params." + std::string(key) + ": expected numbers only");
            v.push_back(x.get<double>());
        }
        return v;
    }
};

// Recursive merge; objects merge key by key, anything else replaces.
inline void merge_into(json& base, const json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (base.contains(it.key()))
            merge_into(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

// key.path=value; the value is parsed as JSON when it parses, else taken as
// a string.
inline void apply_override(json& doc, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + spec + "\": expected key=value");
    const std::string key = spec.substr(0, eq), text = spec.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override \"" + spec + "\": empty key segment");
        if (!node->is_object()) throw ConfigError("override \"" + spec + "\": \"" + part + "\" is inside a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Hash of the canonical (sorted-key, compact) dump.
inline std::string config_hash(const json& doc) { return hex64(fnv1a64(doc.dump())); }

inline const std::vector<std::string>& known_top_keys() {
    static const std::vector<std::string> k{"preset", "seed", "dimension", "window", "horizon", "dt", "trials", "model", "params"};
    return k;
}

inline ExperimentConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (std::find(known_top_keys().begin(), known_top_keys().end(), it.key()) == known_top_keys().end())
            throw ConfigError("config: unknown key \"" + it.key() + "\"");
    ExperimentConfig c;
    c.raw = doc;
    if (!doc.contains("preset") || !doc.at("preset").is_string()) throw ConfigError("config: \"preset\" must be a string");
    c.preset = doc.at("preset").get<std::string>();
    auto integer = [&](const char* key, double lo, double hi) -> std::optional<double> {
        if (!doc.contains(key)) return std::nullopt;
        const auto& v = doc.at(key);
        if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
        const double x = v.get<double>();
        if (x != std::floor(x) || x < lo || x > hi)
            throw ConfigError(std::string(key) + ": expected an integer in [" + std::to_string(static_cast<long long>(lo)) + ", " +
                              std::to_string(static_cast<long long>(hi)) + "]");
        return x;
    };
    if (doc.contains("seed")) {
        if (!doc.at("seed").is_number_unsigned()) throw ConfigError("seed: expected an unsigned 64-bit integer");
        c.seed = doc.at("seed").get<std::uint64_t>();
    }
    if (auto d = integer("dimension", 1, kMaxDim)) c.dimension = static_cast<int>(*d);
    if (auto w = integer("window", 1, 100000)) c.window = static_cast<int>(*w);
    if (auto t = integer("trials", 0, 1e9)) c.trials = static_cast<std::size_t>(*t);
    if (doc.contains("horizon")) {
        if (!doc.at("horizon").is_number() || !(doc.at("horizon").get<double>() > 0)) throw ConfigError("horizon: expected a number > 0");
        c.horizon = doc.at("horizon").get<double>();
    }
    if (doc.contains("dt")) {
        if (!doc.at("dt").is_number() || !(doc.at("dt").get<double>() > 0)) throw ConfigError("dt: expected a number > 0");
        c.dt = doc.at("dt").get<double>();
    }
    if (!doc.contains("model")) throw ConfigError("config: missing \"model\"");
    c.model = model_from_json(doc.at("model"));
    if (doc.contains("params")) {
        if (!doc.at("params").is_object()) throw ConfigError("params: expected an object");
        c.params = doc.at("params");
    }
    return c;
}

// ---------------------------------------------------------------- CSV

struct Column {
    std::string name, unit, description;
};

inline std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// A table written as NAME.csv plus NAME.meta.json describing each column.
class CsvTable {
public:
    CsvTable(std::string name, std::vector<Column> cols, std::string description = {})
        : name_(std::move(name)), cols_(std::move(cols)), description_(std::move(description)) {}

    CsvTable& row(std::vector<std::string> cells) {
        if (cells.size() != cols_.size())
            throw std::logic_error("csv " + name_ + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                                   std::to_string(cols_.size()));
        rows_.push_back(std::move(cells));
        return *this;
    }

    const std::string& name() const { return name_; }
    std::size_t size() const { return rows_.size(); }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }
    const std::vector<Column>& columns() const { return cols_; }

    std::string csv() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < cols_.size(); ++i) os << (i ? "," : "") << cols_[i].name;
        os << '\n';
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
            os << '\n';
        }
        return os.str();
    }

    json meta() const {
        json cols = json::array();
        for (const auto& c : cols_) cols.push_back({{"name", c.name}, {"unit", c.unit}, {"description", c.description}});
        return {{"table", name_}, {"description", description_}, {"rows", rows_.size()}, {"columns", cols}};
    }

private:
    std::string name_;
    std::vector<Column> cols_;
    std::string description_;
    std::vector<std::vector<std::string>> rows_;
};

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct PresetOutput {
    std::vector<CsvTable> tables;
    std::vector<Check> checks;
    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + p.string());
}

// Writes every table, checks.csv and manifest.json. No timestamps or host
// details, so equal (config, seed) give byte-identical trees.
inline void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const PresetOutput& out) {
    std::filesystem::create_directories(dir);
    json files = json::array();
    auto emit = [&](const CsvTable& t) {
        write_file(dir / (t.name() + ".csv"), t.csv());
        write_file(dir / (t.name() + ".meta.json"), t.meta().dump(2) + "\n");
        files.push_back({{"table", t.name()}, {"csv", t.name() + ".csv"}, {"meta", t.name() + ".meta.json"}, {"rows", t.size()}});
    };
    for (const auto& t : out.tables) emit(t);
    CsvTable checks("checks", {{"check", "", "check name"}, {"pass", "bool", "1 if the check passed"}, {"detail", "", "measured values"}},
                    "pass/fail checks of the preset");
    for (const auto& c : out.checks) checks.row({c.name, c.pass ? "1" : "0", "\"" + c.detail + "\""});
    emit(checks);
    json manifest = {{"preset", cfg.preset},
                     {"seed", cfg.seed},
                     {"config", cfg.raw},
                     {"config_hash", config_hash(cfg.raw)},
                     {"hash_function", "fnv1a64 over the compact sorted-key JSON dump"},
                     {"versions", {{"cpdre", CPDRE_VERSION}, {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                                   {"compiler", __VERSION__}}},
                     {"files", files},
                     {"checks_passed", out.all_pass()}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ------------------------------------------------------- parallel trials

// --jobs if given, else CPDRE_JOBS, else 1.
inline unsigned resolve_jobs(std::optional<long> flag) {
    long j = 1;
    if (flag) {
        j = *flag;
    } else if (const char* env = std::getenv("CPDRE_JOBS")) {
        char* end = nullptr;
        j = std::strtol(env, &end, 10);
        if (end == env || *end != '\0') throw ConfigError("CPDRE_JOBS: expected a positive integer, got \"" + std::string(env) + "\"");
    }
    if (j < 1 || j > 1024) throw ConfigError("jobs: expected an integer in [1, 1024]");
    return static_cast<unsigned>(j);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results are stored by
// index so the output does not depend on scheduling. The first exception is
// rethrown after all workers stop.
template <class R, class F>
std::vector<R> parallel_trials(std::size_t n, unsigned jobs, F&& fn) {
    std::vector<R> out(n);
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr err;
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed) return;
            try {
                out[i] = fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu);
                if (!err) err = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(jobs, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    return out;
}

// ------------------------------------------------------------ aggregate

enum class TrialStatus { Ok, Censored, Failed };

struct TrialRecord {
    std::size_t trial = 0;
    TrialStatus status = TrialStatus::Ok;
    std::map<std::string, double> values;  // metric -> value; missing = not measured
};

struct MetricSummary {
    std::string metric;
    std::size_t n = 0, censored = 0, failed = 0;
    double mean = std::nan(""), se = std::nan(""), lo = std::nan(""), hi = std::nan("");
};

// Order-independent summary keyed by trial id. Every id in [0, expected)
// must appear exactly once; failed and censored trials carry through as
// counts and are excluded from the means.
inline std::vector<MetricSummary> aggregate(std::vector<TrialRecord> records, std::size_t expected) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.trial < b.trial; });
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].trial != i || i >= expected)
            throw std::invalid_argument("aggregate: trial " + std::to_string(i) + " missing or duplicated");
    if (records.size() != expected)
        throw std::invalid_argument("aggregate: trial " + std::to_string(records.size()) + " missing without a failure marker");
    std::map<std::string, std::vector<double>> vals;
    std::map<std::string, MetricSummary> out;
    std::size_t censored = 0, failed = 0;
    for (const auto& r : records) {
        censored += r.status == TrialStatus::Censored;
        failed += r.status == TrialStatus::Failed;
        for (const auto& [k, v] : r.values) {
            out[k].metric = k;
            if (r.status == TrialStatus::Ok && std::isfinite(v)) vals[k].push_back(v);
        }
    }
    std::vector<MetricSummary> s;
    for (auto& [k, m] : out) {
        m.censored = censored;
        m.failed = failed;
        const auto& v = vals[k];
        m.n = v.size();
        if (!v.empty()) m.mean = stats::mean(v);
        if (v.size() >= 2) {
            m.se = stats::std_error(v);
            m.lo = m.mean - 1.959963984540054 * m.se;
            m.hi = m.mean + 1.959963984540054 * m.se;
        }
        s.push_back(m);
    }
    return s;
}

inline CsvTable summary_table(const std::vector<MetricSummary>& s, const std::string& name = "summary") {
    CsvTable t(name,
               {{"metric", "", "metric name"},
                {"n", "trials", "trials with a finite value"},
                {"censored", "trials", "censored trials"},
                {"failed", "trials", "failed trials"},
                {"mean", "metric", "mean over uncensored trials"},
                {"se", "metric", "standard error"},
                {"ci_lo", "metric", "normal 95% lower bound"},
                {"ci_hi", "metric", "normal 95% upper bound"}},
               "per-metric aggregate");
    for (const auto& m : s)
        t.row({m.metric, std::to_string(m.n), std::to_string(m.censored), std::to_string(m.failed), fmt(m.mean), fmt(m.se), fmt(m.lo), fmt(m.hi)});
    return t;
}

}  // namespace cpdre
