#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cpdre/presets.hpp"

using namespace cpdre;
namespace fs = std::filesystem;

namespace {

ExperimentConfig resolve(const std::string& preset, std::vector<std::string> ov = {}) {
    return resolve_config(std::nullopt, preset, ov, std::nullopt);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

// Every file under dir, name -> bytes.
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::directory_iterator(dir)) m[e.path().filename().string()] = slurp(e.path());
    return m;
}

fs::path tmpdir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cpdre_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string config_error(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, PresetDefaultsResolve) {
    for (const auto& p : presets()) {
        auto c = resolve(p.name);
        EXPECT_EQ(c.preset, p.name);
        EXPECT_EQ(c.raw, p.defaults);
    }
}

TEST(Config, Errors) {
    EXPECT_NE(config_error([] { resolve("nope"); }).find("unknown preset"), std::string::npos);
    EXPECT_NE(config_error([] { resolve("oracle", {"bogus=1"}); }).find("unknown key"), std::string::npos);
    EXPECT_NE(config_error([] { resolve("oracle", {"seed=-3"}); }).find("seed"), std::string::npos);
    EXPECT_NE(config_error([] { resolve("oracle", {"dimension=9"}); }).find("dimension"), std::string::npos);
    EXPECT_NE(config_error([] { resolve("oracle", {"window=2.5"}); }).find("window"), std::string::npos);
    EXPECT_NE(config_error([] { resolve("oracle", {"horizon=0"}); }).find("horizon"), std::string::npos);
    EXPECT_NE(config_error([] { resolve("oracle", {"noequals"}); }), "");
    EXPECT_NE(config_error([] { resolve("oracle", {"model.rates.kind=\"warp\""}); }), "");
    EXPECT_NE(config_error([] { resolve("oracle", {"model.rates.lambda=-1"}); }), "");
    EXPECT_NE(config_error([] { resolve_config(std::nullopt, std::nullopt, {}, std::nullopt); }).find("no preset"), std::string::npos);
    EXPECT_NE(config_error([] { resolve_config(json::array(), std::string("oracle"), {}, std::nullopt); }), "");
}

TEST(Config, PresetParamErrors) {
    auto c = resolve("shape", {"trials=0"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("at least 10 surviving trials required"), std::string::npos);
    c = resolve("shape", {"params.radii=[7,14]"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("radii"), std::string::npos);
    c = resolve("shape", {"params.radii=[7,14,100]"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("window"), std::string::npos);
    c = resolve("block", {"window=10"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("window"), std::string::npos);
    c = resolve("block", {"params.a=1", "params.n=3"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }), "");
    c = resolve("essential", {"params.x=[5,5]"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("params.x"), std::string::npos);
    c = resolve("essential", {"params.x=[30]"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("collar"), std::string::npos);
    c = resolve("duality", {R"(model.background={"kind":"iu","site":{"n":3,"q":[-1,1,0,0,-1,1,1,0,-1]},"edge":{"n":3,"q":[-1,1,0,0,-1,1,1,0,-1]}})",
                            R"(model.rates={"kind":"table","N":2,"lambda":[1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1],"r":[1,1,1]})"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("reversible"), std::string::npos);
    c = resolve("tails", {"params.lambda_grid=[]"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("lambda_grid"), std::string::npos);
    c = resolve("oracle", {"params.times=[2,1]"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("times"), std::string::npos);
    c = resolve("tails", {"params.level=5"});
    EXPECT_NE(config_error([&] { run_preset(c, 1); }).find("level"), std::string::npos);
}

TEST(Config, OverridesAndLayering) {
    json user = {{"preset", "oracle"}, {"trials", 7}, {"params", {{"z_max", 3.5}}}};
    auto c = resolve_config(user, std::nullopt, {"params.times=[1,2]", "model.rates.lambda=2.5"}, 99);
    EXPECT_EQ(c.trials, 7u);
    EXPECT_EQ(c.seed, 99u);
    EXPECT_DOUBLE_EQ(c.param("z_max"), 3.5);
    EXPECT_EQ(c.vparam("times"), (std::vector<double>{1, 2}));
    EXPECT_DOUBLE_EQ(c.model.rates.lambda_at(2), 2.5);
    // A user model replaces the preset model rather than merging into it.
    json u2 = {{"model", {{"rates", {{"kind", "constant"}, {"lambda", 1}, {"r", 1}}}, {"background", {{"kind", "none"}}}}}};
    auto c2 = resolve_config(u2, std::string("oracle"), {}, std::nullopt);
    EXPECT_FALSE(c2.raw.at("model").at("background").contains("alpha_v"));
    // --preset wins over the file.
    auto c3 = resolve_config(json{{"preset", "stream"}}, std::string("oracle"), {}, std::nullopt);
    EXPECT_EQ(c3.preset, "oracle");
    // Unparseable values are taken as strings.
    json d = json::object();
    apply_override(d, "a.b=hello");
    EXPECT_EQ(d["a"]["b"], "hello");
    apply_override(d, "a.c=[1,2]");
    EXPECT_EQ(d["a"]["c"], json::array({1, 2}));
}

TEST(Config, HashIsStable) {
    const auto a = resolve("oracle"), b = resolve("oracle");
    EXPECT_EQ(config_hash(a.raw), config_hash(b.raw));
    EXPECT_NE(config_hash(a.raw), config_hash(resolve("oracle", {"seed=2"}).raw));
    // FNV-1a 64 reference values.
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(Config, ShippedConfigsMatchDefaults) {
    for (const auto& p : presets()) {
        const fs::path f = fs::path(CPDRE_SOURCE_DIR) / "configs" / (p.name + ".json");
        ASSERT_TRUE(fs::exists(f)) << f;
        std::ifstream in(f);
        EXPECT_EQ(json::parse(in), p.defaults) << p.name;
    }
}

TEST(Jobs, Resolution) {
    EXPECT_EQ(resolve_jobs(4), 4u);
    EXPECT_THROW(resolve_jobs(0), ConfigError);
    ::setenv("CPDRE_JOBS", "3", 1);
    EXPECT_EQ(resolve_jobs(std::nullopt), 3u);
    EXPECT_EQ(resolve_jobs(2), 2u);
    ::setenv("CPDRE_JOBS", "x", 1);
    EXPECT_THROW(resolve_jobs(std::nullopt), ConfigError);
    ::unsetenv("CPDRE_JOBS");
    EXPECT_EQ(resolve_jobs(std::nullopt), 1u);
}

TEST(Jobs, ParallelTrialsKeepOrderAndRethrow) {
    auto v = parallel_trials<std::size_t>(1000, 4, [](std::size_t i) { return i * i; });
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(v[i], i * i);
    EXPECT_THROW(parallel_trials<int>(50, 3,
                                      [](std::size_t i) -> int {
                                          if (i == 17) throw std::runtime_error("boom");
                                          return 0;
                                      }),
                 std::runtime_error);
}

TEST(Outputs, ByteDeterministicAcrossRunsAndJobs) {
    for (const std::string name : {"regions", "essential", "stream"}) {
        std::vector<std::string> ov{"trials=30"};
        if (name == "essential") ov.push_back("params.bad_growth_trials=20");
        if (name == "stream") ov = {"params.streams=5", "params.tables=3"};
        const auto c = resolve(name, ov);
        const auto d1 = tmpdir(name + "1"), d2 = tmpdir(name + "2"), d3 = tmpdir(name + "3");
        write_outputs(d1, c, run_preset(c, 1));
        write_outputs(d2, c, run_preset(c, 1));
        write_outputs(d3, c, run_preset(c, 3));
        const auto t1 = tree(d1);
        EXPECT_EQ(t1, tree(d2)) << name;
        EXPECT_EQ(t1, tree(d3)) << name;
        EXPECT_TRUE(t1.count("manifest.json"));
        EXPECT_TRUE(t1.count("checks.csv"));
        for (const auto& [f, body] : t1) {
            if (f.size() > 4 && f.substr(f.size() - 4) == ".csv") {
                const auto meta = f.substr(0, f.size() - 4) + ".meta.json";
                ASSERT_TRUE(t1.count(meta)) << f;
                const auto m = json::parse(t1.at(meta));
                const auto header = body.substr(0, body.find('\n'));
                std::string cols;
                for (const auto& col : m.at("columns")) {
                    cols += (cols.empty() ? "" : ",") + col.at("name").get<std::string>();
                    EXPECT_TRUE(col.contains("unit"));
                }
                EXPECT_EQ(header, cols) << f;
            }
        }
        const auto man = json::parse(t1.at("manifest.json"));
        EXPECT_EQ(man.at("config_hash"), config_hash(c.raw));
        EXPECT_EQ(man.at("seed"), c.seed);
        EXPECT_TRUE(man.at("versions").contains("cpdre"));
    }
}

TEST(Outputs, SeedChangesResults) {
    const auto a = run_preset(resolve("regions", {"trials=10"}), 1);
    const auto b = run_preset(resolve("regions", {"trials=10", "seed=2"}), 1);
    EXPECT_NE(a.tables[0].csv(), b.tables[0].csv());
}

TEST(Outputs, FormatAndCsvShape) {
    EXPECT_EQ(fmt(std::nan("")), "NA");
    EXPECT_EQ(fmt(kInf), "inf");
    EXPECT_EQ(fmt(0.5), "0.5");
    CsvTable t("t", {{"a", "s", ""}, {"b", "", ""}});
    t.row({"1", "2"});
    EXPECT_THROW(t.row({"1"}), std::logic_error);
    EXPECT_EQ(t.csv(), "a,b\n1,2\n");
    EXPECT_EQ(t.meta().at("columns")[0].at("unit"), "s");
}

TEST(Aggregate, PermutationInvariant) {
    std::vector<TrialRecord> r;
    for (std::size_t i = 0; i < 40; ++i)
        r.push_back({i, i % 7 == 3 ? TrialStatus::Censored : TrialStatus::Ok, {{"x", static_cast<double>(i) * 0.5}, {"y", 1.0 / (i + 1)}}});
    const auto base = aggregate(r, 40);
    std::mt19937 g(5);
    for (int k = 0; k < 5; ++k) {
        std::shuffle(r.begin(), r.end(), g);
        const auto s = aggregate(r, 40);
        ASSERT_EQ(s.size(), base.size());
        for (std::size_t m = 0; m < s.size(); ++m) {
            EXPECT_EQ(s[m].metric, base[m].metric);
            EXPECT_EQ(s[m].n, base[m].n);
            EXPECT_EQ(s[m].mean, base[m].mean);
            EXPECT_EQ(s[m].se, base[m].se);
        }
    }
    EXPECT_EQ(base[0].censored, 6u);
    EXPECT_EQ(base[0].n, 34u);
}

TEST(Aggregate, AllCensoredAndMissing) {
    std::vector<TrialRecord> r;
    for (std::size_t i = 0; i < 5; ++i) r.push_back({i, TrialStatus::Censored, {{"x", 1.0}}});
    const auto s = aggregate(r, 5);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].n, 0u);
    EXPECT_TRUE(std::isnan(s[0].mean));
    const auto tab = summary_table(s);
    EXPECT_NE(tab.csv().find("NA"), std::string::npos);
    r.pop_back();
    EXPECT_THROW(aggregate(r, 5), std::invalid_argument);
    r.push_back(r.front());
    EXPECT_THROW(aggregate(r, 5), std::invalid_argument);
}

TEST(Presets, StreamReconstructsConfigModel) {
    auto c = resolve("stream", {"params.streams=3", "params.tables=5"});
    const auto o = run_preset(c, 1);
    ASSERT_FALSE(o.checks.empty());
    EXPECT_TRUE(o.checks[0].pass) << o.checks[0].detail;
}

TEST(Presets, TauExplorationWeights) {
    // Sampling at the target density gives unit weights, and a dead origin
    // (no open edges) has tau = 1.
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto t = explore_tau(1, 0.6, 0.6, 8, 1000, s);
        EXPECT_NEAR(t.weight, 1.0, 1e-12);
        if (t.tau > 0) { EXPECT_LE(t.tau, 8); }
    }
    // Importance-sampled P(tau = 1) = (1-p)^2 in d = 1.
    const double p = 0.9, q = 0.5;
    double est = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const auto t = explore_tau(1, p, q, 3, 100, derive_trial_seed(9, static_cast<std::uint64_t>(i)));
        if (t.tau == 1) est += t.weight;
    }
    est /= n;
    EXPECT_NEAR(est, 0.01, 4 * std::sqrt(0.04 * 0.04 * 0.25 * 0.75 / n));
}
