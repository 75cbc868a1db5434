#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpdre/presets.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2, kCheck = 3 };

struct Args {
    std::string config, preset, out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<long> jobs;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Args& a) {
    cmd->add_option("--config", a.config, "JSON config file");
    cmd->add_option("--preset", a.preset, "preset name (see list-presets)");
    cmd->add_option("--seed", a.seed, "master seed (u64)");
    cmd->add_option("--override", a.overrides, "key.path=value, applied after the config; repeatable");
}

cpdre::ExperimentConfig load(const Args& a) {
    std::optional<cpdre::json> user;
    if (!a.config.empty()) {
        std::ifstream f(a.config);
        if (!f) throw cpdre::ConfigError("cannot open config " + a.config);
        try {
            user = cpdre::json::parse(f);
        } catch (const cpdre::json::parse_error& e) {
            throw cpdre::ConfigError("config " + a.config + ": " + e.what());
        }
    }
    std::optional<std::string> preset;
    if (!a.preset.empty()) preset = a.preset;
    auto c = cpdre::resolve_config(user, preset, a.overrides, a.seed);
    cpdre::find_preset(c.preset);
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contact process in a dynamical random environment"};
    app.require_subcommand(1);
    Args a;
    auto* run = app.add_subcommand("run", "run a preset and write CSV outputs");
    add_common(run, a);
    run->add_option("--jobs", a.jobs, "worker threads (default: CPDRE_JOBS, else 1)");
    run->add_option("--out", a.out, "output directory");
    auto* validate = app.add_subcommand("validate", "resolve and check a config without running it");
    add_common(validate, a);
    app.add_subcommand("list-presets", "list presets with descriptions");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }
    try {
        if (app.got_subcommand("list-presets")) {
            for (const auto& p : cpdre::presets()) std::cout << p.name << "\t" << p.description << "\n";
            return kOk;
        }
        const auto cfg = load(a);
        if (app.got_subcommand("validate")) {
            std::cout << cfg.raw.dump(2) << "\nconfig_hash " << cpdre::config_hash(cfg.raw) << "\n";
            return kOk;
        }
        const unsigned jobs = cpdre::resolve_jobs(a.jobs);
        cpdre::PresetOutput out;
        try {
            out = cpdre::run_preset(cfg, jobs);
            cpdre::write_outputs(a.out, cfg, out);
        } catch (const cpdre::ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            std::cerr << "runtime failure: " << e.what() << "\n";
            return kRuntime;
        }
        for (const auto& c : out.checks) std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  " << c.detail << "\n";
        return out.all_pass() ? kOk : kCheck;
    } catch (const cpdre::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return kRuntime;
    }
}
