// SPDX-License-Identifier: Apache-2.0
// v2g: scenario runner, log verifier and scheduler oracle.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "v2g/optimizer/solver.hpp"
#include "v2g/oracle/brute_force.hpp"
#include "v2g/service/api.hpp"
#include "v2g/service/replay.hpp"

using nlohmann::json;
using namespace v2g;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return json::parse(in);
}

int run(const std::string& scenario_path, const std::string& until, std::optional<double> speed,
        const std::string& listen, bool baseline, const std::string& log_dir, std::optional<std::uint64_t> seed) {
    svc::Scenario scenario = svc::load_scenario(scenario_path);
    svc::ServiceOptions opt;
    opt.engine.baseline = baseline;
    opt.engine.seed = seed;
    opt.speed = speed;
    if (!until.empty()) {
        opt.until = parse_duration(until);
    }
    if (!log_dir.empty()) {
        opt.log_dir = log_dir;
    }
    const double scale = speed.value_or(scenario.time_scale);

    if (listen.empty() && scale <= 0.0) {
        // headless, as fast as possible
        std::unique_ptr<svc::EventLogWriter> log;
        if (opt.log_dir) {
            std::filesystem::create_directories(*opt.log_dir);
            log = std::make_unique<svc::EventLogWriter>(
                (std::filesystem::path(*opt.log_dir) /
                 (scenario.name + "-" + std::to_string(seed.value_or(scenario.seed)) + ".ndjson"))
                    .string());
        }
        std::size_t pending = 0;
        const json metrics = svc::run_scenario(scenario, opt.engine, opt.until, [&](const svc::EventRecord&, const std::string& line) {
            if (log) {
                log->append(line);
                if (++pending == 4096) {
                    log->commit();
                    pending = 0;
                }
            }
        });
        if (log) {
            log->commit();
            std::cerr << "event log: " << log->path() << "\n";
        }
        std::cout << metrics.dump(2) << "\n";
        return 0;
    }

    if (!listen.empty()) {
        const auto colon = listen.rfind(':');
        if (colon == std::string::npos) {
            throw std::runtime_error("--listen expects host:port");
        }
        opt.host = listen.substr(0, colon);
        opt.port = std::stoi(listen.substr(colon + 1));
    }
    svc::ControlService service(opt);
    service.load(std::move(scenario));
    service.start();
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    if (opt.host) {
        std::cerr << "listening on http://" << *opt.host << ":" << service.port() << "/api/v1\n";
    }
    if (auto p = service.log_path()) {
        std::cerr << "event log: " << *p << "\n";
    }
    while (!g_interrupted && !service.wait(std::chrono::milliseconds(100))) {
    }
    service.stop();
    const auto snap = service.snapshot();
    if (snap->contains("metrics")) {
        std::cout << snap->at("metrics").dump(2) << "\n";
    }
    return 0;
}

int verify(const std::string& path) {
    const auto report = svc::verify_log_file(path);
    std::cout << report.to_json().dump(2) << "\n";
    return report.ok() ? 0 : 1;
}

int run_oracle(const std::string& path, double step) {
    const auto instance = opt::instance_from_json(read_json_file(path));
    opt::validate(instance);
    const auto result = oracle::brute_force(instance, step);
    json out = opt::to_json(result.schedule);
    out["states"] = result.states;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int solve(const std::string& path) {
    const auto instance = opt::instance_from_json(read_json_file(path));
    opt::validate(instance);
    const auto schedule = opt::solve_schedule(instance);
    json out = opt::to_json(schedule);
    out["violations"] = opt::verify(instance, schedule);
    std::cout << out.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"V2G charging coordination: simulation, control service and tools"};
    app.require_subcommand(1);

    std::string scenario_path, until, listen, log_dir;
    std::optional<double> speed;
    std::optional<std::uint64_t> seed;
    bool baseline = false;
    auto* run_cmd = app.add_subcommand("run", "run a scenario (headless, or serving the HTTP API with --listen)");
    run_cmd->add_option("--scenario", scenario_path, "scenario TOML file")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--until", until, "stop the clock at this sim time (e.g. 1h, 90m)");
    run_cmd->add_option("--speed", speed, "sim-seconds per wall-second; 0 runs as fast as possible");
    run_cmd->add_option("--listen", listen, "serve the API on addr:port");
    run_cmd->add_flag("--baseline", baseline, "uncoordinated charging: every EV at full power from plug-in");
    run_cmd->add_option("--log-dir", log_dir, "directory for the NDJSON event log");
    run_cmd->add_option("--seed", seed, "override the scenario seed");

    std::string log_path;
    auto* verify_cmd = app.add_subcommand("verify", "replay an event log and check its invariants");
    verify_cmd->add_option("--log", log_path, "event log (NDJSON)")->required()->check(CLI::ExistingFile);

    std::string instance_path;
    double step = 1.0;
    auto* oracle_cmd = app.add_subcommand("oracle", "brute-force optimum of a small instance");
    oracle_cmd->add_option("--instance", instance_path, "instance JSON")->required()->check(CLI::ExistingFile);
    oracle_cmd->add_option("--step", step, "power grid in kW")->capture_default_str();

    std::string solve_path;
    auto* solve_cmd = app.add_subcommand("solve", "solve an instance with the scheduler");
    solve_cmd->add_option("--instance", solve_path, "instance JSON")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) {
            return run(scenario_path, until, speed, listen, baseline, log_dir, seed);
        }
        if (*verify_cmd) {
            return verify(log_path);
        }
        if (*oracle_cmd) {
            return run_oracle(instance_path, step);
        }
        if (*solve_cmd) {
            return solve(solve_path);
        }
    } catch (const svc::SvcError& e) {
        std::cerr << "error: " << svc::to_string(e.code()) << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
