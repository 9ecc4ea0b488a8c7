#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uncap/engine.hpp"
#include "uncap/sha256.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace uncap;

namespace {

struct OutputDir {
    fs::path dir;
    std::map<std::string, std::string> hashes;  // relative path -> sha256

    explicit OutputDir(const std::string& path) : dir(path) { fs::create_directories(dir); }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw Error("cannot write output file: " + (dir / name).string());
        out << content;
        out.close();
        hashes[name] = sha256_hex(content);
    }

    void finish() {
        ordered_json manifest;
        for (const auto& [name, hash] : hashes) manifest["files"][name] = hash;
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << "\n";
    }
};

ordered_json metrics_json(const EpisodeMetrics& m) {
    auto num = [](double v) -> ordered_json {
        if (std::isnan(v)) return nullptr;
        return v;
    };
    return ordered_json{{"ds", num(m.ds)},
                        {"rc", num(m.rc)},
                        {"ip", num(m.ip)},
                        {"tb_kb", num(m.tb_kb)},
                        {"ig_decision", num(m.ig_decision)},
                        {"ig_perception", num(m.ig_perception)},
                        {"min_distance_margin_m", num(m.min_distance_margin_m)},
                        {"jerk_rms", num(m.jerk_rms)}};
}

// Config layering: struct defaults, then the optional JSON file, then flags.
void apply_config_file(SimConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (j.contains("mode")) {
        auto m = parse_mode(j["mode"].get<std::string>());
        if (!m) throw ParseError(path + ": unknown mode");
        cfg.mode = *m;
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("spare_distance_m"))
        cfg.spare.distance_threshold_m = j["spare_distance_m"].get<double>();
    if (j.contains("planner_latency_s")) cfg.planner_latency_s = j["planner_latency_s"].get<double>();
    if (j.contains("image_payload_bytes"))
        cfg.image_payload_bytes = j["image_payload_bytes"].get<long>();
    if (j.contains("drop_probability")) cfg.drop_probability = j["drop_probability"].get<double>();
    if (j.contains("calibrator")) cfg.calibrator_path = j["calibrator"].get<std::string>();
    if (j.contains("penalties"))
        cfg.penalties = load_penalty_table(j["penalties"].get<std::string>());
    if (j.contains("planner"))
        cfg.use_external_planner = j["planner"].get<std::string>() == "llm";
    if (j.contains("model")) cfg.llm.model = j["model"].get<std::string>();
    if (j.contains("base_url")) cfg.llm.base_url = j["base_url"].get<std::string>();
    if (j.contains("broadcast_rate_bps"))
        cfg.channel.broadcast_rate_bps = j["broadcast_rate_bps"].get<double>();
    if (j.contains("groupcast_rate_bps"))
        cfg.channel.groupcast_rate_bps = j["groupcast_rate_bps"].get<double>();
}

std::unique_ptr<Planner> make_planner(const SimConfig& cfg) {
    if (cfg.use_external_planner) return std::make_unique<LlmPlanner>(cfg.llm);
    return std::make_unique<MockPlanner>();
}

std::vector<Scenario> load_scenarios(const std::vector<std::string>& paths) {
    std::vector<Scenario> out;
    for (const auto& p : paths) out.push_back(load_scenario(p));
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAV cooperation simulator: uncertainty-gated message sharing "
                 "with bandwidth and driving-score accounting"};
    app.require_subcommand(1);

    // Shared simulation options.
    SimConfig cfg;
    std::string config_path, mode_str = "uncap", planner_str = "mock";

    auto add_sim_options = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (flags override it)");
        sub->add_option("--mode", mode_str, "no_comm|broadcast_all|fuse_no_spare|uncap|uncap_images");
        sub->add_option("--seed", cfg.seed, "RNG seed");
        sub->add_option("--spare-distance", cfg.spare.distance_threshold_m,
                        "partner-selection distance threshold (m)");
        sub->add_option("--planner-latency", cfg.planner_latency_s,
                        "seconds between query and action application");
        sub->add_option("--drop", cfg.drop_probability,
                        "per-message drop probability (experimental)");
        sub->add_option("--calibrator", cfg.calibrator_path, "saved calibrator JSON");
        sub->add_option("--penalties", "penalty-coefficient JSON table")
            ->check(CLI::ExistingFile);
        sub->add_option("--planner", planner_str, "mock|llm");
        sub->add_option("--model", cfg.llm.model, "external planner model name");
        sub->add_option("--base-url", cfg.llm.base_url,
                        "external planner base URL (or UNCAP_BASE_URL)");
    };

    // Layering: struct defaults < config file < explicitly passed flags.
    auto finalize_cfg = [&](CLI::App* sub) {
        if (!config_path.empty()) {
            SimConfig flags = cfg;  // flags were parsed directly into cfg
            cfg = SimConfig{};
            apply_config_file(cfg, config_path);
            if (sub->count("--seed")) cfg.seed = flags.seed;
            if (sub->count("--spare-distance")) cfg.spare = flags.spare;
            if (sub->count("--planner-latency"))
                cfg.planner_latency_s = flags.planner_latency_s;
            if (sub->count("--drop")) cfg.drop_probability = flags.drop_probability;
            if (sub->count("--calibrator")) cfg.calibrator_path = flags.calibrator_path;
            if (sub->count("--model")) cfg.llm.model = flags.llm.model;
            if (sub->count("--base-url")) cfg.llm.base_url = flags.llm.base_url;
        }
        if (sub->count("--mode") || config_path.empty()) {
            auto m = parse_mode(mode_str);
            if (!m) {
                std::string valid;
                for (SimMode mm : all_modes()) valid += std::string(valid.empty() ? "" : ", ") + mode_name(mm);
                throw CLI::ValidationError("--mode",
                                           "unknown mode '" + mode_str + "' (valid: " + valid + ")");
            }
            cfg.mode = *m;
        }
        if (sub->count("--planner") || config_path.empty())
            cfg.use_external_planner = planner_str == "llm";
        if (sub->count("--penalties"))
            cfg.penalties = load_penalty_table(sub->get_option("--penalties")->as<std::string>());
    };

    // ---- run ----
    auto* run_cmd = app.add_subcommand("run", "Run one episode and write its log and metrics");
    std::string run_scenario, run_out = "out";
    run_cmd->add_option("--scenario", run_scenario, "scenario JSON")->required()
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--out", run_out, "output directory");
    add_sim_options(run_cmd);

    // ---- suite ----
    auto* suite_cmd =
        app.add_subcommand("suite", "Run scenarios x modes x seeds and write a CSV summary");
    std::vector<std::string> suite_scenarios;
    std::string suite_modes = "no_comm,broadcast_all,fuse_no_spare,uncap";
    std::string suite_seeds = "1";
    std::string suite_out = "out";
    int suite_jobs = 1;
    bool suite_logs = false;
    suite_cmd->add_option("--scenario", suite_scenarios, "scenario JSON (repeatable)")
        ->required()->check(CLI::ExistingFile);
    suite_cmd->add_option("--modes", suite_modes, "comma-separated mode list");
    suite_cmd->add_option("--seeds", suite_seeds, "comma-separated seed list");
    suite_cmd->add_option("--out", suite_out, "output directory");
    suite_cmd->add_option("--jobs", suite_jobs, "parallel workers")->check(CLI::PositiveNumber);
    suite_cmd->add_flag("--logs", suite_logs, "also write per-episode JSONL logs");
    add_sim_options(suite_cmd);

    // ---- calibrate ----
    auto* cal_cmd = app.add_subcommand("calibrate", "Fit and save a conformal calibrator");
    int cal_n = 1000, cal_classes = 4;
    double cal_temp = 0.3;
    uint64_t cal_seed = 7;
    std::string cal_mode = "plain", cal_out = "calibrator.json";
    cal_cmd->add_option("--n", cal_n, "calibration-set size")->check(CLI::PositiveNumber);
    cal_cmd->add_option("--classes", cal_classes, "number of classes")->check(CLI::PositiveNumber);
    cal_cmd->add_option("--noise-temp", cal_temp, "detector noise temperature");
    cal_cmd->add_option("--seed", cal_seed, "RNG seed");
    cal_cmd->add_option("--cdf", cal_mode, "plain|corrected");
    cal_cmd->add_option("--out", cal_out, "output JSON path");

    // ---- report ----
    auto* report_cmd =
        app.add_subcommand("report", "Recompute metrics from a saved episode log");
    std::string report_log, report_scenario;
    report_cmd->add_option("--log", report_log, "episode JSONL log")->required()
        ->check(CLI::ExistingFile);
    report_cmd->add_option("--scenario", report_scenario, "scenario JSON")->required()
        ->check(CLI::ExistingFile);

    // ---- render ----
    auto* render_cmd = app.add_subcommand("render", "Render a top-down SVG of a scenario tick");
    std::string render_scenario, render_out = "scene.svg";
    int render_tick = 0;
    render_cmd->add_option("--scenario", render_scenario, "scenario JSON")->required()
        ->check(CLI::ExistingFile);
    render_cmd->add_option("--tick", render_tick, "tick to render");
    render_cmd->add_option("--out", render_out, "output SVG path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1
    }

    try {
        if (*run_cmd) {
            finalize_cfg(run_cmd);
            Scenario scenario = load_scenario(run_scenario);
            auto planner = make_planner(cfg);
            EpisodeResult result = run_episode(scenario, cfg, *planner);
            OutputDir out(run_out);
            out.write("episode.jsonl", result.log.to_jsonl());
            out.write("metrics.json", metrics_json(result.metrics).dump(2) + "\n");
            out.finish();
            std::cout << "scenario=" << scenario.name << " mode=" << mode_name(cfg.mode)
                      << " seed=" << cfg.seed << "\n"
                      << metrics_json(result.metrics).dump(2) << "\n";
        } else if (*suite_cmd) {
            finalize_cfg(suite_cmd);
            std::vector<Scenario> scenarios = load_scenarios(suite_scenarios);
            std::vector<SimMode> modes;
            for (const auto& tok : CLI::detail::split(suite_modes, ',')) {
                auto m = parse_mode(tok);
                if (!m) throw ParseError("unknown mode '" + tok + "'");
                modes.push_back(*m);
            }
            std::vector<uint64_t> seeds;
            for (const auto& tok : CLI::detail::split(suite_seeds, ','))
                seeds.push_back(std::stoull(tok));
            SuiteResult suite = run_suite(scenarios, modes, seeds, cfg, suite_jobs);
            OutputDir out(suite_out);
            out.write("summary.csv", suite.to_csv());
            if (suite_logs)
                for (size_t i = 0; i < suite.logs.size(); ++i) {
                    const auto& r = suite.rows[i];
                    std::string name = std::string(mode_name(r.mode)) + "_" + r.scenario + "_" +
                                       std::to_string(r.seed) + ".jsonl";
                    out.write(name, suite.logs[i].to_jsonl());
                }
            out.finish();
            std::cout << suite.to_csv();
        } else if (*cal_cmd) {
            SensorConfig sensor;
            sensor.noise_temp = cal_temp;
            sensor.num_classes = cal_classes;
            CdfMode mode;
            if (cal_mode == "plain")
                mode = CdfMode::plain;
            else if (cal_mode == "corrected")
                mode = CdfMode::corrected;
            else
                throw ParseError("unknown --cdf mode '" + cal_mode + "'");
            NonconformityModel model =
                fit_calibrator(synthesize_calibration_set(cal_n, sensor, cal_seed), mode);
            save_calibrator(model, cal_out);
            std::cout << "wrote " << cal_out << " (n=" << model.n() << ")\n";
        } else if (*report_cmd) {
            Scenario scenario = load_scenario(report_scenario);
            EpisodeLog log = EpisodeLog::from_jsonl(read_file(report_log));
            EpisodeMetrics m = compute_metrics(log, scenario);
            std::cout << metrics_json(m).dump(2) << "\n";
        } else if (*render_cmd) {
            Scenario scenario = load_scenario(render_scenario);
            std::vector<FusedObject> objs;
            for (const auto& o : scenario.objects) {
                FusedObject f;
                f.object_id = o.object_id;
                f.p_fused = 1.0;
                const ObjectPose& pose = o.pose_at(render_tick);
                f.location = pose.location;
                f.speed = pose.speed;
                f.heading = pose.heading;
                f.extent = o.extent;
                objs.push_back(f);
            }
            std::vector<CavState> states;
            for (const auto& c : scenario.cavs) states.push_back(c.initial);
            render_bev(objs, states, render_out);
            std::cout << "wrote " << render_out << "\n";
        }
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;  // runtime errors exit 2
    }
    return 0;
}
