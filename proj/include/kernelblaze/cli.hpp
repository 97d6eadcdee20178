#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "kernelblaze/engine.hpp"
#include "kernelblaze/http_agent.hpp"
#include "kernelblaze/metrics.hpp"

namespace kblaze {

// ---------------------------------------------------------------------------
// Engine config file (TOML-style sections of key = value pairs)

struct ConfigFile {
    std::map<std::string, std::string> values; // dotted keys

    static ConfigFile parse(const std::string& text) {
        ConfigFile config;
        std::string section;
        int line_no = 0;
        for (const auto& raw_line : split(text, '\n')) {
            ++line_no;
            std::string line = trim(raw_line);
            if (auto hash = line.find('#'); hash != std::string::npos) {
                // Keep '#' inside quoted values.
                if (line.find('"') == std::string::npos || hash < line.find('"'))
                    line = trim(line.substr(0, hash));
            }
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw Error(ErrorCode::ConfigError,
                                "line " + std::to_string(line_no) + ": unterminated section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw Error(ErrorCode::ConfigError,
                            "line " + std::to_string(line_no) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            if (key.empty())
                throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": empty key");
            config.values[section.empty() ? key : section + "." + key] = value;
        }
        return config;
    }

    static ConfigFile load(const std::string& path) { return parse(read_file(path)); }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    double number(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        char* end = nullptr;
        double v = std::strtod(it->second.c_str(), &end);
        if (end == it->second.c_str() || *end != '\0')
            throw Error(ErrorCode::ConfigError, key + ": not a number: " + it->second);
        return v;
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) const {
        return static_cast<std::int64_t>(number(key, static_cast<double>(fallback)));
    }

    bool boolean(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw Error(ErrorCode::ConfigError, key + ": expected true or false");
    }
};

inline void apply_config_file(IcrlConfig& config, const ConfigFile& file) {
    config.iterations = static_cast<int>(file.integer("icrl.iterations", config.iterations));
    config.rollout_steps = static_cast<int>(file.integer("icrl.rollout_steps", config.rollout_steps));
    config.trajectories_per_task =
        static_cast<int>(file.integer("icrl.trajectories", config.trajectories_per_task));
    config.top_k = static_cast<int>(file.integer("icrl.top_k", config.top_k));
    config.alpha = file.number("icrl.alpha", config.alpha);
    config.jobs = static_cast<int>(file.integer("icrl.jobs", config.jobs));
    config.kb_persistence = file.boolean("icrl.kb_persistence", config.kb_persistence);
    config.classifier.secondary_ratio =
        file.number("classifier.secondary_ratio", config.classifier.secondary_ratio);
    config.classifier.balanced_floor =
        file.number("classifier.balanced_floor", config.classifier.balanced_floor);
    config.classifier.occupancy_threshold_pct =
        file.number("classifier.occupancy_threshold_pct", config.classifier.occupancy_threshold_pct);
    config.classifier.launch_cycle_threshold =
        file.number("classifier.launch_cycle_threshold", config.classifier.launch_cycle_threshold);
    config.classifier.launch_invocation_threshold = file.integer(
        "classifier.launch_invocation_threshold", config.classifier.launch_invocation_threshold);
    config.policy.epsilon = file.number("policy.epsilon", config.policy.epsilon);
    config.policy.proposal_gain_min =
        file.number("policy.gain_clamp_min", config.policy.proposal_gain_min);
    config.policy.proposal_gain_max =
        file.number("policy.gain_clamp_max", config.policy.proposal_gain_max);
    config.retries.compile_repairs =
        static_cast<int>(file.integer("harness.compile_repairs", config.retries.compile_repairs));
    config.retries.verify_repairs =
        static_cast<int>(file.integer("harness.verify_repairs", config.retries.verify_repairs));
}

// ---------------------------------------------------------------------------
// Shared command plumbing

namespace cli_detail {

inline std::vector<SyntheticTask> load_task_dir(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    std::vector<SyntheticTask> tasks;
    for (const auto& file : files) tasks.push_back(load_synthetic_task(file));
    if (tasks.empty())
        throw Error(ErrorCode::ConfigError, "no .json task dumps found under " + dir);
    return tasks;
}

inline std::string config_hash_hex(const std::string& canonical) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    return buf;
}

inline void emit_events(const EventLog& events, std::ostream& err) {
    for (const auto& event : events.entries)
        err << (event.severity == Severity::Warning ? "warning" : "note") << " [" << event.code
            << "] " << event.message << "\n";
}

} // namespace cli_detail

// ---------------------------------------------------------------------------
// optimize

struct OptimizeOptions {
    std::string tasks_dir;
    std::string kb_path;
    bool init_empty = false;
    std::string backend = "sim";
    std::string agent = "none"; // none | mock:<script.json> | live
    std::string model = "kernelblaze-default";
    std::string out_dir;
    std::string hardware_tag = "sim";
    std::string config_file;
    bool frozen_time = false;
    IcrlConfig icrl;
};

inline std::string canonical_options_dump(const OptimizeOptions& options) {
    std::ostringstream out;
    out << "agent=" << options.agent << "\n";
    out << "alpha=" << format_float6(options.icrl.alpha) << "\n";
    out << "backend=" << options.backend << "\n";
    out << "epsilon=" << format_float6(options.icrl.policy.epsilon) << "\n";
    out << "frozen_time=" << (options.frozen_time ? "true" : "false") << "\n";
    out << "hardware=" << options.hardware_tag << "\n";
    out << "iterations=" << options.icrl.iterations << "\n";
    out << "kb_persistence=" << (options.icrl.kb_persistence ? "true" : "false") << "\n";
    out << "rollout_steps=" << options.icrl.rollout_steps << "\n";
    out << "run_seed=" << options.icrl.run_seed << "\n";
    out << "top_k=" << options.icrl.top_k << "\n";
    out << "trajectories=" << options.icrl.trajectories_per_task << "\n";
    return out.str();
}

/// Full optimize run against the simulated backend. Returns the process
/// exit code: 0 success, 1 configuration error, 2 when any task aborted on
/// a backend fault.
inline int run_optimize(OptimizeOptions options, std::ostream& out, std::ostream& err) {
    try {
        if (options.backend != "sim") {
            err << "unknown backend '" << options.backend
                << "'; available backends: sim\n"
                   "usage: kernelblaze optimize --tasks <dir> --backend sim [--kb kb.json | "
                   "--init-empty] --out <dir>\n";
            return 1;
        }
        if (!options.config_file.empty())
            apply_config_file(options.icrl, ConfigFile::load(options.config_file));
        if (options.frozen_time) options.icrl.clock = Clock::frozen_at(kFrozenTimestamp);
        options.icrl.policy.top_k = options.icrl.top_k;
        options.icrl.validate();

        std::unique_ptr<Agent> agent;
        if (options.agent == "none") {
            agent = nullptr;
        } else if (options.agent.rfind("mock:", 0) == 0) {
            agent = std::make_unique<MockAgent>(MockAgent::from_file(options.agent.substr(5)));
        } else if (options.agent == "live") {
            HttpAgentConfig http = HttpAgentConfig::from_env();
            http.model = options.model;
            agent = std::make_unique<HttpAgent>(std::move(http));
        } else {
            err << "unknown agent '" << options.agent << "'; expected none, mock:<script>, live\n";
            return 1;
        }

        KnowledgeBase kb;
        if (!options.kb_path.empty())
            kb = load(options.kb_path);
        else if (options.init_empty)
            kb = make_knowledge_base(options.hardware_tag, options.icrl.clock);
        else {
            err << "either --kb <path> or --init-empty is required\n";
            return 1;
        }

        SimEngine engine(cli_detail::load_task_dir(options.tasks_dir));
        RolloutContext ctx = engine.context(options.icrl, agent.get(), agent.get());
        RunResult run = run_loop(engine.task_specs, kb, ctx);

        std::filesystem::create_directories(options.out_dir);
        const auto out_path = [&](const char* name) {
            return (std::filesystem::path(options.out_dir) / name).string();
        };

        EventLog events = run.events;
        save(run.kb, out_path("kb.json"), &events);

        std::string log;
        std::map<std::string, double> best_so_far;
        for (const auto& iteration : run.iterations)
            for (const auto& trajectory : iteration.trajectories) {
                auto& best = best_so_far[trajectory.task_id];
                best = std::max(best, trajectory.total_return);
                log += trajectory_record(trajectory, options.icrl.run_seed, iteration.iteration,
                                         best) +
                       "\n";
            }
        write_file(out_path("trajectories.jsonl"), log);

        std::vector<TaskResult> results;
        std::map<std::string, std::pair<std::int64_t, std::int64_t>> task_tokens;
        for (const auto& iteration : run.iterations)
            for (const auto& trajectory : iteration.trajectories) {
                auto& slot = task_tokens[trajectory.task_id];
                slot.first += trajectory.prompt_tokens;
                slot.second += trajectory.completion_tokens;
            }
        for (const auto& task : engine.task_specs) {
            TaskResult result;
            result.task_id = task.task_id;
            result.backend_error = run.task_backend_error.at(task.task_id);
            result.valid = !result.backend_error;
            if (auto it = run.best.find(task.task_id); it != run.best.end())
                result.speedup = it->second.best_speedup;
            result.tokens_in = task_tokens[task.task_id].first;
            result.tokens_out = task_tokens[task.task_id].second;
            results.push_back(std::move(result));
        }

        std::string results_csv =
            "task_id,valid,speedup,prompt_tokens,completion_tokens,backend_error\n";
        for (const auto& r : results)
            results_csv += r.task_id + "," + (r.valid ? "1" : "0") + "," +
                           format_float6(r.speedup) + "," + std::to_string(r.tokens_in) + "," +
                           std::to_string(r.tokens_out) + "," + (r.backend_error ? "1" : "0") + "\n";
        write_file(out_path("results.csv"), results_csv);
        write_file(out_path("summary.csv"),
                   summary_csv({{options.hardware_tag, summarize(results)}}));

        nlohmann::json manifest;
        manifest["artifacts"] = {"kb.json", "results.csv", "summary.csv", "trajectories.jsonl"};
        manifest["config_hash"] = cli_detail::config_hash_hex(canonical_options_dump(options));
        manifest["prompt_template_version"] = std::string(kPromptTemplateVersion);
        manifest["run_seed"] = options.icrl.run_seed;
        write_file(out_path("manifest.json"), dump_canonical(manifest, 2));

        cli_detail::emit_events(events, err);
        out << "optimized " << engine.task_specs.size() << " tasks over "
            << options.icrl.iterations << " iterations; artifacts under " << options.out_dir
            << "\n";
        return run.any_backend_error ? 2 : 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    std::uint64_t seed = 0;
    int tasks = 5;
    int n_states = 4;
    int n_opts = 6;
    int chain_depth = 0; // 0 = alternate 2/3 by task seed
    int max_depth = 4;
    std::string out_dir;
};

inline int run_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err) {
    try {
        if (options.tasks < 1) throw Error(ErrorCode::InvalidSpec, "--tasks must be >= 1");
        if (options.max_depth > 8) throw Error(ErrorCode::DepthTooLarge, "--max-depth is capped at 8");
        std::filesystem::create_directories(options.out_dir);
        std::string oracle = "task_id,depth,best_speedup,best_chain\n";
        for (int i = 0; i < options.tasks; ++i) {
            const std::uint64_t task_seed = options.seed + static_cast<std::uint64_t>(i);
            SimTaskSpecParams params;
            params.n_states = options.n_states;
            params.n_opts = options.n_opts;
            params.depth_of_best_chain =
                options.chain_depth > 0 ? options.chain_depth
                                        : 2 + static_cast<int>(task_seed % 2);
            const SyntheticTask generated = make_synthetic_task(task_seed, params);
            const std::string dumped = task_to_json_string(generated);
            write_file(
                (std::filesystem::path(options.out_dir) / (generated.task_id + ".json")).string(),
                dumped);
            // The dump quantizes factors to the file format's precision; the
            // oracle must describe the task as stored.
            const SyntheticTask task = task_from_json(nlohmann::json::parse(dumped));
            for (int depth = 0; depth <= options.max_depth; ++depth) {
                OptimalResult optimal = optimal_speedup(task, depth);
                std::string chain;
                for (const auto& op : optimal.best_factor_chain) {
                    if (!chain.empty()) chain += "|";
                    chain += op;
                }
                oracle += task.task_id + "," + std::to_string(depth) + "," +
                          format_float6(optimal.best_speedup) + "," + chain + "\n";
            }
        }
        write_file((std::filesystem::path(options.out_dir) / "oracle.csv").string(), oracle);
        out << "wrote " << options.tasks << " synthetic tasks and oracle.csv under "
            << options.out_dir << "\n";
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------------------
// kb show / validate / merge

inline int run_kb_show(const std::string& path, std::ostream& out, std::ostream& err) {
    try {
        KnowledgeBase kb = load(path);
        out << "knowledge base " << path << "\n";
        out << "  hardware: " << kb.hardware_tag << "  states: " << kb.states.size()
            << "  updates: " << kb.update_count << "\n";
        char line[256];
        std::snprintf(line, sizeof(line), "  %-44s %-26s %5s %6s  %s\n", "state", "primary", "opts",
                      "obs", "top optimization (gain)");
        out << line;
        for (const auto& state : kb.states) {
            const OptimizationEntry* top = nullptr;
            for (const auto& opt : state.optimizations)
                if (!top || opt.predicted_gain > top->predicted_gain) top = &opt;
            std::string top_text = top ? top->opt_id + " (" + format_float6(top->predicted_gain) + ")"
                                       : "-";
            std::snprintf(line, sizeof(line), "  %-44s %-26s %5zu %6lld  %s\n",
                          state.state_id.c_str(), state.primary_bottleneck.c_str(),
                          state.optimizations.size(),
                          static_cast<long long>(state.total_observation_count()), top_text.c_str());
            out << line;
        }
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

inline int run_kb_validate(const std::string& path, std::ostream& out, std::ostream& err) {
    try {
        load(path);
        out << path << ": valid\n";
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

inline int run_kb_merge(const std::string& path_a, const std::string& path_b,
                        const std::string& out_path, bool frozen_time, std::ostream& out,
                        std::ostream& err) {
    try {
        const Clock clock = frozen_time ? Clock::frozen_at(kFrozenTimestamp) : Clock::realtime();
        KnowledgeBase merged = merge(load(path_a), load(path_b), clock);
        EventLog events;
        save(merged, out_path, &events);
        cli_detail::emit_events(events, err);
        out << "merged " << path_a << " + " << path_b << " -> " << out_path << "\n";
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
    std::string run_dir;
    std::string out_dir;
    std::string label = "run";
    std::vector<double> fastp_thresholds = {1.0, 1.5, 2.0};
};

namespace cli_detail {

struct ParsedLog {
    std::vector<Trajectory> trajectories;
    std::vector<TaskResult> results;
};

inline ParsedLog parse_trajectory_log(const std::string& text) {
    ParsedLog parsed;
    struct Accum {
        double best = 0.0;
        std::int64_t tokens_in = 0, tokens_out = 0;
        bool aborted = false;
    };
    std::map<std::string, Accum> per_task;
    for (const auto& line : split(text, '\n')) {
        if (trim(line).empty()) continue;
        nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object())
            throw Error(ErrorCode::MalformedFile, "bad trajectory record: " + line);
        Trajectory trajectory;
        trajectory.task_id = doc.value("task_id", "");
        trajectory.trajectory_index = doc.value("trajectory_index", 0);
        trajectory.total_return = doc.value("R", 0.0);
        trajectory.prompt_tokens = doc.value("prompt_tokens", std::int64_t{0});
        trajectory.completion_tokens = doc.value("completion_tokens", std::int64_t{0});
        trajectory.aborted_backend = doc.value("aborted", false);
        for (const auto& js : doc.value("steps", nlohmann::json::array())) {
            RolloutStep step;
            step.step_index = js.value("step", 0);
            step.state_id = js.value("state_id", "");
            step.opt_id = js.value("opt_id", "");
            step.reward = js.value("reward", 0.0);
            step.outcome =
                js.value("outcome", "rejected") == "accepted" ? StepOutcome::Accepted
                                                              : StepOutcome::Rejected;
            step.reject_reason = js.value("reason", "");
            step.produced_variant_id = js.value("produced_variant", "");
            trajectory.steps.push_back(std::move(step));
        }
        auto& acc = per_task[trajectory.task_id];
        acc.best = std::max(acc.best, doc.value("best_speedup", trajectory.total_return));
        acc.tokens_in += trajectory.prompt_tokens;
        acc.tokens_out += trajectory.completion_tokens;
        acc.aborted |= trajectory.aborted_backend;
        parsed.trajectories.push_back(std::move(trajectory));
    }
    for (const auto& [task_id, acc] : per_task) {
        TaskResult result;
        result.task_id = task_id;
        result.backend_error = acc.aborted;
        result.valid = !acc.aborted;
        result.speedup = acc.best;
        result.tokens_in = acc.tokens_in;
        result.tokens_out = acc.tokens_out;
        parsed.results.push_back(std::move(result));
    }
    return parsed;
}

} // namespace cli_detail

inline int run_report(const ReportOptions& options, std::ostream& out, std::ostream& err) {
    try {
        const auto log_path = std::filesystem::path(options.run_dir) / "trajectories.jsonl";
        cli_detail::ParsedLog parsed = cli_detail::parse_trajectory_log(read_file(log_path.string()));
        if (parsed.results.empty()) throw Error(ErrorCode::EmptyResults, "trajectory log is empty");

        std::filesystem::create_directories(options.out_dir);
        const auto out_path = [&](const char* name) {
            return (std::filesystem::path(options.out_dir) / name).string();
        };
        write_file(out_path("summary.csv"),
                   summary_csv({{options.label, summarize(parsed.results)}}));
        const auto curve = fast_p_curve(parsed.results, options.fastp_thresholds);
        write_file(out_path("fastp.csv"), fastp_csv(curve));
        write_file(out_path("fastp.svg"), fastp_svg(curve, options.label + " fast_p"));
        const UsageReport usage = usage_report(parsed.trajectories);
        write_file(out_path("usage.csv"), usage_csv(usage));
        write_file(out_path("state_usage.csv"), state_usage_csv(usage));
        write_file(out_path("transitions.csv"), transitions_csv(usage));
        out << "reports for " << parsed.results.size() << " tasks under " << options.out_dir << "\n";
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

} // namespace kblaze
