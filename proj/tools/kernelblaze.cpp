#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kernelblaze/cli.hpp"

namespace {

std::vector<double> parse_thresholds(const std::string& text) {
    std::vector<double> thresholds;
    for (const auto& part : kblaze::split(text, ',')) {
        const std::string token = kblaze::trim(part);
        if (token.empty()) continue;
        char* end = nullptr;
        double v = std::strtod(token.c_str(), &end);
        if (end == token.c_str() || *end != '\0')
            throw kblaze::Error(kblaze::ErrorCode::ConfigError, "bad threshold '" + token + "'");
        thresholds.push_back(v);
    }
    return thresholds;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernelblaze: knowledge-base-guided code optimization search"};
    app.require_subcommand(1);

    // optimize ---------------------------------------------------------------
    kblaze::OptimizeOptions optimize;
    std::uint64_t seed = 0;
    auto* cmd_optimize = app.add_subcommand("optimize", "run the optimization loop over a task set");
    cmd_optimize->add_option("--tasks", optimize.tasks_dir, "directory of task dumps")->required();
    cmd_optimize->add_option("--kb", optimize.kb_path, "knowledge base to start from");
    cmd_optimize->add_flag("--init-empty", optimize.init_empty, "start from an empty knowledge base");
    cmd_optimize->add_option("--backend", optimize.backend, "execution backend (sim)");
    cmd_optimize->add_option("--agent", optimize.agent, "agent: none, mock:<script.json>, live");
    cmd_optimize->add_option("--model", optimize.model, "model name for the live agent");
    cmd_optimize->add_option("--out", optimize.out_dir, "output directory")->required();
    cmd_optimize->add_option("--hardware", optimize.hardware_tag, "hardware tag for the KB");
    cmd_optimize->add_option("--config", optimize.config_file, "engine config file");
    cmd_optimize->add_option("--seed", seed, "run seed");
    cmd_optimize->add_option("--iterations", optimize.icrl.iterations, "outer-loop iterations");
    cmd_optimize->add_option("--rollout-steps", optimize.icrl.rollout_steps,
                             "max steps per trajectory");
    cmd_optimize->add_option("--trajectories", optimize.icrl.trajectories_per_task,
                             "trajectories per task per iteration");
    cmd_optimize->add_option("--top-k", optimize.icrl.top_k, "candidates sampled per selection");
    cmd_optimize->add_option("--alpha", optimize.icrl.alpha, "score update smoothing in (0,1]");
    cmd_optimize->add_option("--jobs", optimize.icrl.jobs, "max concurrent rollouts (0 = cores)");
    cmd_optimize->add_flag("--frozen-time", optimize.frozen_time,
                           "pin timestamps for reproducibility");
    cmd_optimize->add_flag("!--kb-persistence", optimize.icrl.kb_persistence,
                           "--no-kb-persistence resets the KB each iteration");
    cmd_optimize->callback([&] {
        optimize.icrl.run_seed = seed;
        std::exit(kblaze::run_optimize(optimize, std::cout, std::cerr));
    });

    // simulate ---------------------------------------------------------------
    kblaze::SimulateOptions simulate;
    auto* cmd_simulate = app.add_subcommand("simulate", "generate synthetic tasks and oracles");
    cmd_simulate->add_option("--seed", simulate.seed, "base task seed");
    cmd_simulate->add_option("--tasks", simulate.tasks, "number of tasks");
    cmd_simulate->add_option("--n-states", simulate.n_states, "hidden states per task");
    cmd_simulate->add_option("--n-opts", simulate.n_opts, "declared optimizations per task");
    cmd_simulate->add_option("--chain-depth", simulate.chain_depth,
                             "planted chain depth (0 = alternate 2/3)");
    cmd_simulate->add_option("--max-depth", simulate.max_depth, "oracle search depth (<= 8)");
    cmd_simulate->add_option("--out", simulate.out_dir, "output directory")->required();
    cmd_simulate->callback(
        [&] { std::exit(kblaze::run_simulate(simulate, std::cout, std::cerr)); });

    // kb ----------------------------------------------------------------------
    auto* cmd_kb = app.add_subcommand("kb", "inspect and combine knowledge bases");
    cmd_kb->require_subcommand(1);
    std::string kb_path, kb_path_b, kb_out;
    bool kb_frozen = false;
    auto* kb_show = cmd_kb->add_subcommand("show", "print a readable table");
    kb_show->add_option("path", kb_path, "knowledge base file")->required();
    kb_show->callback([&] { std::exit(kblaze::run_kb_show(kb_path, std::cout, std::cerr)); });
    auto* kb_validate = cmd_kb->add_subcommand("validate", "exit 0 iff the file is schema-valid");
    kb_validate->add_option("path", kb_path, "knowledge base file")->required();
    kb_validate->callback(
        [&] { std::exit(kblaze::run_kb_validate(kb_path, std::cout, std::cerr)); });
    auto* kb_merge = cmd_kb->add_subcommand("merge", "merge two knowledge bases");
    kb_merge->add_option("a", kb_path, "first knowledge base")->required();
    kb_merge->add_option("b", kb_path_b, "second knowledge base")->required();
    kb_merge->add_option("--out", kb_out, "output path")->required();
    kb_merge->add_flag("--frozen-time", kb_frozen, "pin the merged timestamp");
    kb_merge->callback([&] {
        std::exit(kblaze::run_kb_merge(kb_path, kb_path_b, kb_out, kb_frozen, std::cout, std::cerr));
    });

    // report -------------------------------------------------------------------
    kblaze::ReportOptions report;
    std::string fastp_text = "1,1.5,2";
    auto* cmd_report = app.add_subcommand("report", "emit summary/fast_p/usage reports from logs");
    cmd_report->add_option("--run", report.run_dir, "run directory with trajectories.jsonl")
        ->required();
    cmd_report->add_option("--out", report.out_dir, "output directory")->required();
    cmd_report->add_option("--label", report.label, "row label for the summary table");
    cmd_report->add_option("--fastp", fastp_text, "comma-separated ascending thresholds");
    cmd_report->callback([&] {
        try {
            report.fastp_thresholds = parse_thresholds(fastp_text);
        } catch (const kblaze::Error& e) {
            std::cerr << e.what() << "\n";
            std::exit(1);
        }
        std::exit(kblaze::run_report(report, std::cout, std::cerr));
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return 0;
}
