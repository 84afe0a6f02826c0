// alloop: prepare, run, resume and inspect an active-learning workspace.
//
// Exit status: 0 success, 1 usage error, 2 runtime error, 3 the run ended
// without success.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "alloop/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace alloop;

namespace {

int report_outcome(const orchestrator::RunResult& r) {
    if (!r.ended) {
        std::cout << "stopped before the workflow ended; continue with `alloop resume`\n";
        return 0;
    }
    std::cout << actions::render_report_text(r.final_report);
    return r.success ? 0 : 3;
}

void print_status(const fs::path& ws) {
    auto ctx = actions::Context::open(ws);
    auto state = WorkflowState::load(ctx.paths.state_file());
    auto summary = policy::summarize(state, policy::structure_infos(ctx.structures), 5);
    std::cout << "workspace  " << ws.string() << "\n"
              << "phase      " << to_string(state.phase) << "\n"
              << "step       " << state.step << "\n";
    if (summary.stage < static_cast<int>(summary.stages.size()))
        std::cout << "stage      " << summary.stages[summary.stage].name << "\n";
    else
        std::cout << "stage      all stages passed\n";
    std::cout << "datasets   " << state.datasets.size() << "\n"
              << "model      " << state.current_model.value_or("none") << "\n";
    if (state.current_model) {
        const auto* m = state.find_model(*state.current_model);
        std::cout << "force MAE  " << m->metrics.force_mae << " eV/A\n";
    }
    for (const auto& h : summary.history)
        std::cout << "  " << h.step << "  " << h.next_task << "  " << h.outcome << "\n";
    if (state.phase == Phase::Ended)
        std::cout << "result     " << (state.success.value_or(false) ? "success" : "failure") << " ("
                  << state.end_reason << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active-learning loop for machine-learned interatomic potentials"};
    app.require_subcommand(1);

    fs::path workspace;
    auto add_ws = [&](CLI::App* sub) { sub->add_option("-w,--workspace", workspace, "Workspace directory")->required(); };

    auto* prep = app.add_subcommand("prepare", "Create a workspace from a task file or an interview");
    add_ws(prep);
    fs::path spec_file, config_file;
    bool interactive = false;
    std::uint64_t seed = 0;
    auto* spec_opt = prep->add_option("-s,--spec", spec_file, "Task specification (JSON)")->check(CLI::ExistingFile);
    prep->add_flag("-i,--interactive", interactive, "Collect the task through a language-model interview")
        ->excludes(spec_opt);
    prep->add_option("-c,--config", config_file, "Run configuration overrides (JSON)")->check(CLI::ExistingFile);
    prep->add_option("--seed", seed, "Master seed");

    std::string policy_name = "scripted";
    std::size_t max_steps = 0;
    double wall_clock = 0.0;
    std::int64_t stop_after = -1;
    auto add_run_opts = [&](CLI::App* sub) {
        add_ws(sub);
        sub->add_option("-p,--policy", policy_name, "Decision policy")->check(CLI::IsMember({"scripted", "llm"}));
        sub->add_option("--max-steps", max_steps, "Step budget (default from config)");
        sub->add_option("--wall-clock", wall_clock, "Wall-clock budget in seconds");
        sub->add_option("--stop-after-step", stop_after, "Stop without ending after this step index");
    };
    auto* run = app.add_subcommand("run", "Run the loop until it ends or a budget runs out");
    add_run_opts(run);
    auto* res = app.add_subcommand("resume", "Continue an interrupted run");
    add_run_opts(res);

    auto* status = app.add_subcommand("status", "Show the workflow state");
    add_ws(status);
    auto* report = app.add_subcommand("report", "Print the final report");
    add_ws(report);
    bool as_json = false;
    report->add_flag("--json", as_json, "Print JSON instead of text");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (prep->parsed()) {
            if (spec_file.empty() && !interactive) {
                std::cerr << "prepare needs --spec or --interactive\n";
                return 1;
            }
            orchestrator::PrepareOptions opts;
            opts.workspace = workspace;
            if (!spec_file.empty()) opts.spec_file = spec_file;
            opts.interactive = interactive;
            opts.seed = seed;
            if (!config_file.empty()) opts.config = json::parse(read_text(config_file));
            std::unique_ptr<policy::ChatTransport> transport;
            if (interactive) transport = policy::make_transport(RunConfig::from_json(opts.config).llm);
            orchestrator::prepare(opts, transport.get());
            std::cout << "prepared " << workspace.string() << "\n";
            return 0;
        }
        if (run->parsed() || res->parsed()) {
            orchestrator::RunLimits limits;
            limits.max_steps = max_steps;
            if (wall_clock > 0.0) limits.wall_clock_s = wall_clock;
            if (stop_after >= 0) limits.interrupt_after_step = stop_after;
            auto kind = orchestrator::policy_from_string(policy_name);
            auto r = run->parsed() ? orchestrator::run_loop(workspace, kind, limits)
                                   : orchestrator::resume(workspace, kind, limits);
            return report_outcome(r);
        }
        if (status->parsed()) {
            print_status(workspace);
            return 0;
        }
        if (report->parsed()) {
            WorkspacePaths paths{workspace};
            json r;
            if (fs::exists(paths.final_report())) {
                r = json::parse(read_text(paths.final_report()));
            } else {
                auto ctx = actions::Context::open(workspace);
                r = actions::final_report(ctx, WorkflowState::load(paths.state_file()));
            }
            std::cout << (as_json ? r.dump(2) + "\n" : actions::render_report_text(r));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
