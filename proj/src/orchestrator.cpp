#include "alloop/orchestrator.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "alloop/oracle.hpp"

namespace alloop::orchestrator {

namespace fs = std::filesystem;
using actions::ActionType;

namespace {

const std::vector<RecordVariant>& report_variants() {
    static const std::vector<RecordVariant> v{RecordVariant::Dataset, RecordVariant::Train, RecordVariant::Trajectory,
                                              RecordVariant::Evaluation, RecordVariant::Decision};
    return v;
}

std::string file_key(const WorkspacePaths& paths, RecordVariant v) { return paths.report(v).filename().string(); }

void record_line_counts(const WorkspacePaths& paths, WorkflowState& state) {
    for (auto v : report_variants()) state.report_lines[file_key(paths, v)] = count_lines(paths.report(v));
}

std::string first_json_object(const std::string& text) {
    auto open = text.find('{');
    if (open == std::string::npos) return {};
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return text.substr(open, i - open + 1);
    }
    return {};
}

std::string interview_prompt() {
    return R"(You collect the specification of a simulation task before an automated active-learning run starts. Ask the user one question at a time until you know: the material system, the structure categories to build (each with a kind such as solid, molecule_liquid, solid_liquid and its parameters), the temperature range, the ensembles, the atomic masses, the reference (oracle) potential and the observables to validate (RDF pairs, diffusing species).

After every user message answer with one JSON object and nothing else:
{"completed": false, "summary": "what is known so far", "next_question": "the next question"}
When everything is known, answer
{"completed": true, "summary": "full summary", "next_question": "", "task_spec": {...}}
where task_spec has the fields system, categories, temperature_range, ensembles, masses, oracle, targets, min_separation.)";
}

std::string bool_word(bool b) { return b ? "True" : "False"; }

}  // namespace

// ---------------------------------------------------------------------------
// Preparation

structgen::TaskSpec interview(policy::ChatTransport& transport, const InterviewIo& io, const fs::path& dialogue_log,
                              std::string& summary_out) {
    std::istream& in = io.in ? *io.in : std::cin;
    std::ostream& out = io.out ? *io.out : std::cout;

    out << "=======================================================================\n"
        << "Information Collection Started.\n"
        << "=======================================================================\n"
        << "Please input the description of the simulation task:\n";
    std::string answer;
    if (!std::getline(in, answer)) throw ValidationError("interview aborted before the task description");
    policy::append_dialogue(dialogue_log, "Interview: user", answer);

    std::vector<policy::ChatMessage> messages{{"system", interview_prompt()}, {"user", answer}};
    for (std::size_t round = 0; round < io.max_rounds; ++round) {
        std::string reply = transport.complete(messages);
        policy::append_dialogue(dialogue_log, "Interview: assistant", reply);
        messages.push_back({"assistant", reply});

        json j;
        try {
            j = json::parse(first_json_object(reply));
        } catch (const json::exception&) {
            messages.push_back({"user", "That was not a JSON object in the agreed layout. Answer again."});
            continue;
        }
        bool completed = j.value("completed", false);
        std::string summary = j.value("summary", std::string());
        std::string question = j.value("next_question", std::string());

        out << "-----------------------------------------------------------------------\n"
            << "Collection Status:\n"
            << "Completed: " << bool_word(completed) << "\n"
            << "Summary: " << summary << "\n";
        if (!completed || question.size()) out << "Next Question: " << question << "\n";

        if (completed) {
            std::string problem;
            if (!j.contains("task_spec") || !j["task_spec"].is_object()) {
                problem = "task_spec is missing";
            } else {
                try {
                    auto task = structgen::TaskSpec::from_json(j["task_spec"]);
                    auto missing = task.missing_fields();
                    if (missing.empty()) {
                        summary_out = summary;
                        out << "Information Collection Completed.\n";
                        return task;
                    }
                    problem = "task_spec lacks:";
                    for (const auto& m : missing) problem += " " + m;
                } catch (const std::exception& e) {
                    problem = std::string("task_spec is invalid: ") + e.what();
                }
            }
            policy::append_dialogue(dialogue_log, "Interview: rejected completion", problem);
            messages.push_back({"user", problem + ". Keep asking until it is complete."});
            continue;
        }
        if (!std::getline(in, answer)) throw ValidationError("interview aborted: no answer to '" + question + "'");
        policy::append_dialogue(dialogue_log, "Interview: user", answer);
        messages.push_back({"user", answer});
    }
    throw ValidationError("interview did not converge in " + std::to_string(io.max_rounds) + " rounds");
}

void prepare(const PrepareOptions& options, policy::ChatTransport* transport, const InterviewIo& io) {
    WorkspacePaths paths{options.workspace};
    if (fs::exists(paths.root) && !fs::is_empty(paths.root))
        throw WorkspaceError("workspace " + paths.root.string() + " already exists and is not empty");

    RunConfig config = RunConfig::from_json(options.config);
    structgen::TaskSpec task;
    std::string summary;
    if (options.spec_file) {
        task = structgen::TaskSpec::load(*options.spec_file);
        task.validate();
    } else if (options.interactive) {
        if (!transport) throw ConfigurationError("interactive preparation needs a language-model endpoint");
        fs::create_directories(paths.root);
        task = interview(*transport, io, paths.dialogue_log(), summary);
        task.validate();
    } else {
        throw ConfigurationError("give a task file or choose interactive preparation");
    }

    std::vector<std::string> species;
    for (const auto& [s, m] : task.masses) species.push_back(s);
    json oj = config.oracle.is_null() || config.oracle.empty() ? task.oracle : config.oracle;
    auto spec = oracle::OracleSpec::from_json(oj).resolved(species);
    oracle::OracleForceField ff(spec, species);
    auto set = structgen::generate_initial_set(task, options.seed, &ff);

    paths.create_layout();
    task.complete = true;
    write_file_atomic(paths.task(), task.to_json().dump(2) + "\n");
    config.save(paths.config());
    structgen::write_initial_set(paths.init_structures(), set);
    if (summary.empty()) summary = "Task loaded from " + options.spec_file->string() + "\n" + task.to_json().dump(2);
    write_file_atomic(paths.information_summary(), summary + "\n");

    WorkflowState state;
    state.master_seed = options.seed;
    state.phase = Phase::Autonomous;
    record_line_counts(paths, state);
    state.save(paths.state_file());
}

// ---------------------------------------------------------------------------
// Persistence helpers

WorkspaceLock::WorkspaceLock(const fs::path& workspace) {
    auto file = (workspace / ".lock").string();
    fd_ = ::open(file.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw WorkspaceError("cannot open lock file " + file);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw WorkspaceError("workspace " + workspace.string() + " is in use by another run");
    }
}

WorkspaceLock::~WorkspaceLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

void reconcile_reports(const WorkspacePaths& paths, const WorkflowState& state) {
    for (auto v : report_variants()) {
        auto key = file_key(paths, v);
        auto it = state.report_lines.find(key);
        std::size_t expected = it == state.report_lines.end() ? 0 : it->second;
        std::size_t actual = count_lines(paths.report(v));
        if (actual < expected)
            throw ConsistencyError(key + " has " + std::to_string(actual) + " lines but the state records " +
                                   std::to_string(expected));
        if (actual == expected) continue;
        auto extra = truncate_lines(paths.report(v), expected);
        fs::path dir = paths.reports() / "orphaned";
        fs::create_directories(dir);
        std::ofstream out(dir / (paths.report(v).stem().string() + "_step" + std::to_string(state.step) + ".jsonl"),
                          std::ios::app);
        for (const auto& line : extra) out << line << "\n";
    }
}

json registry_digest(const WorkflowState& state) {
    json datasets = json::array(), models = json::array(), trajectories = json::array(), evals = json::array();
    for (const auto& d : state.datasets) datasets.push_back({{"id", d.id}, {"frames", d.frames}, {"step", d.step}});
    for (const auto& m : state.models)
        models.push_back({{"id", m.id},
                          {"parent_id", m.parent_id ? json(*m.parent_id) : json(nullptr)},
                          {"force_mae", m.metrics.force_mae},
                          {"active", m.active},
                          {"step", m.step}});
    for (const auto& t : state.trajectories)
        trajectories.push_back({{"id", t.id}, {"status", t.status}, {"step", t.step}});
    for (const auto& e : state.evaluations)
        evals.push_back({{"model_id", e.at("model_id")},
                         {"structure_id", e.at("structure_id")},
                         {"pass", e.at("pass")},
                         {"step", e.at("step")}});
    json decisions = json::array();
    for (const auto& l : state.log) decisions.push_back({{"step", l.step}, {"task", l.next_task}, {"outcome", l.outcome}});
    return {{"datasets", datasets},
            {"models", models},
            {"trajectories", trajectories},
            {"evaluations", evals},
            {"decisions", decisions}};
}

json replay_registries(const WorkspacePaths& paths) {
    json datasets = json::array(), models = json::array(), trajectories = json::array(), evals = json::array();
    auto find = [](json& list, const std::string& id) -> json* {
        for (auto& x : list)
            if (x["id"] == id) return &x;
        return nullptr;
    };
    for (const auto& r : read_records(paths.report(RecordVariant::Dataset)).records) {
        const auto& p = r.payload;
        std::string id = p.at("dataset_id");
        if (p.value("event", std::string()) == "pruned") {
            if (json* d = find(datasets, id)) (*d)["frames"] = p.at("structure_count");
        } else {
            datasets.push_back({{"id", id}, {"frames", p.at("structure_count")}, {"step", r.step}});
        }
    }
    for (const auto& r : read_records(paths.report(RecordVariant::Train)).records) {
        const auto& p = r.payload;
        std::string id = p.at("model_id");
        if (p.value("event", std::string()) == "rollback") {
            if (json* m = find(models, id)) (*m)["active"] = false;
        } else {
            models.push_back({{"id", id},
                              {"parent_id", p.at("parent_id")},
                              {"force_mae", p.at("force_mae")},
                              {"active", true},
                              {"step", r.step}});
        }
    }
    for (const auto& r : read_records(paths.report(RecordVariant::Trajectory)).records) {
        if (r.payload.value("purpose", std::string()) == "reference") continue;
        trajectories.push_back({{"id", r.payload.at("trajectory_id")}, {"status", r.payload.at("status")}, {"step", r.step}});
    }
    for (const auto& r : read_records(paths.report(RecordVariant::Evaluation)).records)
        evals.push_back({{"model_id", r.payload.at("model_id")},
                         {"structure_id", r.payload.at("structure_id")},
                         {"pass", r.payload.at("pass")},
                         {"step", r.step}});
    json decisions = json::array();
    for (const auto& r : read_records(paths.report(RecordVariant::Decision)).records) {
        std::string phase = r.payload.value("phase", std::string());
        if (phase == "decided") continue;
        decisions.push_back({{"step", r.step}, {"task", r.payload.at("next_task")}, {"outcome", phase}});
    }
    return {{"datasets", datasets},
            {"models", models},
            {"trajectories", trajectories},
            {"evaluations", evals},
            {"decisions", decisions}};
}

// ---------------------------------------------------------------------------
// Loop

PolicyKind policy_from_string(const std::string& s) {
    if (s == "scripted") return PolicyKind::Scripted;
    if (s == "llm") return PolicyKind::Llm;
    throw ConfigurationError("unknown policy '" + s + "' (expected scripted or llm)");
}

namespace {

policy::Decision end_decision(bool success, const std::string& reason) {
    policy::Decision d;
    d.next_task = ActionType::End;
    d.descriptions = reason;
    d.directive.action = ActionType::End;
    d.directive.params = {{"success", success}, {"reason", reason}};
    return d;
}

RunResult loop(const fs::path& workspace, PolicyKind kind, const RunLimits& limits, policy::ChatTransport* transport,
               bool require_progress) {
    if (!fs::exists(workspace / "workflow_state.json"))
        throw WorkspaceError("no workflow state in " + workspace.string() + "; run prepare first");
    WorkspaceLock lock(workspace);
    auto ctx = actions::Context::open(workspace);
    auto state = WorkflowState::load(ctx.paths.state_file());
    if (state.phase == Phase::Ended) throw WorkspaceError("the workflow in " + workspace.string() + " has already ended");
    if (state.phase != Phase::Autonomous) throw WorkspaceError("the workspace has not finished preparation");
    if (require_progress && state.step == 0 && state.log.empty())
        throw WorkspaceError("nothing to resume in " + workspace.string() + "; use run");
    reconcile_reports(ctx.paths, state);

    std::unique_ptr<policy::ChatTransport> owned;
    if (kind == PolicyKind::Llm && !transport) {
        owned = policy::make_transport(ctx.config.llm);
        transport = owned.get();
    }
    policy::LlmContext llm_ctx;
    if (kind == PolicyKind::Llm) {
        llm_ctx.dialogue_log = ctx.paths.dialogue_log();
        if (fs::exists(ctx.paths.information_summary())) llm_ctx.task_summary = read_text(ctx.paths.information_summary());
        auto desc = ctx.paths.init_structures() / "init_structure_description.txt";
        if (fs::exists(desc)) llm_ctx.structure_descriptions = read_text(desc);
        llm_ctx.retries = ctx.config.llm.retries;
    }

    PolicyConfig pcfg = ctx.config.policy;
    if (limits.max_steps > 0) pcfg.max_steps = limits.max_steps;
    auto infos = policy::structure_infos(ctx.structures);
    const auto started = std::chrono::steady_clock::now();

    while (true) {
        const std::int64_t step = state.step;
        auto summary = policy::summarize(state, infos, pcfg.history_tail);

        policy::Decision decision;
        std::string source;
        double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (limits.wall_clock_s && elapsed >= *limits.wall_clock_s) {
            decision = end_decision(false, "wall-clock budget exhausted");
            source = "limits";
        } else if (kind == PolicyKind::Llm) {
            auto outcome = policy::llm_policy(summary, pcfg, *transport, llm_ctx);
            decision = outcome.decision;
            source = outcome.fallback ? "fallback" : "llm";
        } else {
            decision = policy::scripted_policy(summary, pcfg);
            source = "scripted";
        }
        if (decision.next_task != ActionType::End && static_cast<std::size_t>(step) + 1 >= pcfg.max_steps) {
            decision = end_decision(false, "step budget exhausted");
            source = "limits";
        }

        json head{{"next_task", actions::to_string(decision.next_task)},
                  {"descriptions", decision.descriptions},
                  {"directive", decision.directive.params},
                  {"source", source}};
        json decided = head;
        decided["phase"] = "decided";
        ctx.append(RecordVariant::Decision, step, decided);

        LogEntry entry;
        entry.step = step;
        entry.next_task = head["next_task"];
        entry.descriptions = decision.descriptions;
        entry.directive = decision.directive.params;
        entry.source = source;

        WorkflowState work = state;
        try {
            entry.result = actions::execute(ctx, work, decision.directive, step);
            entry.outcome = "completed";
            if (limits.crash_in_step && step == *limits.crash_in_step) return {false, false, nullptr};
            state = std::move(work);
        } catch (const WorkspaceError&) {
            throw;
        } catch (const std::exception& e) {
            entry.outcome = "failed";
            entry.error = e.what();
        }

        json done = head;
        done["phase"] = entry.outcome;
        if (!entry.error.empty()) done["error"] = entry.error;
        ctx.append(RecordVariant::Decision, step, done);

        state.log.push_back(entry);
        state.step = step + 1;
        state.stage = policy::summarize(state, infos, pcfg.history_tail).stage;
        record_line_counts(ctx.paths, state);
        if (state.phase == Phase::Ended) {
            json report = actions::final_report(ctx, state);
            write_file_atomic(ctx.paths.final_report(), report.dump(2) + "\n");
            write_file_atomic(ctx.paths.final_report_text(), actions::render_report_text(report));
            state.save(ctx.paths.state_file());
            return {true, state.success.value_or(false), report};
        }
        state.save(ctx.paths.state_file());
        if (limits.interrupt_after_step && step == *limits.interrupt_after_step) return {false, false, nullptr};
    }
}

}  // namespace

RunResult run_loop(const fs::path& workspace, PolicyKind policy, const RunLimits& limits,
                   policy::ChatTransport* transport) {
    return loop(workspace, policy, limits, transport, false);
}

RunResult resume(const fs::path& workspace, PolicyKind policy, const RunLimits& limits,
                 policy::ChatTransport* transport) {
    return loop(workspace, policy, limits, transport, true);
}

}  // namespace alloop::orchestrator
