#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "alloop/actions.hpp"
#include "alloop/config.hpp"
#include "alloop/policy.hpp"
#include "alloop/state.hpp"
#include "alloop/structgen.hpp"

namespace alloop::orchestrator {

struct PrepareOptions {
    std::filesystem::path workspace;
    std::optional<std::filesystem::path> spec_file;  // file mode when set
    bool interactive = false;
    std::uint64_t seed = 0;
    json config = json::object();  // partial config.json document
};

struct InterviewIo {
    std::istream* in = nullptr;
    std::ostream* out = nullptr;
    std::size_t max_rounds = 20;
};

// Interactive task collection: the model asks one question per round and
// answers with
//   {"completed": bool, "summary": "...", "next_question": "...", "task_spec": {...}}
// until it reports completion with a valid task. Every round is shown in the
// "Collection Status" layout and logged to dialogue.log.
structgen::TaskSpec interview(policy::ChatTransport& transport, const InterviewIo& io,
                              const std::filesystem::path& dialogue_log, std::string& summary_out);

// Creates the workspace: task.json, config.json, the initial structure set
// (relaxed with the oracle), the directory layout and a step-0 state.
// Throws WorkspaceError when the path exists and is not empty,
// ValidationError for an incomplete spec and ConfigurationError when
// interactive mode has no transport.
void prepare(const PrepareOptions& options, policy::ChatTransport* transport = nullptr, const InterviewIo& io = {});

enum class PolicyKind { Scripted, Llm };
PolicyKind policy_from_string(const std::string& s);

struct RunLimits {
    std::size_t max_steps = 0;  // 0: config.policy.max_steps
    std::optional<double> wall_clock_s;
    // Stop without ending after this step index completes (simulated kill).
    std::optional<std::int64_t> interrupt_after_step;
    // Abandon this step after its action ran but before anything about it
    // is persisted, as a kill at that point would (simulated crash).
    std::optional<std::int64_t> crash_in_step;
};

struct RunResult {
    bool ended = false;
    bool success = false;
    json final_report;  // null when interrupted
};

// Algorithm loop: summarize, decide, record, execute, persist. Ends on an end
// decision or a limit (which synthesizes end(failure)). Resumes from the
// persisted state when one exists past step 0.
RunResult run_loop(const std::filesystem::path& workspace, PolicyKind policy, const RunLimits& limits = {},
                   policy::ChatTransport* transport = nullptr);

// run_loop on a workspace that already has a persisted, non-ended state.
RunResult resume(const std::filesystem::path& workspace, PolicyKind policy, const RunLimits& limits = {},
                 policy::ChatTransport* transport = nullptr);

// Reconciles report files with the line counts recorded in the state: extra
// trailing lines (from an interrupted step) move to reports/orphaned/;
// missing lines raise ConsistencyError.
void reconcile_reports(const WorkspacePaths& paths, const WorkflowState& state);

// Exclusive advisory lock on <workspace>/.lock for the object's lifetime.
class WorkspaceLock {
public:
    explicit WorkspaceLock(const std::filesystem::path& workspace);
    ~WorkspaceLock();
    WorkspaceLock(const WorkspaceLock&) = delete;
    WorkspaceLock& operator=(const WorkspaceLock&) = delete;

private:
    int fd_ = -1;
};

// Datasets, models, trajectories and evaluations rebuilt from reports/*.jsonl.
json replay_registries(const WorkspacePaths& paths);
// The same digest taken from the persisted state.
json registry_digest(const WorkflowState& state);

}  // namespace alloop::orchestrator
