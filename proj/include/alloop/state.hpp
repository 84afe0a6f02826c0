#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alloop/core/report.hpp"
#include "alloop/potential.hpp"

namespace alloop {

// Fixed workspace layout.
struct WorkspacePaths {
    std::filesystem::path root;

    std::filesystem::path init_structures() const { return root / "init_structures"; }
    std::filesystem::path trajectories() const { return root / "trajectories"; }
    std::filesystem::path selection() const { return root / "selection"; }
    std::filesystem::path models() const { return root / "models"; }
    std::filesystem::path eval_reference() const { return root / "eval_reference"; }
    std::filesystem::path evaluation() const { return root / "evaluation"; }
    std::filesystem::path pruned() const { return root / "pruned"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path dialogue_log() const { return root / "dialogue.log"; }
    std::filesystem::path information_summary() const { return root / "information_summary_report.txt"; }
    std::filesystem::path state_file() const { return root / "workflow_state.json"; }
    std::filesystem::path final_report() const { return root / "final_report.json"; }
    std::filesystem::path final_report_text() const { return root / "final_report.txt"; }
    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path task() const { return root / "task.json"; }
    std::filesystem::path lock() const { return root / ".lock"; }

    // reports/<variant>.jsonl
    std::filesystem::path report(RecordVariant v) const;

    void create_layout() const;
};

enum class Phase { Preparing, Autonomous, Ended };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct DatasetEntry {
    std::string id;
    std::string path;  // relative to the workspace
    std::size_t frames = 0;
    std::vector<std::string> origin;
    DatasetStats stats;
    std::int64_t step = 0;

    bool operator==(const DatasetEntry&) const = default;
};

struct ModelEntry {
    std::string id;
    std::optional<std::string> parent_id;
    std::string path;
    potential::Metrics metrics;
    potential::TrainMode mode = potential::TrainMode::Accurate;
    std::vector<std::string> trained_on;
    std::size_t outlier_count = 0;
    std::int64_t step = 0;
    bool active = true;  // false once rolled back

    bool operator==(const ModelEntry&) const = default;
};

struct TrajectoryEntry {
    std::string id;
    std::string structure_id;
    std::string category;
    std::string calculator;
    double temperature = 0.0;
    std::string ensemble;
    std::string status;  // completed | early_stop
    std::string reason;
    std::string path;
    std::size_t snapshots = 0;
    std::int64_t step = 0;

    bool operator==(const TrajectoryEntry&) const = default;
};

// One decision and what became of it.
struct LogEntry {
    std::int64_t step = 0;
    std::string next_task;
    std::string descriptions;
    json directive = json::object();
    std::string source;   // scripted | llm | fallback | limits
    std::string outcome;  // completed | failed
    std::string error;
    json result = json::object();  // action digest

    bool operator==(const LogEntry&) const = default;
};

// The loop state s_t: datasets, models, evaluations and the action log,
// plus the step counter and once-only markers.
struct WorkflowState {
    std::uint64_t master_seed = 0;
    std::int64_t step = 0;
    Phase phase = Phase::Preparing;
    bool reference_calc_done = false;
    bool oracle_sample_done = false;
    int stage = 0;
    std::vector<DatasetEntry> datasets;
    std::vector<ModelEntry> models;
    std::optional<std::string> current_model;
    std::vector<json> evaluations;           // EvaluationRecord payloads with "step"
    std::map<std::string, json> references;  // physical summaries by structure id
    std::vector<TrajectoryEntry> trajectories;
    std::vector<LogEntry> log;
    std::map<std::string, std::size_t> report_lines;  // file name -> lines
    std::optional<bool> success;
    std::string end_reason;

    const DatasetEntry* find_dataset(const std::string& id) const;
    DatasetEntry* find_dataset(const std::string& id);
    const ModelEntry* find_model(const std::string& id) const;
    ModelEntry* find_model(const std::string& id);
    const TrajectoryEntry* find_trajectory(const std::string& id) const;
    std::size_t active_model_count() const;

    json to_json() const;
    static WorkflowState from_json(const json& j);

    // Write-new-then-rename.
    void save(const std::filesystem::path& path) const;
    static WorkflowState load(const std::filesystem::path& path);

    bool operator==(const WorkflowState&) const = default;
};

json to_json(const DatasetStats& s);
DatasetStats stats_from_json(const json& j);
json to_json(const potential::Metrics& m);
potential::Metrics metrics_from_json(const json& j);

}  // namespace alloop
