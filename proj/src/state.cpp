#include "alloop/state.hpp"

#include "alloop/config.hpp"
#include "alloop/core/error.hpp"

namespace alloop {

namespace fs = std::filesystem;

fs::path WorkspacePaths::report(RecordVariant v) const {
    switch (v) {
        case RecordVariant::Dataset: return reports() / "dataset.jsonl";
        case RecordVariant::Train: return reports() / "train.jsonl";
        case RecordVariant::Trajectory: return reports() / "trajectory.jsonl";
        case RecordVariant::Evaluation: return reports() / "evaluation.jsonl";
        case RecordVariant::Decision: return reports() / "decision.jsonl";
        case RecordVariant::Unknown: break;
    }
    throw WorkspaceError("no report file for unknown variant");
}

void WorkspacePaths::create_layout() const {
    for (const auto& d : {init_structures(), trajectories(), selection(), models(), eval_reference(), evaluation(),
                          pruned(), reports()})
        fs::create_directories(d);
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::Preparing: return "preparing";
        case Phase::Autonomous: return "autonomous";
        case Phase::Ended: return "ended";
    }
    return "preparing";
}

Phase phase_from_string(const std::string& s) {
    if (s == "preparing") return Phase::Preparing;
    if (s == "autonomous") return Phase::Autonomous;
    if (s == "ended") return Phase::Ended;
    throw WorkspaceError("unknown phase '" + s + "'");
}

json to_json(const DatasetStats& s) {
    return {{"frame_count", s.frame_count},
            {"total_atoms", s.total_atoms},
            {"energy_per_atom_min", s.energy_per_atom_min},
            {"energy_per_atom_max", s.energy_per_atom_max},
            {"max_force_max", s.max_force_max}};
}

DatasetStats stats_from_json(const json& j) {
    DatasetStats s;
    s.frame_count = j.at("frame_count").get<std::size_t>();
    s.total_atoms = j.at("total_atoms").get<std::size_t>();
    s.energy_per_atom_min = j.at("energy_per_atom_min").get<double>();
    s.energy_per_atom_max = j.at("energy_per_atom_max").get<double>();
    s.max_force_max = j.at("max_force_max").get<double>();
    return s;
}

json to_json(const potential::Metrics& m) { return {{"energy_mae", m.energy_mae}, {"force_mae", m.force_mae}}; }

potential::Metrics metrics_from_json(const json& j) {
    return {j.at("energy_mae").get<double>(), j.at("force_mae").get<double>()};
}

namespace {

json opt(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> opt_string(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::string>();
}

}  // namespace

const DatasetEntry* WorkflowState::find_dataset(const std::string& id) const {
    for (const auto& d : datasets)
        if (d.id == id) return &d;
    return nullptr;
}

DatasetEntry* WorkflowState::find_dataset(const std::string& id) {
    for (auto& d : datasets)
        if (d.id == id) return &d;
    return nullptr;
}

const ModelEntry* WorkflowState::find_model(const std::string& id) const {
    for (const auto& m : models)
        if (m.id == id) return &m;
    return nullptr;
}

ModelEntry* WorkflowState::find_model(const std::string& id) {
    for (auto& m : models)
        if (m.id == id) return &m;
    return nullptr;
}

const TrajectoryEntry* WorkflowState::find_trajectory(const std::string& id) const {
    for (const auto& t : trajectories)
        if (t.id == id) return &t;
    return nullptr;
}

std::size_t WorkflowState::active_model_count() const {
    std::size_t n = 0;
    for (const auto& m : models) n += m.active ? 1 : 0;
    return n;
}

json WorkflowState::to_json() const {
    json ds = json::array();
    for (const auto& d : datasets)
        ds.push_back({{"id", d.id},
                      {"path", d.path},
                      {"frames", d.frames},
                      {"origin", d.origin},
                      {"stats", alloop::to_json(d.stats)},
                      {"step", d.step}});
    json ms = json::array();
    for (const auto& m : models)
        ms.push_back({{"id", m.id},
                      {"parent_id", opt(m.parent_id)},
                      {"path", m.path},
                      {"metrics", alloop::to_json(m.metrics)},
                      {"mode", potential::to_string(m.mode)},
                      {"trained_on", m.trained_on},
                      {"outlier_count", m.outlier_count},
                      {"step", m.step},
                      {"active", m.active}});
    json ts = json::array();
    for (const auto& t : trajectories)
        ts.push_back({{"id", t.id},
                      {"structure_id", t.structure_id},
                      {"category", t.category},
                      {"calculator", t.calculator},
                      {"temperature", t.temperature},
                      {"ensemble", t.ensemble},
                      {"status", t.status},
                      {"reason", t.reason},
                      {"path", t.path},
                      {"snapshots", t.snapshots},
                      {"step", t.step}});
    json lg = json::array();
    for (const auto& e : log)
        lg.push_back({{"step", e.step},
                      {"next_task", e.next_task},
                      {"descriptions", e.descriptions},
                      {"directive", e.directive},
                      {"source", e.source},
                      {"outcome", e.outcome},
                      {"error", e.error},
                      {"result", e.result}});
    return {{"master_seed", master_seed},
            {"step", step},
            {"phase", alloop::to_string(phase)},
            {"reference_calc_done", reference_calc_done},
            {"oracle_sample_done", oracle_sample_done},
            {"stage", stage},
            {"datasets", ds},
            {"models", ms},
            {"current_model", opt(current_model)},
            {"evaluations", evaluations},
            {"references", references},
            {"trajectories", ts},
            {"log", lg},
            {"report_lines", report_lines},
            {"success", success ? json(*success) : json(nullptr)},
            {"end_reason", end_reason}};
}

WorkflowState WorkflowState::from_json(const json& j) {
    WorkflowState s;
    try {
        s.master_seed = j.at("master_seed").get<std::uint64_t>();
        s.step = j.at("step").get<std::int64_t>();
        s.phase = phase_from_string(j.at("phase").get<std::string>());
        s.reference_calc_done = j.at("reference_calc_done").get<bool>();
        s.oracle_sample_done = j.at("oracle_sample_done").get<bool>();
        s.stage = j.at("stage").get<int>();
        for (const auto& d : j.at("datasets")) {
            DatasetEntry e;
            e.id = d.at("id").get<std::string>();
            e.path = d.at("path").get<std::string>();
            e.frames = d.at("frames").get<std::size_t>();
            e.origin = d.at("origin").get<std::vector<std::string>>();
            e.stats = stats_from_json(d.at("stats"));
            e.step = d.at("step").get<std::int64_t>();
            s.datasets.push_back(std::move(e));
        }
        for (const auto& m : j.at("models")) {
            ModelEntry e;
            e.id = m.at("id").get<std::string>();
            e.parent_id = opt_string(m, "parent_id");
            e.path = m.at("path").get<std::string>();
            e.metrics = metrics_from_json(m.at("metrics"));
            e.mode = potential::train_mode_from_string(m.at("mode").get<std::string>());
            e.trained_on = m.at("trained_on").get<std::vector<std::string>>();
            e.outlier_count = m.at("outlier_count").get<std::size_t>();
            e.step = m.at("step").get<std::int64_t>();
            e.active = m.at("active").get<bool>();
            s.models.push_back(std::move(e));
        }
        s.current_model = opt_string(j, "current_model");
        for (const auto& e : j.at("evaluations")) s.evaluations.push_back(e);
        for (const auto& [k, v] : j.at("references").items()) s.references[k] = v;
        for (const auto& t : j.at("trajectories")) {
            TrajectoryEntry e;
            e.id = t.at("id").get<std::string>();
            e.structure_id = t.at("structure_id").get<std::string>();
            e.category = t.at("category").get<std::string>();
            e.calculator = t.at("calculator").get<std::string>();
            e.temperature = t.at("temperature").get<double>();
            e.ensemble = t.at("ensemble").get<std::string>();
            e.status = t.at("status").get<std::string>();
            e.reason = t.at("reason").get<std::string>();
            e.path = t.at("path").get<std::string>();
            e.snapshots = t.at("snapshots").get<std::size_t>();
            e.step = t.at("step").get<std::int64_t>();
            s.trajectories.push_back(std::move(e));
        }
        for (const auto& l : j.at("log")) {
            LogEntry e;
            e.step = l.at("step").get<std::int64_t>();
            e.next_task = l.at("next_task").get<std::string>();
            e.descriptions = l.at("descriptions").get<std::string>();
            e.directive = l.at("directive");
            e.source = l.at("source").get<std::string>();
            e.outcome = l.at("outcome").get<std::string>();
            e.error = l.at("error").get<std::string>();
            e.result = l.at("result");
            s.log.push_back(std::move(e));
        }
        s.report_lines = j.at("report_lines").get<std::map<std::string, std::size_t>>();
        if (!j.at("success").is_null()) s.success = j.at("success").get<bool>();
        s.end_reason = j.at("end_reason").get<std::string>();
    } catch (const json::exception& e) {
        throw WorkspaceError(std::string("malformed workflow state: ") + e.what());
    }
    return s;
}

void WorkflowState::save(const fs::path& path) const { write_file_atomic(path, to_json().dump(1) + "\n"); }

WorkflowState WorkflowState::load(const fs::path& path) {
    if (!fs::exists(path)) throw WorkspaceError("no workflow state at " + path.string());
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw WorkspaceError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace alloop
