#include "alloop/policy.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "alloop/core/report.hpp"

namespace alloop::policy {

using actions::ActionDirective;
using actions::ActionType;

// ---------------------------------------------------------------------------
// Curriculum

namespace {

int stage_of_kind(const std::string& kind) {
    if (kind == "solid" || kind == "amorphous" || kind == "molecule_liquid" || kind == "cluster") return 0;
    if (kind == "solid_surface" || kind == "solid_solid" || kind == "solid_liquid") return 1;
    return 2;  // multilayer
}

const char* kStageNames[] = {"components", "interfaces", "full_assembly"};

}  // namespace

std::vector<Stage> curriculum(const std::vector<StructureInfo>& structures) {
    std::vector<Stage> all(3);
    for (int k = 0; k < 3; ++k) all[k].name = kStageNames[k];
    for (const auto& s : structures) {
        auto& st = all[static_cast<std::size_t>(stage_of_kind(s.kind))];
        if (std::find(st.categories.begin(), st.categories.end(), s.category) == st.categories.end())
            st.categories.push_back(s.category);
    }
    std::vector<Stage> out;
    std::vector<std::string> cumulative;
    for (auto& st : all) {
        if (st.categories.empty()) continue;
        for (const auto& s : structures)
            if (s.validation && std::find(st.categories.begin(), st.categories.end(), s.category) != st.categories.end())
                cumulative.push_back(s.id);
        st.validation_ids = cumulative;
        out.push_back(st);
    }
    return out;
}

std::vector<StructureInfo> structure_infos(const structgen::InitialSet& set) {
    std::vector<StructureInfo> out;
    for (const auto& d : set.descriptions) out.push_back({d.id, d.category, d.kind, d.validation});
    return out;
}

// ---------------------------------------------------------------------------
// Summary

namespace {

json opt_json(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }
json opt_json(const std::optional<double>& s) { return s ? json(*s) : json(nullptr); }
json opt_json(const std::optional<bool>& s) { return s ? json(*s) : json(nullptr); }

template <typename T>
std::optional<T> opt_get(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

json StateSummary::to_json() const {
    json ds = json::array();
    for (const auto& d : datasets)
        ds.push_back({{"id", d.id}, {"frames", d.frames}, {"energy_min", d.energy_min}, {"energy_max", d.energy_max}});
    json ms = json::array();
    for (const auto& m : models)
        ms.push_back({{"id", m.id},
                      {"parent_id", opt_json(m.parent_id)},
                      {"mode", m.mode},
                      {"force_mae", m.force_mae},
                      {"energy_mae", m.energy_mae},
                      {"active", m.active}});
    json ss = json::array();
    for (const auto& s : structures)
        ss.push_back({{"id", s.id}, {"category", s.category}, {"kind", s.kind}, {"validation", s.validation}});
    json st = json::array();
    for (const auto& s : stages)
        st.push_back({{"name", s.name}, {"categories", s.categories}, {"validation_ids", s.validation_ids}});
    json hist = json::array();
    for (const auto& h : history)
        hist.push_back({{"step", h.step}, {"next_task", h.next_task}, {"outcome", h.outcome}, {"directive", h.directive}});
    return {{"step", step},
            {"reference_done", reference_done},
            {"oracle_sample_done", oracle_sample_done},
            {"datasets", ds},
            {"models", ms},
            {"current_model", opt_json(current_model)},
            {"trajectory_count", trajectory_count},
            {"structures", ss},
            {"stages", st},
            {"stage", stage},
            {"last_action", last_action},
            {"last_action_result", last_action_result},
            {"last_sample", last_sample},
            {"consecutive_eval_failures", consecutive_eval_failures},
            {"consecutive_failures", consecutive_failures},
            {"last_eval_passed", opt_json(last_eval_passed)},
            {"improvement", opt_json(improvement)},
            {"shared_regression", opt_json(shared_regression)},
            {"latest_evaluations", latest_evaluations},
            {"history", hist}};
}

StateSummary StateSummary::from_json(const json& j) {
    StateSummary s;
    s.step = j.at("step").get<std::int64_t>();
    s.reference_done = j.at("reference_done").get<bool>();
    s.oracle_sample_done = j.at("oracle_sample_done").get<bool>();
    for (const auto& d : j.at("datasets"))
        s.datasets.push_back({d.at("id").get<std::string>(), d.at("frames").get<std::size_t>(),
                              d.at("energy_min").get<double>(), d.at("energy_max").get<double>()});
    for (const auto& m : j.at("models"))
        s.models.push_back({m.at("id").get<std::string>(), opt_get<std::string>(m, "parent_id"),
                            m.at("mode").get<std::string>(), m.at("force_mae").get<double>(),
                            m.at("energy_mae").get<double>(), m.at("active").get<bool>()});
    s.current_model = opt_get<std::string>(j, "current_model");
    s.trajectory_count = j.at("trajectory_count").get<std::size_t>();
    for (const auto& x : j.at("structures"))
        s.structures.push_back({x.at("id").get<std::string>(), x.at("category").get<std::string>(),
                                x.at("kind").get<std::string>(), x.at("validation").get<bool>()});
    for (const auto& x : j.at("stages"))
        s.stages.push_back({x.at("name").get<std::string>(), x.at("categories").get<std::vector<std::string>>(),
                            x.at("validation_ids").get<std::vector<std::string>>()});
    s.stage = j.at("stage").get<int>();
    s.last_action = j.at("last_action").get<std::string>();
    s.last_action_result = j.at("last_action_result");
    s.last_sample = j.at("last_sample");
    s.consecutive_eval_failures = j.at("consecutive_eval_failures").get<std::size_t>();
    s.consecutive_failures = j.at("consecutive_failures").get<std::size_t>();
    s.last_eval_passed = opt_get<bool>(j, "last_eval_passed");
    s.improvement = opt_get<double>(j, "improvement");
    s.shared_regression = opt_get<double>(j, "shared_regression");
    for (const auto& e : j.at("latest_evaluations")) s.latest_evaluations.push_back(e);
    for (const auto& h : j.at("history"))
        s.history.push_back({h.at("step").get<std::int64_t>(), h.at("next_task").get<std::string>(),
                             h.at("outcome").get<std::string>(), h.at("directive")});
    return s;
}

StateSummary summarize(const WorkflowState& state, const std::vector<StructureInfo>& structures,
                       std::size_t history_tail) {
    StateSummary s;
    s.step = state.step;
    s.reference_done = state.reference_calc_done;
    s.oracle_sample_done = state.oracle_sample_done;
    for (const auto& d : state.datasets)
        s.datasets.push_back({d.id, d.frames, d.stats.energy_per_atom_min, d.stats.energy_per_atom_max});
    for (const auto& m : state.models)
        s.models.push_back({m.id, m.parent_id, potential::to_string(m.mode), m.metrics.force_mae,
                            m.metrics.energy_mae, m.active});
    s.current_model = state.current_model;
    s.trajectory_count = state.trajectories.size();
    s.structures = structures;
    s.stages = curriculum(structures);

    std::size_t n_stages = s.stages.size();
    for (const auto& e : state.log) {
        if (e.outcome != "completed") {
            ++s.consecutive_failures;
            continue;
        }
        s.consecutive_failures = 0;
        s.last_action = e.next_task;
        s.last_action_result = e.result;
        if (e.next_task == "sample") {
            s.last_sample = e.result;
            s.last_sample["step"] = e.step;
        } else if (e.next_task == "evaluate") {
            std::size_t evaluated = e.result.value("evaluated", std::size_t{0});
            std::size_t passed = e.result.value("passed", std::size_t{0});
            bool ok = evaluated > 0 && passed == evaluated;
            s.last_eval_passed = ok;
            s.latest_evaluations.clear();
            std::set<std::string> covered;
            for (const auto& r : e.result.value("records", json::array())) {
                covered.insert(r.at("structure_id").get<std::string>());
                s.latest_evaluations.push_back(r);
            }
            bool covers = static_cast<std::size_t>(s.stage) < n_stages;
            if (covers)
                for (const auto& id : s.stages[static_cast<std::size_t>(s.stage)].validation_ids)
                    covers = covers && covered.count(id);
            if (ok && covers) {
                ++s.stage;
                s.consecutive_eval_failures = 0;
                s.last_sample = nullptr;
            } else if (!ok) {
                ++s.consecutive_eval_failures;
            }
        } else if (e.next_task == "prune") {
            s.consecutive_eval_failures = 0;
        }
    }
    if (state.current_model) {
        for (const auto& e : state.log)
            if (e.outcome == "completed" && e.next_task == "train" &&
                e.result.value("model_id", std::string()) == *state.current_model) {
                s.improvement = opt_get<double>(e.result, "improvement");
                s.shared_regression = opt_get<double>(e.result, "shared_regression");
            }
    }
    std::size_t first = state.log.size() > history_tail ? state.log.size() - history_tail : 0;
    for (std::size_t i = first; i < state.log.size(); ++i) {
        const auto& e = state.log[i];
        s.history.push_back({e.step, e.next_task, e.outcome, e.directive});
    }
    return s;
}

StateSummary assemble_state(const std::filesystem::path& workspace, std::size_t history_tail) {
    WorkspacePaths paths{workspace};
    if (!std::filesystem::exists(paths.state_file()))
        throw WorkspaceError("workspace " + workspace.string() + " has no workflow_state.json");
    if (!std::filesystem::exists(paths.init_structures() / "init_structure_description.txt"))
        throw WorkspaceError("workspace " + workspace.string() + " has no structure descriptions");
    auto state = WorkflowState::load(paths.state_file());
    auto set = structgen::read_initial_set(paths.init_structures());
    return summarize(state, structure_infos(set), history_tail);
}

// ---------------------------------------------------------------------------
// Decisions

json Decision::to_json() const {
    return {{"next_task", actions::to_string(next_task)}, {"descriptions", descriptions}, {"directive", directive.params}};
}

std::string serialize_decision(const Decision& d) { return d.to_json().dump(); }

namespace {

bool can_rollback(const StateSummary& s) {
    if (!s.current_model) return false;
    const StateSummary::ModelDigest* cur = nullptr;
    for (const auto& m : s.models)
        if (m.id == *s.current_model) cur = &m;
    if (!cur || !cur->parent_id) return false;
    std::size_t active = 0;
    bool parent_active = false;
    for (const auto& m : s.models) {
        active += m.active ? 1 : 0;
        if (m.id == *cur->parent_id) parent_active = m.active;
    }
    return parent_active && active >= 2;
}

const StateSummary::ModelDigest* find_model(const StateSummary& s, const std::string& id) {
    for (const auto& m : s.models)
        if (m.id == id) return &m;
    return nullptr;
}

std::vector<std::string> stage_categories(const StateSummary& s) {
    if (s.stages.empty()) return {};
    auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(s.stage, 0)), s.stages.size() - 1);
    return s.stages[k].categories;
}

std::vector<std::string> stage_validation(const StateSummary& s) {
    if (s.stages.empty()) {
        std::vector<std::string> out;
        for (const auto& x : s.structures)
            if (x.validation) out.push_back(x.id);
        return out;
    }
    auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(s.stage, 0)), s.stages.size() - 1);
    return s.stages[k].validation_ids;
}

std::vector<std::string> all_validation(const StateSummary& s) {
    std::vector<std::string> out;
    for (const auto& x : s.structures)
        if (x.validation) out.push_back(x.id);
    return out;
}

bool sample_has_frames(const StateSummary& s) {
    return s.last_sample.is_object() && s.last_sample.value("snapshots", std::size_t{0}) > 0 &&
           !s.last_sample.value("trajectory_ids", json::array()).empty() && s.trajectory_count > 0;
}

Decision make(ActionType a, std::string why, json params) {
    Decision d;
    d.next_task = a;
    d.descriptions = std::move(why);
    d.directive = {a, std::move(params)};
    return d;
}

}  // namespace

ActionDirective default_directive(ActionType a, const StateSummary& s, const PolicyConfig& cfg) {
    json p = json::object();
    switch (a) {
        case ActionType::ReferenceCalc:
        case ActionType::OracleSample: break;
        case ActionType::Sample:
            p["categories"] = stage_categories(s);
            if (s.current_model) p["calculator"] = *s.current_model;
            else p["calculator"] = "oracle";
            break;
        case ActionType::Select: {
            if (s.last_sample.is_object() && s.last_sample.contains("trajectory_ids"))
                p["trajectory_ids"] = s.last_sample["trajectory_ids"];
            p["ratio"] = cfg.base_ratio;
            json boosted = json::object();
            if (s.last_sample.is_object()) {
                const json by_category = s.last_sample.value("by_category", json::object());
                for (const auto& [cat, n] : by_category.items())
                    if (n.get<std::size_t>() > 0) boosted[cat] = std::min(1.0, cfg.base_ratio * cfg.boost_factor);
            }
            if (!boosted.empty()) p["category_ratios"] = boosted;
            if (s.last_sample.is_object() && s.last_sample.value("calculator", std::string()) == "oracle") p["all"] = true;
            break;
        }
        case ActionType::Train: {
            std::size_t early = s.last_sample.is_object() ? s.last_sample.value("early_stops", std::size_t{0}) : 0;
            if (!s.current_model) {
                p["from_scratch"] = true;
                p["mode"] = "accurate";
            } else {
                p["from_scratch"] = false;
                p["mode"] = early == 0 ? "accurate" : "quick";
            }
            break;
        }
        case ActionType::Evaluate:
            p["structure_ids"] = cfg.one_shot ? all_validation(s) : stage_validation(s);
            if (s.current_model) p["model_id"] = *s.current_model;
            break;
        case ActionType::Prune: p["rollback"] = can_rollback(s); break;
        case ActionType::End: p["success"] = false; break;
    }
    return {a, p};
}

std::string ordering_violation(const StateSummary& s, const Decision& d) {
    const auto a = d.next_task;
    const json& p = d.directive.params;
    if (a == ActionType::End) return {};
    if (a == ActionType::ReferenceCalc) return s.reference_done ? "reference_calc runs only once, at the start" : "";
    if (a == ActionType::OracleSample) {
        if (s.oracle_sample_done) return "oracle_sample runs only once, at the start";
        if (!s.reference_done) return "oracle_sample must follow reference_calc";
        return {};
    }
    if (!s.reference_done || !s.oracle_sample_done) return "reference_calc and oracle_sample come first";
    switch (a) {
        case ActionType::Train:
            if (s.datasets.empty()) return "train needs a dataset";
            if (p.value("from_scratch", false) == false && !s.current_model && p.contains("parent"))
                return "fine-tune needs a parent model";
            if (p.contains("parent") && !find_model(s, p.at("parent").get<std::string>()))
                return "unknown parent model";
            return {};
        case ActionType::Sample: {
            std::string calc = p.value("calculator", s.current_model.value_or(""));
            if (calc.empty()) return "sample needs a model or the oracle";
            if (calc != "oracle") {
                auto m = find_model(s, calc);
                if (!m || !m->active) return "sample names an unknown model";
            }
            for (const auto& c : p.value("categories", json::array())) {
                bool known = false;
                for (const auto& x : s.structures) known = known || (x.category == c && !x.validation);
                if (!known) return "sample names an unknown category";
            }
            return {};
        }
        case ActionType::Select:
            if (s.trajectory_count == 0) return "select needs trajectories";
            if (!p.value("all", false) && !s.current_model) return "select by error needs a model";
            return {};
        case ActionType::Evaluate:
            if (!s.current_model && !p.contains("model_id")) return "evaluate needs a model";
            if (p.contains("model_id") && p.at("model_id") != "oracle") {
                auto m = find_model(s, p.at("model_id").get<std::string>());
                if (!m || !m->active) return "evaluate names an unknown model";
            }
            return {};
        case ActionType::Prune:
            if (!s.current_model) return "prune needs a model";
            if (p.value("rollback", false) && !can_rollback(s)) return "cannot roll back the only model";
            return {};
        default: return {};
    }
}

Decision scripted_policy(const StateSummary& s, const PolicyConfig& cfg) {
    auto with_default = [&](ActionType a, std::string why) {
        Decision d;
        d.next_task = a;
        d.descriptions = std::move(why);
        d.directive = default_directive(a, s, cfg);
        return d;
    };
    if (static_cast<std::size_t>(s.step) + 1 >= cfg.max_steps)
        return make(ActionType::End, "Step budget exhausted.", {{"success", false}, {"reason", "step budget exhausted"}});
    if (s.consecutive_failures >= 3)
        return make(ActionType::End, "Three consecutive actions failed.",
                    {{"success", false}, {"reason", "repeated action failures"}});
    if (!s.reference_done) return with_default(ActionType::ReferenceCalc, "Collect reference observables on the validation structures.");
    if (!s.oracle_sample_done) return with_default(ActionType::OracleSample, "Sample every training structure with the oracle.");
    if (s.datasets.empty())
        return make(ActionType::End, "No training data could be produced.", {{"success", false}, {"reason", "no training data"}});
    if (!s.current_model) return with_default(ActionType::Train, "Train the first model on the initial dataset.");

    if (cfg.one_shot) {
        if (s.last_action == "evaluate") {
            bool ok = s.last_eval_passed.value_or(false);
            return make(ActionType::End, "One-shot evaluation finished.",
                        {{"success", ok}, {"reason", ok ? "one-shot evaluation passed" : "one-shot evaluation failed"}});
        }
        return with_default(ActionType::Evaluate, "Evaluate the single trained model.");
    }
    if (static_cast<std::size_t>(s.stage) >= s.stages.size())
        return make(ActionType::End, "Every curriculum stage passed evaluation.", {{"success", true}, {"reason", "all stages passed"}});

    const std::string& stage_name = s.stages[static_cast<std::size_t>(s.stage)].name;
    const auto* cur = find_model(s, *s.current_model);
    const bool cur_accurate = cur && cur->mode == "accurate";

    if (s.last_action == "sample") {
        if (sample_has_frames(s)) {
            auto d = with_default(ActionType::Select, "Label the sampled frames and keep the highest-error ones.");
            if (s.last_sample.value("early_stops", std::size_t{0}) > 0)
                d.descriptions = "Label the sampled frames; boost categories whose runs stopped early.";
            return d;
        }
        auto d = with_default(ActionType::Sample, "The model produced no usable frames; sample with the oracle instead.");
        d.directive.params["calculator"] = "oracle";
        return d;
    }
    if (s.last_action == "select") {
        auto d = with_default(ActionType::Train, "Fine-tune on the enlarged dataset.");
        return d;
    }
    if (s.last_action == "prune") {
        auto d = make(ActionType::Train, "Retrain from scratch on the pruned data.",
                      {{"from_scratch", true}, {"mode", "accurate"}});
        return d;
    }
    if (s.last_action == "evaluate") {
        if (!s.last_eval_passed.value_or(false) && s.consecutive_eval_failures >= cfg.fail_limit)
            return with_default(ActionType::Prune, "Evaluation failed repeatedly; roll back and drop outliers.");
        return with_default(ActionType::Sample, "Continue sampling the " + stage_name + " stage.");
    }
    if (s.last_action == "train") {
        const auto* parent = cur && cur->parent_id ? find_model(s, *cur->parent_id) : nullptr;
        if (cur_accurate && parent && parent->mode == "accurate" && s.shared_regression &&
            *s.shared_regression > cfg.prune_regression && can_rollback(s))
            return with_default(ActionType::Prune, "The new model regressed on its parent's data; roll back.");
        const bool quiet = s.last_sample.is_object() && s.last_sample.value("early_stops", std::size_t{0}) == 0;
        const bool flat = s.improvement && *s.improvement < cfg.stable_improvement;
        if (cur_accurate && quiet && flat)
            return with_default(ActionType::Evaluate, "Sampling is stable and the error has levelled off; evaluate the " +
                                                          stage_name + " stage.");
    }
    return with_default(ActionType::Sample, "Sample the " + stage_name + " stage with the current model.");
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

// Candidate JSON objects: balanced-brace spans outside string literals.
std::vector<std::string> brace_spans(const std::string& text) {
    std::vector<std::string> out;
    for (std::size_t start = text.find('{'); start != std::string::npos; start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_str = false, esc = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_str) {
                if (esc) esc = false;
                else if (c == '\\') esc = true;
                else if (c == '"') in_str = false;
                continue;
            }
            if (c == '"') in_str = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) {
                out.push_back(text.substr(start, i - start + 1));
                break;
            }
        }
    }
    return out;
}

}  // namespace

Decision parse_decision(const std::string& text) {
    json obj;
    bool found = false;
    for (const auto& span : brace_spans(text)) {
        try {
            obj = json::parse(span);
        } catch (const json::parse_error&) {
            continue;
        }
        if (obj.is_object()) {
            found = true;
            break;
        }
    }
    if (!found) throw DecisionParseError(ParseFailure::NoJson, "no JSON object in the reply");
    if (!obj.contains("next_task") || !obj.at("next_task").is_string())
        throw DecisionParseError(ParseFailure::IllegalTask, "the reply has no next_task string");
    auto task = actions::action_from_name(obj.at("next_task").get<std::string>());
    if (!task)
        throw DecisionParseError(ParseFailure::IllegalTask,
                                 "illegal next_task '" + obj.at("next_task").get<std::string>() + "'");
    Decision d;
    d.next_task = *task;
    if (obj.contains("descriptions")) {
        if (!obj.at("descriptions").is_string())
            throw DecisionParseError(ParseFailure::MalformedDirective, "descriptions must be a string");
        d.descriptions = obj.at("descriptions").get<std::string>();
    }
    d.directive.action = *task;
    d.has_directive = obj.contains("directive");
    if (d.has_directive) {
        d.directive.params = obj.at("directive");
        try {
            d.directive.validate();
        } catch (const Error& e) {
            throw DecisionParseError(ParseFailure::MalformedDirective, std::string("malformed directive: ") + e.what());
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// LLM policy

void append_dialogue(const std::filesystem::path& log, const std::string& title, const std::string& body,
                     const std::string& secret) {
    std::string text = body;
    if (!secret.empty())
        for (std::size_t pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos))
            text.replace(pos, secret.size(), "[REDACTED]");
    std::ofstream out(log, std::ios::app);
    out << "---------------------------------------------------------------\n"
        << title << "\n---------------------------------------------------------------\n"
        << text << (text.empty() || text.back() != '\n' ? "\n" : "") << "\n";
}

std::string system_prompt() {
    return R"(You are the top-level decision maker of an active-learning workflow that trains a machine-learned interatomic potential. You do not run anything yourself. At each step choose the next task and give the executor precise parameters.

Tasks:
- eval_reference: run the reference method on the validation structures. Only once, at the very beginning.
- pfp_sample: sample every training structure with the reference method to build the initial dataset. Only once, right after eval_reference.
- sample: run MD with the current model (or "oracle") on the named structure categories.
- selection: label sampled frames with the reference method and keep the highest-error fraction (5-10% is typical; "all": true for reference-driven trajectories).
- train: train or fine-tune the model. Use "quick" while iterating, "accurate" when an evaluation is planned.
- evaluation: run model MD on validation structures and compare with the reference observables.
- prune: remove outlier frames and optionally roll back the newest model.
- end: stop, with "success" true or false.

Train on simple components first and move on to interfaces and the full assembly once the components are stable.

Reply with one JSON object and nothing else:
{"next_task": "...", "descriptions": "short reason", "directive": {...optional parameters...}}
Directive fields: sample {categories, calculator, temperatures, ensemble, n_steps}; selection {trajectory_ids, ratio, category_ratios, all}; train {from_scratch, parent, mode, datasets}; evaluation {structure_ids, model_id}; prune {rollback, model_ids, dataset_ids, z_max}; end {success, reason}. Omit the directive to accept the defaults.)";
}

namespace {

std::string tail_lines(const std::filesystem::path& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) return {};
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    std::size_t first = lines.size() > n ? lines.size() - n : 0;
    std::string out;
    for (std::size_t i = first; i < lines.size(); ++i) out += lines[i] + "\n";
    return out;
}

}  // namespace

LlmOutcome llm_policy(const StateSummary& summary, const PolicyConfig& config, ChatTransport& transport,
                      const LlmContext& ctx) {
    std::ostringstream user;
    user << "Step " << summary.step << ". Current state:\n" << summary.to_json().dump(1) << "\n";
    if (!ctx.task_summary.empty()) user << "\nTask summary:\n" << ctx.task_summary << "\n";
    if (!ctx.structure_descriptions.empty()) user << "\nInitial structures:\n" << ctx.structure_descriptions << "\n";
    std::string recent = tail_lines(ctx.dialogue_log, 40);
    if (!recent.empty()) user << "\nRecent dialogue:\n" << recent;
    user << "\nChoose the next task.";

    std::vector<ChatMessage> messages{{"system", system_prompt()}, {"user", user.str()}};
    LlmOutcome outcome;
    std::string last_error;
    const std::size_t tries = std::max<std::size_t>(ctx.retries, 1);
    for (std::size_t attempt = 1; attempt <= tries; ++attempt) {
        outcome.attempts = attempt;
        std::string reply;
        try {
            reply = transport.complete(messages);
        } catch (const TransportError& e) {
            last_error = std::string("transport error: ") + e.what();
            append_dialogue(ctx.dialogue_log, "Decision step " + std::to_string(summary.step) + " attempt " +
                                                  std::to_string(attempt) + ": transport failure",
                            last_error);
            continue;
        }
        append_dialogue(ctx.dialogue_log,
                        "Decision step " + std::to_string(summary.step) + " attempt " + std::to_string(attempt),
                        "Reply:\n" + reply);
        try {
            Decision d = parse_decision(reply);
            if (!d.has_directive) {
                d.directive = default_directive(d.next_task, summary, config);
                d.has_directive = true;
            }
            std::string why = ordering_violation(summary, d);
            if (!why.empty()) throw DecisionParseError(ParseFailure::IllegalTask, "decision not allowed now: " + why);
            outcome.decision = d;
            return outcome;
        } catch (const DecisionParseError& e) {
            last_error = e.what();
            messages.push_back({"assistant", reply});
            messages.push_back({"user", "Your reply could not be used (" + last_error +
                                            "). Answer again with a single valid JSON object."});
        }
    }
    outcome.fallback = true;
    outcome.decision = scripted_policy(summary, config);
    append_dialogue(ctx.dialogue_log, "Decision step " + std::to_string(summary.step) + ": fallback to scripted policy",
                    "After " + std::to_string(tries) + " failed attempts (last: " + last_error +
                        ") the scripted policy chose " + actions::to_string(outcome.decision.next_task) + ".");
    return outcome;
}

}  // namespace alloop::policy
