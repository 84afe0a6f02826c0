#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "alloop/config.hpp"
#include "alloop/core/report.hpp"
#include "alloop/md.hpp"
#include "alloop/oracle.hpp"
#include "alloop/state.hpp"
#include "alloop/structgen.hpp"

namespace alloop::actions {

enum class ActionType { ReferenceCalc, OracleSample, Sample, Select, Train, Evaluate, Prune, End };

std::string to_string(ActionType a);
// Canonical names plus the aliases eval_reference, pfp_sample, selection and
// evaluation. Empty for anything else.
std::optional<ActionType> action_from_name(const std::string& name);
const std::vector<ActionType>& all_actions();

// Per-action parameters (all optional unless noted):
//   reference_calc  structure_ids
//   oracle_sample   structure_ids
//   sample          categories (required), calculator, temperatures, ensemble, n_steps
//   select          trajectory_ids, ratio, category_ratios, all
//   train           from_scratch, parent, mode, datasets
//   evaluate        structure_ids, model_id
//   prune           rollback, model_ids, dataset_ids, z_max
//   end             success, reason
struct ActionDirective {
    ActionType action = ActionType::End;
    json params = json::object();

    // Throws ValidationError for unknown fields or wrongly typed values.
    void validate() const;
    json to_json() const;
    static ActionDirective from_json(const json& j);

    bool operator==(const ActionDirective&) const = default;
};

// Everything an action needs besides the mutable state.
struct Context {
    WorkspacePaths paths;
    RunConfig config;
    structgen::TaskSpec task;
    structgen::InitialSet structures;
    oracle::OracleSpec oracle;  // resolved over the task species
    std::vector<std::string> species;

    static Context open(const std::filesystem::path& root);

    const structgen::StructureDescription& description(const std::string& structure_id) const;
    const AtomicConfiguration& structure(const std::string& structure_id) const;
    std::vector<std::string> validation_ids() const;
    std::vector<std::string> categories() const;
    std::string kind_of_category(const std::string& category) const;

    void append(RecordVariant v, std::int64_t step, const json& payload) const;
    potential::DescriptorBasis basis() const;
    std::vector<double> sample_temperatures() const;
    std::string relative(const std::filesystem::path& p) const;
};

// Runs the action on `state` and returns its digest. Errors propagate; the
// caller decides whether to keep the mutated state.
json execute(const Context& ctx, WorkflowState& state, const ActionDirective& directive, std::int64_t step);

json reference_calc(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json oracle_sample(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json sample(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json select(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json train(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json evaluate(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json prune(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);
json end(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step);

// ---------------------------------------------------------------------------
// Pieces exposed for testing

// ceil(ratio * n) with a 1e-9 guard against representation error, so
// 0.075 * 4848 = 363.6 gives 364 and an exact product is not bumped.
std::size_t selection_count(std::size_t n, double ratio);

struct Candidate {
    std::string trajectory_id;
    std::size_t frame_index = 0;
    double error = 0.0;
};

// Indices of the k highest-error candidates, ordered by descending error with
// ties broken by (trajectory id, frame index).
std::vector<std::size_t> top_k(const std::vector<Candidate>& candidates, std::size_t k);

// max_i |F_a[i] - F_b[i]|
double max_force_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Isotropic scaling of cell and positions.
AtomicConfiguration scaled(const AtomicConfiguration& config, double factor);

// Density, energy and distance ranges plus RDF peaks and diffusion
// coefficients of a trajectory, as stored in eval_reference/.
json physical_summary(const md::Trajectory& traj, const Context& ctx);

// Model id of the newest active model whose latest evaluation on every
// structure it was evaluated on passed; empty when none.
std::optional<std::string> newest_passing_model(const WorkflowState& state);

json final_report(const Context& ctx, const WorkflowState& state);
std::string render_report_text(const json& report);

}  // namespace alloop::actions
