#include "alloop/actions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "alloop/core/error.hpp"
#include "alloop/core/extxyz.hpp"
#include "alloop/core/parallel.hpp"
#include "alloop/core/random.hpp"
#include "alloop/potential.hpp"

namespace alloop::actions {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Action names and directives

std::string to_string(ActionType a) {
    switch (a) {
        case ActionType::ReferenceCalc: return "reference_calc";
        case ActionType::OracleSample: return "oracle_sample";
        case ActionType::Sample: return "sample";
        case ActionType::Select: return "select";
        case ActionType::Train: return "train";
        case ActionType::Evaluate: return "evaluate";
        case ActionType::Prune: return "prune";
        case ActionType::End: return "end";
    }
    return "end";
}

const std::vector<ActionType>& all_actions() {
    static const std::vector<ActionType> all{ActionType::ReferenceCalc, ActionType::OracleSample, ActionType::Sample,
                                             ActionType::Select,        ActionType::Train,        ActionType::Evaluate,
                                             ActionType::Prune,         ActionType::End};
    return all;
}

std::optional<ActionType> action_from_name(const std::string& name) {
    for (auto a : all_actions())
        if (to_string(a) == name) return a;
    if (name == "eval_reference") return ActionType::ReferenceCalc;
    if (name == "pfp_sample") return ActionType::OracleSample;
    if (name == "selection") return ActionType::Select;
    if (name == "evaluation") return ActionType::Evaluate;
    return std::nullopt;
}

namespace {

enum class Ty { Bool, Number, String, StringList, NumberList, RatioMap };

bool has_type(const json& v, Ty t) {
    switch (t) {
        case Ty::Bool: return v.is_boolean();
        case Ty::Number: return v.is_number();
        case Ty::String: return v.is_string();
        case Ty::StringList:
            return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_string(); });
        case Ty::NumberList:
            return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
        case Ty::RatioMap:
            return v.is_object() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
    }
    return false;
}

const std::map<std::string, Ty>& schema(ActionType a) {
    static const std::map<ActionType, std::map<std::string, Ty>> schemas{
        {ActionType::ReferenceCalc, {{"structure_ids", Ty::StringList}}},
        {ActionType::OracleSample, {{"structure_ids", Ty::StringList}}},
        {ActionType::Sample,
         {{"categories", Ty::StringList},
          {"calculator", Ty::String},
          {"temperatures", Ty::NumberList},
          {"ensemble", Ty::String},
          {"n_steps", Ty::Number}}},
        {ActionType::Select,
         {{"trajectory_ids", Ty::StringList}, {"ratio", Ty::Number}, {"category_ratios", Ty::RatioMap}, {"all", Ty::Bool}}},
        {ActionType::Train,
         {{"from_scratch", Ty::Bool}, {"parent", Ty::String}, {"mode", Ty::String}, {"datasets", Ty::StringList}}},
        {ActionType::Evaluate, {{"structure_ids", Ty::StringList}, {"model_id", Ty::String}}},
        {ActionType::Prune,
         {{"rollback", Ty::Bool}, {"model_ids", Ty::StringList}, {"dataset_ids", Ty::StringList}, {"z_max", Ty::Number}}},
        {ActionType::End, {{"success", Ty::Bool}, {"reason", Ty::String}}},
    };
    return schemas.at(a);
}

}  // namespace

void ActionDirective::validate() const {
    if (!params.is_object()) throw ValidationError(to_string(action) + " directive parameters must be an object");
    const auto& s = schema(action);
    for (const auto& [key, value] : params.items()) {
        auto it = s.find(key);
        if (it == s.end()) throw ValidationError("unknown field '" + key + "' for " + to_string(action));
        if (!has_type(value, it->second)) throw ValidationError("field '" + key + "' of " + to_string(action) + " has the wrong type");
    }
    if (action == ActionType::Sample && !params.contains("categories"))
        throw ValidationError("sample needs 'categories'");
    if (action == ActionType::Train && params.contains("mode")) potential::train_mode_from_string(params.at("mode"));
    if (action == ActionType::Sample && params.contains("ensemble"))
        md::ensemble_from_string(params.at("ensemble").get<std::string>());
    if (action == ActionType::Select && params.contains("ratio")) {
        double r = params.at("ratio").get<double>();
        if (!(r > 0.0 && r <= 1.0)) throw ValidationError("select ratio must lie in (0, 1]");
    }
}

json ActionDirective::to_json() const { return {{"action", to_string(action)}, {"params", params}}; }

ActionDirective ActionDirective::from_json(const json& j) {
    auto a = action_from_name(j.at("action").get<std::string>());
    if (!a) throw ValidationError("unknown action '" + j.at("action").get<std::string>() + "'");
    ActionDirective d{*a, j.value("params", json::object())};
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Context

Context Context::open(const fs::path& root) {
    Context c;
    c.paths.root = root;
    if (!fs::exists(c.paths.config()) || !fs::exists(c.paths.task()))
        throw WorkspaceError("workspace " + root.string() + " is not initialized");
    c.config = RunConfig::load(c.paths.config());
    c.task = structgen::TaskSpec::load(c.paths.task());
    c.structures = structgen::read_initial_set(c.paths.init_structures());
    std::set<std::string> sp;
    for (const auto& s : c.structures.structures)
        for (const auto& x : s.species) sp.insert(x);
    c.species.assign(sp.begin(), sp.end());
    json oj = c.config.oracle.is_null() || c.config.oracle.empty() ? c.task.oracle : c.config.oracle;
    c.oracle = oracle::OracleSpec::from_json(oj).resolved(c.species);
    return c;
}

const structgen::StructureDescription& Context::description(const std::string& id) const {
    for (const auto& d : structures.descriptions)
        if (d.id == id) return d;
    throw PreconditionError("unknown structure '" + id + "'");
}

const AtomicConfiguration& Context::structure(const std::string& id) const {
    for (std::size_t i = 0; i < structures.descriptions.size(); ++i)
        if (structures.descriptions[i].id == id) return structures.structures[i];
    throw PreconditionError("unknown structure '" + id + "'");
}

std::vector<std::string> Context::validation_ids() const {
    std::vector<std::string> out;
    for (const auto& d : structures.descriptions)
        if (d.validation) out.push_back(d.id);
    return out;
}

std::vector<std::string> Context::categories() const {
    std::vector<std::string> out;
    for (const auto& d : structures.descriptions)
        if (std::find(out.begin(), out.end(), d.category) == out.end()) out.push_back(d.category);
    return out;
}

std::string Context::kind_of_category(const std::string& category) const {
    for (const auto& d : structures.descriptions)
        if (d.category == category) return d.kind;
    throw PreconditionError("unknown category '" + category + "'");
}

void Context::append(RecordVariant v, std::int64_t step, const json& payload) const {
    append_record(paths.report(v), ReportRecord::make(v, step, payload));
}

potential::DescriptorBasis Context::basis() const {
    return potential::DescriptorBasis::make(species, config.basis.cutoff, config.basis.n_radial, config.basis.r_min);
}

std::vector<double> Context::sample_temperatures() const {
    if (!config.sample.temperatures.empty()) return config.sample.temperatures;
    auto [lo, hi] = task.temperature_range;
    if (hi <= lo) return {lo};
    return {lo, 0.5 * (lo + hi), hi};
}

std::string Context::relative(const fs::path& p) const { return fs::relative(p, paths.root).generic_string(); }

// ---------------------------------------------------------------------------
// Helpers

std::size_t selection_count(std::size_t n, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("selection ratio must lie in (0, 1]");
    double x = ratio * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(x - 1e-9));
    return std::min(k, n);
}

std::vector<std::size_t> top_k(const std::vector<Candidate>& c, std::size_t k) {
    std::vector<std::size_t> idx(c.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (c[a].error != c[b].error) return c[a].error > c[b].error;
        if (c[a].trajectory_id != c[b].trajectory_id) return c[a].trajectory_id < c[b].trajectory_id;
        return c[a].frame_index < c[b].frame_index;
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

double max_force_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size()) throw PreconditionError("force arrays differ in length");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).norm());
    return m;
}

AtomicConfiguration scaled(const AtomicConfiguration& config, double factor) {
    AtomicConfiguration out = config;
    out.cell *= factor;
    for (auto& p : out.positions) p *= factor;
    return out;
}

namespace {

std::string temperature_label(double t) {
    std::ostringstream ss;
    if (std::abs(t - std::round(t)) < 1e-9)
        ss << static_cast<long long>(std::llround(t));
    else
        ss << t;
    return ss.str() + "K";
}

json range_json(const std::vector<double>& v) {
    if (v.empty()) return nullptr;
    double lo = *std::min_element(v.begin(), v.end());
    double hi = *std::max_element(v.begin(), v.end());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    return {{"min", lo}, {"max", hi}, {"mean", mean}};
}

std::vector<std::pair<std::string, std::string>> rdf_pairs(const Context& ctx) {
    std::vector<std::pair<std::string, std::string>> out;
    if (ctx.task.targets.contains("rdf_pairs"))
        for (const auto& p : ctx.task.targets.at("rdf_pairs"))
            out.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    return out;
}

std::vector<std::string> diffusion_species(const Context& ctx) {
    if (ctx.task.targets.contains("diffusion_species"))
        return ctx.task.targets.at("diffusion_species").get<std::vector<std::string>>();
    return {};
}

std::unique_ptr<PairForceField> calculator_for(const Context& ctx, const WorkflowState& state, const std::string& name,
                                               std::string& id_out) {
    if (name == "oracle") {
        id_out = "oracle";
        return std::make_unique<oracle::OracleForceField>(ctx.oracle, ctx.species);
    }
    const ModelEntry* m = state.find_model(name);
    if (!m || !m->active) throw PreconditionError("model '" + name + "' is not registered");
    auto model = potential::SurrogateModel::load((ctx.paths.root / m->path).string());
    potential::SurrogateForceField exact(model);
    id_out = m->id;
    return std::make_unique<TabulatedForceField>(exact);
}

md::Trajectory run_job(const Context& ctx, const AtomicConfiguration& config, const PairForceField& ff,
                       const md::MDProtocol& p, const std::string& traj_id) {
    md::RunOptions o;
    o.trajectory_id = traj_id;
    o.masses = ctx.task.masses;
    return md::run_md(config, ff, p, ctx.config.thresholds, o);
}

std::vector<std::string> string_list(const json& params, const char* key) {
    if (!params.contains(key)) return {};
    return params.at(key).get<std::vector<std::string>>();
}

void register_trajectory(const Context& ctx, WorkflowState& state, const md::Trajectory& t, const fs::path& file,
                         std::int64_t step) {
    TrajectoryEntry e;
    e.id = t.trajectory_id;
    e.structure_id = t.source_structure_id;
    e.category = ctx.description(t.source_structure_id).category;
    e.calculator = t.calculator_id;
    e.temperature = t.conditions.temperature;
    e.ensemble = md::to_string(t.conditions.ensemble);
    e.status = t.status == md::Status::Completed ? "completed" : "early_stop";
    e.reason = t.reason;
    e.path = ctx.relative(file);
    e.snapshots = t.frames.size();
    e.step = step;
    state.trajectories.push_back(e);
}

Dataset load_dataset(const Context& ctx, const DatasetEntry& e) {
    Dataset ds;
    ds.dataset_id = e.id;
    ds.origin = e.origin;
    ds.frames = extxyz::labeled_only(extxyz::read_file(ctx.paths.root / e.path));
    ds.recompute_stats();
    return ds;
}

json dataset_payload(const Dataset& ds) {
    return {{"dataset_id", ds.dataset_id},
            {"structure_count", ds.frames.size()},
            {"total_atoms", ds.stats.total_atoms},
            {"energy_range", {ds.stats.energy_per_atom_min, ds.stats.energy_per_atom_max}},
            {"max_force", ds.stats.max_force_max}};
}

DatasetEntry register_dataset(const Context& ctx, WorkflowState& state, const Dataset& ds, std::int64_t step) {
    fs::path file = ctx.paths.selection() / (ds.dataset_id + ".extxyz");
    extxyz::write_file(file, ds.frames);
    DatasetEntry e;
    e.id = ds.dataset_id;
    e.path = ctx.relative(file);
    e.frames = ds.frames.size();
    e.origin = ds.origin;
    e.stats = ds.stats;
    e.step = step;
    state.datasets.push_back(e);
    return e;
}

// Snapshot configuration stripped for labeling, tagged with its source.
AtomicConfiguration candidate_config(const AtomicConfiguration& snap, const std::string& source) {
    AtomicConfiguration c = snap;
    c.velocities.reset();
    c.extra.clear();
    c.extra["source"] = source;
    return c;
}

std::uint64_t reference_seed(const WorkflowState& state, const std::string& sid) {
    return derive_seed(state.master_seed, "reference:" + sid);
}

md::MDProtocol reference_protocol(const Context& ctx, const WorkflowState& state, const std::string& sid) {
    const auto& r = ctx.config.reference;
    return ctx.config.md.protocol(r.ensemble, r.temperature, r.n_steps, r.snapshot_interval, r.equilibration,
                                  reference_seed(state, sid));
}

double min_distance_of(const AtomicConfiguration& c) {
    return structgen::validate_structure(c, 0.0).min_distance;
}

}  // namespace

json physical_summary(const md::Trajectory& traj, const Context& ctx) {
    json s;
    s["trajectory_id"] = traj.trajectory_id;
    s["structure_id"] = traj.source_structure_id;
    s["status"] = traj.status == md::Status::Completed ? "completed" : "early_stop";
    s["reason"] = traj.reason;
    s["snapshots"] = traj.frames.size();
    if (traj.frames.empty()) return s;
    const double n = static_cast<double>(traj.frames.front().size());
    if (traj.frames.front().fully_periodic()) s["density"] = range_json(md::density_series(traj, ctx.task.masses));
    std::vector<double> epa;
    for (double e : traj.potential_energies) epa.push_back(e / n);
    s["energy_per_atom"] = range_json(epa);
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& f : traj.frames) dmin = std::min(dmin, min_distance_of(f));
    s["min_distance"] = dmin;
    json peaks = json::object();
    const auto present = traj.frames.front().species_set();
    auto has = [&](const std::string& x) { return std::find(present.begin(), present.end(), x) != present.end(); };
    if (traj.frames.front().fully_periodic()) {
        for (const auto& [a, b] : rdf_pairs(ctx)) {
            if (!has(a) || !has(b)) continue;
            auto curve = md::rdf(traj.frames, a, b, ctx.config.evaluation.rdf_r_max, ctx.config.evaluation.rdf_bins);
            peaks[a + "-" + b] = curve.first_peak();
        }
    }
    s["rdf_peaks"] = peaks;
    json diff = json::object();
    if (traj.frames.size() >= 6) {
        for (const auto& sp : diffusion_species(ctx)) {
            if (!has(sp)) continue;
            // Lags beyond half the run have too few origins to be worth fitting.
            auto curve = md::msd(traj, sp, traj.frames.size() / 2);
            diff[sp] = md::diffusion_coefficient(curve, ctx.config.evaluation.msd_fit_fraction);
        }
    }
    s["diffusion"] = diff;
    return s;
}

// ---------------------------------------------------------------------------
// reference_calc

json reference_calc(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    if (state.reference_calc_done) throw PreconditionError("reference_calc already ran in this workspace");
    auto ids = string_list(params, "structure_ids");
    if (ids.empty()) ids = ctx.validation_ids();
    if (ids.empty()) throw PreconditionError("no validation structures to run the reference on");
    for (const auto& id : ids) ctx.structure(id);

    oracle::OracleForceField ff(ctx.oracle, ctx.species);
    std::vector<md::Trajectory> trajs(ids.size());
    parallel_for(ids.size(), ctx.config.worker_count(), [&](std::size_t i) {
        trajs[i] = run_job(ctx, ctx.structure(ids[i]), ff, reference_protocol(ctx, state, ids[i]), "ref_" + ids[i]);
    });
    json out = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& t = trajs[i];
        if (t.status != md::Status::Completed)
            throw SetupError("reference run on " + ids[i] + " stopped early (" + t.reason +
                             "); the structure set is invalid");
        fs::path file = ctx.paths.eval_reference() / (ids[i] + ".extxyz");
        md::write_trajectory(file, t);
        json summary = physical_summary(t, ctx);
        write_file_atomic(ctx.paths.eval_reference() / (ids[i] + "_summary.json"), summary.dump(2) + "\n");
        state.references[ids[i]] = summary;
        json payload = t.record_payload();
        payload["purpose"] = "reference";
        ctx.append(RecordVariant::Trajectory, step, payload);
        out.push_back({{"structure_id", ids[i]}, {"status", summary["status"]}, {"snapshots", t.frames.size()}});
    }
    state.reference_calc_done = true;
    return {{"references", out}};
}

// ---------------------------------------------------------------------------
// oracle_sample

json oracle_sample(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    if (state.oracle_sample_done) throw PreconditionError("oracle_sample already ran in this workspace");
    auto ids = string_list(params, "structure_ids");
    if (ids.empty())
        for (const auto& d : ctx.structures.descriptions)
            if (!d.validation) ids.push_back(d.id);
    if (ids.empty()) throw PreconditionError("no training structures to sample");
    for (const auto& id : ids)
        for (const auto& sp : ctx.structure(id).species_set())
            if (std::find(ctx.species.begin(), ctx.species.end(), sp) == ctx.species.end())
                throw LabelingError("structure " + id + " has species " + sp + " the oracle does not cover");

    const auto& oc = ctx.config.oracle_sample;
    oracle::OracleForceField ff(ctx.oracle, ctx.species);
    struct Job {
        std::string sid;
        LadderEntry rung;
        std::string traj_id;
        md::MDProtocol protocol;
    };
    std::vector<Job> jobs;
    for (const auto& sid : ids)
        for (const auto& rung : oc.ladder) {
            std::uint64_t seed =
                derive_seed(state.master_seed, "oracle_sample@" + std::to_string(step) + ":" + sid + ":" +
                                                   temperature_label(rung.temperature));
            Job j{sid, rung, sid + "_" + temperature_label(rung.temperature) + "_" + short_id(seed), {}};
            j.protocol = ctx.config.md.protocol(rung.ensemble, rung.temperature, oc.n_steps, oc.snapshot_interval,
                                                oc.equilibration, seed);
            jobs.push_back(j);
        }
    std::vector<md::Trajectory> trajs(jobs.size());
    parallel_for(jobs.size(), ctx.config.worker_count(), [&](std::size_t i) {
        trajs[i] = run_job(ctx, ctx.structure(jobs[i].sid), ff, jobs[i].protocol, jobs[i].traj_id);
    });

    std::vector<AtomicConfiguration> frames;
    std::vector<std::string> origin;
    std::size_t early = 0, k = 0;
    json per_structure = json::object();
    for (const auto& sid : ids) {
        std::size_t count = 0;
        for (std::size_t r = 0; r < oc.ladder.size(); ++r, ++k) {
            const auto& t = trajs[k];
            fs::path file = ctx.paths.trajectories() / (t.trajectory_id + ".extxyz");
            md::write_trajectory(file, t);
            ctx.append(RecordVariant::Trajectory, step, t.record_payload());
            register_trajectory(ctx, state, t, file, step);
            origin.push_back(t.trajectory_id);
            early += t.status == md::Status::EarlyStop ? 1 : 0;
            for (std::size_t f = 0; f < t.frames.size(); ++f)
                frames.push_back(candidate_config(t.frames[f], t.trajectory_id + ":" + std::to_string(f)));
            count += t.frames.size();
        }
        const auto& base = ctx.structure(sid);
        for (double s : oc.compression) {
            frames.push_back(candidate_config(scaled(base, s), sid + ":scale=" + extxyz::format_double(s)));
            ++count;
        }
        Rng rng = make_rng(state.master_seed, "rattle@" + std::to_string(step) + ":" + sid);
        std::normal_distribution<double> gauss(0.0, oc.rattle_sigma);
        for (std::size_t r = 0; r < oc.rattle_count; ++r) {
            AtomicConfiguration c = base;
            for (auto& p : c.positions)
                for (int d = 0; d < 3; ++d) p[d] += gauss(rng);
            frames.push_back(candidate_config(c, sid + ":rattle=" + std::to_string(r)));
            ++count;
        }
        per_structure[sid] = count;
    }
    Dataset ds = oracle::label_frames(frames, ctx.oracle, "init", ctx.config.worker_count());
    ds.origin = origin;
    register_dataset(ctx, state, ds, step);
    json payload = dataset_payload(ds);
    payload["origin"] = origin;
    ctx.append(RecordVariant::Dataset, step, payload);
    state.oracle_sample_done = true;
    return {{"dataset_id", ds.dataset_id},
            {"frames", ds.frames.size()},
            {"trajectories", jobs.size()},
            {"early_stops", early},
            {"per_structure", per_structure}};
}

// ---------------------------------------------------------------------------
// sample

json sample(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    auto categories = string_list(params, "categories");
    std::vector<std::string> ids;
    for (const auto& d : ctx.structures.descriptions)
        if (!d.validation && std::find(categories.begin(), categories.end(), d.category) != categories.end())
            ids.push_back(d.id);
    if (ids.empty()) throw PreconditionError("sample categories resolve to no training structures");

    std::string calc_name = params.value("calculator", state.current_model.value_or(""));
    if (calc_name.empty()) throw PreconditionError("sample needs a registered model or the oracle");
    std::string calc_id;
    auto ff = calculator_for(ctx, state, calc_name, calc_id);

    std::vector<double> temps =
        params.contains("temperatures") ? params.at("temperatures").get<std::vector<double>>() : ctx.sample_temperatures();
    if (temps.empty()) throw PreconditionError("sample needs at least one temperature");
    md::Ensemble ens = params.contains("ensemble") ? md::ensemble_from_string(params.at("ensemble").get<std::string>())
                                                   : ctx.config.sample.ensemble;
    const auto& sc = ctx.config.sample;
    std::size_t n_steps = params.contains("n_steps") ? params.at("n_steps").get<std::size_t>() : sc.n_steps;
    std::size_t eq = std::min(sc.equilibration, n_steps / 5);

    struct Job {
        std::string sid;
        std::string traj_id;
        md::MDProtocol protocol;
    };
    std::vector<Job> jobs;
    for (const auto& sid : ids)
        for (double T : temps) {
            std::uint64_t seed = derive_seed(state.master_seed,
                                             "sample@" + std::to_string(step) + ":" + sid + ":" + temperature_label(T));
            jobs.push_back({sid, sid + "_" + temperature_label(T) + "_" + short_id(seed),
                            ctx.config.md.protocol(ens, T, n_steps, sc.snapshot_interval, eq, seed)});
        }
    std::vector<md::Trajectory> trajs(jobs.size());
    parallel_for(jobs.size(), ctx.config.worker_count(), [&](std::size_t i) {
        trajs[i] = run_job(ctx, ctx.structure(jobs[i].sid), *ff, jobs[i].protocol, jobs[i].traj_id);
    });

    std::size_t completed = 0, snapshots = 0;
    json by_reason = json::object(), by_category = json::object();
    json traj_ids = json::array();
    for (const auto& t : trajs) {
        fs::path file = ctx.paths.trajectories() / (t.trajectory_id + ".extxyz");
        md::write_trajectory(file, t);
        ctx.append(RecordVariant::Trajectory, step, t.record_payload());
        register_trajectory(ctx, state, t, file, step);
        traj_ids.push_back(t.trajectory_id);
        snapshots += t.frames.size();
        if (t.status == md::Status::Completed) {
            ++completed;
        } else {
            by_reason[t.reason] = by_reason.value(t.reason, 0) + 1;
            const auto& cat = ctx.description(t.source_structure_id).category;
            by_category[cat] = by_category.value(cat, 0) + 1;
        }
    }
    return {{"calculator", calc_id},
            {"jobs", jobs.size()},
            {"completed", completed},
            {"early_stops", jobs.size() - completed},
            {"by_reason", by_reason},
            {"by_category", by_category},
            {"categories", categories},
            {"temperatures", temps},
            {"snapshots", snapshots},
            {"trajectory_ids", traj_ids}};
}

// ---------------------------------------------------------------------------
// select

json select(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    std::vector<std::string> tids = string_list(params, "trajectory_ids");
    if (tids.empty()) {
        std::int64_t last = -1;
        for (const auto& t : state.trajectories) last = std::max(last, t.step);
        for (const auto& t : state.trajectories)
            if (t.step == last) tids.push_back(t.id);
    }
    if (tids.empty()) throw PreconditionError("select needs trajectories");
    const bool take_all = params.value("all", false);
    const double base_ratio = params.value("ratio", ctx.config.policy.base_ratio);
    if (!(base_ratio > 0.0 && base_ratio <= 1.0)) throw ValidationError("select ratio must lie in (0, 1]");
    std::map<std::string, double> cat_ratio;
    if (params.contains("category_ratios"))
        for (const auto& [k, v] : params.at("category_ratios").items()) {
            double r = v.get<double>();
            if (!(r > 0.0 && r <= 1.0)) throw ValidationError("category ratio for " + k + " must lie in (0, 1]");
            cat_ratio[k] = r;
        }

    // Gather candidates in (trajectory id, frame index) order.
    std::sort(tids.begin(), tids.end());
    std::vector<AtomicConfiguration> configs;
    std::vector<Candidate> cands;
    std::vector<std::string> cand_category;
    std::size_t considered = 0, excluded_geometry = 0;
    for (const auto& id : tids) {
        const TrajectoryEntry* t = state.find_trajectory(id);
        if (!t) throw PreconditionError("unknown trajectory '" + id + "'");
        auto frames = md::read_trajectory_frames(ctx.paths.root / t->path);
        for (std::size_t f = 0; f < frames.size(); ++f) {
            ++considered;
            if (min_distance_of(frames[f]) < ctx.config.thresholds.min_distance_abort) {
                ++excluded_geometry;
                continue;
            }
            configs.push_back(candidate_config(frames[f], id + ":" + std::to_string(f)));
            cands.push_back({id, f, 0.0});
            cand_category.push_back(t->category);
        }
    }
    if (configs.empty()) throw PreconditionError("select found no usable frames");

    Dataset labeled = oracle::label_frames(configs, ctx.oracle, "candidates", ctx.config.worker_count());
    std::vector<char> usable(configs.size(), 1);
    std::size_t excluded_force = 0;
    for (std::size_t i = 0; i < configs.size(); ++i)
        if (labeled.frames[i].max_force > ctx.config.select.force_cap) {
            usable[i] = 0;
            ++excluded_force;
        }

    std::unique_ptr<PairForceField> model_ff;
    if (!take_all) {
        if (!state.current_model) throw PreconditionError("select by error needs a trained model");
        const ModelEntry* m = state.find_model(*state.current_model);
        auto model = potential::SurrogateModel::load((ctx.paths.root / m->path).string());
        model_ff = std::make_unique<potential::SurrogateForceField>(model);
        parallel_for(configs.size(), ctx.config.worker_count(), [&](std::size_t i) {
            if (!usable[i]) return;
            auto ev = alloop::evaluate(*model_ff, configs[i]);
            cands[i].error = max_force_error(ev.forces, labeled.frames[i].forces);
        });
    }

    // Each boosted category is ranked on its own; the rest share the base ratio.
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (!usable[i]) continue;
        groups[cat_ratio.count(cand_category[i]) ? cand_category[i] : std::string()].push_back(i);
    }
    std::vector<std::size_t> chosen;
    json group_counts = json::object();
    for (const auto& [name, members] : groups) {
        double r = take_all ? 1.0 : (name.empty() ? base_ratio : cat_ratio.at(name));
        std::vector<Candidate> sub;
        for (auto i : members) sub.push_back(cands[i]);
        std::size_t k = selection_count(sub.size(), r);
        for (auto j : top_k(sub, k)) chosen.push_back(members[j]);
        group_counts[name.empty() ? "base" : name] = {{"candidates", sub.size()}, {"selected", k}, {"ratio", r}};
    }
    std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
        if (cands[a].error != cands[b].error) return cands[a].error > cands[b].error;
        if (cands[a].trajectory_id != cands[b].trajectory_id) return cands[a].trajectory_id < cands[b].trajectory_id;
        return cands[a].frame_index < cands[b].frame_index;
    });
    if (chosen.empty()) throw PreconditionError("select found no usable frames");

    Dataset ds;
    ds.dataset_id = "select_" + std::to_string(step);
    for (auto i : chosen) ds.frames.push_back(labeled.frames[i]);
    ds.origin = tids;
    ds.recompute_stats();
    register_dataset(ctx, state, ds, step);
    json payload = dataset_payload(ds);
    payload["origin"] = tids;
    payload["frames_considered"] = considered;
    payload["excluded"] = excluded_geometry + excluded_force;
    payload["ratio"] = take_all ? 1.0 : base_ratio;
    payload["groups"] = group_counts;
    double err_max = 0.0;
    for (auto i : chosen) err_max = std::max(err_max, cands[i].error);
    payload["max_error"] = err_max;
    ctx.append(RecordVariant::Dataset, step, payload);
    return {{"dataset_id", ds.dataset_id},
            {"frames_considered", considered},
            {"excluded", excluded_geometry + excluded_force},
            {"selected", ds.frames.size()},
            {"groups", group_counts},
            {"max_error", err_max}};
}

// ---------------------------------------------------------------------------
// train

json train(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    if (state.datasets.empty()) throw PreconditionError("train needs at least one registered dataset");
    const bool from_scratch = params.value("from_scratch", false) || !state.current_model;
    auto mode = potential::train_mode_from_string(params.value("mode", std::string("accurate")));

    std::optional<potential::SurrogateModel> parent;
    std::vector<std::string> wanted;
    if (!from_scratch) {
        std::string pid = params.value("parent", *state.current_model);
        const ModelEntry* pe = state.find_model(pid);
        if (!pe || !pe->active) throw PreconditionError("fine-tune parent '" + pid + "' is not registered");
        parent = potential::SurrogateModel::load((ctx.paths.root / pe->path).string());
        for (const auto& d : state.datasets) wanted.push_back(d.id);
    } else {
        wanted = string_list(params, "datasets");
        if (wanted.empty())
            for (const auto& d : state.datasets) wanted.push_back(d.id);
    }
    std::vector<Dataset> data;
    for (const auto& id : wanted) {
        const DatasetEntry* e = state.find_dataset(id);
        if (!e) throw PreconditionError("unknown dataset '" + id + "'");
        // A step re-run after an interruption starts from the archived copy.
        fs::path archived = ctx.paths.pruned() / (id + "_step" + std::to_string(step) + ".extxyz");
        if (fs::exists(archived)) {
            DatasetEntry from_archive = *e;
            from_archive.path = ctx.relative(archived);
            data.push_back(load_dataset(ctx, from_archive));
        } else {
            data.push_back(load_dataset(ctx, *e));
        }
    }

    potential::TrainOptions opt;
    opt.mode = mode;
    opt.lambda = ctx.config.train.lambda;
    opt.beta = ctx.config.train.beta;
    opt.outlier_z = ctx.config.train.outlier_z;
    opt.workers = ctx.config.worker_count();
    opt.model_id = short_id(derive_seed(state.master_seed, "model@" + std::to_string(step)));
    auto result = potential::train(data, ctx.basis(), opt, parent ? &*parent : nullptr);

    fs::path file = ctx.paths.models() / (result.model.model_id + ".json");
    result.model.save(file.string());
    ModelEntry e;
    e.id = result.model.model_id;
    e.parent_id = result.model.parent_id;
    e.path = ctx.relative(file);
    e.metrics = result.model.metrics;
    e.mode = mode;
    e.trained_on = result.model.trained_on;
    e.outlier_count = result.record.outlier_count;
    e.step = step;
    state.models.push_back(e);
    state.current_model = e.id;
    ctx.append(RecordVariant::Train, step, result.record.to_json());

    json out{{"model_id", e.id},
             {"parent_id", e.parent_id ? json(*e.parent_id) : json(nullptr)},
             {"mode", potential::to_string(mode)},
             {"force_mae", e.metrics.force_mae},
             {"energy_mae", e.metrics.energy_mae},
             {"frames", result.record.frame_count},
             {"outlier_count", e.outlier_count}};
    if (e.parent_id) {
        double p = state.find_model(*e.parent_id)->metrics.force_mae;
        // Parent and child compared on the same frames: what the new data taught.
        double before = potential::compute_metrics(*parent, data, opt.workers).force_mae;
        out["improvement"] = before > 0.0 ? (before - e.metrics.force_mae) / before : 0.0;
        // Error of the new model on the data its parent saw.
        std::vector<Dataset> shared;
        for (const auto& d : data)
            if (std::find(parent->trained_on.begin(), parent->trained_on.end(), d.dataset_id) != parent->trained_on.end())
                shared.push_back(d);
        if (!shared.empty() && p > 0.0) {
            double mine = potential::compute_metrics(result.model, shared, opt.workers).force_mae;
            out["shared_regression"] = (mine - p) / p;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluate

json evaluate(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    if (!state.reference_calc_done) throw PreconditionError("evaluate needs the reference runs");
    std::string model = params.value("model_id", state.current_model.value_or(""));
    if (model.empty()) throw PreconditionError("evaluate needs a registered model");
    auto ids = string_list(params, "structure_ids");
    if (ids.empty()) ids = ctx.validation_ids();
    for (const auto& id : ids)
        if (!state.references.count(id)) throw PreconditionError("no reference run for '" + id + "'");
    std::string calc_id;
    auto ff = calculator_for(ctx, state, model, calc_id);

    std::vector<md::Trajectory> trajs(ids.size());
    parallel_for(ids.size(), ctx.config.worker_count(), [&](std::size_t i) {
        trajs[i] = run_job(ctx, ctx.structure(ids[i]), *ff, reference_protocol(ctx, state, ids[i]),
                           "eval_" + calc_id + "_" + ids[i]);
    });

    json records = json::array();
    std::size_t passed = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& t = trajs[i];
        md::write_trajectory(ctx.paths.evaluation() / (calc_id + "_" + ids[i] + ".extxyz"), t);
        const json& ref = state.references.at(ids[i]);
        json mine = physical_summary(t, ctx);
        json rec{{"structure_id", ids[i]},
                 {"model_id", calc_id},
                 {"status", mine["status"]},
                 {"reason", t.reason},
                 {"density_deviation", nullptr},
                 {"rdf_peak_error", json::object()},
                 {"diffusion", json::object()}};
        const bool completed = t.status == md::Status::Completed;
        if (mine.contains("density") && ref.contains("density") && !mine["density"].is_null()) {
            double rm = ref["density"]["mean"].get<double>();
            double mm = mine["density"]["mean"].get<double>();
            rec["density_deviation"] = std::abs(mm - rm) / rm * 100.0;
            rec["density"] = mm;
            rec["reference_density"] = rm;
        }
        const json ref_peaks = ref.value("rdf_peaks", json::object());
        const json ref_diffusion = ref.value("diffusion", json::object());
        for (const auto& [pair, r] : ref_peaks.items())
            if (mine["rdf_peaks"].contains(pair))
                rec["rdf_peak_error"][pair] = std::abs(mine["rdf_peaks"][pair].get<double>() - r.get<double>());
        for (const auto& [sp, dref] : ref_diffusion.items()) {
            json d{{"reference", dref}, {"model", nullptr}, {"log_error", nullptr}};
            if (mine.contains("diffusion") && mine["diffusion"].contains(sp)) {
                double dm = mine["diffusion"][sp].get<double>();
                double dr = dref.get<double>();
                d["model"] = dm;
                if (dm > 0.0 && dr > 0.0) d["log_error"] = std::abs(std::log10(dm / dr));
            }
            rec["diffusion"][sp] = d;
        }
        bool pass = completed && !rec["density_deviation"].is_null() &&
                    rec["density_deviation"].get<double>() <= ctx.config.evaluation.density_bound;
        // Structures without a periodic density are judged on stability alone.
        if (completed && !ref.contains("density")) pass = true;
        rec["pass"] = pass;
        passed += pass ? 1 : 0;
        ctx.append(RecordVariant::Evaluation, step, rec);
        json stored = rec;
        stored["step"] = step;
        state.evaluations.push_back(stored);
        records.push_back(rec);
    }
    return {{"model_id", calc_id}, {"evaluated", ids.size()}, {"passed", passed}, {"records", records}};
}

// ---------------------------------------------------------------------------
// prune

json prune(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    const bool rollback = params.value("rollback", false);
    const double z = params.value("z_max", ctx.config.train.outlier_z);
    if (!state.current_model) throw PreconditionError("prune needs a trained model");
    ModelEntry* newest = state.find_model(*state.current_model);
    const ModelEntry* parent = newest->parent_id ? state.find_model(*newest->parent_id) : nullptr;

    std::vector<std::string> suspects = string_list(params, "dataset_ids");
    if (suspects.empty()) {
        for (const auto& id : newest->trained_on)
            if (!parent || std::find(parent->trained_on.begin(), parent->trained_on.end(), id) == parent->trained_on.end())
                suspects.push_back(id);
    }
    std::vector<Dataset> data;
    for (const auto& id : suspects) {
        const DatasetEntry* e = state.find_dataset(id);
        if (!e) throw PreconditionError("unknown dataset '" + id + "'");
        // A step re-run after an interruption starts from the archived copy.
        fs::path archived = ctx.paths.pruned() / (id + "_step" + std::to_string(step) + ".extxyz");
        if (fs::exists(archived)) {
            DatasetEntry from_archive = *e;
            from_archive.path = ctx.relative(archived);
            data.push_back(load_dataset(ctx, from_archive));
        } else {
            data.push_back(load_dataset(ctx, *e));
        }
    }
    std::size_t n_frames = 0;
    for (const auto& d : data) n_frames += d.frames.size();

    // Residuals come from the model that was fit on the suspect data.
    std::vector<potential::Outlier> outliers;
    if (n_frames >= 3) {
        auto model = potential::SurrogateModel::load((ctx.paths.root / newest->path).string());
        outliers = potential::detect_outliers(model, data, z, ctx.config.worker_count());
    }

    json removed = json::object();
    for (auto& ds : data) {
        std::set<std::size_t> drop;
        for (const auto& o : outliers)
            if (o.dataset_id == ds.dataset_id) drop.insert(o.frame_index);
        if (drop.empty()) continue;
        std::vector<LabeledFrame> rest;
        for (std::size_t i = 0; i < ds.frames.size(); ++i)
            if (!drop.count(i)) rest.push_back(ds.frames[i]);
        if (rest.empty()) throw PreconditionError("pruning would empty dataset '" + ds.dataset_id + "'");
        DatasetEntry* e = state.find_dataset(ds.dataset_id);
        fs::path original = ctx.paths.root / e->path;
        fs::path kept = ctx.paths.pruned() / (ds.dataset_id + "_step" + std::to_string(step) + ".extxyz");
        if (!fs::exists(kept)) fs::copy_file(original, kept);
        ds.frames = std::move(rest);
        ds.recompute_stats();
        extxyz::write_file(original, ds.frames);
        e->frames = ds.frames.size();
        e->stats = ds.stats;
        removed[ds.dataset_id] = std::vector<std::size_t>(drop.begin(), drop.end());
        json payload = dataset_payload(ds);
        payload["event"] = "pruned";
        payload["removed_frames"] = removed[ds.dataset_id];
        payload["archived"] = ctx.relative(kept);
        ctx.append(RecordVariant::Dataset, step, payload);
    }

    json rolled = nullptr;
    if (rollback) {
        if (!parent || !parent->active || state.active_model_count() < 2)
            throw PreconditionError("cannot roll back the only model");
        newest->active = false;
        rolled = newest->id;
        state.current_model = parent->id;
        ctx.append(RecordVariant::Train, step,
                   {{"model_id", newest->id}, {"event", "rollback"}, {"restored", parent->id}});
    }
    return {{"removed", removed},
            {"outliers", outliers.size()},
            {"rolled_back", rolled},
            {"current_model", state.current_model ? json(*state.current_model) : json(nullptr)}};
}

// ---------------------------------------------------------------------------
// end

std::optional<std::string> newest_passing_model(const WorkflowState& state) {
    for (auto it = state.models.rbegin(); it != state.models.rend(); ++it) {
        if (!it->active) continue;
        std::map<std::string, bool> latest;
        for (const auto& e : state.evaluations)
            if (e.at("model_id") == it->id) latest[e.at("structure_id").get<std::string>()] = e.at("pass").get<bool>();
        if (latest.empty()) continue;
        bool all = std::all_of(latest.begin(), latest.end(), [](const auto& kv) { return kv.second; });
        if (all) return it->id;
    }
    return std::nullopt;
}

json final_report(const Context& ctx, const WorkflowState& state) {
    json history = json::array();
    for (const auto& m : state.models)
        history.push_back({{"model_id", m.id},
                           {"parent_id", m.parent_id ? json(*m.parent_id) : json(nullptr)},
                           {"step", m.step},
                           {"mode", potential::to_string(m.mode)},
                           {"energy_mae", m.metrics.energy_mae},
                           {"force_mae", m.metrics.force_mae},
                           {"outlier_count", m.outlier_count},
                           {"active", m.active}});
    json inventory = json::array();
    std::size_t total = 0;
    for (const auto& d : state.datasets) {
        inventory.push_back({{"dataset_id", d.id},
                             {"frames", d.frames},
                             {"energy_range", {d.stats.energy_per_atom_min, d.stats.energy_per_atom_max}},
                             {"step", d.step}});
        total += d.frames;
    }
    std::map<std::string, json> latest;
    for (const auto& e : state.evaluations) latest[e.at("structure_id").get<std::string>()] = e;
    json evals = json::object();
    for (const auto& [k, v] : latest) evals[k] = v;
    json actions = json::array();
    for (const auto& l : state.log)
        actions.push_back({{"step", l.step}, {"action", l.next_task}, {"outcome", l.outcome}, {"source", l.source}});
    auto passing = newest_passing_model(state);
    json final_model = nullptr;
    if (passing)
        final_model = *passing;
    else if (state.current_model)
        final_model = *state.current_model;
    (void)ctx;
    return {{"success", state.success.value_or(false)},
            {"reason", state.end_reason},
            {"final_model", final_model},
            {"current_model", state.current_model ? json(*state.current_model) : json(nullptr)},
            {"steps", state.log.size()},
            {"master_seed", state.master_seed},
            {"metric_history", history},
            {"datasets", inventory},
            {"total_frames", total},
            {"evaluations", evals},
            {"actions", actions}};
}

std::string render_report_text(const json& r) {
    std::ostringstream out;
    out << "Run " << (r.at("success").get<bool>() ? "succeeded" : "failed");
    if (!r.at("reason").get<std::string>().empty()) out << " (" << r.at("reason").get<std::string>() << ")";
    out << " after " << r.at("steps").get<std::size_t>() << " steps\n";
    out << "Final model: " << (r.at("final_model").is_null() ? "none" : r.at("final_model").get<std::string>()) << "\n\n";
    out << "Models\n";
    for (const auto& m : r.at("metric_history")) {
        out << "  " << m.at("model_id").get<std::string>() << "  step " << m.at("step") << "  "
            << m.at("mode").get<std::string>() << "  force MAE " << m.at("force_mae").get<double>()
            << " eV/A  energy MAE " << m.at("energy_mae").get<double>() << " eV/atom"
            << (m.at("active").get<bool>() ? "" : "  (rolled back)") << "\n";
    }
    out << "\nDatasets (" << r.at("total_frames") << " frames)\n";
    for (const auto& d : r.at("datasets"))
        out << "  " << d.at("dataset_id").get<std::string>() << "  " << d.at("frames") << " frames\n";
    out << "\nEvaluations\n";
    for (const auto& [sid, e] : r.at("evaluations").items()) {
        out << "  " << sid << "  model " << e.at("model_id").get<std::string>() << "  "
            << (e.at("pass").get<bool>() ? "pass" : "FAIL");
        if (!e.at("density_deviation").is_null())
            out << "  density deviation " << e.at("density_deviation").get<double>() << " %";
        if (!e.at("reason").get<std::string>().empty()) out << "  " << e.at("reason").get<std::string>();
        out << "\n";
    }
    out << "\nActions\n";
    for (const auto& a : r.at("actions"))
        out << "  " << a.at("step") << "  " << a.at("action").get<std::string>() << "  "
            << a.at("outcome").get<std::string>() << "\n";
    return out.str();
}

json end(const Context& ctx, WorkflowState& state, const json& params, std::int64_t step) {
    (void)step;
    state.success = params.value("success", false);
    state.end_reason = params.value("reason", std::string());
    state.phase = Phase::Ended;
    json report = final_report(ctx, state);
    write_file_atomic(ctx.paths.final_report(), report.dump(2) + "\n");
    write_file_atomic(ctx.paths.final_report_text(), render_report_text(report));
    return {{"success", *state.success}, {"reason", state.end_reason}, {"final_model", report["final_model"]}};
}

json execute(const Context& ctx, WorkflowState& state, const ActionDirective& d, std::int64_t step) {
    d.validate();
    switch (d.action) {
        case ActionType::ReferenceCalc: return reference_calc(ctx, state, d.params, step);
        case ActionType::OracleSample: return oracle_sample(ctx, state, d.params, step);
        case ActionType::Sample: return sample(ctx, state, d.params, step);
        case ActionType::Select: return select(ctx, state, d.params, step);
        case ActionType::Train: return train(ctx, state, d.params, step);
        case ActionType::Evaluate: return evaluate(ctx, state, d.params, step);
        case ActionType::Prune: return prune(ctx, state, d.params, step);
        case ActionType::End: return end(ctx, state, d.params, step);
    }
    throw ValidationError("unknown action");
}

}  // namespace alloop::actions
