#include "alloop/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "alloop/core/error.hpp"
#include "alloop/core/parallel.hpp"

namespace alloop {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigurationError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw ConfigurationError("unknown config key " + where + "." + key);
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_ensemble(const json& j, const char* key, md::Ensemble& out) {
    if (j.contains(key)) out = md::ensemble_from_string(j.at(key).get<std::string>());
}

}  // namespace

md::MDProtocol MDDefaults::protocol(md::Ensemble ensemble, double temperature, std::size_t n_steps,
                                    std::size_t interval, std::size_t equilibration, std::uint64_t seed) const {
    md::MDProtocol p;
    p.ensemble = ensemble;
    p.temperature = temperature;
    p.pressure = pressure;
    p.dt = dt;
    p.n_steps = n_steps;
    p.snapshot_interval = interval;
    p.equilibration_steps = equilibration;
    p.tau_t = tau_t;
    p.tau_p = tau_p;
    p.compressibility = compressibility;
    p.seed = seed;
    return p;
}

std::size_t RunConfig::worker_count() const { return workers == 0 ? default_worker_count() : workers; }

json RunConfig::to_json() const {
    json ladder = json::array();
    for (const auto& e : oracle_sample.ladder)
        ladder.push_back({{"temperature", e.temperature}, {"ensemble", md::to_string(e.ensemble)}});
    return {
        {"oracle", oracle},
        {"basis", {{"cutoff", basis.cutoff}, {"n_radial", basis.n_radial}, {"r_min", basis.r_min}}},
        {"train", {{"lambda", train.lambda}, {"beta", train.beta}, {"outlier_z", train.outlier_z}}},
        {"md",
         {{"dt", md.dt},
          {"pressure", md.pressure},
          {"tau_t", md.tau_t},
          {"tau_p", md.tau_p},
          {"compressibility", md.compressibility}}},
        {"thresholds", thresholds.to_json()},
        {"reference",
         {{"temperature", reference.temperature},
          {"ensemble", md::to_string(reference.ensemble)},
          {"n_steps", reference.n_steps},
          {"snapshot_interval", reference.snapshot_interval},
          {"equilibration", reference.equilibration}}},
        {"oracle_sample",
         {{"ladder", ladder},
          {"n_steps", oracle_sample.n_steps},
          {"snapshot_interval", oracle_sample.snapshot_interval},
          {"equilibration", oracle_sample.equilibration},
          {"compression", oracle_sample.compression},
          {"rattle_count", oracle_sample.rattle_count},
          {"rattle_sigma", oracle_sample.rattle_sigma}}},
        {"sample",
         {{"temperatures", sample.temperatures},
          {"ensemble", md::to_string(sample.ensemble)},
          {"n_steps", sample.n_steps},
          {"snapshot_interval", sample.snapshot_interval},
          {"equilibration", sample.equilibration}}},
        {"select", {{"force_cap", select.force_cap}}},
        {"evaluation",
         {{"density_bound", evaluation.density_bound},
          {"rdf_r_max", evaluation.rdf_r_max},
          {"rdf_bins", evaluation.rdf_bins},
          {"msd_fit_fraction", evaluation.msd_fit_fraction}}},
        {"policy",
         {{"base_ratio", policy.base_ratio},
          {"boost_factor", policy.boost_factor},
          {"stable_improvement", policy.stable_improvement},
          {"prune_regression", policy.prune_regression},
          {"fail_limit", policy.fail_limit},
          {"max_steps", policy.max_steps},
          {"history_tail", policy.history_tail},
          {"one_shot", policy.one_shot}}},
        {"llm",
         {{"endpoint", llm.endpoint},
          {"model", llm.model},
          {"timeout_s", llm.timeout_s},
          {"retries", llm.retries},
          {"api_key_env", llm.api_key_env}}},
        {"workers", workers},
    };
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    check_keys(j,
               {"oracle", "basis", "train", "md", "thresholds", "reference", "oracle_sample", "sample", "select",
                "evaluation", "policy", "llm", "workers"},
               "config");
    if (j.contains("oracle")) c.oracle = j.at("oracle");
    if (j.contains("basis")) {
        const auto& b = j.at("basis");
        check_keys(b, {"cutoff", "n_radial", "r_min"}, "basis");
        read(b, "cutoff", c.basis.cutoff);
        read(b, "n_radial", c.basis.n_radial);
        read(b, "r_min", c.basis.r_min);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, {"lambda", "beta", "outlier_z"}, "train");
        read(t, "lambda", c.train.lambda);
        read(t, "beta", c.train.beta);
        read(t, "outlier_z", c.train.outlier_z);
    }
    if (j.contains("md")) {
        const auto& m = j.at("md");
        check_keys(m, {"dt", "pressure", "tau_t", "tau_p", "compressibility"}, "md");
        read(m, "dt", c.md.dt);
        read(m, "pressure", c.md.pressure);
        read(m, "tau_t", c.md.tau_t);
        read(m, "tau_p", c.md.tau_p);
        read(m, "compressibility", c.md.compressibility);
    }
    if (j.contains("thresholds")) c.thresholds = md::AnomalyThresholds::from_json(j.at("thresholds"));
    if (j.contains("reference")) {
        const auto& r = j.at("reference");
        check_keys(r, {"temperature", "ensemble", "n_steps", "snapshot_interval", "equilibration"}, "reference");
        read(r, "temperature", c.reference.temperature);
        read_ensemble(r, "ensemble", c.reference.ensemble);
        read(r, "n_steps", c.reference.n_steps);
        read(r, "snapshot_interval", c.reference.snapshot_interval);
        read(r, "equilibration", c.reference.equilibration);
    }
    if (j.contains("oracle_sample")) {
        const auto& o = j.at("oracle_sample");
        check_keys(o,
                   {"ladder", "n_steps", "snapshot_interval", "equilibration", "compression", "rattle_count",
                    "rattle_sigma"},
                   "oracle_sample");
        if (o.contains("ladder")) {
            c.oracle_sample.ladder.clear();
            for (const auto& e : o.at("ladder")) {
                check_keys(e, {"temperature", "ensemble"}, "oracle_sample.ladder");
                LadderEntry le;
                read(e, "temperature", le.temperature);
                read_ensemble(e, "ensemble", le.ensemble);
                c.oracle_sample.ladder.push_back(le);
            }
        }
        read(o, "n_steps", c.oracle_sample.n_steps);
        read(o, "snapshot_interval", c.oracle_sample.snapshot_interval);
        read(o, "equilibration", c.oracle_sample.equilibration);
        read(o, "compression", c.oracle_sample.compression);
        read(o, "rattle_count", c.oracle_sample.rattle_count);
        read(o, "rattle_sigma", c.oracle_sample.rattle_sigma);
    }
    if (j.contains("sample")) {
        const auto& s = j.at("sample");
        check_keys(s, {"temperatures", "ensemble", "n_steps", "snapshot_interval", "equilibration"}, "sample");
        read(s, "temperatures", c.sample.temperatures);
        read_ensemble(s, "ensemble", c.sample.ensemble);
        read(s, "n_steps", c.sample.n_steps);
        read(s, "snapshot_interval", c.sample.snapshot_interval);
        read(s, "equilibration", c.sample.equilibration);
    }
    if (j.contains("select")) {
        check_keys(j.at("select"), {"force_cap"}, "select");
        read(j.at("select"), "force_cap", c.select.force_cap);
    }
    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        check_keys(e, {"density_bound", "rdf_r_max", "rdf_bins", "msd_fit_fraction"}, "evaluation");
        read(e, "density_bound", c.evaluation.density_bound);
        read(e, "rdf_r_max", c.evaluation.rdf_r_max);
        read(e, "rdf_bins", c.evaluation.rdf_bins);
        read(e, "msd_fit_fraction", c.evaluation.msd_fit_fraction);
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        check_keys(p,
                   {"base_ratio", "boost_factor", "stable_improvement", "prune_regression", "fail_limit", "max_steps",
                    "history_tail", "one_shot"},
                   "policy");
        read(p, "base_ratio", c.policy.base_ratio);
        read(p, "boost_factor", c.policy.boost_factor);
        read(p, "stable_improvement", c.policy.stable_improvement);
        read(p, "prune_regression", c.policy.prune_regression);
        read(p, "fail_limit", c.policy.fail_limit);
        read(p, "max_steps", c.policy.max_steps);
        read(p, "history_tail", c.policy.history_tail);
        read(p, "one_shot", c.policy.one_shot);
    }
    if (j.contains("llm")) {
        const auto& l = j.at("llm");
        check_keys(l, {"endpoint", "model", "timeout_s", "retries", "api_key_env"}, "llm");
        read(l, "endpoint", c.llm.endpoint);
        read(l, "model", c.llm.model);
        read(l, "timeout_s", c.llm.timeout_s);
        read(l, "retries", c.llm.retries);
        read(l, "api_key_env", c.llm.api_key_env);
    }
    read(j, "workers", c.workers);

    if (c.policy.base_ratio <= 0.0 || c.policy.base_ratio > 1.0)
        throw ConfigurationError("policy.base_ratio must lie in (0, 1]");
    if (c.policy.max_steps < 1) throw ConfigurationError("policy.max_steps must be at least 1");
    if (c.basis.n_radial < 1) throw ConfigurationError("basis.n_radial must be at least 1");
    c.thresholds.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigurationError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw WorkspaceError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw WorkspaceError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WorkspaceError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace alloop
