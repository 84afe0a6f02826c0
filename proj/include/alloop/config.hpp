#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "alloop/core/report.hpp"
#include "alloop/md.hpp"

namespace alloop {

struct BasisConfig {
    double cutoff = 5.0;
    int n_radial = 12;
    double r_min = 1.0;
};

struct TrainConfig {
    double lambda = 1e-6;
    double beta = 10.0;
    double outlier_z = 3.0;
};

struct LadderEntry {
    double temperature = 300.0;
    md::Ensemble ensemble = md::Ensemble::NPT;
};

// MD settings shared by every run; per-action sections override temperature,
// ensemble, length and snapshot spacing.
struct MDDefaults {
    double dt = 1.0;
    double pressure = 1.0;
    double tau_t = 100.0;
    double tau_p = 1000.0;
    double compressibility = 1.0e-4;

    md::MDProtocol protocol(md::Ensemble ensemble, double temperature, std::size_t n_steps, std::size_t interval,
                            std::size_t equilibration, std::uint64_t seed) const;
};

struct ReferenceConfig {
    double temperature = 300.0;
    md::Ensemble ensemble = md::Ensemble::NPT;
    std::size_t n_steps = 2500;
    std::size_t snapshot_interval = 4;
    std::size_t equilibration = 500;  // 501 snapshots
};

struct OracleSampleConfig {
    std::vector<LadderEntry> ladder{{300.0, md::Ensemble::NPT},
                                    {600.0, md::Ensemble::NPT},
                                    {1000.0, md::Ensemble::NPT},
                                    {1500.0, md::Ensemble::NVT}};
    std::size_t n_steps = 1250;
    std::size_t snapshot_interval = 10;
    std::size_t equilibration = 250;  // 101 snapshots per run
    std::vector<double> compression{0.92, 0.94, 0.96, 0.98, 1.0, 1.02, 1.04, 1.06, 1.08};
    std::size_t rattle_count = 10;
    double rattle_sigma = 0.05;  // A
};

struct SampleConfig {
    // Empty means {low, middle, high} of the task temperature range.
    std::vector<double> temperatures;
    md::Ensemble ensemble = md::Ensemble::NPT;
    std::size_t n_steps = 1250;
    std::size_t snapshot_interval = 10;
    std::size_t equilibration = 250;
};

struct SelectConfig {
    // Candidate frames whose oracle max force exceeds this are unphysical
    // (fused atoms from a collapsing run) and are never selected.
    double force_cap = 20.0;  // eV/A
};

struct EvaluationConfig {
    double density_bound = 5.0;  // percent
    double rdf_r_max = 6.0;
    std::size_t rdf_bins = 120;
    double msd_fit_fraction = 0.5;
};

struct PolicyConfig {
    double base_ratio = 0.075;
    double boost_factor = 2.0;
    double stable_improvement = 0.05;  // relative force-MAE improvement
    double prune_regression = 0.20;
    std::size_t fail_limit = 2;  // consecutive failed evaluations before prune
    std::size_t max_steps = 40;
    std::size_t history_tail = 20;
    // Ablation switch: reference, oracle sample, one train, evaluate, end.
    bool one_shot = false;
};

struct LlmConfig {
    std::string endpoint;  // e.g. https://host/v1/chat/completions
    std::string model;
    double timeout_s = 120.0;
    std::size_t retries = 3;
    std::string api_key_env = "ALLOOP_LLM_API_KEY";
};

// Contents of <workspace>/config.json. Every field has a default; from_json
// accepts partial documents and rejects unknown keys.
struct RunConfig {
    json oracle;  // empty: taken from the task
    BasisConfig basis;
    TrainConfig train;
    MDDefaults md;
    md::AnomalyThresholds thresholds;
    ReferenceConfig reference;
    OracleSampleConfig oracle_sample;
    SampleConfig sample;
    SelectConfig select;
    EvaluationConfig evaluation;
    PolicyConfig policy;
    LlmConfig llm;
    std::size_t workers = 0;  // 0: logical cores

    std::size_t worker_count() const;

    json to_json() const;
    static RunConfig from_json(const json& j);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// Writes `text` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace alloop
