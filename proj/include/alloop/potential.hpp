#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "alloop/core/report.hpp"
#include "alloop/core/types.hpp"
#include "alloop/forcefield.hpp"

namespace alloop::potential {

// Gaussian radial basis with a cosine cutoff:
//   g_k(r) = exp(-(r - mu_k)^2 / (2 w^2)) * f_c(r),  f_c(r) = (cos(pi r / r_c) + 1) / 2 for r < r_c.
// Centers mu_k are evenly spaced on [r_min, r_c]; the width defaults to the spacing.
struct DescriptorBasis {
    double cutoff = 5.0;
    int n_radial = 12;
    double r_min = 1.0;
    double width = 0.0;
    std::vector<std::string> species;  // sorted, unique

    static DescriptorBasis make(std::vector<std::string> species, double cutoff = 5.0, int n_radial = 12,
                                double r_min = 1.0);

    // Same species and range with half the radial functions (quick training).
    DescriptorBasis halved() const;

    std::vector<std::pair<std::string, std::string>> species_pairs() const;
    std::size_t n_pairs() const { return species.size() * (species.size() + 1) / 2; }
    std::size_t feature_dim() const { return static_cast<std::size_t>(n_radial) * n_pairs(); }
    double center(int k) const;
    int species_index(const std::string& s) const;
    // Index of the unordered pair (a, b) in species_pairs().
    std::size_t pair_index(int a, int b) const;

    // Radial values g_k(r) and derivatives g_k'(r) for all k.
    void radial(double r, double* g, double* dg) const;

    bool operator==(const DescriptorBasis&) const = default;
    json to_json() const;
    static DescriptorBasis from_json(const json& j);
};

// Per-atom features plus their exact position gradients. Every feature is a
// sum of pair terms, so the gradient is stored per contributing pair: for a
// pair (i, j) of type p at separation r along unit vector u (from i to j),
//   d phi_i[p, k] / d r_j = d phi_j[p, k] / d r_j = dg_k(r) u
// and the derivatives with respect to r_i are the negatives.
struct DescriptorSet {
    Eigen::MatrixXd features;  // n_atoms x feature_dim
    struct PairTerm {
        std::size_t i;
        std::size_t j;
        std::size_t pair_type;
        Vec3 unit;
        std::vector<double> dg;  // n_radial
    };
    std::vector<PairTerm> pairs;
    std::vector<int> types;  // basis species index per atom

    // Dense d phi_atom / d r_wrt as a feature_dim x 3 matrix (for checks).
    Eigen::MatrixXd gradient(std::size_t atom, std::size_t wrt, const DescriptorBasis& basis) const;
};

DescriptorSet compute_descriptors(const AtomicConfiguration& config, const DescriptorBasis& basis);

enum class TrainMode { Quick, Accurate };
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct Metrics {
    double energy_mae = 0.0;  // eV/atom
    double force_mae = 0.0;   // eV/A, mean absolute force component error

    bool operator==(const Metrics&) const = default;
};

struct SurrogateModel {
    std::string model_id;
    std::optional<std::string> parent_id;
    DescriptorBasis basis;
    std::vector<Eigen::VectorXd> weights;  // per basis species, feature_dim each
    std::vector<double> intercepts;        // per basis species (eV)
    double lambda = 1e-6;
    double beta = 10.0;
    Metrics metrics;
    std::vector<std::string> trained_on;
    TrainMode mode = TrainMode::Accurate;

    // Zero-weight model over a basis.
    static SurrogateModel zeros(const DescriptorBasis& basis);

    json to_json() const;
    static SurrogateModel from_json(const json& j);
    void save(const std::string& path) const;
    static SurrogateModel load(const std::string& path);
};

struct Prediction {
    double energy = 0.0;
    std::vector<Vec3> forces;
};

// E = sum_i (b[s_i] + w[s_i] . phi_i); F = -grad E through the descriptor
// gradients. Throws PredictionError for uncovered species.
Prediction predict(const SurrogateModel& model, const AtomicConfiguration& config);

// The same model as an effective pair potential,
//   V_ab(r) = sum_k (w_a[p_ab, k] + w_b[p_ab, k]) g_k(r),
// which the MD engine evaluates without materializing descriptors.
class SurrogateForceField final : public PairForceField {
public:
    explicit SurrogateForceField(const SurrogateModel& model);

    std::string id() const override { return id_; }
    double cutoff() const override { return basis_.cutoff; }
    const std::vector<std::string>& species() const override { return basis_.species; }
    double atom_energy(int s) const override { return intercepts_[static_cast<std::size_t>(s)]; }
    void pair(int si, int sj, double r, double& v, double& dv) const override;

private:
    DescriptorBasis basis_;
    std::vector<double> intercepts_;
    std::vector<std::vector<double>> coeff_;  // [si * n + sj][k]
    std::string id_;
};

struct TrainOptions {
    TrainMode mode = TrainMode::Accurate;
    double lambda = 1e-6;
    double beta = 10.0;
    std::string model_id = "model";
    double outlier_z = 3.0;
    std::size_t workers = 1;
};

struct TrainRecord {
    std::string model_id;
    std::optional<std::string> parent_id;
    Metrics metrics;
    std::size_t outlier_count = 0;
    std::size_t epochs = 1;  // closed-form solve
    std::size_t frame_count = 0;
    std::size_t equation_count = 0;
    TrainMode mode = TrainMode::Accurate;
    std::vector<std::string> trained_on;

    json to_json() const;
};

struct TrainResult {
    SurrogateModel model;
    TrainRecord record;
};

// Closed-form ridge solve of
//   sum_frames (E_pred - E)^2 / N^2 + beta sum_atoms |F_pred - F|^2 + lambda |w|^2.
// Quick mode uses beta = 0 and half the radial functions. With a parent the
// solve runs on the union of parent.trained_on and the new datasets (the
// caller passes every dataset named there); for a linear model this equals a
// cold solve on that union, and lineage is recorded.
TrainResult train(const std::vector<Dataset>& datasets, const DescriptorBasis& basis, const TrainOptions& options,
                  const SurrogateModel* parent = nullptr);

Metrics compute_metrics(const SurrogateModel& model, const std::vector<Dataset>& datasets, std::size_t workers = 1);

struct Outlier {
    std::string dataset_id;
    std::size_t frame_index = 0;
    std::string reason;  // "energy", "force" or "energy,force"

    bool operator==(const Outlier&) const = default;
};

// Flags frames whose energy-per-atom residual or max per-atom force residual
// deviates from the population mean by more than z_max standard deviations.
// Standard deviations are floored at 1e-12. Needs at least 3 frames.
std::vector<Outlier> detect_outliers(const SurrogateModel& model, const std::vector<Dataset>& datasets,
                                     double z_max = 3.0, std::size_t workers = 1);

// Linear fit of solve wall time against equation count.
class TrainingTimeEstimator {
public:
    void observe(std::size_t equations, double seconds);
    // Zero until two distinct observations exist.
    double estimate(std::size_t equations) const;

private:
    std::vector<std::pair<double, double>> samples_;
};

}  // namespace alloop::potential
