#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "alloop/core/report.hpp"
#include "alloop/core/types.hpp"
#include "alloop/forcefield.hpp"

namespace alloop::md {

enum class Ensemble { NVE, NVT, NPT };
std::string to_string(Ensemble e);
Ensemble ensemble_from_string(const std::string& s);

struct MDProtocol {
    Ensemble ensemble = Ensemble::NVT;
    double temperature = 300.0;  // K
    double pressure = 1.0;       // bar
    double dt = 1.0;             // fs
    std::size_t n_steps = 1000;
    std::size_t snapshot_interval = 10;
    // Steps excluded from observables; defaults to 20% of n_steps.
    std::optional<std::size_t> equilibration_steps;
    double tau_t = 100.0;             // fs
    double tau_p = 1000.0;            // fs
    double compressibility = 1.0e-4;  // 1/bar
    std::uint64_t seed = 0;

    std::size_t equilibration() const { return equilibration_steps.value_or(n_steps / 5); }
    // Throws ConfigurationError when an invariant is broken.
    void validate() const;

    json to_json() const;
    static MDProtocol from_json(const json& j);
};

struct AnomalyThresholds {
    double temp_factor = 2.0;
    std::size_t temp_window = 50;
    double min_distance_abort = 0.5;  // A
    double energy_jump_abort = 10.0;  // eV/atom between snapshots
    double density_floor = 0.1;       // fraction of the initial density (NPT)

    void validate() const;
    json to_json() const;
    static AnomalyThresholds from_json(const json& j);
};

enum class Status { Completed, EarlyStop };

struct Trajectory {
    std::string trajectory_id;
    std::string source_structure_id;
    std::string calculator_id;
    MDProtocol conditions;
    Status status = Status::Completed;
    std::string reason;  // early-stop reason, empty when completed
    std::size_t steps_completed = 0;
    // Snapshots carry velocities and the keys step, time_fs,
    // potential_energy and temperature in `extra`.
    std::vector<AtomicConfiguration> frames;
    std::vector<double> potential_energies;  // eV, per snapshot
    std::vector<double> temperatures;        // K, per snapshot
    std::vector<double> times;               // fs since step 0, per snapshot

    // Payload for a TrajectoryRecord.
    json record_payload() const;
};

// Called after every completed step with the live configuration. Returning
// true means the hook changed positions or velocities, and forces are
// recomputed before the anomaly checks run.
using StepHook = std::function<bool(std::size_t step, AtomicConfiguration& config)>;

struct RunOptions {
    std::string trajectory_id = "traj";
    MassTable masses;
    StepHook hook;
    double skin = 0.5;  // neighbor-list skin (A)
};

// Velocity-Verlet MD with Berendsen thermostat (NVT/NPT) and isotropic
// Berendsen barostat (NPT). Anomalies end the run early with a reason from
// {non_finite, temperature_runaway, structural_collapse, energy_divergence,
// density_collapse}; the partial trajectory is returned. Snapshots are taken
// at the end of equilibration and at every multiple of snapshot_interval
// after it, so a completed run holds
//   floor((n_steps - equilibration) / snapshot_interval) + 1
// frames. Throws SetupError for an empty configuration, missing masses or
// species the calculator does not cover.
Trajectory run_md(const AtomicConfiguration& config, const PairForceField& calculator, const MDProtocol& protocol,
                  const AnomalyThresholds& thresholds, const RunOptions& options);

// Maxwell-Boltzmann velocities at temperature with zero total momentum,
// rescaled to the exact target.
std::vector<Vec3> maxwell_boltzmann(const AtomicConfiguration& config, const MassTable& masses, double temperature,
                                    std::uint64_t seed);

double kinetic_energy(const AtomicConfiguration& config, const std::vector<double>& masses);
std::size_t degrees_of_freedom(std::size_t n_atoms);
double temperature_of(const AtomicConfiguration& config, const std::vector<double>& masses);

struct RelaxOptions {
    std::size_t max_steps = 500;
    double fmax = 0.05;      // eV/A, convergence on the largest force
    double max_step = 0.1;   // A, largest displacement per iteration
};

struct RelaxResult {
    AtomicConfiguration config;
    double energy = 0.0;
    double max_force = 0.0;
    std::size_t steps = 0;
};

// Fixed-cell steepest descent with an adaptive step: moves are accepted when
// the energy drops, otherwise the step is halved.
RelaxResult relax(const AtomicConfiguration& config, const PairForceField& calculator, const RelaxOptions& options = {});

// Writes snapshots as concatenated extended-XYZ blocks.
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
// Reads the snapshot frames back (conditions are not stored in the file).
std::vector<AtomicConfiguration> read_trajectory_frames(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Observables

// Density (g/cm^3) per frame. Throws GeometryError for non-periodic frames.
std::vector<double> density_series(const std::vector<AtomicConfiguration>& frames, const MassTable& masses);
std::vector<double> density_series(const Trajectory& traj, const MassTable& masses);

struct RdfCurve {
    std::vector<double> r;  // bin centers (A)
    std::vector<double> g;
    double bin_width = 0.0;

    // Center of the highest bin.
    double first_peak() const;
};

// g(r) for the species pair averaged over frames; periodic self-images are
// excluded. Throws StatisticsError when either species is absent.
RdfCurve rdf(const std::vector<AtomicConfiguration>& frames, const std::string& a, const std::string& b, double r_max,
             std::size_t n_bins);

struct MsdCurve {
    std::vector<double> time;  // fs
    std::vector<double> msd;   // A^2
};

// Mean squared displacement of the given species ("" for all atoms) from
// unwrapped, evenly spaced frames, averaged over all time origins. The curve
// has `max_lags` points (0: one per frame). `times` gives each frame's time in fs.
MsdCurve msd(const std::vector<AtomicConfiguration>& frames, const std::vector<double>& times,
             const std::string& species, std::size_t max_lags = 0);
MsdCurve msd(const Trajectory& traj, const std::string& species, std::size_t max_lags = 0);

// D = slope / (2 dim) of a least-squares line over the last `fit_fraction`
// of the curve, in cm^2/s. Throws FitError when the window has < 3 points.
double diffusion_coefficient(const MsdCurve& curve, double fit_fraction = 0.5, int dim = 3);

enum class ConvergenceMethod { Std, Slope, Range };

struct ConvergenceResult {
    bool converged = false;
    double metric = 0.0;  // the quantity compared against the tolerance
    double mean = 0.0;
};

// Checks the last `window` samples. Relative measures divide by |mean|; when
// |mean| < 1e-12 the absolute measure is used instead.
ConvergenceResult check_convergence(const std::vector<double>& series, ConvergenceMethod method, std::size_t window,
                                    double tolerance);

}  // namespace alloop::md
