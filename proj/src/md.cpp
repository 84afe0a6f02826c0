#include "alloop/md.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "alloop/core/error.hpp"
#include "alloop/core/extxyz.hpp"
#include "alloop/core/geometry.hpp"
#include "alloop/core/random.hpp"
#include "alloop/core/units.hpp"

namespace alloop::md {

std::string to_string(Ensemble e) {
    switch (e) {
        case Ensemble::NVE: return "NVE";
        case Ensemble::NVT: return "NVT";
        case Ensemble::NPT: return "NPT";
    }
    return "NVT";
}

Ensemble ensemble_from_string(const std::string& s) {
    if (s == "NVE" || s == "nve") return Ensemble::NVE;
    if (s == "NVT" || s == "nvt") return Ensemble::NVT;
    if (s == "NPT" || s == "npt") return Ensemble::NPT;
    throw ConfigurationError("unknown ensemble '" + s + "'");
}

void MDProtocol::validate() const {
    if (!(dt > 0.0)) throw ConfigurationError("dt must be positive");
    if (snapshot_interval < 1) throw ConfigurationError("snapshot_interval must be at least 1");
    if (n_steps < 1) throw ConfigurationError("n_steps must be at least 1");
    if (equilibration() >= n_steps) throw ConfigurationError("equilibration_steps must be below n_steps");
    if (ensemble != Ensemble::NVE && !(temperature > 0.0)) throw ConfigurationError("temperature must be positive");
    if (!(tau_t > 0.0) || !(tau_p > 0.0) || !(compressibility > 0.0))
        throw ConfigurationError("coupling constants must be positive");
}

json MDProtocol::to_json() const {
    json j = {{"ensemble", to_string(ensemble)},
              {"temperature", temperature},
              {"pressure", pressure},
              {"dt", dt},
              {"n_steps", n_steps},
              {"snapshot_interval", snapshot_interval},
              {"equilibration_steps", equilibration()},
              {"tau_t", tau_t},
              {"tau_p", tau_p},
              {"compressibility", compressibility},
              {"seed", seed}};
    return j;
}

MDProtocol MDProtocol::from_json(const json& j) {
    MDProtocol p;
    p.ensemble = ensemble_from_string(j.value("ensemble", "NVT"));
    p.temperature = j.value("temperature", p.temperature);
    p.pressure = j.value("pressure", p.pressure);
    p.dt = j.value("dt", p.dt);
    p.n_steps = j.value("n_steps", p.n_steps);
    p.snapshot_interval = j.value("snapshot_interval", p.snapshot_interval);
    if (j.contains("equilibration_steps")) p.equilibration_steps = j.at("equilibration_steps").get<std::size_t>();
    p.tau_t = j.value("tau_t", p.tau_t);
    p.tau_p = j.value("tau_p", p.tau_p);
    p.compressibility = j.value("compressibility", p.compressibility);
    p.seed = j.value("seed", p.seed);
    return p;
}

void AnomalyThresholds::validate() const {
    if (!(temp_factor > 0.0 && min_distance_abort > 0.0 && energy_jump_abort > 0.0 && density_floor > 0.0) ||
        temp_window == 0)
        throw ConfigurationError("anomaly thresholds must be positive");
}

json AnomalyThresholds::to_json() const {
    return {{"temp_factor", temp_factor},
            {"temp_window", temp_window},
            {"min_distance_abort", min_distance_abort},
            {"energy_jump_abort", energy_jump_abort},
            {"density_floor", density_floor}};
}

AnomalyThresholds AnomalyThresholds::from_json(const json& j) {
    AnomalyThresholds t;
    t.temp_factor = j.value("temp_factor", t.temp_factor);
    t.temp_window = j.value("temp_window", t.temp_window);
    t.min_distance_abort = j.value("min_distance_abort", t.min_distance_abort);
    t.energy_jump_abort = j.value("energy_jump_abort", t.energy_jump_abort);
    t.density_floor = j.value("density_floor", t.density_floor);
    t.validate();
    return t;
}

json Trajectory::record_payload() const {
    return {{"trajectory_id", trajectory_id},
            {"structure_id", source_structure_id},
            {"calculator", calculator_id},
            {"snapshot_count", frames.size()},
            {"steps_completed", steps_completed},
            {"conditions", conditions.to_json()},
            {"status", status == Status::Completed ? "completed" : "early_stop"},
            {"reason", reason}};
}

// ---------------------------------------------------------------------------
// Integrator

std::size_t degrees_of_freedom(std::size_t n_atoms) { return n_atoms > 1 ? 3 * n_atoms - 3 : 3; }

double kinetic_energy(const AtomicConfiguration& config, const std::vector<double>& masses) {
    if (!config.velocities) return 0.0;
    double ke = 0.0;
    for (std::size_t i = 0; i < config.size(); ++i) ke += 0.5 * masses[i] * (*config.velocities)[i].squaredNorm();
    return ke * units::kAmuA2PerFs2ToEv;
}

double temperature_of(const AtomicConfiguration& config, const std::vector<double>& masses) {
    return 2.0 * kinetic_energy(config, masses) /
           (static_cast<double>(degrees_of_freedom(config.size())) * units::kBoltzmann);
}

namespace {

std::vector<double> per_atom_masses(const AtomicConfiguration& config, const MassTable& masses) {
    std::vector<double> out;
    out.reserve(config.size());
    for (const auto& s : config.species) {
        auto it = masses.find(s);
        if (it == masses.end() || !(it->second > 0.0)) throw SetupError("no mass for species " + s);
        out.push_back(it->second);
    }
    return out;
}

void remove_drift(std::vector<Vec3>& v, const std::vector<double>& m) {
    if (v.size() < 2) return;
    Vec3 p = Vec3::Zero();
    double mt = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        p += m[i] * v[i];
        mt += m[i];
    }
    const Vec3 vc = p / mt;
    for (auto& x : v) x -= vc;
}

}  // namespace

std::vector<Vec3> maxwell_boltzmann(const AtomicConfiguration& config, const MassTable& masses, double temperature,
                                    std::uint64_t seed) {
    const auto m = per_atom_masses(config, masses);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vec3> v(config.size());
    for (std::size_t i = 0; i < config.size(); ++i) {
        const double s = std::sqrt(units::kBoltzmann * temperature / (m[i] * units::kAmuA2PerFs2ToEv));
        for (int a = 0; a < 3; ++a) v[i][a] = s * normal(rng);
    }
    remove_drift(v, m);
    AtomicConfiguration tmp;
    tmp.positions.resize(config.size());
    tmp.velocities = v;
    const double t_now = temperature_of(tmp, m);
    if (t_now > 0.0 && temperature > 0.0) {
        const double scale = std::sqrt(temperature / t_now);
        for (auto& x : v) x *= scale;
    }
    return v;
}

namespace {

struct State {
    ForceEvaluation ev;
    double temperature = 0.0;
    double pressure_bar = 0.0;
};

bool finite(const AtomicConfiguration& c, const ForceEvaluation& ev) {
    if (!std::isfinite(ev.energy)) return false;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c.positions[i].allFinite() || !ev.forces[i].allFinite()) return false;
        if (c.velocities && !(*c.velocities)[i].allFinite()) return false;
    }
    return true;
}

}  // namespace

Trajectory run_md(const AtomicConfiguration& config_in, const PairForceField& calculator, const MDProtocol& protocol,
                  const AnomalyThresholds& thresholds, const RunOptions& options) {
    if (config_in.size() == 0) throw SetupError("cannot run MD on an empty configuration");
    protocol.validate();
    thresholds.validate();
    if (protocol.ensemble == Ensemble::NPT && !config_in.fully_periodic())
        throw SetupError("NPT needs a fully periodic cell");
    std::vector<int> types;
    try {
        types = calculator.map_species(config_in.species);
    } catch (const PredictionError& e) {
        throw SetupError(e.what());
    }
    const auto mass = per_atom_masses(config_in, options.masses);
    const std::size_t n = config_in.size();

    Trajectory traj;
    traj.trajectory_id = options.trajectory_id;
    traj.source_structure_id = config_in.structure_id;
    traj.calculator_id = calculator.id();
    traj.conditions = protocol;

    AtomicConfiguration cfg = config_in;
    if (!cfg.velocities) cfg.velocities = maxwell_boltzmann(cfg, options.masses, protocol.temperature, protocol.seed);
    auto& vel = *cfg.velocities;

    NeighborList list(calculator.cutoff(), options.skin);
    auto compute = [&](State& st) {
        if (list.needs_rebuild(cfg)) list.build(cfg);
        st.ev = evaluate(calculator, cfg, types, list);
        st.temperature = temperature_of(cfg, mass);
        if (cfg.fully_periodic()) {
            const double ke = kinetic_energy(cfg, mass);
            st.pressure_bar = (2.0 * ke + st.ev.virial) / (3.0 * cfg.volume()) * units::kEvPerA3ToBar;
        }
    };

    const double accel = 1.0 / units::kAmuA2PerFs2ToEv;
    const double dt = protocol.dt;
    const std::size_t eq = protocol.equilibration();
    const double v0 = cfg.fully_periodic() ? cfg.volume() : 0.0;
    const bool thermostat = protocol.ensemble != Ensemble::NVE;
    const bool barostat = protocol.ensemble == Ensemble::NPT;
    const double target_t = protocol.temperature;

    State st;
    compute(st);
    std::size_t hot_steps = 0;
    double last_snapshot_epa = std::numeric_limits<double>::quiet_NaN();

    auto stop = [&](const std::string& reason) {
        traj.status = Status::EarlyStop;
        traj.reason = reason;
    };
    auto snapshot = [&](std::size_t step) {
        AtomicConfiguration snap = cfg;
        snap.extra["step"] = std::to_string(step);
        snap.extra["time_fs"] = extxyz::format_double(static_cast<double>(step) * dt);
        snap.extra["potential_energy"] = extxyz::format_double(st.ev.energy);
        snap.extra["temperature"] = extxyz::format_double(st.temperature);
        traj.frames.push_back(std::move(snap));
        traj.potential_energies.push_back(st.ev.energy);
        traj.temperatures.push_back(st.temperature);
        traj.times.push_back(static_cast<double>(step) * dt);
    };
    // Returns false when a monitor trips.
    auto check = [&](std::size_t step) {
        if (!finite(cfg, st.ev)) return stop("non_finite"), false;
        if (st.ev.min_distance < thresholds.min_distance_abort) return stop("structural_collapse"), false;
        if (target_t > 0.0 && st.temperature > thresholds.temp_factor * target_t) {
            if (++hot_steps >= thresholds.temp_window) return stop("temperature_runaway"), false;
        } else {
            hot_steps = 0;
        }
        if (barostat && cfg.volume() > v0 / thresholds.density_floor) return stop("density_collapse"), false;
        if (step >= eq && (step - eq) % protocol.snapshot_interval == 0) {
            const double epa = st.ev.energy / static_cast<double>(n);
            if (!std::isnan(last_snapshot_epa) && std::abs(epa - last_snapshot_epa) > thresholds.energy_jump_abort)
                return stop("energy_divergence"), false;
            last_snapshot_epa = epa;
            snapshot(step);
        }
        return true;
    };

    if (!check(0)) return traj;
    for (std::size_t step = 1; step <= protocol.n_steps; ++step) {
        for (std::size_t i = 0; i < n; ++i) {
            vel[i] += 0.5 * dt * accel / mass[i] * st.ev.forces[i];
            cfg.positions[i] += dt * vel[i];
        }
        if (barostat) {
            double mu3 = 1.0 - protocol.compressibility * dt / protocol.tau_p * (protocol.pressure - st.pressure_bar);
            const double mu = std::clamp(std::cbrt(std::max(mu3, 1e-6)), 0.99, 1.01);
            for (auto& p : cfg.positions) p *= mu;
            cfg.cell *= mu;
        }
        compute(st);
        for (std::size_t i = 0; i < n; ++i) vel[i] += 0.5 * dt * accel / mass[i] * st.ev.forces[i];
        st.temperature = temperature_of(cfg, mass);
        if (thermostat && st.temperature > 0.0) {
            const double lam =
                std::clamp(std::sqrt(1.0 + dt / protocol.tau_t * (target_t / st.temperature - 1.0)), 0.8, 1.25);
            for (auto& v : vel) v *= lam;
            st.temperature *= lam * lam;
        }
        if (cfg.fully_periodic())
            st.pressure_bar =
                (2.0 * kinetic_energy(cfg, mass) + st.ev.virial) / (3.0 * cfg.volume()) * units::kEvPerA3ToBar;
        if (options.hook && options.hook(step, cfg)) compute(st);
        traj.steps_completed = step;
        if (!check(step)) return traj;
    }
    return traj;
}

RelaxResult relax(const AtomicConfiguration& config, const PairForceField& calculator, const RelaxOptions& options) {
    RelaxResult out;
    out.config = config;
    out.config.velocities.reset();
    if (config.size() == 0) return out;
    ForceEvaluation ev = evaluate(calculator, out.config);
    double step = options.max_step;
    for (; out.steps < options.max_steps; ++out.steps) {
        const double fmax = max_force_norm(ev.forces);
        if (fmax < options.fmax || step < 1e-8) break;
        AtomicConfiguration trial = out.config;
        const double scale = step / fmax;
        for (std::size_t i = 0; i < trial.size(); ++i) trial.positions[i] += scale * ev.forces[i];
        ForceEvaluation tev = evaluate(calculator, trial);
        if (std::isfinite(tev.energy) && tev.energy < ev.energy) {
            out.config = std::move(trial);
            ev = std::move(tev);
            step = std::min(options.max_step, step * 1.2);
        } else {
            step *= 0.5;
        }
    }
    out.energy = ev.energy;
    out.max_force = max_force_norm(ev.forces);
    return out;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
    extxyz::write_file(path, traj.frames);
}

std::vector<AtomicConfiguration> read_trajectory_frames(const std::filesystem::path& path) {
    std::vector<AtomicConfiguration> out;
    for (const auto& f : extxyz::read_file(path)) out.push_back(extxyz::config_of(f));
    return out;
}

// ---------------------------------------------------------------------------
// Observables

std::vector<double> density_series(const std::vector<AtomicConfiguration>& frames, const MassTable& masses) {
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        if (!f.fully_periodic()) throw GeometryError("density is undefined for a non-periodic cell");
        out.push_back(total_mass(f, masses) / f.volume() * units::kAmuPerA3ToGPerCm3);
    }
    return out;
}

std::vector<double> density_series(const Trajectory& traj, const MassTable& masses) {
    return density_series(traj.frames, masses);
}

double RdfCurve::first_peak() const {
    if (g.empty()) return 0.0;
    return r[static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin())];
}

RdfCurve rdf(const std::vector<AtomicConfiguration>& frames, const std::string& a, const std::string& b, double r_max,
             std::size_t n_bins) {
    if (frames.empty()) throw StatisticsError("rdf needs at least one frame");
    if (!(r_max > 0.0) || n_bins == 0) throw ConfigurationError("rdf needs r_max > 0 and n_bins > 0");
    RdfCurve out;
    out.bin_width = r_max / static_cast<double>(n_bins);
    std::vector<double> hist(n_bins, 0.0);
    double norm = 0.0;  // sum over frames of N_a N_b / V (ordered pairs, i != j)
    for (const auto& f : frames) {
        if (!f.fully_periodic()) throw GeometryError("rdf needs a fully periodic cell");
        std::size_t na = 0, nb = 0;
        for (const auto& s : f.species) {
            na += s == a;
            nb += s == b;
        }
        if (na == 0 || nb == 0) throw StatisticsError("rdf species selection " + a + "-" + b + " is empty");
        const double pairs = a == b ? static_cast<double>(na) * static_cast<double>(na - 1)
                                    : static_cast<double>(na) * static_cast<double>(nb);
        norm += pairs / f.volume();
        for (const auto& p : neighbor_pairs(f, r_max)) {
            if (p.i == p.j) continue;
            const auto& si = f.species[p.i];
            const auto& sj = f.species[p.j];
            double w = 0.0;
            if (a == b) {
                if (si == a && sj == a) w = 2.0;
            } else {
                w = static_cast<double>((si == a && sj == b) + (si == b && sj == a));
            }
            if (w == 0.0) continue;
            const auto bin = static_cast<std::size_t>(p.distance / out.bin_width);
            if (bin < n_bins) hist[bin] += w;
        }
    }
    if (norm == 0.0) throw StatisticsError("rdf normalization is zero (single atom of a self pair)");
    out.r.resize(n_bins);
    out.g.resize(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
        const double r0 = static_cast<double>(k) * out.bin_width, r1 = r0 + out.bin_width;
        const double shell = 4.0 / 3.0 * M_PI * (r1 * r1 * r1 - r0 * r0 * r0);
        out.r[k] = r0 + 0.5 * out.bin_width;
        out.g[k] = hist[k] / (norm * shell);
    }
    return out;
}

MsdCurve msd(const std::vector<AtomicConfiguration>& frames, const std::vector<double>& times,
             const std::string& species, std::size_t max_lags) {
    if (frames.empty()) throw StatisticsError("msd needs at least one frame");
    if (times.size() != frames.size()) throw StatisticsError("msd needs one time per frame");
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < frames.front().size(); ++i)
        if (species.empty() || frames.front().species[i] == species) sel.push_back(i);
    if (sel.empty()) throw StatisticsError("msd species selection '" + species + "' is empty");
    const std::size_t n = frames.size();
    for (const auto& f : frames)
        if (f.size() != frames.front().size()) throw StatisticsError("msd frames differ in atom count");
    if (n > 1) {
        const double dt = times[1] - times[0];
        for (std::size_t f = 1; f < n; ++f)
            if (std::abs(times[f] - times[f - 1] - dt) > 1e-6 * std::max(1.0, std::abs(dt)))
                throw StatisticsError("msd needs evenly spaced frames");
    }
    const std::size_t lags = max_lags == 0 ? n : std::min(max_lags, n);
    MsdCurve out;
    // Averaged over every available time origin.
    for (std::size_t lag = 0; lag < lags; ++lag) {
        double s = 0.0;
        for (std::size_t o = 0; o + lag < n; ++o)
            for (auto i : sel) s += (frames[o + lag].positions[i] - frames[o].positions[i]).squaredNorm();
        out.time.push_back(times[lag] - times.front());
        out.msd.push_back(s / static_cast<double>(sel.size() * (n - lag)));
    }
    return out;
}

MsdCurve msd(const Trajectory& traj, const std::string& species, std::size_t max_lags) {
    return msd(traj.frames, traj.times, species, max_lags);
}

double diffusion_coefficient(const MsdCurve& curve, double fit_fraction, int dim) {
    if (!(fit_fraction > 0.0 && fit_fraction <= 1.0) || dim < 1)
        throw FitError("fit fraction must be in (0, 1] and dim >= 1");
    const std::size_t n = curve.msd.size();
    const auto count = static_cast<std::size_t>(std::ceil(fit_fraction * static_cast<double>(n) - 1e-9));
    if (count < 3) throw FitError("diffusion fit window has fewer than 3 points");
    const std::size_t start = n - count;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = start; k < n; ++k) {
        sx += curve.time[k];
        sy += curve.msd[k];
        sxx += curve.time[k] * curve.time[k];
        sxy += curve.time[k] * curve.msd[k];
    }
    const double c = static_cast<double>(count);
    const double den = c * sxx - sx * sx;
    if (!(std::abs(den) > 0.0)) throw FitError("diffusion fit window has no time spread");
    const double slope = (c * sxy - sx * sy) / den;
    return slope / (2.0 * dim) * units::kA2PerFsToCm2PerS;
}

ConvergenceResult check_convergence(const std::vector<double>& series, ConvergenceMethod method, std::size_t window,
                                    double tolerance) {
    if (series.empty()) throw StatisticsError("convergence check on an empty series");
    if (window == 0 || window > series.size()) throw StatisticsError("convergence window exceeds the series length");
    const auto first = series.end() - static_cast<std::ptrdiff_t>(window);
    const double w = static_cast<double>(window);
    const double mean = std::accumulate(first, series.end(), 0.0) / w;
    const double scale = std::abs(mean) < 1e-12 ? 1.0 : std::abs(mean);
    double metric = 0.0;
    switch (method) {
        case ConvergenceMethod::Std: {
            double var = 0.0;
            for (auto it = first; it != series.end(); ++it) var += (*it - mean) * (*it - mean);
            metric = std::sqrt(var / w) / scale;
            break;
        }
        case ConvergenceMethod::Slope: {
            if (window < 2) {
                metric = 0.0;
                break;
            }
            const double xm = (w - 1.0) / 2.0;
            double num = 0.0, den = 0.0;
            for (std::size_t k = 0; k < window; ++k) {
                const double x = static_cast<double>(k) - xm;
                num += x * (first[static_cast<std::ptrdiff_t>(k)] - mean);
                den += x * x;
            }
            metric = std::abs(num / den) * w / scale;
            break;
        }
        case ConvergenceMethod::Range: {
            const auto [lo, hi] = std::minmax_element(first, series.end());
            metric = (*hi - *lo) / scale;
            break;
        }
    }
    return {metric < tolerance, metric, mean};
}

}  // namespace alloop::md
