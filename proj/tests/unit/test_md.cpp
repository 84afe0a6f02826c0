#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "alloop/core/error.hpp"
#include "alloop/core/units.hpp"
#include "alloop/md.hpp"
#include "alloop/oracle.hpp"
#include "alloop/structgen.hpp"

using namespace alloop;
using namespace alloop::md;

namespace {

oracle::OracleSpec lj_a() {
    return oracle::OracleSpec::from_json({{"kind", "lennard_jones"},
                                          {"cutoff", 5.0},
                                          {"shift", true},
                                          {"force_shift", true},
                                          {"pairs", {{"A-A", {{"epsilon", 0.2}, {"sigma", 2.0}}}}}})
        .resolved({"A"});
}

const MassTable kMasses{{"A", 30.0}};

AtomicConfiguration fcc() { return structgen::build_solid("fcc", 3.1, {"A"}, {3, 3, 3}); }

}  // namespace

TEST_CASE("Maxwell-Boltzmann velocities hit the target exactly with zero momentum") {
    auto c = fcc();
    auto v = maxwell_boltzmann(c, kMasses, 450.0, 3);
    Vec3 p = Vec3::Zero();
    for (const auto& x : v) p += 30.0 * x;
    CHECK(p.norm() < 1e-10);
    c.velocities = v;
    std::vector<double> m(c.size(), 30.0);
    CHECK(temperature_of(c, m) == doctest::Approx(450.0).epsilon(1e-12));
    // 3N - 3 degrees of freedom: T = 2 KE / (dof k_B)
    CHECK(kinetic_energy(c, m) == doctest::Approx(0.5 * degrees_of_freedom(c.size()) * units::kBoltzmann * 450.0));
}

TEST_CASE("snapshot count and early-stop reasons") {
    oracle::OracleForceField ff(lj_a(), {"A"});
    MDProtocol p;
    p.ensemble = Ensemble::NVT;
    p.temperature = 300;
    p.n_steps = 200;
    p.snapshot_interval = 30;
    p.equilibration_steps = 50;
    p.dt = 2.0;
    RunOptions o;
    o.masses = kMasses;
    auto t = run_md(fcc(), ff, p, {}, o);
    CHECK(t.status == Status::Completed);
    CHECK(t.frames.size() == (200 - 50) / 30 + 1);
    CHECK(t.times.front() == doctest::Approx(100.0));
    CHECK(t.steps_completed == 200);

    o.hook = [](std::size_t step, AtomicConfiguration& c) {
        if (step != 20) return false;
        c.positions[1] = c.positions[0] + Vec3(0.3, 0, 0);
        return true;
    };
    auto bad = run_md(fcc(), ff, p, {}, o);
    CHECK(bad.status == Status::EarlyStop);
    CHECK(bad.reason == "structural_collapse");
    CHECK(bad.steps_completed <= 21);
}

TEST_CASE("NVE conserves energy for a smooth potential") {
    oracle::OracleForceField ff(lj_a(), {"A"});
    MDProtocol p;
    p.ensemble = Ensemble::NVE;
    p.temperature = 200;
    p.n_steps = 2000;
    p.snapshot_interval = 50;
    p.equilibration_steps = 0;
    p.dt = 1.0;
    RunOptions o;
    o.masses = kMasses;
    auto t = run_md(fcc(), ff, p, {}, o);
    REQUIRE(t.status == Status::Completed);
    std::vector<double> m(t.frames.front().size(), 30.0);
    auto total = [&](std::size_t k) { return t.potential_energies[k] + kinetic_energy(t.frames[k], m); };
    double e0 = total(0), worst = 0;
    for (std::size_t k = 1; k < t.frames.size(); ++k) worst = std::max(worst, std::abs(total(k) - e0) / std::abs(e0));
    CHECK(worst < 1e-4);
}

TEST_CASE("the NPT barostat relaxes an expanded solid back toward its equilibrium density") {
    oracle::OracleForceField ff(lj_a(), {"A"});
    auto c = fcc();
    c.cell *= 1.04;
    for (auto& x : c.positions) x *= 1.04;
    MDProtocol p;
    p.ensemble = Ensemble::NPT;
    p.temperature = 100;
    p.pressure = 1.0;
    p.n_steps = 3000;
    p.snapshot_interval = 100;
    p.equilibration_steps = 2000;
    p.dt = 2.0;
    RunOptions o;
    o.masses = kMasses;
    auto t = run_md(c, ff, p, {}, o);
    auto rho = density_series(t, kMasses);
    auto start = density_series(std::vector<AtomicConfiguration>{c}, kMasses)[0];
    CHECK(rho.back() > start * 1.05);
}

TEST_CASE("relaxation lowers the energy below the force threshold") {
    oracle::OracleForceField ff(lj_a(), {"A"});
    auto c = fcc();
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 0.08);
    for (auto& x : c.positions) x += Vec3(n(rng), n(rng), n(rng));
    auto before = evaluate(ff, c).energy;
    auto r = relax(c, ff);
    CHECK(r.energy < before);
    CHECK(r.max_force <= 0.05);
}

TEST_CASE("density of an fcc cell") {
    auto c = fcc();
    double expected = 108 * 30.0 / std::pow(9.3, 3) * units::kAmuPerA3ToGPerCm3;
    CHECK(density_series(std::vector<AtomicConfiguration>{c}, kMasses)[0] == doctest::Approx(expected));
}

TEST_CASE("RDF of a lattice peaks at the nearest-neighbour distance") {
    auto c = fcc();
    auto g = rdf({c}, "A", "A", 4.5, 90);
    CHECK(g.first_peak() == doctest::Approx(3.1 / std::sqrt(2.0)).epsilon(0.02));
    CHECK_THROWS_AS(rdf({c}, "A", "B", 4.5, 90), StatisticsError);
}

TEST_CASE("MSD of ballistic motion is v^2 t^2 for every origin") {
    AtomicConfiguration c = testutil::cubic_box(10.0);
    c.species = {"A", "A"};
    std::vector<AtomicConfiguration> frames;
    std::vector<double> times;
    for (int k = 0; k < 10; ++k) {
        c.positions = {Vec3(0.1 * k, 0, 0), Vec3(0, 0.2 * k, 0)};
        frames.push_back(c);
        times.push_back(5.0 * k);
    }
    auto m = msd(frames, times, "A", 6);
    REQUIRE(m.msd.size() == 6);
    for (std::size_t lag = 0; lag < 6; ++lag) {
        double l = static_cast<double>(lag);
        CHECK(m.msd[lag] == doctest::Approx(0.5 * (0.01 + 0.04) * l * l));
        CHECK(m.time[lag] == doctest::Approx(5.0 * l));
    }
    times[4] += 1.0;
    CHECK_THROWS_AS(msd(frames, times, "A"), StatisticsError);
}

TEST_CASE("diffusion coefficient is the slope over 6 on the fitted window") {
    MsdCurve curve;
    for (int k = 0; k < 20; ++k) {
        curve.time.push_back(10.0 * k);
        // Curved start, linear tail with slope 0.03 A^2/fs.
        curve.msd.push_back(k < 10 ? 0.001 * k * k * k : 0.03 * 10.0 * k + 1.0);
    }
    CHECK(diffusion_coefficient(curve, 0.5) == doctest::Approx(0.03 / 6 * units::kA2PerFsToCm2PerS));
    MsdCurve tiny{{0, 1}, {0, 1}};
    CHECK_THROWS_AS(diffusion_coefficient(tiny, 1.0), FitError);
}

TEST_CASE("convergence checks") {
    std::vector<double> flat(50, 2.0), ramp;
    for (int i = 0; i < 50; ++i) ramp.push_back(1.0 + 0.1 * i);
    CHECK(check_convergence(flat, ConvergenceMethod::Std, 20, 1e-6).converged);
    CHECK_FALSE(check_convergence(ramp, ConvergenceMethod::Slope, 20, 1e-3).converged);
    CHECK(check_convergence(ramp, ConvergenceMethod::Range, 20, 0.5).metric ==
          doctest::Approx(1.9 / ((1.0 + 0.1 * 30 + 1.0 + 0.1 * 49) / 2)));
}

TEST_CASE("protocols validate and round trip") {
    MDProtocol p;
    p.n_steps = 10;
    p.equilibration_steps = 20;
    CHECK_THROWS_AS(p.validate(), ConfigurationError);
    p.equilibration_steps = 5;
    p.seed = 99;
    auto back = MDProtocol::from_json(p.to_json());
    CHECK(back.seed == 99);
    CHECK(back.equilibration() == 5);
    CHECK(ensemble_from_string(to_string(Ensemble::NPT)) == Ensemble::NPT);
}
