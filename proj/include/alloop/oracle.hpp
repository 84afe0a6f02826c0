#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "alloop/core/report.hpp"
#include "alloop/core/types.hpp"
#include "alloop/forcefield.hpp"

namespace alloop::oracle {

enum class Kind { LennardJones, Morse };

// LJ: epsilon (eV), sigma (A). Morse: depth D_e (eV), alpha (1/A), r_e (A).
struct PairParams {
    double p0 = 0.0;
    double p1 = 0.0;
    double p2 = 0.0;

    bool operator==(const PairParams&) const = default;
};

using SpeciesPair = std::pair<std::string, std::string>;  // ordered so first <= second

SpeciesPair make_pair_key(const std::string& a, const std::string& b);

// Analytic reference potential used as the labeling oracle.
//
// JSON: {"kind": "lennard_jones"|"morse",
//        "pairs": {"A-A": {"epsilon": .., "sigma": ..}, "A-B": {"D_e": .., "alpha": .., "r_e": ..}},
//        "cutoff": 5.0, "shift": true, "force_shift": false}
struct OracleSpec {
    Kind kind = Kind::LennardJones;
    std::map<SpeciesPair, PairParams> pairs;
    double cutoff = 5.0;
    bool shift = true;
    // Also subtract the linear term (r - r_c) V'(r_c) so forces vanish
    // continuously at the cutoff.
    bool force_shift = false;
    // Pairs filled by the mixing rule during resolve().
    std::vector<SpeciesPair> mixed;

    // Fills every missing unordered pair among `species` with the mixing rule
    // (LJ: Lorentz-Berthelot; Morse: geometric depth, arithmetic alpha and
    // r_e). Throws LabelingError listing a pair that cannot be filled and
    // ConfigurationError when the LJ cutoff is below 2 max(sigma).
    OracleSpec resolved(const std::vector<std::string>& species) const;

    // Stable identity used as LabeledFrame::label_source.
    std::string identity() const;

    json to_json() const;
    static OracleSpec from_json(const json& j);

    // Argon-like single-species LJ default.
    static OracleSpec default_lj();
};

// PairForceField view of a resolved spec.
class OracleForceField final : public PairForceField {
public:
    OracleForceField(const OracleSpec& spec, std::vector<std::string> species);

    std::string id() const override { return id_; }
    double cutoff() const override { return spec_.cutoff; }
    const std::vector<std::string>& species() const override { return species_; }
    void pair(int si, int sj, double r, double& v, double& dv) const override;

    const OracleSpec& spec() const noexcept { return spec_; }

private:
    OracleSpec spec_;
    std::vector<std::string> species_;
    std::vector<PairParams> table_;  // species_.size()^2
    std::vector<double> shift_;      // energy offset at the cutoff per pair
    std::vector<double> slope_;      // dV/dr at the cutoff per pair (force shift)
    std::string id_;
};

// Raw pair function (no shift) for the given kind.
void pair_potential(Kind kind, const PairParams& p, double r, double& v, double& dv);

// Energy, exact forces and label for one configuration.
LabeledFrame oracle_energy_forces(const AtomicConfiguration& config, const OracleSpec& spec);

// Labels frames in order; a per-frame failure aborts with the frame index.
Dataset label_frames(const std::vector<AtomicConfiguration>& frames, const OracleSpec& spec,
                     const std::string& dataset_id = "labeled", std::size_t workers = 1);

}  // namespace alloop::oracle
