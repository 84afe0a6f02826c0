#pragma once

#include <string>
#include <vector>

#include "alloop/core/geometry.hpp"
#include "alloop/core/types.hpp"

namespace alloop {

// An energy model made of per-atom constants plus radial pair terms. Both the
// analytic oracle and the linear surrogate reduce to this form, so the MD
// engine drives either through one interface.
class PairForceField {
public:
    virtual ~PairForceField() = default;

    virtual std::string id() const = 0;
    virtual double cutoff() const = 0;
    virtual const std::vector<std::string>& species() const = 0;

    virtual double atom_energy(int /*species*/) const { return 0.0; }
    // Pair term V(r) and dV/dr for species indices (si, sj), r < cutoff().
    virtual void pair(int si, int sj, double r, double& v, double& dv) const = 0;

    // Index into species(), or -1 when the species is not covered.
    int species_index(const std::string& s) const;
    // Species indices for every atom; throws PredictionError naming the first
    // uncovered species.
    std::vector<int> map_species(const std::vector<std::string>& atoms) const;
};

// Cubic Hermite table of another field's pair terms on a uniform grid over
// [0, cutoff]. Forces are the exact derivative of the interpolated energy, so
// NVE stays conservative; the table error is O(h^4).
class TabulatedForceField final : public PairForceField {
public:
    TabulatedForceField(const PairForceField& source, double spacing = 0.002);

    std::string id() const override { return id_; }
    double cutoff() const override { return cutoff_; }
    const std::vector<std::string>& species() const override { return species_; }
    double atom_energy(int s) const override { return atom_energy_[static_cast<std::size_t>(s)]; }
    void pair(int si, int sj, double r, double& v, double& dv) const override;

private:
    std::string id_;
    double cutoff_ = 0.0;
    double h_ = 0.0;
    std::vector<std::string> species_;
    std::vector<double> atom_energy_;
    std::vector<std::vector<double>> v_, dv_;  // [si * n + sj][node]
};

struct ForceEvaluation {
    double energy = 0.0;
    std::vector<Vec3> forces;
    // W = sum over pairs of r_ij . f_ij (eV); pressure = (N k T + W/3) / V.
    double virial = 0.0;
    // Shortest pair distance seen inside the cutoff (infinity when none).
    double min_distance = 0.0;
};

// Evaluates energy, forces and virial from a prebuilt neighbor list.
ForceEvaluation evaluate(const PairForceField& ff, const AtomicConfiguration& config, const std::vector<int>& types,
                         const NeighborList& list);

// One-shot evaluation with a fresh neighbor search.
ForceEvaluation evaluate(const PairForceField& ff, const AtomicConfiguration& config);

}  // namespace alloop
