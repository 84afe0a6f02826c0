#include "alloop/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "alloop/core/error.hpp"

namespace alloop {

void AtomicConfiguration::validate() const {
    const std::size_t n = positions.size();
    if (species.size() != n)
        throw GeometryError("species count " + std::to_string(species.size()) +
                            " differs from position count " + std::to_string(n));
    if (velocities && velocities->size() != n)
        throw GeometryError("velocity count differs from atom count");
    if (region_tags && region_tags->size() != n)
        throw GeometryError("region tag count differs from atom count");
    for (const auto& p : positions)
        if (!p.allFinite()) throw GeometryError("non-finite position");
    if (velocities)
        for (const auto& v : *velocities)
            if (!v.allFinite()) throw GeometryError("non-finite velocity");
    if (!cell.allFinite()) throw GeometryError("non-finite cell");
    if (any_periodic() && std::abs(cell.determinant()) < 1e-12)
        throw GeometryError("cell is singular but periodic boundaries are requested");
}

std::vector<Vec3> AtomicConfiguration::wrapped_positions() const {
    std::vector<Vec3> out;
    out.reserve(positions.size());
    if (!any_periodic()) {
        for (const auto& p : positions) out.push_back(p);
        return out;
    }
    const Mat3 inv = cell.inverse();
    for (const auto& p : positions) {
        Vec3 frac = inv.transpose() * p;
        for (int a = 0; a < 3; ++a) {
            if (!periodic[a]) continue;
            frac[a] -= std::floor(frac[a]);
            if (frac[a] >= 1.0) frac[a] = 0.0;
        }
        out.push_back(frac);
    }
    return out;
}

std::vector<std::string> AtomicConfiguration::species_set() const {
    std::set<std::string> s(species.begin(), species.end());
    return {s.begin(), s.end()};
}

bool operator==(const AtomicConfiguration& a, const AtomicConfiguration& b) {
    return a.cell == b.cell && a.periodic == b.periodic && a.species == b.species &&
           a.positions == b.positions && a.velocities == b.velocities &&
           a.region_tags == b.region_tags && a.structure_id == b.structure_id &&
           a.is_validation == b.is_validation && a.extra == b.extra;
}

double max_force_norm(const std::vector<Vec3>& forces) {
    double m = 0.0;
    for (const auto& f : forces) m = std::max(m, f.norm());
    return m;
}

LabeledFrame LabeledFrame::make(AtomicConfiguration config, double energy, std::vector<Vec3> forces,
                                std::string label_source) {
    if (forces.size() != config.size())
        throw LabelingError("force count " + std::to_string(forces.size()) +
                            " differs from atom count " + std::to_string(config.size()));
    if (!std::isfinite(energy)) throw LabelingError("non-finite energy");
    for (const auto& f : forces)
        if (!f.allFinite()) throw LabelingError("non-finite force");
    LabeledFrame frame;
    frame.max_force = max_force_norm(forces);
    frame.config = std::move(config);
    frame.energy = energy;
    frame.forces = std::move(forces);
    frame.label_source = std::move(label_source);
    return frame;
}

DatasetStats compute_stats(const std::vector<LabeledFrame>& frames) {
    DatasetStats s;
    s.frame_count = frames.size();
    if (frames.empty()) return s;
    s.energy_per_atom_min = std::numeric_limits<double>::infinity();
    s.energy_per_atom_max = -std::numeric_limits<double>::infinity();
    for (const auto& f : frames) {
        s.total_atoms += f.config.size();
        const double e = f.energy_per_atom();
        s.energy_per_atom_min = std::min(s.energy_per_atom_min, e);
        s.energy_per_atom_max = std::max(s.energy_per_atom_max, e);
        s.max_force_max = std::max(s.max_force_max, f.max_force);
    }
    return s;
}

double total_mass(const AtomicConfiguration& config, const MassTable& masses) {
    double m = 0.0;
    for (const auto& s : config.species) {
        auto it = masses.find(s);
        if (it == masses.end()) throw ConfigurationError("no mass for species " + s);
        m += it->second;
    }
    return m;
}

}  // namespace alloop
