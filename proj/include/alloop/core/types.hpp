#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace alloop {

using Vec3 = Eigen::Vector3d;
// Cell matrices store lattice vectors as rows.
using Mat3 = Eigen::Matrix3d;

// Periodic cell + species + positions. Positions are kept unwrapped; use
// wrapped_positions() for the in-cell view.
struct AtomicConfiguration {
    Mat3 cell = Mat3::Zero();
    std::array<bool, 3> periodic{false, false, false};
    std::vector<std::string> species;
    std::vector<Vec3> positions;
    std::optional<std::vector<Vec3>> velocities;
    std::optional<std::vector<std::string>> region_tags;
    std::string structure_id;
    bool is_validation = false;
    // Header keys the container format does not interpret, kept verbatim.
    std::map<std::string, std::string> extra;

    std::size_t size() const noexcept { return positions.size(); }
    bool any_periodic() const noexcept { return periodic[0] || periodic[1] || periodic[2]; }
    bool fully_periodic() const noexcept { return periodic[0] && periodic[1] && periodic[2]; }
    double volume() const { return std::abs(cell.determinant()); }

    // Throws GeometryError when an invariant is broken.
    void validate() const;

    // Fractional coordinates wrapped into [0, 1) on periodic axes.
    std::vector<Vec3> wrapped_positions() const;

    // Sorted distinct species.
    std::vector<std::string> species_set() const;
};

bool operator==(const AtomicConfiguration& a, const AtomicConfiguration& b);

struct LabeledFrame {
    AtomicConfiguration config;
    double energy = 0.0;
    std::vector<Vec3> forces;
    std::string label_source;
    double max_force = 0.0;

    // Builds a frame and caches max_force; throws LabelingError on non-finite
    // values or a force/atom count mismatch.
    static LabeledFrame make(AtomicConfiguration config, double energy, std::vector<Vec3> forces,
                             std::string label_source);

    double energy_per_atom() const { return energy / static_cast<double>(config.size()); }
};

double max_force_norm(const std::vector<Vec3>& forces);

struct DatasetStats {
    std::size_t frame_count = 0;
    std::size_t total_atoms = 0;
    double energy_per_atom_min = 0.0;
    double energy_per_atom_max = 0.0;
    double max_force_max = 0.0;

    bool operator==(const DatasetStats&) const = default;
};

DatasetStats compute_stats(const std::vector<LabeledFrame>& frames);

struct Dataset {
    std::string dataset_id;
    std::vector<LabeledFrame> frames;
    std::vector<std::string> origin;
    DatasetStats stats;

    void recompute_stats() { stats = compute_stats(frames); }
};

// Per-species atomic masses (amu).
using MassTable = std::map<std::string, double>;

double total_mass(const AtomicConfiguration& config, const MassTable& masses);

}  // namespace alloop
