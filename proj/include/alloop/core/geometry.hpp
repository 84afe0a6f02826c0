#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "alloop/core/types.hpp"

namespace alloop {

// Distance between planes of the lattice perpendicular to each cell vector.
Vec3 cell_widths(const Mat3& cell);

// Minimum distance between a and b over all periodic images. Exact for any
// cell shape: the image search range follows from the plane spacings.
double min_image_distance(const Mat3& cell, const std::array<bool, 3>& periodic, const Vec3& a,
                          const Vec3& b);

struct NeighborPair {
    std::size_t i = 0;
    std::size_t j = 0;
    Vec3 displacement = Vec3::Zero();  // r_j + shift - r_i
    double distance = 0.0;
};

struct NeighborOptions {
    // Allow cutoffs beyond half the smallest periodic width by enumerating
    // further images. When false such cutoffs are a ConfigurationError.
    bool enumerate_images = true;
};

// Every pair (and periodic self-image) closer than cutoff. Pairs with i < j
// appear once per contributing image; an atom and its own image appear once
// per +/- image pair with i == j.
std::vector<NeighborPair> neighbor_pairs(const AtomicConfiguration& config, double cutoff,
                                         NeighborOptions options = {});

// Verlet list with skin for MD. Stores integer image shifts, so it stays valid
// while positions (unwrapped) and the cell change continuously; rebuild when
// needs_rebuild() says so.
class NeighborList {
public:
    struct Entry {
        std::uint32_t i;
        std::uint32_t j;
        std::array<std::int16_t, 3> shift;
    };

    NeighborList() = default;
    NeighborList(double cutoff, double skin) : cutoff_(cutoff), skin_(skin) {}

    void build(const AtomicConfiguration& config);
    bool needs_rebuild(const AtomicConfiguration& config) const;

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    double cutoff() const noexcept { return cutoff_; }
    std::size_t builds() const noexcept { return builds_; }

private:
    double cutoff_ = 0.0;
    double skin_ = 0.0;
    std::vector<Entry> entries_;
    std::vector<Vec3> reference_positions_;
    Mat3 reference_cell_ = Mat3::Zero();
    std::size_t builds_ = 0;
};

}  // namespace alloop
