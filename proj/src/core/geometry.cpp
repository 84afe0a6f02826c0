#include "alloop/core/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "alloop/core/error.hpp"

namespace alloop {

namespace {

// Integer image ranges per axis needed to see every image within `reach`.
std::array<int, 3> image_ranges(const Mat3& cell, const std::array<bool, 3>& periodic, double reach) {
    std::array<int, 3> n{0, 0, 0};
    const Vec3 w = cell_widths(cell);
    for (int a = 0; a < 3; ++a)
        if (periodic[a]) n[a] = static_cast<int>(std::ceil(reach / w[a]));
    return n;
}

Vec3 shift_vector(const Mat3& cell, int na, int nb, int nc) {
    return static_cast<double>(na) * cell.row(0).transpose() +
           static_cast<double>(nb) * cell.row(1).transpose() +
           static_cast<double>(nc) * cell.row(2).transpose();
}

// Half-space test so each self-image pair (n, -n) is kept once.
bool positive_shift(int a, int b, int c) {
    if (a != 0) return a > 0;
    if (b != 0) return b > 0;
    return c > 0;
}

struct WrappedFrame {
    std::vector<Vec3> cart;                 // wrapped Cartesian positions
    std::vector<std::array<int, 3>> image;  // integer cell offsets removed
};

WrappedFrame wrap_frame(const AtomicConfiguration& config) {
    WrappedFrame out;
    out.cart.reserve(config.size());
    out.image.reserve(config.size());
    if (!config.any_periodic()) {
        out.cart = config.positions;
        out.image.assign(config.size(), {0, 0, 0});
        return out;
    }
    const Mat3 inv_t = config.cell.inverse().transpose();
    for (const auto& p : config.positions) {
        Vec3 frac = inv_t * p;
        std::array<int, 3> k{0, 0, 0};
        for (int a = 0; a < 3; ++a) {
            if (!config.periodic[a]) continue;
            k[a] = static_cast<int>(std::floor(frac[a]));
            frac[a] -= k[a];
        }
        out.cart.push_back(config.cell.transpose() * frac);
        out.image.push_back(k);
    }
    return out;
}

void check_cell(const Mat3& cell, const std::array<bool, 3>& periodic) {
    if (!cell.allFinite()) throw GeometryError("non-finite cell");
    if ((periodic[0] || periodic[1] || periodic[2]) && std::abs(cell.determinant()) < 1e-12)
        throw GeometryError("cell is singular but periodic boundaries are requested");
}

}  // namespace

Vec3 cell_widths(const Mat3& cell) {
    const Mat3 inv = cell.inverse();
    Vec3 w;
    for (int a = 0; a < 3; ++a) w[a] = 1.0 / inv.col(a).norm();
    return w;
}

double min_image_distance(const Mat3& cell, const std::array<bool, 3>& periodic, const Vec3& a,
                          const Vec3& b) {
    if (!a.allFinite() || !b.allFinite()) throw GeometryError("non-finite position");
    const Vec3 d = b - a;
    if (!(periodic[0] || periodic[1] || periodic[2])) return d.norm();
    check_cell(cell, periodic);

    const Mat3 inv_t = cell.inverse().transpose();
    Vec3 frac = inv_t * d;
    for (int k = 0; k < 3; ++k)
        if (periodic[k]) frac[k] -= std::round(frac[k]);
    const Vec3 r0 = cell.transpose() * frac;
    const double d0 = r0.norm();
    const Vec3 w = cell_widths(cell);

    std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0};
    for (int k = 0; k < 3; ++k) {
        if (!periodic[k]) continue;
        lo[k] = static_cast<int>(std::ceil(-d0 / w[k] - frac[k]));
        hi[k] = static_cast<int>(std::floor(d0 / w[k] - frac[k]));
    }
    double best = d0;
    for (int i = lo[0]; i <= hi[0]; ++i)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int k = lo[2]; k <= hi[2]; ++k) best = std::min(best, (r0 + shift_vector(cell, i, j, k)).norm());
    return best;
}

std::vector<NeighborPair> neighbor_pairs(const AtomicConfiguration& config, double cutoff,
                                         NeighborOptions options) {
    if (!(cutoff > 0.0) || !std::isfinite(cutoff)) throw ConfigurationError("cutoff must be positive");
    check_cell(config.cell, config.periodic);
    for (const auto& p : config.positions)
        if (!p.allFinite()) throw GeometryError("non-finite position");

    if (!options.enumerate_images && config.any_periodic()) {
        const Vec3 w = cell_widths(config.cell);
        for (int a = 0; a < 3; ++a)
            if (config.periodic[a] && cutoff > 0.5 * w[a])
                throw ConfigurationError("cutoff " + std::to_string(cutoff) +
                                         " exceeds half the periodic cell width " +
                                         std::to_string(0.5 * w[a]) +
                                         " and image enumeration is disabled");
    }

    const WrappedFrame wf = wrap_frame(config);
    const auto range = image_ranges(config.cell, config.periodic, cutoff);
    const double cut2 = cutoff * cutoff;
    const std::size_t n = config.size();
    std::vector<NeighborPair> out;

    for (int a = -range[0]; a <= range[0]; ++a)
        for (int b = -range[1]; b <= range[1]; ++b)
            for (int c = -range[2]; c <= range[2]; ++c) {
                const Vec3 s = shift_vector(config.cell, a, b, c);
                const bool zero = (a == 0 && b == 0 && c == 0);
                const bool self_ok = !zero && positive_shift(a, b, c);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i; j < n; ++j) {
                        if (i == j && !self_ok) continue;
                        const Vec3 d = wf.cart[j] + s - wf.cart[i];
                        const double r2 = d.squaredNorm();
                        if (r2 < cut2) out.push_back({i, j, d, std::sqrt(r2)});
                    }
                }
            }
    std::sort(out.begin(), out.end(), [](const NeighborPair& x, const NeighborPair& y) {
        if (x.i != y.i) return x.i < y.i;
        if (x.j != y.j) return x.j < y.j;
        return x.distance < y.distance;
    });
    return out;
}

void NeighborList::build(const AtomicConfiguration& config) {
    check_cell(config.cell, config.periodic);
    const WrappedFrame wf = wrap_frame(config);
    const double reach = cutoff_ + skin_;
    const auto range = image_ranges(config.cell, config.periodic, reach);
    const double reach2 = reach * reach;
    const std::size_t n = config.size();
    entries_.clear();
    for (int a = -range[0]; a <= range[0]; ++a)
        for (int b = -range[1]; b <= range[1]; ++b)
            for (int c = -range[2]; c <= range[2]; ++c) {
                const Vec3 s = shift_vector(config.cell, a, b, c);
                const bool zero = (a == 0 && b == 0 && c == 0);
                const bool self_ok = !zero && positive_shift(a, b, c);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i; j < n; ++j) {
                        if (i == j && !self_ok) continue;
                        const Vec3 d = wf.cart[j] + s - wf.cart[i];
                        if (d.squaredNorm() >= reach2) continue;
                        // Express the image relative to the unwrapped positions.
                        std::array<std::int16_t, 3> shift{};
                        const int m[3] = {a, b, c};
                        for (int k = 0; k < 3; ++k)
                            shift[k] = static_cast<std::int16_t>(m[k] - wf.image[j][k] + wf.image[i][k]);
                        entries_.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), shift});
                    }
                }
            }
    reference_positions_ = config.positions;
    reference_cell_ = config.cell;
    ++builds_;
}

bool NeighborList::needs_rebuild(const AtomicConfiguration& config) const {
    if (builds_ == 0 || reference_positions_.size() != config.size()) return true;
    // Affine map carrying the reference cell onto the current one.
    Mat3 affine = Mat3::Identity();
    double strain = 0.0;
    if (config.any_periodic()) {
        affine = reference_cell_.inverse() * config.cell;
        strain = (affine - Mat3::Identity()).norm();
    }
    double max_disp2 = 0.0;
    for (std::size_t i = 0; i < config.size(); ++i) {
        const Vec3 expected = affine.transpose() * reference_positions_[i];
        max_disp2 = std::max(max_disp2, (config.positions[i] - expected).squaredNorm());
    }
    return 2.0 * std::sqrt(max_disp2) + strain * (cutoff_ + skin_) > skin_;
}

}  // namespace alloop
