#include "alloop/forcefield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "alloop/core/error.hpp"

namespace alloop {

int PairForceField::species_index(const std::string& s) const {
    const auto& sp = species();
    auto it = std::find(sp.begin(), sp.end(), s);
    return it == sp.end() ? -1 : static_cast<int>(it - sp.begin());
}

std::vector<int> PairForceField::map_species(const std::vector<std::string>& atoms) const {
    std::vector<int> out;
    out.reserve(atoms.size());
    for (const auto& s : atoms) {
        int idx = species_index(s);
        if (idx < 0) throw PredictionError("species " + s + " is not covered by " + id());
        out.push_back(idx);
    }
    return out;
}

TabulatedForceField::TabulatedForceField(const PairForceField& source, double spacing)
    : id_(source.id()), cutoff_(source.cutoff()), species_(source.species()) {
    if (!(spacing > 0.0)) throw ConfigurationError("table spacing must be positive");
    const auto nodes = static_cast<std::size_t>(std::ceil(cutoff_ / spacing)) + 1;
    h_ = cutoff_ / static_cast<double>(nodes - 1);
    const std::size_t n = species_.size();
    for (std::size_t s = 0; s < n; ++s) atom_energy_.push_back(source.atom_energy(static_cast<int>(s)));
    v_.assign(n * n, std::vector<double>(nodes, 0.0));
    dv_.assign(n * n, std::vector<double>(nodes, 0.0));
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t k = 0; k + 1 < nodes; ++k)
                source.pair(static_cast<int>(a), static_cast<int>(b), static_cast<double>(k) * h_, v_[a * n + b][k],
                            dv_[a * n + b][k]);
    // The last node sits on the cutoff, where pair terms are zero.
}

void TabulatedForceField::pair(int si, int sj, double r, double& v, double& dv) const {
    const std::size_t idx = static_cast<std::size_t>(si) * species_.size() + static_cast<std::size_t>(sj);
    const auto& tv = v_[idx];
    const auto& td = dv_[idx];
    const double x = r / h_;
    auto k = static_cast<std::size_t>(x);
    if (k + 1 >= tv.size()) {
        v = dv = 0.0;
        return;
    }
    const double t = x - static_cast<double>(k);
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    v = h00 * tv[k] + h10 * h_ * td[k] + h01 * tv[k + 1] + h11 * h_ * td[k + 1];
    const double d00 = 6 * t2 - 6 * t, d10 = 3 * t2 - 4 * t + 1, d01 = -6 * t2 + 6 * t, d11 = 3 * t2 - 2 * t;
    dv = (d00 * tv[k] + d01 * tv[k + 1]) / h_ + d10 * td[k] + d11 * td[k + 1];
}

namespace {

void accumulate_pair(const PairForceField& ff, const std::vector<int>& types, std::size_t i, std::size_t j,
                     const Vec3& d, double r, ForceEvaluation& out) {
    double v = 0.0, dv = 0.0;
    ff.pair(types[i], types[j], r, v, dv);
    out.energy += v;
    // Force on j is -dV/dr along d/r; i receives the opposite.
    const Vec3 f = (-dv / r) * d;
    out.forces[j] += f;
    out.forces[i] -= f;
    out.virial += -dv * r;
    out.min_distance = std::min(out.min_distance, r);
}

ForceEvaluation start(const PairForceField& ff, const std::vector<int>& types) {
    ForceEvaluation out;
    out.forces.assign(types.size(), Vec3::Zero());
    out.min_distance = std::numeric_limits<double>::infinity();
    for (int t : types) out.energy += ff.atom_energy(t);
    return out;
}

}  // namespace

ForceEvaluation evaluate(const PairForceField& ff, const AtomicConfiguration& config, const std::vector<int>& types,
                         const NeighborList& list) {
    ForceEvaluation out = start(ff, types);
    const double rc = ff.cutoff();
    const double rc2 = rc * rc;
    const Vec3 c0 = config.cell.row(0).transpose();
    const Vec3 c1 = config.cell.row(1).transpose();
    const Vec3 c2 = config.cell.row(2).transpose();
    for (const auto& e : list.entries()) {
        Vec3 d = config.positions[e.j] - config.positions[e.i];
        if (e.shift[0] | e.shift[1] | e.shift[2])
            d += static_cast<double>(e.shift[0]) * c0 + static_cast<double>(e.shift[1]) * c1 +
                 static_cast<double>(e.shift[2]) * c2;
        const double r2 = d.squaredNorm();
        if (r2 >= rc2) continue;
        accumulate_pair(ff, types, e.i, e.j, d, std::sqrt(r2), out);
    }
    return out;
}

ForceEvaluation evaluate(const PairForceField& ff, const AtomicConfiguration& config) {
    const auto types = ff.map_species(config.species);
    ForceEvaluation out = start(ff, types);
    if (config.size() == 0) return out;
    for (const auto& p : neighbor_pairs(config, ff.cutoff())) accumulate_pair(ff, types, p.i, p.j, p.displacement, p.distance, out);
    return out;
}

}  // namespace alloop
