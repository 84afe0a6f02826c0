#include "alloop/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "alloop/core/error.hpp"
#include "alloop/core/parallel.hpp"
#include "alloop/core/random.hpp"

namespace alloop::oracle {

SpeciesPair make_pair_key(const std::string& a, const std::string& b) {
    return a <= b ? SpeciesPair{a, b} : SpeciesPair{b, a};
}

namespace {

std::string kind_name(Kind k) { return k == Kind::LennardJones ? "lennard_jones" : "morse"; }

std::string pair_name(const SpeciesPair& p) { return p.first + "-" + p.second; }

SpeciesPair parse_pair_name(const std::string& s) {
    auto dash = s.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 >= s.size())
        throw ConfigurationError("pair key '" + s + "' must look like A-B");
    return make_pair_key(s.substr(0, dash), s.substr(dash + 1));
}

}  // namespace

void pair_potential(Kind kind, const PairParams& p, double r, double& v, double& dv) {
    if (kind == Kind::LennardJones) {
        const double sr = p.p1 / r;
        const double sr2 = sr * sr;
        const double sr6 = sr2 * sr2 * sr2;
        const double sr12 = sr6 * sr6;
        v = 4.0 * p.p0 * (sr12 - sr6);
        dv = -24.0 * p.p0 * (2.0 * sr12 - sr6) / r;
    } else {
        const double e = std::exp(-p.p1 * (r - p.p2));
        v = p.p0 * ((1.0 - e) * (1.0 - e) - 1.0);
        dv = 2.0 * p.p0 * p.p1 * e * (1.0 - e);
    }
}

OracleSpec OracleSpec::resolved(const std::vector<std::string>& species) const {
    OracleSpec out = *this;
    std::set<std::string> uniq(species.begin(), species.end());
    std::vector<std::string> sp(uniq.begin(), uniq.end());
    for (std::size_t a = 0; a < sp.size(); ++a)
        for (std::size_t b = a; b < sp.size(); ++b) {
            const auto key = make_pair_key(sp[a], sp[b]);
            if (out.pairs.count(key)) continue;
            auto pa = out.pairs.find(make_pair_key(sp[a], sp[a]));
            auto pb = out.pairs.find(make_pair_key(sp[b], sp[b]));
            if (a == b || pa == out.pairs.end() || pb == out.pairs.end())
                throw LabelingError("no oracle parameters for species pair " + pair_name(key));
            PairParams m;
            if (kind == Kind::LennardJones) {
                m.p0 = std::sqrt(pa->second.p0 * pb->second.p0);
                m.p1 = 0.5 * (pa->second.p1 + pb->second.p1);
            } else {
                m.p0 = std::sqrt(pa->second.p0 * pb->second.p0);
                m.p1 = 0.5 * (pa->second.p1 + pb->second.p1);
                m.p2 = 0.5 * (pa->second.p2 + pb->second.p2);
            }
            out.pairs[key] = m;
            out.mixed.push_back(key);
        }
    if (kind == Kind::LennardJones) {
        double max_sigma = 0.0;
        for (const auto& [k, p] : out.pairs) max_sigma = std::max(max_sigma, p.p1);
        if (out.cutoff < 2.0 * max_sigma)
            throw ConfigurationError("LJ cutoff " + std::to_string(out.cutoff) + " is below 2*sigma_max = " +
                                     std::to_string(2.0 * max_sigma));
    }
    return out;
}

json OracleSpec::to_json() const {
    json pj = json::object();
    for (const auto& [k, p] : pairs) {
        if (kind == Kind::LennardJones)
            pj[pair_name(k)] = {{"epsilon", p.p0}, {"sigma", p.p1}};
        else
            pj[pair_name(k)] = {{"D_e", p.p0}, {"alpha", p.p1}, {"r_e", p.p2}};
    }
    json j = {{"kind", kind_name(kind)}, {"pairs", pj}, {"cutoff", cutoff}, {"shift", shift}};
    if (force_shift) j["force_shift"] = true;
    if (!mixed.empty()) {
        json m = json::array();
        for (const auto& k : mixed) m.push_back(pair_name(k));
        j["mixed"] = m;
    }
    return j;
}

OracleSpec OracleSpec::from_json(const json& j) {
    OracleSpec s;
    const std::string kind = j.value("kind", "lennard_jones");
    if (kind == "lennard_jones" || kind == "lj") s.kind = Kind::LennardJones;
    else if (kind == "morse") s.kind = Kind::Morse;
    else throw ConfigurationError("unknown oracle kind '" + kind + "'");
    s.cutoff = j.value("cutoff", 5.0);
    s.shift = j.value("shift", true);
    s.force_shift = j.value("force_shift", false);
    if (!(s.cutoff > 0.0)) throw ConfigurationError("oracle cutoff must be positive");
    for (const auto& [name, p] : j.at("pairs").items()) {
        PairParams pp;
        if (s.kind == Kind::LennardJones) {
            pp.p0 = p.at("epsilon").get<double>();
            pp.p1 = p.at("sigma").get<double>();
            if (!(pp.p0 > 0.0 && pp.p1 > 0.0)) throw ConfigurationError("LJ parameters must be positive for " + name);
        } else {
            pp.p0 = p.at("D_e").get<double>();
            pp.p1 = p.at("alpha").get<double>();
            pp.p2 = p.at("r_e").get<double>();
            if (!(pp.p0 > 0.0 && pp.p1 > 0.0 && pp.p2 > 0.0))
                throw ConfigurationError("Morse parameters must be positive for " + name);
        }
        s.pairs[parse_pair_name(name)] = pp;
    }
    if (j.contains("mixed"))
        for (const auto& m : j.at("mixed")) s.mixed.push_back(parse_pair_name(m.get<std::string>()));
    return s;
}

std::string OracleSpec::identity() const {
    json j = to_json();
    j.erase("mixed");
    return "oracle:" + kind_name(kind) + ":" + short_id(derive_seed(0, j.dump())).substr(0, 8);
}

OracleSpec OracleSpec::default_lj() {
    OracleSpec s;
    s.kind = Kind::LennardJones;
    s.pairs[make_pair_key("Ar", "Ar")] = {0.0104, 3.40, 0.0};
    s.cutoff = 8.5;
    s.shift = true;
    return s;
}

OracleForceField::OracleForceField(const OracleSpec& spec, std::vector<std::string> species)
    : species_(std::move(species)) {
    std::sort(species_.begin(), species_.end());
    species_.erase(std::unique(species_.begin(), species_.end()), species_.end());
    spec_ = spec.resolved(species_);
    const std::size_t n = species_.size();
    table_.resize(n * n);
    shift_.assign(n * n, 0.0);
    slope_.assign(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            const auto& p = spec_.pairs.at(make_pair_key(species_[a], species_[b]));
            table_[a * n + b] = p;
            double v = 0.0, dv = 0.0;
            pair_potential(spec_.kind, p, spec_.cutoff, v, dv);
            if (spec_.shift || spec_.force_shift) shift_[a * n + b] = v;
            if (spec_.force_shift) slope_[a * n + b] = dv;
        }
    id_ = spec_.identity();
}

void OracleForceField::pair(int si, int sj, double r, double& v, double& dv) const {
    const std::size_t k = static_cast<std::size_t>(si) * species_.size() + static_cast<std::size_t>(sj);
    pair_potential(spec_.kind, table_[k], r, v, dv);
    v -= shift_[k] + (r - spec_.cutoff) * slope_[k];
    dv -= slope_[k];
}

LabeledFrame oracle_energy_forces(const AtomicConfiguration& config, const OracleSpec& spec) {
    OracleForceField ff(spec, config.species_set());
    ForceEvaluation ev = evaluate(ff, config);
    return LabeledFrame::make(config, ev.energy, std::move(ev.forces), ff.id());
}

Dataset label_frames(const std::vector<AtomicConfiguration>& frames, const OracleSpec& spec,
                     const std::string& dataset_id, std::size_t workers) {
    if (frames.empty()) throw PreconditionError("label_frames needs at least one frame");
    Dataset ds;
    ds.dataset_id = dataset_id;
    ds.frames.resize(frames.size());
    parallel_for(frames.size(), workers, [&](std::size_t i) {
        try {
            ds.frames[i] = oracle_energy_forces(frames[i], spec);
        } catch (const Error& e) {
            throw LabelingError("frame " + std::to_string(i) + ": " + e.what());
        }
    });
    ds.recompute_stats();
    return ds;
}

}  // namespace alloop::oracle
