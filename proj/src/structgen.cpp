#include "alloop/structgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "alloop/core/error.hpp"
#include "alloop/core/extxyz.hpp"
#include "alloop/core/geometry.hpp"
#include "alloop/core/random.hpp"
#include "alloop/core/units.hpp"
#include "alloop/md.hpp"

namespace alloop::structgen {

namespace {

// Fractional coordinates wrapped into [0, 1) with values within 1e-9 of 1
// folded to 0, so lattice sites built at exact fractions stay put.
Vec3 wrap_fractional(const Vec3& frac, const std::array<bool, 3>& periodic) {
    Vec3 f = frac;
    for (int a = 0; a < 3; ++a) {
        if (!periodic[static_cast<std::size_t>(a)]) continue;
        f[a] -= std::floor(f[a]);
        if (f[a] > 1.0 - 1e-9) f[a] = 0.0;
    }
    return f;
}

std::vector<Vec3> fractional(const AtomicConfiguration& c) {
    const Mat3 inv = c.cell.inverse();
    std::vector<Vec3> out;
    out.reserve(c.size());
    for (const auto& p : c.positions) out.push_back(wrap_fractional(inv.transpose() * p, c.periodic));
    return out;
}

bool perpendicular_c(const Mat3& cell) {
    const double tol = 1e-8 * cell.norm();
    return std::abs(cell(0, 2)) < tol && std::abs(cell(1, 2)) < tol && std::abs(cell(2, 0)) < tol &&
           std::abs(cell(2, 1)) < tol;
}

}  // namespace

AtomicConfiguration build_solid(const std::string& lattice, double a0, const std::vector<std::string>& species,
                                std::array<int, 3> reps) {
    if (!(a0 > 0.0)) throw ConfigurationError("lattice constant must be positive");
    for (int r : reps)
        if (r < 1) throw ConfigurationError("repetitions must be at least 1");
    std::vector<Vec3> basis;
    std::vector<std::string> sites;
    if (lattice == "fcc" || lattice == "bcc") {
        if (lattice == "fcc")
            basis = {{0, 0, 0}, {0.5, 0.5, 0}, {0.5, 0, 0.5}, {0, 0.5, 0.5}};
        else
            basis = {{0, 0, 0}, {0.5, 0.5, 0.5}};
        if (species.size() == 1)
            sites.assign(basis.size(), species[0]);
        else if (species.size() == basis.size())
            sites = species;
        else
            throw ConfigurationError(lattice + " needs 1 or " + std::to_string(basis.size()) + " species");
    } else if (lattice == "rocksalt") {
        if (species.size() != 2) throw ConfigurationError("rocksalt needs exactly 2 species");
        basis = {{0, 0, 0}, {0.5, 0.5, 0}, {0.5, 0, 0.5}, {0, 0.5, 0.5},
                 {0.5, 0, 0}, {0, 0.5, 0}, {0, 0, 0.5}, {0.5, 0.5, 0.5}};
        sites = {species[0], species[0], species[0], species[0], species[1], species[1], species[1], species[1]};
    } else {
        throw ConfigurationError("unknown lattice '" + lattice + "'");
    }
    AtomicConfiguration c;
    c.cell = Mat3::Zero();
    for (int a = 0; a < 3; ++a) c.cell(a, a) = a0 * reps[static_cast<std::size_t>(a)];
    c.periodic = {true, true, true};
    for (int i = 0; i < reps[0]; ++i)
        for (int j = 0; j < reps[1]; ++j)
            for (int k = 0; k < reps[2]; ++k)
                for (std::size_t b = 0; b < basis.size(); ++b) {
                    c.species.push_back(sites[b]);
                    c.positions.push_back(a0 * (Vec3(i, j, k) + basis[b]));
                }
    return c;
}

AtomicConfiguration build_packed(const std::vector<std::pair<std::string, int>>& counts, double density,
                                 const MassTable& masses, std::uint64_t seed, const PackOptions& options) {
    if (!(density > 0.0)) throw ConfigurationError("target density must be positive");
    std::vector<std::string> atoms;
    double mass = 0.0;
    for (const auto& [s, n] : counts) {
        if (n < 0) throw ConfigurationError("negative count for " + s);
        auto it = masses.find(s);
        if (it == masses.end()) throw ConfigurationError("no mass for species " + s);
        for (int k = 0; k < n; ++k) atoms.push_back(s);
        mass += it->second * n;
    }
    if (atoms.empty()) throw ConfigurationError("packed structure needs at least one atom");
    const double volume = mass * units::kAmuPerA3ToGPerCm3 / density;
    Vec3 len;
    if (options.lateral) {
        len = {options.lateral->first, options.lateral->second, 0.0};
        if (!(len[0] > 0.0 && len[1] > 0.0)) throw ConfigurationError("lateral dimensions must be positive");
        len[2] = volume / (len[0] * len[1]);
    } else {
        const double l = std::cbrt(volume);
        len = {l, l, l};
    }
    const double n = static_cast<double>(atoms.size());
    const double r = options.min_separation / 2.0;
    const double fraction = n / volume * 4.0 / 3.0 * M_PI * r * r * r;
    if (atoms.size() > 1 && fraction > 0.64)
        throw PackingError("density requires packing fraction " + std::to_string(fraction) +
                           " above the random close packing bound 0.64 (achieved 0/" + std::to_string(atoms.size()) + ")");

    AtomicConfiguration c;
    c.cell = len.asDiagonal();
    c.periodic = {true, true, true};
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double min2 = options.min_separation * options.min_separation;
    for (std::size_t a = 0; a < atoms.size(); ++a) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < options.max_attempts && !placed; ++attempt) {
            const Vec3 p(u(rng) * len[0], u(rng) * len[1], u(rng) * len[2]);
            bool ok = true;
            for (const auto& q : c.positions) {
                Vec3 d = p - q;
                for (int k = 0; k < 3; ++k) d[k] -= len[k] * std::round(d[k] / len[k]);
                if (d.squaredNorm() < min2) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                c.species.push_back(atoms[a]);
                c.positions.push_back(p);
                placed = true;
            }
        }
        if (!placed)
            throw PackingError("random insertion failed after " + std::to_string(options.max_attempts) +
                               " attempts; achieved fraction " +
                               std::to_string(static_cast<double>(a) / n) + " (" + std::to_string(a) + "/" +
                               std::to_string(atoms.size()) + ")");
    }
    return c;
}

AtomicConfiguration build_slab(const AtomicConfiguration& bulk, int axis, double vacuum) {
    if (axis < 0 || axis > 2) throw ConfigurationError("slab axis must be 0, 1 or 2");
    if (!(vacuum > 0.0)) throw ConfigurationError("vacuum must be positive");
    if (!bulk.periodic[static_cast<std::size_t>(axis)]) throw ConfigurationError("bulk must be periodic on the slab axis");
    auto frac = fractional(bulk);
    AtomicConfiguration s = bulk;
    const double len = bulk.cell.row(axis).norm();
    const double scale = (len + vacuum) / len;
    s.cell.row(axis) *= scale;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& f : frac) {
        lo = std::min(lo, f[axis]);
        hi = std::max(hi, f[axis]);
    }
    // Center the occupied band inside the enlarged cell.
    const double center_old = 0.5 * (lo + hi) / scale;
    const double shift = 0.5 - center_old;
    for (std::size_t i = 0; i < s.size(); ++i) {
        Vec3 f = frac[i];
        f[axis] = f[axis] / scale + shift;
        s.positions[i] = s.cell.transpose() * f;
    }
    s.velocities.reset();
    return s;
}

AtomicConfiguration build_stack(const AtomicConfiguration& lower, const AtomicConfiguration& upper, double gap,
                                double lateral_strain_tol) {
    if (!(gap > 0.0)) throw ConfigurationError("stack gap must be positive");
    if (!lower.fully_periodic() || !upper.fully_periodic()) throw ConfigurationError("stack layers must be periodic");
    if (!perpendicular_c(lower.cell) || !perpendicular_c(upper.cell))
        throw ConfigurationError("stack layers need the third cell vector perpendicular to the first two");
    double strain = 0.0;
    for (int a = 0; a < 2; ++a)
        strain = std::max(strain, std::abs(upper.cell.row(a).norm() / lower.cell.row(a).norm() - 1.0));
    if (strain > lateral_strain_tol) {
        std::ostringstream msg;
        msg << "lateral mismatch strain " << strain << " exceeds tolerance " << lateral_strain_tol;
        throw LatticeMismatchError(msg.str());
    }
    const auto fl = fractional(lower);
    const auto fu = fractional(upper);
    const double hl = lower.cell(2, 2), hu = upper.cell(2, 2);
    auto extent = [](const std::vector<Vec3>& f, double h) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& x : f) {
            lo = std::min(lo, x[2] * h);
            hi = std::max(hi, x[2] * h);
        }
        return std::pair{lo, hi};
    };
    const auto [l_lo, l_hi] = extent(fl, hl);
    const auto [u_lo, u_hi] = extent(fu, hu);

    AtomicConfiguration s;
    s.cell = lower.cell;
    s.cell(2, 2) = (l_hi - l_lo) + gap + (u_hi - u_lo) + gap;
    s.periodic = {true, true, true};
    const Vec3 a = lower.cell.row(0).transpose(), b = lower.cell.row(1).transpose();

    std::vector<std::string> tags;
    std::set<std::string> used;
    for (std::size_t i = 0; i < lower.size(); ++i) {
        s.species.push_back(lower.species[i]);
        s.positions.push_back(fl[i][0] * a + fl[i][1] * b + Vec3(0, 0, fl[i][2] * hl - l_lo));
        const std::string t = lower.region_tags ? (*lower.region_tags)[i] : "lower";
        tags.push_back(t);
        used.insert(t);
    }
    std::map<std::string, std::string> rename;
    auto fresh = [&](const std::string& base) {
        if (!used.count(base)) return base;
        for (int k = 2;; ++k) {
            std::string cand = base + "_" + std::to_string(k);
            if (!used.count(cand)) return cand;
        }
    };
    const double z0 = (l_hi - l_lo) + gap;
    for (std::size_t i = 0; i < upper.size(); ++i) {
        s.species.push_back(upper.species[i]);
        s.positions.push_back(fu[i][0] * a + fu[i][1] * b + Vec3(0, 0, z0 + fu[i][2] * hu - u_lo));
        const std::string t = upper.region_tags ? (*upper.region_tags)[i] : "upper";
        auto it = rename.find(t);
        if (it == rename.end()) it = rename.emplace(t, fresh(t)).first;
        tags.push_back(it->second);
    }
    s.region_tags = tags;
    return s;
}

AtomicConfiguration build_cluster(const AtomicConfiguration& solid, double radius, double vacuum) {
    if (!(radius > 0.0) || !(vacuum > 0.0)) throw ConfigurationError("cluster radius and vacuum must be positive");
    const auto frac = fractional(solid);
    const Vec3 center = solid.cell.transpose() * Vec3(0.5, 0.5, 0.5);
    const double side = 2.0 * radius + vacuum;
    AtomicConfiguration c;
    c.cell = Mat3::Identity() * side;
    c.periodic = {true, true, true};
    for (std::size_t i = 0; i < solid.size(); ++i) {
        const Vec3 p = solid.cell.transpose() * frac[i];
        if ((p - center).norm() <= radius) {
            c.species.push_back(solid.species[i]);
            c.positions.push_back(p - center + Vec3::Constant(side / 2.0));
        }
    }
    if (c.positions.empty()) throw ConfigurationError("cluster radius selects no atoms");
    return c;
}

ValidationReport validate_structure(const AtomicConfiguration& config, double min_separation, const MassTable& masses) {
    ValidationReport rep;
    rep.min_distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < config.size(); ++i)
        for (std::size_t j = i + 1; j < config.size(); ++j)
            rep.min_distance = std::min(
                rep.min_distance, min_image_distance(config.cell, config.periodic, config.positions[i], config.positions[j]));
    if (config.fully_periodic() && !masses.empty()) {
        bool known = true;
        for (const auto& s : config.species_set()) known = known && masses.count(s);
        if (known) rep.density = total_mass(config, masses) / config.volume() * units::kAmuPerA3ToGPerCm3;
    }
    rep.pass = rep.min_distance >= min_separation;
    return rep;
}

// ---------------------------------------------------------------------------
// Task specification

bool is_valid_kind(const std::string& kind) {
    static const std::set<std::string> kinds = {"solid",   "amorphous",   "molecule_liquid", "solid_surface",
                                                "cluster", "solid_solid", "solid_liquid",    "multilayer"};
    return kinds.count(kind) > 0;
}

std::vector<std::string> TaskSpec::missing_fields() const {
    std::vector<std::string> out;
    if (system.empty()) out.push_back("system");
    if (categories.empty()) out.push_back("categories");
    if (!(temperature_range.first > 0.0 && temperature_range.second >= temperature_range.first))
        out.push_back("temperature_range");
    if (ensembles.empty()) out.push_back("ensembles");
    if (masses.empty()) out.push_back("masses");
    if (oracle.is_null() || oracle.empty()) out.push_back("oracle");
    return out;
}

void TaskSpec::validate() const {
    auto missing = missing_fields();
    if (!missing.empty()) {
        std::string msg = "task specification is incomplete; missing:";
        for (const auto& m : missing) msg += " " + m;
        throw ValidationError(msg);
    }
    std::set<std::string> names;
    for (const auto& c : categories) {
        if (c.name.empty()) throw ValidationError("category without a name");
        if (!names.insert(c.name).second) throw ValidationError("duplicate category name " + c.name);
        if (!is_valid_kind(c.kind)) throw ValidationError("category " + c.name + " has unknown kind '" + c.kind + "'");
        if (c.variants < 1) throw ValidationError("category " + c.name + " needs at least 1 variant");
    }
    if (!(min_separation > 0.0)) throw ValidationError("min_separation must be positive");
}

json TaskSpec::to_json() const {
    json cats = json::array();
    for (const auto& c : categories)
        cats.push_back({{"name", c.name}, {"kind", c.kind}, {"variants", c.variants}, {"params", c.params}});
    return {{"system", system},
            {"categories", cats},
            {"temperature_range", {temperature_range.first, temperature_range.second}},
            {"ensembles", ensembles},
            {"masses", masses},
            {"oracle", oracle},
            {"targets", targets},
            {"min_separation", min_separation},
            {"max_atoms", max_atoms},
            {"jitter", {{"density", jitter.density}, {"reps", jitter.reps}, {"gap", jitter.gap}}},
            {"complete", complete}};
}

TaskSpec TaskSpec::from_json(const json& j) {
    TaskSpec t;
    t.system = j.value("system", "");
    if (j.contains("categories"))
        for (const auto& c : j.at("categories")) {
            CategorySpec cs;
            cs.name = c.value("name", "");
            cs.kind = c.value("kind", "");
            cs.variants = c.value("variants", 6);
            cs.params = c.value("params", json::object());
            t.categories.push_back(cs);
        }
    if (j.contains("temperature_range")) {
        const auto& r = j.at("temperature_range");
        if (!r.is_array() || r.size() != 2) throw ValidationError("temperature_range must be [low, high]");
        t.temperature_range = {r[0].get<double>(), r[1].get<double>()};
    }
    t.ensembles = j.value("ensembles", std::vector<std::string>{});
    if (j.contains("masses")) t.masses = j.at("masses").get<MassTable>();
    t.oracle = j.value("oracle", json());
    t.targets = j.value("targets", json::object());
    t.min_separation = j.value("min_separation", 1.0);
    t.max_atoms = j.value("max_atoms", std::size_t{0});
    if (j.contains("jitter")) {
        const auto& jj = j.at("jitter");
        t.jitter.density = jj.value("density", t.jitter.density);
        t.jitter.reps = jj.value("reps", t.jitter.reps);
        t.jitter.gap = jj.value("gap", t.jitter.gap);
    }
    t.complete = t.missing_fields().empty();
    return t;
}

TaskSpec TaskSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read task specification " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw ValidationError("task specification " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Builders from parameters

namespace {

std::array<int, 3> reps_of(const json& p) {
    auto v = p.at("reps").get<std::vector<int>>();
    if (v.size() != 3) throw ConfigurationError("reps must have 3 entries");
    return {v[0], v[1], v[2]};
}

std::vector<std::pair<std::string, int>> counts_of(const json& p) {
    std::vector<std::pair<std::string, int>> out;
    for (const auto& [s, n] : p.at("counts").items()) out.emplace_back(s, n.get<int>());
    return out;
}

AtomicConfiguration solid_from(const json& p) {
    return build_solid(p.at("lattice").get<std::string>(), p.at("a0").get<double>(),
                       p.at("species").get<std::vector<std::string>>(), reps_of(p));
}

AtomicConfiguration packed_from(const json& p, const MassTable& masses, std::uint64_t seed,
                                std::optional<std::pair<double, double>> lateral) {
    PackOptions opt;
    opt.min_separation = p.value("min_separation", opt.min_separation);
    opt.max_attempts = p.value("max_attempts", opt.max_attempts);
    opt.lateral = lateral;
    return build_packed(counts_of(p), p.at("density").get<double>(), masses, seed, opt);
}

AtomicConfiguration layer_from(const json& layer, const MassTable& masses, std::uint64_t seed,
                               const AtomicConfiguration* below) {
    const std::string kind = layer.at("kind").get<std::string>();
    if (kind == "solid") return solid_from(layer);
    if (kind == "amorphous" || kind == "molecule_liquid") {
        std::optional<std::pair<double, double>> lateral;
        if (below) lateral = std::pair{below->cell.row(0).norm(), below->cell.row(1).norm()};
        return packed_from(layer, masses, seed, lateral);
    }
    throw ConfigurationError("layer kind '" + kind + "' is not stackable");
}

}  // namespace

AtomicConfiguration build_from_params(const std::string& kind, const json& p, const MassTable& masses,
                                      std::uint64_t seed) {
    if (kind == "solid") return solid_from(p);
    if (kind == "amorphous" || kind == "molecule_liquid") return packed_from(p, masses, seed, std::nullopt);
    if (kind == "solid_surface") return build_slab(solid_from(p), p.value("axis", 2), p.at("vacuum").get<double>());
    if (kind == "cluster")
        return build_cluster(solid_from(p), p.at("radius").get<double>(), p.at("vacuum").get<double>());
    if (kind == "solid_solid" || kind == "solid_liquid" || kind == "multilayer") {
        const auto& layers = p.at("layers");
        if (layers.size() < 2) throw ConfigurationError(kind + " needs at least 2 layers");
        const double gap = p.at("gap").get<double>();
        const double tol = p.value("strain_tol", 0.02);
        AtomicConfiguration base = layer_from(layers[0], masses, derive_seed(seed, "layer:0"), nullptr);
        for (std::size_t k = 1; k < layers.size(); ++k) {
            AtomicConfiguration next = layer_from(layers[k], masses, derive_seed(seed, "layer:" + std::to_string(k)), &base);
            base = build_stack(base, next, gap, tol);
        }
        return base;
    }
    throw ConfigurationError("unknown structure kind '" + kind + "'");
}

namespace {

// Applies the variant jitter rules to a parameter document in place.
void jitter_params(json& p, const Jitter& jit, Rng& rng, bool in_stack) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> r(-jit.reps, jit.reps);
    if (p.contains("density")) p["density"] = p["density"].get<double>() * (1.0 + jit.density * u(rng));
    if (p.contains("reps")) {
        auto v = p["reps"].get<std::vector<int>>();
        for (std::size_t a = in_stack ? 2 : 0; a < 3; ++a) v[a] = std::max(1, v[a] + r(rng));
        p["reps"] = v;
    }
    if (p.contains("gap")) p["gap"] = std::max(0.5, p["gap"].get<double>() + jit.gap * u(rng));
    if (p.contains("layers"))
        for (auto& layer : p["layers"]) jitter_params(layer, jit, rng, true);
}

}  // namespace

InitialSet generate_initial_set(const TaskSpec& task, std::uint64_t seed, const PairForceField* relax_with) {
    task.validate();
    InitialSet set;
    for (const auto& cat : task.categories) {
        std::vector<json> seen;
        for (int k = 0; k < cat.variants; ++k) {
            const std::string id = cat.name + "_" + std::to_string(k);
            json params = cat.params;
            AtomicConfiguration c;
            Rng rng = make_rng(seed, "variant:" + cat.name + ":" + std::to_string(k));
            for (int attempt = 0;; ++attempt) {
                if (k > 0) {
                    params = cat.params;
                    jitter_params(params, task.jitter, rng, false);
                    if (std::find(seen.begin(), seen.end(), params) != seen.end() && attempt < 99) continue;
                }
                try {
                    c = build_from_params(cat.kind, params, task.masses, derive_seed(seed, "build:" + id));
                } catch (const Error& e) {
                    throw SetupError("plan " + cat.name + " variant " + std::to_string(k) + ": " + e.what());
                }
                if (task.max_atoms == 0 || c.size() <= task.max_atoms) break;
                if (k == 0 || attempt >= 99)
                    throw SetupError("plan " + cat.name + " variant " + std::to_string(k) + ": " +
                                     std::to_string(c.size()) + " atoms exceeds max_atoms " +
                                     std::to_string(task.max_atoms));
            }
            seen.push_back(params);
            if (relax_with) c = md::relax(c, *relax_with).config;
            c.structure_id = id;
            c.is_validation = k == 0;
            const auto rep = validate_structure(c, task.min_separation, task.masses);
            if (!rep.pass)
                throw SetupError("plan " + cat.name + " variant " + std::to_string(k) + ": min distance " +
                                 std::to_string(rep.min_distance) + " below " + std::to_string(task.min_separation));
            json desc = params;
            desc["kind"] = cat.kind;
            set.descriptions.push_back({id, cat.name, cat.kind, desc, k == 0});
            set.structures.push_back(std::move(c));
        }
    }
    return set;
}

void write_initial_set(const std::filesystem::path& dir, const InitialSet& set) {
    std::filesystem::create_directories(dir);
    std::ofstream desc(dir / "init_structure_description.txt", std::ios::trunc);
    if (!desc) throw WorkspaceError("cannot write structure descriptions in " + dir.string());
    for (std::size_t i = 0; i < set.structures.size(); ++i) {
        const auto& d = set.descriptions[i];
        extxyz::write_file(dir / (d.id + ".extxyz"), std::vector<AtomicConfiguration>{set.structures[i]});
        desc << d.id << '\t' << d.category << '\t' << d.params.dump() << '\t' << "validation=" << (d.validation ? 1 : 0)
             << '\n';
    }
}

InitialSet read_initial_set(const std::filesystem::path& dir) {
    std::ifstream in(dir / "init_structure_description.txt");
    if (!in) throw WorkspaceError("missing " + (dir / "init_structure_description.txt").string());
    InitialSet set;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 4 || cols[3].rfind("validation=", 0) != 0)
            throw ParseError(lineno, "description line needs 4 tab-separated columns");
        StructureDescription d;
        d.id = cols[0];
        d.category = cols[1];
        d.params = json::parse(cols[2]);
        d.kind = d.params.value("kind", "");
        d.validation = cols[3] == "validation=1";
        auto frames = extxyz::read_file(dir / (d.id + ".extxyz"));
        if (frames.size() != 1) throw WorkspaceError("structure file for " + d.id + " must hold one frame");
        set.structures.push_back(extxyz::config_of(frames[0]));
        set.descriptions.push_back(d);
    }
    return set;
}

}  // namespace alloop::structgen
