#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "alloop/core/report.hpp"
#include "alloop/core/types.hpp"
#include "alloop/forcefield.hpp"

namespace alloop::structgen {

// Periodic supercell of an fcc, bcc or rocksalt lattice. `species` holds one
// element for fcc/bcc (or one per basis site) and two for rocksalt (cation,
// anion). Throws ConfigurationError for an unknown lattice or bad counts.
AtomicConfiguration build_solid(const std::string& lattice, double a0, const std::vector<std::string>& species,
                                std::array<int, 3> reps);

struct PackOptions {
    double min_separation = 2.0;  // A
    std::size_t max_attempts = 2000;  // per atom
    // In-plane cell lengths; the height then follows from the density.
    std::optional<std::pair<double, double>> lateral;
};

// Random sequential insertion into an orthorhombic periodic cell sized from
// the target density (g/cm^3). Throws PackingError (with the achieved
// fraction) when insertion fails or the density is geometrically infeasible.
AtomicConfiguration build_packed(const std::vector<std::pair<std::string, int>>& counts, double density,
                                 const MassTable& masses, std::uint64_t seed, const PackOptions& options = {});

// Extends the cell by `vacuum` along `axis` and centers the atoms in it.
AtomicConfiguration build_slab(const AtomicConfiguration& bulk, int axis, double vacuum);

// Places `upper` above `lower` along z with `gap` between the closest atomic
// planes (also across the periodic seam). The upper cell is strained in-plane
// onto the lower one; a mismatch above lateral_strain_tol throws
// LatticeMismatchError. Untagged atoms get region tags "lower"/"upper";
// colliding upper tags get a numeric suffix.
AtomicConfiguration build_stack(const AtomicConfiguration& lower, const AtomicConfiguration& upper, double gap,
                                double lateral_strain_tol = 0.02);

// Sphere of the given radius cut from a solid, centered in a cubic box with
// `vacuum` around it.
AtomicConfiguration build_cluster(const AtomicConfiguration& solid, double radius, double vacuum);

struct ValidationReport {
    double min_distance = 0.0;
    std::optional<double> density;  // g/cm^3, periodic cells with known masses
    bool pass = false;
};

// Exhaustive minimum interatomic distance (periodic self-images excluded).
ValidationReport validate_structure(const AtomicConfiguration& config, double min_separation,
                                    const MassTable& masses = {});

// ---------------------------------------------------------------------------
// Task specification and initial set

struct CategorySpec {
    std::string name;  // label used for attribution, e.g. "solid_A"
    std::string kind;  // solid, amorphous, molecule_liquid, solid_surface, cluster, solid_solid, solid_liquid, multilayer
    int variants = 6;
    json params = json::object();
};

struct Jitter {
    double density = 0.10;  // relative
    int reps = 1;
    double gap = 0.5;  // A
};

struct TaskSpec {
    std::string system;
    std::vector<CategorySpec> categories;
    std::pair<double, double> temperature_range{0.0, 0.0};
    std::vector<std::string> ensembles;
    MassTable masses;
    json oracle;  // oracle specification document
    json targets = json::object();  // rdf_pairs, diffusion_species
    double min_separation = 1.0;
    std::size_t max_atoms = 0;  // 0: no limit; jittered variants above it are redrawn
    Jitter jitter;
    bool complete = false;

    // Names of mandatory fields that are missing or empty.
    std::vector<std::string> missing_fields() const;
    // Throws ValidationError listing every missing field.
    void validate() const;

    json to_json() const;
    // Parses without validating; `complete` reflects missing_fields().
    static TaskSpec from_json(const json& j);
    static TaskSpec load(const std::filesystem::path& path);
};

bool is_valid_kind(const std::string& kind);

struct StructureDescription {
    std::string id;
    std::string category;
    std::string kind;
    json params;
    bool validation = false;
};

struct InitialSet {
    std::vector<AtomicConfiguration> structures;
    std::vector<StructureDescription> descriptions;
};

// Builds every variant of every category. Variant 0 is the unjittered plan
// and is the category's validation structure; the rest draw jitter from
// derive_seed(seed, "variant:<category>:<k>"). Every structure must pass
// validate_structure at task.min_separation; failures throw SetupError
// naming the plan.
// When `relax_with` is given every structure is relaxed at fixed cell with it
// before validation, removing insertion overlaps.
InitialSet generate_initial_set(const TaskSpec& task, std::uint64_t seed, const PairForceField* relax_with = nullptr);

// Writes <dir>/<id>.extxyz and <dir>/init_structure_description.txt.
void write_initial_set(const std::filesystem::path& dir, const InitialSet& set);
// Reads the description file and the structures it lists.
InitialSet read_initial_set(const std::filesystem::path& dir);

// Builds one structure from a kind and its (already jittered) parameters.
AtomicConfiguration build_from_params(const std::string& kind, const json& params, const MassTable& masses,
                                      std::uint64_t seed);

}  // namespace alloop::structgen
