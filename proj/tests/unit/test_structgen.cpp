#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "alloop/core/error.hpp"
#include "alloop/core/units.hpp"
#include "alloop/oracle.hpp"
#include "alloop/structgen.hpp"

using namespace alloop;
using namespace alloop::structgen;

namespace {

const MassTable kMasses{{"A", 30.0}, {"B", 20.0}};

TaskSpec toy() { return TaskSpec::load(std::filesystem::path(ALLOOP_DATA_DIR) / "toy_task.json"); }

}  // namespace

TEST_CASE("lattices have the right atom counts and neighbour distances") {
    auto f = build_solid("fcc", 4.0, {"A"}, {2, 3, 1});
    CHECK(f.size() == 24);
    CHECK(validate_structure(f, 0.1).min_distance == doctest::Approx(4.0 / std::sqrt(2.0)));
    auto b = build_solid("bcc", 4.0, {"A"}, {2, 2, 2});
    CHECK(b.size() == 16);
    CHECK(validate_structure(b, 0.1).min_distance == doctest::Approx(4.0 * std::sqrt(3.0) / 2.0));
    auto rs = build_solid("rocksalt", 5.0, {"A", "B"}, {1, 1, 1});
    CHECK(rs.size() == 8);
    CHECK(std::count(rs.species.begin(), rs.species.end(), "B") == 4);
    CHECK(validate_structure(rs, 0.1).min_distance == doctest::Approx(2.5));
    CHECK_THROWS_AS(build_solid("hcp", 3.0, {"A"}, {1, 1, 1}), ConfigurationError);
}

TEST_CASE("packed liquids reach the requested density and separation") {
    auto c = build_packed({{"B", 40}}, 2.0, kMasses, 7, {1.7});
    CHECK(c.size() == 40);
    double rho = 40 * 20.0 / c.volume() * units::kAmuPerA3ToGPerCm3;
    CHECK(rho == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(validate_structure(c, 1.7).pass);
    CHECK(build_packed({{"B", 40}}, 2.0, kMasses, 7, {1.7}) == c);
    CHECK_THROWS_AS(build_packed({{"B", 40}}, 30.0, kMasses, 7, {2.5}), PackingError);
}

TEST_CASE("stacking keeps the requested gap and tags regions") {
    auto lower = build_solid("fcc", 3.1, {"A"}, {3, 3, 2});
    auto upper = build_packed({{"B", 30}}, 2.0, kMasses, 1, {1.7, 1000, std::make_pair(9.3, 9.3)});
    auto s = build_stack(lower, upper, 2.5);
    CHECK(s.size() == lower.size() + upper.size());
    REQUIRE(s.region_tags);
    CHECK((*s.region_tags)[0] == "lower");
    CHECK(s.region_tags->back() == "upper");
    // Closest A-B contact is at least the gap along z.
    double zmax_lower = -1e9, zmin_upper = 1e9;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((*s.region_tags)[i] == "lower") zmax_lower = std::max(zmax_lower, s.positions[i].z());
        else zmin_upper = std::min(zmin_upper, s.positions[i].z());
    }
    CHECK(zmin_upper - zmax_lower == doctest::Approx(2.5).epsilon(1e-9));
    auto wide = build_solid("fcc", 3.5, {"A"}, {3, 3, 1});
    CHECK_THROWS_AS(build_stack(lower, wide, 2.5), LatticeMismatchError);
}

TEST_CASE("slabs and clusters add vacuum") {
    auto bulk = build_solid("fcc", 3.1, {"A"}, {2, 2, 2});
    auto slab = build_slab(bulk, 2, 10.0);
    CHECK(slab.cell(2, 2) == doctest::Approx(6.2 + 10.0));
    CHECK(slab.size() == bulk.size());
    auto cl = build_cluster(build_solid("fcc", 3.1, {"A"}, {4, 4, 4}), 3.0, 8.0);
    CHECK(cl.size() > 0);
    CHECK(cl.size() < 64 * 4);
}

TEST_CASE("the toy task yields 18 structures within the atom limit") {
    auto task = toy();
    CHECK(task.complete);
    oracle::OracleForceField ff(oracle::OracleSpec::from_json(task.oracle).resolved({"A", "B"}), {"A", "B"});
    auto set = generate_initial_set(task, 7, &ff);
    REQUIRE(set.structures.size() == 18);
    std::size_t validation = 0;
    for (std::size_t i = 0; i < 18; ++i) {
        CHECK(set.structures[i].size() <= 200);
        CHECK(validate_structure(set.structures[i], task.min_separation).pass);
        CHECK(set.structures[i].structure_id == set.descriptions[i].id);
        validation += set.descriptions[i].validation;
    }
    CHECK(validation == 3);
    // Variants differ from their validation plan.
    CHECK(set.descriptions[1].params != set.descriptions[0].params);

    auto again = generate_initial_set(task, 7, &ff);
    CHECK(again.structures == set.structures);

    auto dir = testutil::scratch_dir("initset");
    write_initial_set(dir, set);
    auto back = read_initial_set(dir);
    CHECK(back.structures == set.structures);
    CHECK(back.descriptions.size() == 18);
}

TEST_CASE("an unreachable atom limit is a setup error") {
    auto task = toy();
    task.max_atoms = 50;
    CHECK_THROWS_AS(generate_initial_set(task, 7), SetupError);
}

TEST_CASE("missing task fields are listed") {
    auto j = toy().to_json();
    j.erase("masses");
    j.erase("oracle");
    auto t = TaskSpec::from_json(j);
    CHECK_FALSE(t.complete);
    auto missing = t.missing_fields();
    CHECK(std::find(missing.begin(), missing.end(), "masses") != missing.end());
    CHECK(std::find(missing.begin(), missing.end(), "oracle") != missing.end());
    CHECK_THROWS_AS(t.validate(), ValidationError);
    CHECK(is_valid_kind("solid_liquid"));
    CHECK_FALSE(is_valid_kind("plasma"));
}
