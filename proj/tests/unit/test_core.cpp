#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "alloop/core/error.hpp"
#include "alloop/core/extxyz.hpp"
#include "alloop/core/geometry.hpp"
#include "alloop/core/random.hpp"
#include "alloop/core/report.hpp"

using namespace alloop;
namespace fs = std::filesystem;

TEST_CASE("extxyz round trip keeps every field bit for bit") {
    auto c = testutil::random_gas(5, 7.3, 1.0, 3);
    c.cell(0, 1) = 0.4;
    c.species[2] = "B";
    c.structure_id = "gas_1";
    c.is_validation = true;
    c.velocities = std::vector<Vec3>(5, Vec3(0.1, -0.2, 1.0 / 3.0));
    c.extra["note"] = "kept";
    std::vector<Vec3> f;
    for (std::size_t i = 0; i < 5; ++i) f.emplace_back(std::sqrt(2.0) * i, -1e-17, 1.0 / 7.0);
    auto frame = LabeledFrame::make(c, -12.345678901234567, f, "oracle");

    auto back = std::get<LabeledFrame>(extxyz::decode(extxyz::encode(frame)));
    CHECK(back.config == c);
    CHECK(back.energy == frame.energy);
    CHECK(back.forces == frame.forces);
    CHECK(back.max_force == doctest::Approx(frame.max_force));

    auto plain = std::get<AtomicConfiguration>(extxyz::decode(extxyz::encode(c)));
    CHECK(plain == c);
}

TEST_CASE("extxyz reads concatenated blocks and reports the failing line") {
    auto a = testutil::random_gas(3, 5.0, 1.0, 1);
    auto b = testutil::random_gas(4, 6.0, 1.0, 2);
    std::stringstream ss(extxyz::encode(a) + extxyz::encode(b));
    auto frames = extxyz::read_all(ss);
    REQUIRE(frames.size() == 2);
    CHECK(extxyz::config_of(frames[1]) == b);

    const std::string bad = "2\nLattice=\"5 0 0 0 5 0 0 0 5\" Properties=species:S:1:pos:R:3 pbc=\"T T T\"\n"
                            "A 0 0 0\nA notanumber 0 0\n";
    try {
        extxyz::decode(bad);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 4);
    }
    CHECK_THROWS_AS(extxyz::decode("2\nProperties=species:S:1:pos:R:3\nA 0 0 0\n"), ParseError);
}

TEST_CASE("derive_seed is stable, order free and sensitive to both inputs") {
    CHECK(derive_seed(7, "job") == derive_seed(7, "job"));
    CHECK(derive_seed(7, "job") != derive_seed(8, "job"));
    CHECK(derive_seed(7, "job") != derive_seed(7, "jo"));
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(derive_seed(1, "t" + std::to_string(i)));
    CHECK(seen.size() == 1000);
    auto id = short_id(derive_seed(1, "m"));
    CHECK(id.size() == 16);
    for (char ch : id) CHECK(((ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'z')));
}

TEST_CASE("minimum image distance matches a brute-force image search") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        Mat3 cell;
        cell << 4.0 + u(rng), 0.0, 0.0, 1.5 * u(rng), 4.0 + u(rng), 0.0, 1.5 * u(rng), 1.5 * u(rng), 4.0 + u(rng);
        Vec3 a(3 * u(rng), 3 * u(rng), 3 * u(rng)), b(3 * u(rng), 3 * u(rng), 3 * u(rng));
        double best = 1e300;
        for (int i = -4; i <= 4; ++i)
            for (int j = -4; j <= 4; ++j)
                for (int k = -4; k <= 4; ++k)
                    best = std::min(best, (b - a + i * Vec3(cell.row(0)) + j * Vec3(cell.row(1)) + k * Vec3(cell.row(2))).norm());
        CHECK(min_image_distance(cell, {true, true, true}, a, b) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("neighbor pairs count every image within the cutoff") {
    // Small cell, cutoff beyond half the width: image enumeration is needed.
    auto c = testutil::random_gas(6, 4.0, 1.0, 5);
    const double rc = 5.0;
    std::size_t brute = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = i; j < c.size(); ++j)
            for (int a = -3; a <= 3; ++a)
                for (int b = -3; b <= 3; ++b)
                    for (int d = -3; d <= 3; ++d) {
                        if (i == j && a == 0 && b == 0 && d == 0) continue;
                        double r = (c.positions[j] + Vec3(a, b, d) * 4.0 - c.positions[i]).norm();
                        if (r < rc) ++brute;
                    }
    // Self-images are counted once per +/- pair in the list, twice above.
    std::size_t self = 0;
    for (int a = -3; a <= 3; ++a)
        for (int b = -3; b <= 3; ++b)
            for (int d = -3; d <= 3; ++d)
                if ((a || b || d) && Vec3(a, b, d).norm() * 4.0 < rc) ++self;
    auto pairs = neighbor_pairs(c, rc);
    CHECK(pairs.size() == brute - c.size() * self / 2);
    CHECK_THROWS_AS(neighbor_pairs(c, rc, NeighborOptions{false}), ConfigurationError);
}

TEST_CASE("cell widths are plane spacings") {
    Mat3 cell;
    cell << 3, 0, 0, 1, 3, 0, 0, 0, 5;
    Vec3 w = cell_widths(cell);
    // Spacing of planes spanned by the other two vectors: V / |a x b|.
    double V = std::abs(cell.determinant());
    CHECK(w[0] == doctest::Approx(V / Vec3(cell.row(1)).cross(Vec3(cell.row(2))).norm()));
    CHECK(w[2] == doctest::Approx(5.0));
}

TEST_CASE("report files append, read back, flag corrupt lines and truncate") {
    auto dir = testutil::scratch_dir("report");
    auto path = dir / "train.jsonl";
    CHECK(count_lines(path) == 0);
    for (int i = 0; i < 3; ++i) append_record(path, ReportRecord::make(RecordVariant::Train, i, {{"i", i}}));
    {
        std::ofstream out(path, std::ios::app);
        out << "{not json\n";
    }
    append_record(path, ReportRecord::make(RecordVariant::Train, 9, {{"i", 9}}));
    auto r = read_records(path);
    REQUIRE(r.records.size() == 4);
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].line == 4);
    CHECK(r.records[3].step == 9);
    CHECK(r.records[1].payload.at("i") == 1);
    CHECK(r.records[0].variant == RecordVariant::Train);

    auto unknown = ReportRecord::from_json({{"variant", "Mystery"}, {"timestamp", "t"}, {"step", 1}, {"payload", {{"x", 1}}}});
    CHECK(unknown.variant == RecordVariant::Unknown);
    CHECK(unknown.to_json().at("variant") == "Mystery");

    auto removed = truncate_lines(path, 2);
    CHECK(removed.size() == 3);
    CHECK(count_lines(path) == 2);
}
