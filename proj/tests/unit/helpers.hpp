#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "alloop/core/types.hpp"

namespace testutil {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("alloop_unit_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline alloop::AtomicConfiguration cubic_box(double L) {
    alloop::AtomicConfiguration c;
    c.cell = alloop::Mat3::Identity() * L;
    c.periodic = {true, true, true};
    return c;
}

// n random atoms of one species with a minimum separation, by rejection.
inline alloop::AtomicConfiguration random_gas(std::size_t n, double L, double min_sep, unsigned seed,
                                              const std::string& species = "A") {
    auto c = cubic_box(L);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, L);
    while (c.size() < n) {
        alloop::Vec3 p(u(rng), u(rng), u(rng));
        bool ok = true;
        for (const auto& q : c.positions) {
            alloop::Vec3 d = p - q;
            for (int a = 0; a < 3; ++a) d[a] -= L * std::round(d[a] / L);
            if (d.norm() < min_sep) ok = false;
        }
        if (!ok) continue;
        c.positions.push_back(p);
        c.species.push_back(species);
    }
    return c;
}

}  // namespace testutil
