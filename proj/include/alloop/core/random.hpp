#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace alloop {

// Child seed = hash(master_seed, job id). FNV-1a over the job id, folded into
// the master seed and finalized with splitmix64.
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view job_id);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master_seed, std::string_view job_id) {
    return Rng(derive_seed(master_seed, job_id));
}

// 16-character lowercase base-36 identifier derived from a seed.
std::string short_id(std::uint64_t seed);

}  // namespace alloop
