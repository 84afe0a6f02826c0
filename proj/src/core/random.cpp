#include "alloop/core/random.hpp"

#include <string>

namespace alloop {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view job_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : job_id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(master_seed) ^ h);
}

std::string short_id(std::uint64_t seed) {
    static constexpr char kAlphabet[] = "0123456789abcdefghijklmnopqrstuvwxyz";
    std::string out(16, '0');
    std::uint64_t x = seed;
    for (auto& c : out) {
        x = splitmix64(x);
        c = kAlphabet[x % 36];
    }
    return out;
}

}  // namespace alloop
