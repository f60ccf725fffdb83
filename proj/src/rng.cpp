// SPDX-License-Identifier: Apache-2.0

#include "fedpara/rng.hpp"

namespace fedpara {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t a, std::uint64_t b) {
    // FNV-1a over the stream name.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t x = splitmix64(seed ^ h);
    x = splitmix64(x ^ a);
    x = splitmix64(x ^ (b + 0x632be59bd9b4e019ULL));
    return x;
}

}  // namespace fedpara
