#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace textad {

// Stateless mixing used to derive reproducible sub-seeds from structured keys.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);
std::uint64_t hash_string(std::string_view s);

// Uniform double in [0,1) from a counter key. Same key, same value.
double counter_uniform(std::uint64_t key);

// Sequential generator. std::mt19937_64 is fully specified by the standard;
// the distributions below are written out so results do not depend on the
// standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();                        // [0, 1)
    std::size_t uniform_index(std::size_t n); // [0, n)
    double normal();                          // standard normal

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace textad
