#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dwtnet {

// Error taxonomy. Everything user-facing derives from Error so the C API
// boundary can map exception type -> status code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic sub-seed derivation: every consumer of randomness gets its
// own stream keyed by (base seed, purpose tag) so adding a consumer never
// perturbs the others.
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return splitmix64(base ^ h);
}

class Rng {
   public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
    }
    std::mt19937_64& engine() { return eng_; }

    Rng fork(const std::string& tag) { return Rng(derive_seed(eng_(), tag)); }

   private:
    std::mt19937_64 eng_;
};

}  // namespace dwtnet
