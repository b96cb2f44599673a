#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cola {

inline constexpr const char* kToolVersion = "1.0.0";

// Error hierarchy. Every throw site attaches a message naming the offending
// shapes/ids/values so failures are actionable from logs.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct VocabError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct MetricError : Error {
    using Error::Error;
};
// File-format violations carry the byte offset where parsing stopped.
struct FormatError : Error {
    FormatError(const std::string& msg, std::uint64_t at)
        : Error(msg + " (byte offset " + std::to_string(at) + ")"), offset(at) {}
    std::uint64_t offset;
};

// FNV-1a 64-bit. Used for content hashes in manifests and for deriving
// per-purpose sub-seeds; not cryptographic.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view label) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = char((seed >> (8 * i)) & 0xff);
    return fnv1a64(label, fnv1a64(std::string_view(buf, 8)));
}

std::string hex64(std::uint64_t v);

// Deterministic RNG. mt19937_64 is bit-exact per the standard; the
// distributions below are hand-rolled because the std:: distribution
// algorithms are implementation-defined and would break byte-identical
// reruns across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [lo, hi], inclusive, via rejection sampling.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller with cached spare.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, std::int64_t(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), order randomized.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cola
