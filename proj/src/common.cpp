#include "cola/common.hpp"

#include <cmath>

namespace cola {

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[std::size_t(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ContractError("uniform_int: empty range [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
    const std::uint64_t range = std::uint64_t(hi - lo) + 1;
    if (range == 0) return std::int64_t(next_u64());  // full 64-bit range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return lo + std::int64_t(x % range);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] keeps log() finite.
    const double u1 = (double(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) throw ContractError("sample_indices: k > n");
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    // Partial Fisher-Yates: first k slots end up uniformly sampled.
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = std::size_t(uniform_int(std::int64_t(i), std::int64_t(n) - 1));
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
}

}  // namespace cola
