// Per-trajectory random streams derived from a master seed.

#pragma once

#include <cstdint>
#include <limits>

namespace nmwtd {

// SplitMix64 (Steele, Lea, Flood); 8 bytes of state per stream.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t state = 0) : state_(state) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

// Seed of trajectory `index`: a hash of (master, index), independent of how work is split.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
    SplitMix64 a(master);
    const std::uint64_t m = a();
    SplitMix64 b(m ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
    return b();
}

} // namespace nmwtd
