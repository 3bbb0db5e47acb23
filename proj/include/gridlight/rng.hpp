#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace gridlight {

// Seeded generator with hand-rolled draw helpers. std::mt19937 output is
// fully specified by the standard, the std distributions are not, so all
// sampling goes through these helpers to keep runs reproducible across
// toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint32_t stream_tag = 0) : base_seed_(seed) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                          static_cast<std::uint32_t>(seed >> 32), stream_tag};
        gen_.seed(seq);
    }

    // Independent substream for a named purpose (per-agent exploration,
    // replay sampling, weight init, ...), derived from the original seed.
    Rng stream(std::uint32_t tag) const { return Rng(base_seed_, tag); }

    std::uint32_t next_u32() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        const std::uint64_t hi = gen_() >> 5;  // 27 bits
        const std::uint64_t lo = gen_() >> 6;  // 26 bits
        return (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0);
    }

    // Uniform integer in [0, n), unbiased via rejection.
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint32_t bound = static_cast<std::uint32_t>(n);
        const std::uint32_t limit = 0xffffffffu - 0xffffffffu % bound;
        std::uint32_t v = gen_();
        while (v >= limit) v = gen_();
        return static_cast<int>(v % bound);
    }

    // Box-Muller; one spare kept between calls.
    double normal(double mean, double stddev) {
        if (!have_spare_) {
            double u1 = uniform();
            while (u1 <= 0.0) u1 = uniform();
            const double u2 = uniform();
            const double radius = std::sqrt(-2.0 * std::log(u1));
            const double angle = 6.283185307179586476925286766559 * u2;
            spare_ = radius * std::sin(angle);
            have_spare_ = true;
            return mean + stddev * radius * std::cos(angle);
        }
        have_spare_ = false;
        return mean + stddev * spare_;
    }

private:
    std::mt19937 gen_;
    std::uint64_t base_seed_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace gridlight
