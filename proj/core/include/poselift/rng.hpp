#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace poselift {

/// Deterministic random stream. The distributions are implemented here rather
/// than taken from <random>, whose distribution algorithms are
/// implementation-defined; this way a seed reproduces the same draws on every
/// standard library.
class Rng {
public:
    explicit Rng(uint64_t seed = 0)
        : engine_(static_cast<std::mt19937_64::result_type>(seed)) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) {
        // Modulo bias is < 2^-40 for any n that fits desk-scale datasets.
        return next_u64() % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; draws are produced in pairs.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Engine plus Box-Muller cache, as a printable token for checkpoints.
    std::string save_state() const {
        std::ostringstream os;
        os << engine_ << ' ' << (has_cached_ ? 1 : 0) << ' ';
        uint64_t bits = 0;
        std::memcpy(&bits, &cached_, sizeof(bits));
        os << bits;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        uint64_t bits = 0;
        is >> engine_ >> flag >> bits;
        has_cached_ = flag != 0;
        std::memcpy(&cached_, &bits, sizeof(cached_));
    }

private:
    std::mt19937_64 engine_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

} // namespace poselift
