#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cla/errors.hpp"

namespace cla {

/// Deterministic RNG with bit-exact serialization. The raw stream comes
/// from std::mt19937_64; floating-point derivation is done manually so
/// values do not depend on libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the spare value is explicit state.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n). Modulo bias is negligible for desk-scale n.
    std::size_t below(std::size_t n) {
        if (n == 0) throw DimensionError("Rng::below: n must be positive");
        return static_cast<std::size_t>(next_u64() % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derives an independent stream seed from (seed, stream id).
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << " " << (has_spare_ ? 1 : 0) << " ";
        std::uint64_t bits = 0;
        std::memcpy(&bits, &spare_, sizeof bits);
        os << bits;
        return os.str();
    }

    static Rng deserialize(const std::string& s) {
        Rng r(0);
        std::istringstream is(s);
        is >> r.eng_;
        int flag = 0;
        std::uint64_t bits = 0;
        is >> flag >> bits;
        if (!is) throw IntegrityError("Rng::deserialize: malformed state string");
        r.has_spare_ = flag != 0;
        std::memcpy(&r.spare_, &bits, sizeof bits);
        return r;
    }

    bool operator==(const Rng& o) const {
        return eng_ == o.eng_ && has_spare_ == o.has_spare_ &&
               (!has_spare_ || spare_ == o.spare_);
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cla
