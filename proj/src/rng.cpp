#include "bcart/rng.hpp"

#include <cmath>
#include <numbers>

#include "bcart/error.hpp"

namespace bcart {

const char* kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_input: return "invalid-input";
        case ErrorKind::sampling_failure: return "sampling-failure";
        case ErrorKind::unsupported: return "unsupported-configuration";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::stuck_state: return "stuck-state";
        case ErrorKind::precondition: return "precondition-violation";
        case ErrorKind::diagnostic: return "diagnostic";
        case ErrorKind::refusal: return "refusal";
    }
    return "error";
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t stream_seed(uint64_t seed, std::string_view purpose, uint64_t index) {
    return splitmix64(splitmix64(seed ^ fnv1a(purpose)) + index);
}

static double to_unit(uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

double keyed_uniform(uint64_t seed, uint64_t counter) {
    return (static_cast<double>(splitmix64(splitmix64(seed) ^ counter) >> 11) + 0.5) * 0x1.0p-53;
}

double keyed_normal(uint64_t seed, uint64_t counter) {
    // Box-Muller on two keyed uniforms; counter space split even/odd.
    double u1 = keyed_uniform(seed, 2 * counter);
    double u2 = keyed_uniform(seed, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::uniform() { return to_unit(engine_()); }

double Rng::uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
}

uint64_t Rng::below(uint64_t n) {
    if (n <= 1) return 0;
    uint64_t threshold = (0 - n) % n;
    for (;;) {
        uint64_t x = engine_();
        if (x >= threshold) return x % n;
    }
}

}  // namespace bcart
