#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bcart {

uint64_t splitmix64(uint64_t x);
uint64_t fnv1a(std::string_view s);

// Per-purpose seed derivation: the purpose tag is hashed into the stream
// index, so a new purpose never shifts the streams of existing ones.
uint64_t stream_seed(uint64_t seed, std::string_view purpose, uint64_t index = 0);

// Stateless draws keyed by (seed, counter). Used for the observation noise
// so that eps_{lk} depends only on the seed and the node index.
double keyed_uniform(uint64_t seed, uint64_t counter);
double keyed_normal(uint64_t seed, uint64_t counter);

// mt19937_64 has a standard-defined output sequence; the conversions below
// are ours so draws are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next() { return engine_(); }
    double uniform();       // [0,1)
    double uniform_open();  // (0,1)
    double normal();
    uint64_t below(uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace bcart
