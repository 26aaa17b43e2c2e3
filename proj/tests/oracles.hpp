#pragma once

// Brute-force references shared by the unit tests. Deliberately naive.

#include <cmath>
#include <vector>

#include "bcart/haar.hpp"
#include "bcart/tree.hpp"

namespace oracle {

// psi_{lk} on a grid of 2^L cells, straight from the definition.
inline std::vector<double> haar_function(int l, int64_t k, int L) {
    std::vector<double> g(size_t{1} << L, 0.0);
    double amp = std::pow(2.0, l / 2.0);
    for (size_t i = 0; i < g.size(); ++i) {
        double x = (i + 0.5) / double(g.size());
        double y = std::ldexp(x, l) - double(k);
        if (y > 0 && y <= 0.5) g[i] = amp;
        else if (y > 0.5 && y <= 1.0) g[i] = -amp;
    }
    return g;
}

inline double inner(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s / double(a.size());
}

inline std::vector<double> synthesize(const bcart::CoeffArray& c) {
    int L = c.max_level();
    std::vector<double> g(size_t{1} << L, c.root());
    for (int l = 0; l < L; ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k) {
            if (c.at(l, k) == 0) continue;
            auto psi = haar_function(l, k, L);
            for (size_t i = 0; i < g.size(); ++i) g[i] += c.at(l, k) * psi[i];
        }
    return g;
}

// Depth-capped tree count T(d) = 1 + T(d-1)^2.
inline long long capped_tree_count(int d) {
    long long t = 1;
    for (int i = 0; i < d; ++i) t = 1 + t * t;
    return t;
}

}  // namespace oracle
