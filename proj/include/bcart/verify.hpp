#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bcart {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0;
};

// Property checks across all modules, sized to finish in a few seconds.
std::vector<CheckResult> run_invariant_suite(uint64_t seed = 1);

}  // namespace bcart
