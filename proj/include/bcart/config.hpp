#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcart/experiments.hpp"
#include "bcart/serialize.hpp"

namespace bcart {

inline constexpr const char* kLibraryVersion = "0.1.0";

// A validated run configuration. `resolved` is the canonical document with
// every default filled in; the typed fields are read from it.
struct RunConfig {
    json resolved;
    std::vector<std::string> defaulted;  // "section.key = value" for every default applied

    double n = 0;  // model.n; 0 when unset
    int L_max = 0;
    PriorSpec prior;
    CovSpec cov;
    bool g_equals_n = true;
    BandSpec band;
    std::string weights_rule;
    ExperimentPlan plan;
    uint64_t seed = 1;
    std::string output_dir;
};

RunConfig parse_config_json(const json& doc);
RunConfig parse_config(const std::string& path);
json config_to_json(const RunConfig& c);  // the resolved document

AdmissibleWeights weights_from_rule(const std::string& rule);

std::string sha256_hex(const std::string& bytes);
std::string utc_timestamp();

struct RunManifest {
    json config;
    std::string version = kLibraryVersion;
    std::string command;
    std::string started, finished;
    struct Output {
        std::string stage, file, sha256;
        size_t bytes = 0;
    };
    std::vector<Output> outputs;

    // Writes content under dir and records its checksum.
    void write_output(const std::string& dir, const std::string& stage, const std::string& file,
                      const std::string& content);
    json to_json() const;
    // Atomic; stamps `finished`.
    void write(const std::string& dir);
};

}  // namespace bcart
