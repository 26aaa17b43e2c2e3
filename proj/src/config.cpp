#include "bcart/config.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>

#include <openssl/evp.h>

#include "bcart/error.hpp"

namespace bcart {

namespace {

using Check = std::function<void(const json&)>;

struct Key {
    std::string name;
    json def;
    Check check;
};

struct Section {
    std::string name;
    std::vector<Key> keys;
};

[[noreturn]] void bad(const std::string& key, const std::string& what) {
    fail(ErrorKind::invalid_input, "config: " + key + ": " + what);
}

Check number_in(const std::string& key, double lo, double hi, bool open_lo, bool open_hi, const std::string& msg) {
    return [=](const json& v) {
        if (!v.is_number()) bad(key, "must be a number");
        double x = v.get<double>();
        if (!std::isfinite(x) || (open_lo ? x <= lo : x < lo) || (open_hi ? x >= hi : x > hi)) bad(key, msg);
    };
}

Check integer_in(const std::string& key, int64_t lo, int64_t hi) {
    return [=](const json& v) {
        if (!v.is_number_integer()) bad(key, "must be an integer");
        int64_t x = v.get<int64_t>();
        if (x < lo || x > hi) bad(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    };
}

Check one_of(const std::string& key, std::vector<std::string> options) {
    return [=](const json& v) {
        if (!v.is_string()) bad(key, "must be a string");
        for (const auto& o : options)
            if (v.get<std::string>() == o) return;
        std::string all;
        for (const auto& o : options) all += (all.empty() ? "" : ", ") + o;
        bad(key, "must be one of {" + all + "}");
    };
}

Check boolean(const std::string& key) {
    return [=](const json& v) {
        if (!v.is_boolean()) bad(key, "must be true or false");
    };
}

Check number_list(const std::string& key, const Check& each) {
    return [=](const json& v) {
        if (!v.is_array()) bad(key, "must be an array");
        for (const auto& x : v) each(x);
    };
}

const std::vector<std::string> kTruths{"cusp", "spike", "full_decay", "single_branch_decay", "zero"};
const std::vector<std::string> kKinds{"rates", "sharp", "coverage", "bvm", "flat-vs-cart", "diagnostics"};

json pow2_grid(int lo, int hi, int step = 1) {
    json g = json::array();
    for (int L = lo; L <= hi; L += step) g.push_back(std::ldexp(1.0, L));
    return g;
}

std::vector<Section> schema(const std::string& kind) {
    // experiment-specific defaults
    std::string truth = "cusp";
    double alpha = 1.0, M = 1.0, gamma = 4.0;
    int j0 = 0;
    size_t reps = 50, draws = 500;
    json grid = pow2_grid(8, 16);
    if (kind == "sharp") truth = "spike", gamma = 41.0, grid = pow2_grid(10, 14, 2);
    if (kind == "coverage") truth = "full_decay", j0 = 2, reps = 100, grid = pow2_grid(10, 14, 2);
    if (kind == "bvm") truth = "full_decay", j0 = 1, reps = 20, draws = 2000, grid = pow2_grid(6, 14, 4);
    if (kind == "flat-vs-cart") truth = "single_branch_decay", alpha = 0.5, M = 4.0, grid = pow2_grid(10, 16);
    if (kind == "diagnostics") truth = "full_decay", M = 4.0, gamma = 41.0, reps = 100, grid = pow2_grid(14, 14);

    return {
        {"model",
         {{"n", 0.0, number_in("model.n", 0, 1e12, false, false, "must lie in [0, 1e12]")},
          {"L_max", 0, integer_in("model.L_max", 0, 40)}}},
        {"prior",
         {{"kind", "gw", one_of("prior.kind", {"gw", "galton_watson", "cond_uniform", "exponential"})},
          {"gamma", gamma, number_in("prior.gamma", 1, 1e300, true, false, "gamma must exceed 1")},
          {"exponent", 1.0, number_in("prior.exponent", 1, 1e3, false, false, "exponent must be >= 1")},
          {"lambda", 1.0, number_in("prior.lambda", 0, 1e300, true, false, "lambda must be positive")},
          {"c", 1.0, number_in("prior.c", 0, 1e300, true, false, "c must be positive")},
          {"j0", j0, integer_in("prior.j0", 0, 40)}}},
        {"covariance",
         {{"kind", "identity", one_of("covariance.kind", {"identity", "g_prior", "ar1"})},
          {"g", 1.0, number_in("covariance.g", 0, 1e300, true, false, "g must be positive")},
          {"g_equals_n", true, boolean("covariance.g_equals_n")},
          {"rho", 0.5, number_in("covariance.rho", 0, 1, true, true, "rho must lie in (0,1)")},
          {"c_n", 0.0, number_in("covariance.c_n", 0, 1e300, false, false, "c_n must be >= 0")}}},
        {"band",
         {{"gamma", 0.05, number_in("band.gamma", 0, 1, true, true, "gamma must lie in (0,1)")},
          {"v_n", 0.0, number_in("band.v_n", 0, 1e300, false, false, "v_n must be >= 0 (0 selects (log n)^0.75)")},
          {"weights", "linear", one_of("band.weights", {"linear", "sqrt_log"})},
          {"include_root", "auto", one_of("band.include_root", {"auto", "yes", "no"})},
          {"draws", 2000, integer_in("band.draws", 100, 100000000)}}},
        {"experiment",
         {{"kind", kind, one_of("experiment.kind", kKinds)},
          {"truth", truth, one_of("experiment.truth", kTruths)},
          {"alpha", alpha, number_in("experiment.alpha", 0, 1, true, false, "alpha must lie in (0,1]")},
          {"M", M, number_in("experiment.M", 0, 1e300, true, false, "M must be positive")},
          {"spike_level", -1, integer_in("experiment.spike_level", -1, 40)},
          {"spike_inflation", 1.0, number_in("experiment.spike_inflation", 0, 1e300, false, false, "must be >= 0")},
          {"n_grid", grid,
           number_list("experiment.n_grid", number_in("experiment.n_grid", 4, 1e12, false, false,
                                                      "entries must be powers of two >= 4"))},
          {"replicates", reps, integer_in("experiment.replicates", 1, 100000000)},
          {"draws", draws, integer_in("experiment.draws", 1, 100000000)},
          {"mcmc_iterations", 20000, integer_in("experiment.mcmc_iterations", 100, 1000000000)},
          {"gamma_sensitivity", json::array(),
           number_list("experiment.gamma_sensitivity",
                       number_in("experiment.gamma_sensitivity", 1, 1e300, true, false, "values must exceed 1"))},
          {"m_values", json::array({0.5, 1.0, 1e12}),
           number_list("experiment.m_values",
                       number_in("experiment.m_values", 0, 1e300, true, false, "values must be positive"))},
          {"flat_decay", 1.0, number_in("experiment.flat_decay", 0, 1e300, false, false, "must be >= 0")},
          {"coordinates", json::array({json::array({0, 0})}),
           [](const json& v) {
               if (!v.is_array() || v.empty()) bad("experiment.coordinates", "must be a non-empty array of [l,k]");
               for (const auto& c : v)
                   if (!c.is_array() || c.size() != 2 || !c[0].is_number_integer() || !c[1].is_number_integer())
                       bad("experiment.coordinates", "entries must be [l,k] integer pairs");
           }},
          {"bvm_priors", json::array({"identity", "g_prior"}),
           [](const json& v) {
               if (!v.is_array() || v.empty()) bad("experiment.bvm_priors", "must be a non-empty array");
               for (const auto& x : v) one_of("experiment.bvm_priors", {"identity", "g_prior"})(x);
           }},
          {"bvm_g_levels", 4, integer_in("experiment.bvm_g_levels", 1, 5)},
          {"self_similarity_eps", 0.05,
           number_in("experiment.self_similarity_eps", 0, 1e300, true, false, "must be positive")},
          {"signal_A", 8.0, number_in("experiment.signal_A", 0, 1e300, true, false, "must be positive")},
          {"threads", 0, integer_in("experiment.threads", 0, 1024)}}},
        {"output", {{"directory", "", [](const json& v) {
                         if (!v.is_string()) bad("output.directory", "must be a string");
                     }}}},
    };
}

}  // namespace

AdmissibleWeights weights_from_rule(const std::string& rule) {
    AdmissibleWeights w;
    if (rule == "sqrt_log") w.w = [](int l) { return std::max(1.0, std::sqrt(double(l)) * std::log(2.0 + l)); };
    else if (rule != "linear") fail(ErrorKind::invalid_input, "unknown weights rule '" + rule + "'");
    return w;
}

RunConfig parse_config_json(const json& input) {
    if (!input.is_object()) fail(ErrorKind::invalid_input, "config: top level must be an object");
    json doc = input;
    // shorthand {"experiment": "rates"}
    if (doc.contains("experiment") && doc["experiment"].is_string())
        doc["experiment"] = json{{"kind", doc["experiment"].get<std::string>()}};

    std::string kind = "rates";
    bool kind_given = false;
    if (doc.contains("experiment") && doc["experiment"].is_object() && doc["experiment"].contains("kind")) {
        one_of("experiment.kind", kKinds)(doc["experiment"]["kind"]);
        kind = doc["experiment"]["kind"].get<std::string>();
        kind_given = true;
    }

    RunConfig rc;
    auto sections = schema(kind);
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.key() == "seed") continue;
        bool known = false;
        for (const auto& s : sections) known = known || s.name == it.key();
        if (!known) bad(it.key(), "unknown section");
        if (!it.value().is_object()) bad(it.key(), "must be an object");
    }

    json out = json::object();
    if (doc.contains("seed")) {
        const json& s = doc["seed"];
        if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<int64_t>() < 0))
            bad("seed", "must be a non-negative 64-bit integer");
        out["seed"] = s.get<uint64_t>();
    } else {
        out["seed"] = uint64_t{1};
        rc.defaulted.push_back("seed = 1");
    }
    for (const auto& s : sections) {
        json given = doc.contains(s.name) ? doc[s.name] : json::object();
        for (auto it = given.begin(); it != given.end(); ++it) {
            bool known = false;
            for (const auto& k : s.keys) known = known || k.name == it.key();
            if (!known) bad(s.name + "." + it.key(), "unknown key");
        }
        json sec = json::object();
        for (const auto& k : s.keys) {
            if (given.contains(k.name)) {
                k.check(given[k.name]);
                sec[k.name] = given[k.name];
            } else {
                sec[k.name] = k.def;
                if (!(s.name == "experiment" && k.name == "kind" && kind_given))
                    rc.defaulted.push_back(s.name + "." + k.name + " = " + k.def.dump());
            }
        }
        out[s.name] = sec;
    }
    rc.resolved = out;

    // typed view plus cross-field checks
    const json& m = out["model"];
    rc.n = m["n"].get<double>();
    rc.L_max = m["L_max"].get<int>();
    if (rc.n != 0 && rc.n < 2) bad("model.n", "must be 0 (unset) or >= 2");

    const json& p = out["prior"];
    rc.prior.kind = parse_prior_kind(p["kind"].get<std::string>());
    rc.prior.gamma = p["gamma"].get<double>();
    rc.prior.exponent = p["exponent"].get<double>();
    rc.prior.lambda = p["lambda"].get<double>();
    rc.prior.c = p["c"].get<double>();
    rc.prior.j0 = p["j0"].get<int>();

    const json& c = out["covariance"];
    rc.cov.kind = parse_cov_kind(c["kind"].get<std::string>());
    rc.cov.g = c["g"].get<double>();
    rc.cov.rho = c["rho"].get<double>();
    rc.cov.c_n = c["c_n"].get<double>();
    rc.g_equals_n = c["g_equals_n"].get<bool>();

    const json& b = out["band"];
    rc.band.gamma = b["gamma"].get<double>();
    rc.band.v_n = b["v_n"].get<double>();
    rc.weights_rule = b["weights"].get<std::string>();
    rc.band.weights = weights_from_rule(rc.weights_rule);
    std::string ir = b["include_root"].get<std::string>();
    rc.band.include_root = ir == "auto" ? -1 : ir == "yes" ? 1 : 0;
    rc.band.draws = b["draws"].get<size_t>();
    rc.band.j0 = rc.prior.j0;

    const json& e = out["experiment"];
    ExperimentPlan& pl = rc.plan;
    pl.kind = parse_experiment_kind(e["kind"].get<std::string>());
    std::string truth = e["truth"].get<std::string>();
    pl.zero_truth = truth == "zero";
    pl.truth = pl.zero_truth ? TestFunction::cusp : parse_test_function(truth);
    pl.holder = {e["alpha"].get<double>(), e["M"].get<double>()};
    pl.spike_level = e["spike_level"].get<int>();
    pl.spike_inflation = e["spike_inflation"].get<double>();
    pl.n_grid = e["n_grid"].get<std::vector<double>>();
    pl.replicates = e["replicates"].get<size_t>();
    pl.draws = e["draws"].get<size_t>();
    pl.mcmc_iterations = e["mcmc_iterations"].get<size_t>();
    pl.gamma_sensitivity = e["gamma_sensitivity"].get<std::vector<double>>();
    pl.m_values = e["m_values"].get<std::vector<double>>();
    pl.flat_decay = e["flat_decay"].get<double>();
    pl.coordinates.clear();
    for (const auto& xy : e["coordinates"]) pl.coordinates.push_back({xy[0].get<int>(), xy[1].get<int64_t>()});
    pl.bvm_priors.clear();
    for (const auto& k : e["bvm_priors"]) pl.bvm_priors.push_back(parse_cov_kind(k.get<std::string>()));
    pl.bvm_g_levels = e["bvm_g_levels"].get<int>();
    pl.self_similarity_eps = e["self_similarity_eps"].get<double>();
    pl.signal_A = e["signal_A"].get<double>();
    pl.threads = e["threads"].get<unsigned>();
    pl.prior = rc.prior;
    pl.cov = rc.cov;
    pl.g_equals_n = rc.g_equals_n;
    pl.band = rc.band;
    pl.L_max_override = rc.L_max;
    rc.seed = out["seed"].get<uint64_t>();
    pl.seed = rc.seed;
    rc.output_dir = out["output"]["directory"].get<std::string>();

    // remaining constraints live with the types; rethrow them under the config prefix
    try {
        pl.validate();
    } catch (const Error& err) {
        fail(ErrorKind::invalid_input, std::string("config: experiment: ") + err.what());
    }
    return rc;
}

RunConfig parse_config(const std::string& path) {
    std::string text = read_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::invalid_input, "config: " + path + " is not valid JSON: " + e.what());
    }
    return parse_config_json(doc);
}

json config_to_json(const RunConfig& c) { return c.resolved; }

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorKind::numerical, "sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

std::string utc_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void RunManifest::write_output(const std::string& dir, const std::string& stage, const std::string& file,
                               const std::string& content) {
    if (file.empty() || file.find("..") != std::string::npos || file.front() == '/')
        fail(ErrorKind::invalid_input, "output file name must stay inside the output directory: " + file);
    write_file_atomic((std::filesystem::path(dir) / file).string(), content);
    outputs.push_back({stage, file, sha256_hex(content), content.size()});
}

json RunManifest::to_json() const {
    json outs = json::array();
    for (const auto& o : outputs) outs.push_back({{"stage", o.stage}, {"file", o.file}, {"sha256", o.sha256},
                                                  {"bytes", o.bytes}});
    return {{"library_version", version}, {"command", command}, {"started", started}, {"finished", finished},
            {"config", config}, {"outputs", outs}};
}

void RunManifest::write(const std::string& dir) {
    finished = utc_timestamp();
    write_file_atomic((std::filesystem::path(dir) / "manifest.json").string(), to_json().dump(2) + "\n");
}

}  // namespace bcart
