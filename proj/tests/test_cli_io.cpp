#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bcart/config.hpp"
#include "bcart/error.hpp"

using namespace bcart;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("bcart_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

struct Run {
    int code;
    std::string out, err;
};

// Runs the CLI with stdout and stderr captured; `prefix` goes before the binary (env, cd).
Run cli(const std::string& args, const TempDir& scratch, const std::string& prefix = "") {
    std::string o = scratch / "stdout.txt", e = scratch / "stderr.txt";
    std::string cmd = prefix + " '" + std::string(BCART_CLI_PATH) + "' " + args + " >'" + o + "' 2>'" + e + "'";
    int st = std::system(cmd.c_str());
    Run r{WIFEXITED(st) ? WEXITSTATUS(st) : -1, slurp(o), slurp(e)};
    fs::remove(o);
    fs::remove(e);
    return r;
}

std::set<std::string> listing(const fs::path& p) {
    std::set<std::string> s;
    for (const auto& e : fs::recursive_directory_iterator(p)) s.insert(fs::relative(e.path(), p).string());
    return s;
}

const char* kSmallRates = R"({"seed": 5, "experiment": {"kind": "rates", "n_grid": [64, 128, 256], "replicates": 3, "draws": 40, "threads": 2}})";

}  // namespace

TEST_CASE("minimal config resolves every default") {
    RunConfig rc = parse_config_json(json::parse(R"({"seed": 9, "experiment": "rates"})"));
    for (const char* s : {"model", "prior", "covariance", "band", "experiment", "output"}) CHECK(rc.resolved.contains(s));
    CHECK(rc.resolved["seed"] == 9);
    CHECK(rc.seed == 9);
    CHECK(rc.resolved["prior"]["gamma"] == 4.0);
    CHECK(rc.resolved["band"]["gamma"] == 0.05);
    CHECK(rc.resolved["experiment"]["truth"] == "cusp");
    CHECK(rc.plan.kind == ExperimentKind::rates);
    CHECK(rc.plan.n_grid.front() == 256);
    CHECK(rc.plan.n_grid.back() == 65536);
    CHECK(rc.plan.replicates == 50);
    // every default is logged, the given kind is not
    CHECK(rc.defaulted.size() > 20);
    for (const auto& d : rc.defaulted) CHECK(d.find("experiment.kind") == std::string::npos);
    bool logged = false;
    for (const auto& d : rc.defaulted) logged = logged || d.rfind("band.gamma", 0) == 0;
    CHECK(logged);
}

TEST_CASE("kind-specific defaults") {
    auto kind_of = [](const char* k) { return parse_config_json(json{{"experiment", k}}).plan; };
    CHECK(kind_of("coverage").truth == TestFunction::full_decay);
    CHECK(kind_of("coverage").prior.j0 == 2);
    CHECK(kind_of("bvm").draws == 2000);
    CHECK(kind_of("bvm").n_grid == std::vector<double>{64, 1024, 16384});
    CHECK(kind_of("sharp").prior.gamma == 41);
    CHECK(kind_of("flat-vs-cart").holder.alpha == 0.5);
    CHECK(kind_of("diagnostics").n_grid == std::vector<double>{16384});
    CHECK(parse_config_json(json::object()).seed == 1);
}

TEST_CASE("schema violations name the key and constraint") {
    auto message = [](const std::string& doc) -> std::string {
        try {
            parse_config_json(json::parse(doc));
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::invalid_input);
            return e.what();
        }
        return "";
    };
    CHECK(message(R"({"band": {"gamma": 1.5}})").find("band.gamma: gamma must lie in (0,1)") != std::string::npos);
    CHECK(message(R"({"band": {"gamma": 0}})").find("gamma must lie in (0,1)") != std::string::npos);
    CHECK(message(R"({"prior": {"gama": 2}})").find("prior.gama") != std::string::npos);
    CHECK(message(R"({"bogus": {}})").find("bogus") != std::string::npos);
    CHECK(message(R"({"seed": -3})").find("seed") != std::string::npos);
    CHECK(message(R"({"prior": {"gamma": 0.5}})").find("prior.gamma") != std::string::npos);
    CHECK(message(R"({"experiment": {"kind": "nope"}})").find("experiment.kind") != std::string::npos);
    CHECK(message(R"({"experiment": {"n_grid": [100]}})").find("experiment") != std::string::npos);
    CHECK(message(R"({"covariance": {"kind": "ar1", "rho": 1}})").find("covariance.rho") != std::string::npos);
    CHECK_FALSE(message(R"({"band": {"gamma": 0.1}})").size());
}

TEST_CASE("config round trip") {
    for (const char* k : {"rates", "sharp", "coverage", "bvm", "flat-vs-cart", "diagnostics"}) {
        RunConfig a = parse_config_json(json{{"seed", 123456789012345ull}, {"experiment", k}});
        RunConfig b = parse_config_json(config_to_json(a));
        CHECK(b.resolved == a.resolved);
        CHECK(b.resolved.dump() == a.resolved.dump());
        CHECK(b.defaulted.empty());
        CHECK(plan_to_json(b.plan) == plan_to_json(a.plan));
    }
    TempDir t;
    spit(t / "c.json", R"({"seed": 2, "band": {"gamma": 0.1}})");
    CHECK(parse_config(t / "c.json").band.gamma == 0.1);
    CHECK_THROWS_AS(parse_config(t / "missing.json"), Error);
    spit(t / "broken.json", "{");
    CHECK_THROWS_AS(parse_config(t / "broken.json"), Error);
}

TEST_CASE("sha256") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest refuses paths outside its directory") {
    TempDir t;
    RunManifest m;
    CHECK_THROWS_AS(m.write_output(t.path.string(), "s", "../x.csv", "a"), Error);
    CHECK_THROWS_AS(m.write_output(t.path.string(), "s", "/tmp/x.csv", "a"), Error);
    m.write_output(t.path.string(), "s", "ok.csv", "abc");
    m.write(t.path.string());
    json j = json::parse(slurp(t / "manifest.json"));
    CHECK(j["outputs"][0]["sha256"] == sha256_hex("abc"));
    CHECK(j["outputs"][0]["bytes"] == 3);
    CHECK(j["library_version"] == kLibraryVersion);
    CHECK(listing(t.path) == std::set<std::string>{"ok.csv", "manifest.json"});
}

TEST_CASE("verify exits 0") {
    TempDir t;
    Run r = cli("verify --out '" + (t / "v") + "'", t);
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("PASS haar_roundtrip") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
    TempDir t;
    Run r = cli("bogus", t);
    CHECK(r.code == 2);
    CHECK((r.out + r.err).find("Usage") != std::string::npos);
    CHECK(cli("", t).code == 2);
    CHECK(cli("posterior --no-such-flag", t).code == 2);
}

TEST_CASE("unsupported dp configuration exits 1") {
    TempDir t;
    Run r = cli("posterior --method dp --prior cond_uniform --n 64 --out '" + (t / "p") + "'", t);
    CHECK(r.code == 1);
    CHECK(r.err.find("unsupported-configuration") != std::string::npos);
    CHECK(r.err.find("stratified") != std::string::npos);
    Run ok = cli("posterior --method dp --prior cond_uniform --stratified --n 64 --out '" + (t / "p") + "'", t);
    CHECK(ok.code == 0);
    CHECK(fs::exists(t / "p/inclusion.csv"));
    CHECK(fs::exists(t / "p/top_trees.json"));
}

TEST_CASE("config errors from the CLI exit 1 with the key") {
    TempDir t;
    spit(t / "bad.json", R"({"seed": 1, "band": {"gamma": 1.5}})");
    Run r = cli("experiment rates --config '" + (t / "bad.json") + "' --out '" + (t / "o") + "'", t);
    CHECK(r.code == 1);
    CHECK(r.err.find("gamma must lie in (0,1)") != std::string::npos);
    spit(t / "kind.json", R"({"experiment": "coverage"})");
    CHECK(cli("experiment rates --config '" + (t / "kind.json") + "' --out '" + (t / "o") + "'", t).code == 1);
}

TEST_CASE("experiment run: outputs, manifest and byte-identical reruns") {
    TempDir t;
    spit(t / "c.json", kSmallRates);
    fs::create_directories(t / "cwd");
    // run from an empty working directory so stray writes would show up there
    Run a = cli("experiment rates --config '" + (t / "c.json") + "' --out '" + (t / "a") + "'", t,
                "cd '" + (t / "cwd") + "' &&");
    REQUIRE(a.code == 0);
    CHECK(a.err.find("default: ") != std::string::npos);
    CHECK(listing(t / "a") ==
          std::set<std::string>{"raw.csv", "aggregate.json", "plot.csv", "resolved_config.json", "manifest.json"});
    CHECK(fs::is_empty(t / "cwd"));

    json m = json::parse(slurp(t / "a/manifest.json"));
    CHECK(m["library_version"] == kLibraryVersion);
    CHECK(m.contains("started"));
    CHECK(m.contains("finished"));
    CHECK(m["config"]["seed"] == 5);
    CHECK(m["outputs"].size() == 4);
    for (const auto& o : m["outputs"]) {
        std::string body = slurp(t / ("a/" + o["file"].get<std::string>()));
        CHECK(o["sha256"] == sha256_hex(body));
        CHECK(o["bytes"] == body.size());
    }
    std::string raw = slurp(t / "a/raw.csv");
    CHECK(raw.rfind("n,replicate,gamma,loss", 0) == 0);
    CHECK(std::count(raw.begin(), raw.end(), '\n') == 1 + 9);
    CHECK(slurp(t / "a/plot.csv").rfind("series,x,y,err", 0) == 0);
    CHECK(json::parse(slurp(t / "a/resolved_config.json")) == parse_config(t / "c.json").resolved);

    // the env var picks the directory when no flag is given
    Run b = cli("experiment rates --config '" + (t / "c.json") + "'", t,
                "cd '" + (t / "cwd") + "' && BCART_OUTPUT_DIR='" + (t / "b") + "'");
    REQUIRE(b.code == 0);
    CHECK(fs::is_empty(t / "cwd"));
    for (const char* f : {"raw.csv", "plot.csv"}) CHECK(slurp(t / (std::string("a/") + f)) == slurp(t / (std::string("b/") + f)));
    // the flag wins over the env var
    Run c = cli("experiment rates --config '" + (t / "c.json") + "' --out '" + (t / "c") + "'", t,
                "BCART_OUTPUT_DIR='" + (t / "ignored") + "'");
    REQUIRE(c.code == 0);
    CHECK(fs::exists(t / "c/raw.csv"));
    CHECK_FALSE(fs::exists(t / "ignored"));
    CHECK(slurp(t / "a/raw.csv") == slurp(t / "c/raw.csv"));
}

TEST_CASE("other subcommands write inside the output directory") {
    TempDir t;
    fs::create_directories(t / "cwd");
    std::string cd = "cd '" + (t / "cwd") + "' &&";
    CHECK(cli("transform --function cusp --levels 5 --out '" + (t / "tr") + "'", t, cd).code == 0);
    CHECK(fs::exists(t / "tr/coefficients.csv"));
    CHECK(cli("prior-sample --levels 4 --count 5 --seed 2 --out '" + (t / "ps") + "'", t, cd).code == 0);
    std::string trees = slurp(t / "ps/trees.jsonl");
    CHECK(std::count(trees.begin(), trees.end(), '\n') == 5);
    CHECK(cli("bands --n 256 --function full_decay --j0 1 --draws 200 --out '" + (t / "bd") + "'", t, cd).code == 0);
    CHECK(fs::exists(t / "bd/band.json"));
    CHECK(cli("uh build --a 2 --b 5 --D 2 --levels 6 --out '" + (t / "uh") + "'", t, cd).code == 0);
    Run chk = cli("uh check --breakpoints '" + (t / "uh/breakpoints.json") + "' --out '" + (t / "uc") + "'", t, cd);
    CHECK(chk.code == 0);
    CHECK(chk.out.find("weakly balanced") != std::string::npos);
    CHECK(chk.out.find("not weakly balanced") == std::string::npos);
    CHECK(fs::is_empty(t / "cwd"));
    for (const char* d : {"tr", "ps", "bd", "uh", "uc"}) CHECK(fs::exists(t / (std::string(d) + "/manifest.json")));
}
