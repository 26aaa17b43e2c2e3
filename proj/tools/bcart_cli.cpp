#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bcart/config.hpp"
#include "bcart/error.hpp"
#include "bcart/experiments.hpp"
#include "bcart/haar.hpp"
#include "bcart/posterior.hpp"
#include "bcart/serialize.hpp"
#include "bcart/unbalanced_haar.hpp"
#include "bcart/uq.hpp"
#include "bcart/verify.hpp"

using namespace bcart;
namespace fs = std::filesystem;

namespace {

// Plain numbers (one per line or comma separated) or the role,l,k,value grid CSV.
GridFunction read_grid(const std::string& path) {
    std::string text = read_file(path);
    if (text.rfind("role", 0) == 0) return grid_from_csv(text);
    for (char& c : text)
        if (c == ',') c = '\n';
    std::istringstream is(text);
    std::vector<double> v;
    std::string tok;
    while (is >> tok) {
        try {
            size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            fail(ErrorKind::invalid_input, path + ": not a number: '" + tok + "'");
        }
    }
    if (ilog2_exact(v.size()) < 0) fail(ErrorKind::invalid_input, path + ": length must be a power of two");
    return GridFunction(std::move(v));
}

struct DataOptions {
    std::string data_file;
    std::string function = "full_decay";
    double alpha = 1.0, M = 1.0;
    int spike_level = -1;
    double n = 1024;
    uint64_t seed = 1;
    int levels = -1;

    void add(CLI::App* app) {
        app->add_option("--data", data_file, "observed coefficients (role,l,k,value CSV); otherwise simulated");
        app->add_option("--function", function, "truth for simulation: cusp, spike, full_decay, single_branch_decay");
        app->add_option("--alpha", alpha, "Holder exponent of the truth");
        app->add_option("--M", M, "Holder radius of the truth");
        app->add_option("--spike-level", spike_level, "spike level (default: lower-bound construction)");
        app->add_option("--n", n, "sample size")->check(CLI::PositiveNumber);
        app->add_option("--seed", seed, "seed");
        app->add_option("--levels", levels, "number of levels (default floor(log2 n))");
    }

    SequenceData load() const {
        if (!data_file.empty()) {
            SequenceData d;
            d.X = coeffs_from_csv(read_file(data_file));
            if (levels >= 0) d.X = d.X.resized(levels);
            d.n = n;
            return d;
        }
        int L = levels >= 0 ? levels : floor_log2(uint64_t(n));
        HolderSpec h{alpha, M};
        TestFunction k = parse_test_function(function);
        int sl = spike_level;
        if (k == TestFunction::spike && sl < 0) sl = std::min(sharp_spike_level(n, h), L - 1);
        return simulate(make_test_function(k, h, L, std::max(sl, 0)), n, stream_seed(seed, "cli/data"), L);
    }
};

struct PriorOptions {
    std::string kind = "gw", cov = "identity";
    double gamma = 4, exponent = 1, lambda = 1, c = 1, g = 0, rho = 0.5;
    int j0 = 0;

    void add(CLI::App* app) {
        app->add_option("--prior", kind, "gw, cond_uniform or exponential");
        app->add_option("--gamma", gamma, "GW split decay Gamma");
        app->add_option("--exponent", exponent, "GW depth exponent");
        app->add_option("--lambda", lambda, "cond_uniform leaf-count parameter");
        app->add_option("--c", c, "exponential prior constant");
        app->add_option("--j0", j0, "forced layers");
        app->add_option("--cov", cov, "identity, g_prior or ar1");
        app->add_option("--g", g, "g-prior scale (default n)");
        app->add_option("--rho", rho, "AR(1) correlation");
    }

    PriorSpec prior(int L, double n) const {
        PriorSpec p;
        p.kind = parse_prior_kind(kind);
        p.gamma = gamma, p.exponent = exponent, p.lambda = lambda, p.c = c;
        p.j0 = j0, p.L_max = L, p.n = n;
        p.validate();
        return p;
    }

    CovSpec covariance(double n) const {
        CovSpec s;
        s.kind = parse_cov_kind(cov);
        s.g = g > 0 ? g : n;
        s.rho = rho;
        s.n = n;
        s.validate();
        return s;
    }
};

std::string resolve_out(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("BCART_OUTPUT_DIR"); env && *env) return env;
    return ".";
}

RunManifest start_manifest(const std::string& command, json config) {
    RunManifest m;
    m.command = command;
    m.config = std::move(config);
    m.started = utc_timestamp();
    return m;
}

std::string inclusion_csv(const InclusionMap& incl) {
    std::string s = "l,k,inclusion\n";
    for (const auto& [v, p] : incl) s += std::to_string(v.l) + "," + std::to_string(v.k) + "," + format_double(p) + "\n";
    return s;
}

TreePosterior run_posterior(const std::string& method, bool stratified, size_t iters, const SequenceData& d,
                            const PriorSpec& p, const CovSpec& cov, Rng& rng) {
    if (method == "enumerate") return posterior_exact(d, p, cov, ExactMethod::enumerate);
    if (method == "dp") return posterior_exact(d, p, cov, ExactMethod::dp, stratified);
    if (method == "mcmc") return posterior_mcmc(d, p, cov, iters, rng);
    fail(ErrorKind::invalid_input, "unknown method '" + method + "' (enumerate, dp, mcmc)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian dyadic CART: Haar transforms, tree posteriors, credible bands and experiments"};
    app.require_subcommand(1);
    app.fallthrough();  // subcommands inherit this, so --out may follow the subcommand
    std::string out_flag;
    app.add_option("--out", out_flag, "output directory (default $BCART_OUTPUT_DIR, else .)");

    // transform
    auto* tr = app.add_subcommand("transform", "forward or inverse Haar transform");
    std::string tr_input;
    bool tr_inverse = false;
    DataOptions tr_fn;
    int tr_levels = 10;
    tr->add_option("--input", tr_input, "grid values, or coefficients with --inverse");
    tr->add_flag("--inverse", tr_inverse, "coefficients to grid values");
    tr->add_option("--function", tr_fn.function, "test function to transform when no input is given");
    tr->add_option("--alpha", tr_fn.alpha, "Holder exponent");
    tr->add_option("--M", tr_fn.M, "Holder radius");
    tr->add_option("--spike-level", tr_fn.spike_level, "spike level");
    tr->add_option("--levels", tr_levels, "levels for a test function")->check(CLI::Range(0, 24));

    // prior-sample
    auto* ps = app.add_subcommand("prior-sample", "draw trees from a tree prior");
    PriorOptions ps_p;
    ps_p.add(ps);
    int ps_levels = 6;
    size_t ps_count = 100;
    uint64_t ps_seed = 1;
    ps->add_option("--levels", ps_levels, "depth cap L_max")->check(CLI::Range(0, 30));
    ps->add_option("--count", ps_count, "number of trees");
    ps->add_option("--seed", ps_seed, "seed");

    // posterior
    auto* po = app.add_subcommand("posterior", "tree posterior: inclusion probabilities and top trees");
    DataOptions po_d;
    PriorOptions po_p;
    po_d.add(po);
    po_p.add(po);
    std::string po_method = "dp";
    bool po_strat = false;
    size_t po_iters = 20000, po_top = 10;
    po->add_option("--method", po_method, "enumerate, dp or mcmc");
    po->add_flag("--stratified", po_strat, "leaf-count-stratified dp (cond_uniform)");
    po->add_option("--iters", po_iters, "MCMC iterations");
    po->add_option("--top", po_top, "number of top trees reported");

    // bands
    auto* bd = app.add_subcommand("bands", "median-tree credible band");
    DataOptions bd_d;
    PriorOptions bd_p;
    bd_d.add(bd);
    bd_p.add(bd);
    double bd_gamma = 0.05, bd_vn = 0;
    size_t bd_draws = 2000;
    std::string bd_method = "dp", bd_weights = "linear";
    bd->add_option("--band-gamma", bd_gamma, "credibility level gamma in (0,1)");
    bd->add_option("--vn", bd_vn, "v_n (default (log n)^0.75)");
    bd->add_option("--draws", bd_draws, "posterior draws for R_n");
    bd->add_option("--method", bd_method, "enumerate, dp or mcmc");
    bd->add_option("--weights", bd_weights, "linear or sqrt_log");

    // uh
    auto* uh = app.add_subcommand("uh", "unbalanced Haar systems");
    uh->require_subcommand(1);
    auto* uh_build = uh->add_subcommand("build", "quantile breakpoints of a Beta density");
    double uh_a = 1, uh_b = 1;
    int uh_D = 2, uh_L = 6;
    std::string uh_round = "level";
    uh_build->add_option("--a", uh_a, "Beta shape a")->check(CLI::PositiveNumber);
    uh_build->add_option("--b", uh_b, "Beta shape b")->check(CLI::PositiveNumber);
    uh_build->add_option("--D", uh_D, "balance offset D")->check(CLI::Range(1, 20));
    uh_build->add_option("--levels", uh_L, "L_max")->check(CLI::Range(1, 20));
    uh_build->add_option("--rounding", uh_round, "level or finest");
    auto* uh_check = uh->add_subcommand("check", "weak balance verdicts");
    std::string uh_bp;
    int64_t uh_E = 0;
    uh_check->add_option("--breakpoints", uh_bp, "breakpoints JSON")->required();
    uh_check->add_option("--E", uh_E, "E (default: from the breakpoints file when present)");
    uh_check->add_option("--D", uh_D, "D");
    auto* uh_tr = uh->add_subcommand("transform", "coefficients of a grid function in an unbalanced system");
    std::string uh_in;
    uh_tr->add_option("--breakpoints", uh_bp, "breakpoints JSON")->required();
    uh_tr->add_option("--input", uh_in, "grid values")->required();

    // experiment
    auto* ex = app.add_subcommand("experiment", "replicated experiments");
    std::string ex_kind, ex_config;
    ex->add_option("kind", ex_kind, "rates, sharp, coverage, bvm, flat-vs-cart, diagnostics")->required();
    ex->add_option("--config", ex_config, "JSON configuration");

    // verify
    auto* vf = app.add_subcommand("verify", "run the invariant suite");
    uint64_t vf_seed = 1;
    vf->add_option("--seed", vf_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    try {
        if (*vf) {
            bool ok = true;
            for (const auto& r : run_invariant_suite(vf_seed)) {
                std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.seconds << " s)";
                if (!r.passed) std::cout << ": " << r.detail;
                std::cout << "\n";
                ok = ok && r.passed;
            }
            return ok ? 0 : 1;
        }

        std::string out = resolve_out(out_flag);
        if (*ex) {
            json doc = json::object();
            if (!ex_config.empty()) {
                try {
                    doc = json::parse(read_file(ex_config));
                } catch (const json::parse_error& e) {
                    fail(ErrorKind::invalid_input, "config: not valid JSON: " + std::string(e.what()));
                }
            }
            if (!doc.is_object()) fail(ErrorKind::invalid_input, "config: top level must be an object");
            if (doc.contains("experiment") && doc["experiment"].is_string())
                doc["experiment"] = json{{"kind", doc["experiment"]}};
            if (!doc.contains("experiment")) doc["experiment"] = json::object();
            if (!doc["experiment"].is_object()) fail(ErrorKind::invalid_input, "config: experiment must be an object");
            if (doc["experiment"].contains("kind") && doc["experiment"]["kind"] != ex_kind)
                fail(ErrorKind::invalid_input, "config: experiment.kind disagrees with the command line");
            doc["experiment"]["kind"] = ex_kind;
            RunConfig rc = parse_config_json(doc);
            for (const auto& d : rc.defaulted) std::cerr << "default: " << d << "\n";
            if (out_flag.empty() && !rc.output_dir.empty()) out = rc.output_dir;
            RunManifest m = start_manifest("experiment " + ex_kind, config_to_json(rc));
            ExperimentReport r = run_experiment(rc.plan);
            m.write_output(out, "config", "resolved_config.json", config_to_json(rc).dump(2) + "\n");
            m.write_output(out, "raw", "raw.csv", r.raw_csv());
            m.write_output(out, "aggregate", "aggregate.json", r.aggregate_json());
            m.write_output(out, "plot", "plot.csv", r.plot_csv());
            m.write(out);
            std::cout << r.aggregates.dump(2) << "\n";
            return 0;
        }

        if (*tr) {
            RunManifest m = start_manifest("transform", {{"input", tr_input}, {"inverse", tr_inverse}});
            if (tr_inverse) {
                if (tr_input.empty()) fail(ErrorKind::invalid_input, "--inverse needs --input");
                GridFunction g = inverse_haar(coeffs_from_csv(read_file(tr_input)));
                m.write_output(out, "grid", "grid.csv", grid_to_csv(g));
            } else {
                CoeffArray c;
                if (!tr_input.empty()) {
                    c = forward_haar(read_grid(tr_input));
                } else {
                    HolderSpec h{tr_fn.alpha, tr_fn.M};
                    c = make_test_function(parse_test_function(tr_fn.function), h, tr_levels,
                                           std::max(tr_fn.spike_level, 0));
                }
                m.write_output(out, "coefficients", "coefficients.csv", coeffs_to_csv(c));
                m.write_output(out, "coefficients", "coefficients.json", coeffs_to_json(c).dump() + "\n");
            }
            m.write(out);
            return 0;
        }

        if (*ps) {
            PriorSpec p = ps_p.prior(ps_levels, 0);
            Rng rng(stream_seed(ps_seed, "cli/prior-sample"));
            std::string lines;
            double leaves = 0;
            for (size_t i = 0; i < ps_count; ++i) {
                Tree t = sample_tree(p, rng);
                leaves += double(t.leaf_count());
                lines += tree_to_json(t).dump() + "\n";
            }
            RunManifest m = start_manifest("prior-sample", {{"prior", ps_p.kind}, {"gamma", ps_p.gamma},
                                                            {"levels", ps_levels}, {"count", ps_count},
                                                            {"seed", ps_seed}});
            m.write_output(out, "trees", "trees.jsonl", lines);
            m.write(out);
            std::cout << "mean leaf count " << leaves / double(std::max<size_t>(ps_count, 1)) << "\n";
            return 0;
        }

        if (*po || *bd) {
            bool band = bool(*bd);
            const DataOptions& dopt = band ? bd_d : po_d;
            const PriorOptions& popt = band ? bd_p : po_p;
            SequenceData d = dopt.load();
            PriorSpec p = popt.prior(d.L_max(), d.n);
            CovSpec cov = popt.covariance(d.n);
            Rng rng(stream_seed(dopt.seed, band ? "cli/bands" : "cli/posterior"));
            std::string method = band ? bd_method : po_method;
            bool strat = band ? p.kind == PriorKind::cond_uniform : po_strat;
            TreePosterior post = run_posterior(method, strat, po_iters, d, p, cov, rng);
            json cfg{{"method", method}, {"prior", popt.kind}, {"gamma", popt.gamma}, {"j0", popt.j0},
                     {"cov", popt.cov}, {"n", d.n}, {"levels", d.L_max()}, {"seed", dopt.seed}};
            RunManifest m = start_manifest(band ? "bands" : "posterior", cfg);
            if (!band) {
                json top = json::array();
                for (const auto& [t, pr] : post.top_trees(po_top)) top.push_back({{"tree", tree_to_json(t)}, {"p", pr}});
                m.write_output(out, "inclusion", "inclusion.csv", inclusion_csv(post.inclusion()));
                m.write_output(out, "top_trees", "top_trees.json", top.dump(2) + "\n");
            } else {
                BandSpec bs;
                bs.gamma = bd_gamma;
                bs.v_n = bd_vn;
                bs.j0 = p.j0;
                bs.draws = bd_draws;
                bs.weights = weights_from_rule(bd_weights);
                bs.validate();
                CredibleBand b = build_band(post, d, bs, rng, method == "mcmc" ? 0.02 : 1e-9);
                auto env = band_envelope(b);
                auto center = inverse_haar(b.center).values();
                std::string csv = "i,lower,center,upper\n";
                for (size_t i = 0; i < center.size(); ++i)
                    csv += std::to_string(i) + "," + format_double(env.lower[i]) + "," + format_double(center[i]) + "," +
                           format_double(env.upper[i]) + "\n";
                json bj{{"sigma_n", b.sigma_n}, {"R_n", b.R_n}, {"gamma", bs.gamma}, {"v_n", bs.resolved_vn(d.n)},
                        {"median_tree", tree_to_json(b.median)}, {"center", coeffs_to_json(b.center)}};
                m.write_output(out, "band", "band.json", bj.dump(2) + "\n");
                m.write_output(out, "envelope", "envelope.csv", csv);
            }
            m.write(out);
            return 0;
        }

        if (*uh) {
            if (*uh_build) {
                QuantileRounding mode = uh_round == "finest" ? QuantileRounding::finest : QuantileRounding::level;
                if (uh_round != "finest" && uh_round != "level")
                    fail(ErrorKind::invalid_input, "--rounding must be level or finest");
                auto q = quantile_breakpoints(BetaShape{uh_a, uh_b}, uh_D, uh_L, mode);
                json j = breakpoints_to_json(q.breakpoints);
                j["E_lemma"] = q.E_lemma;
                j["D"] = q.D;
                j["C_q"] = q.C_q;
                RunManifest m = start_manifest("uh build", {{"a", uh_a}, {"b", uh_b}, {"D", uh_D}, {"levels", uh_L},
                                                            {"rounding", uh_round}});
                m.write_output(out, "breakpoints", "breakpoints.json", j.dump(2) + "\n");
                m.write(out);
                return 0;
            }
            json bj = json::parse(read_file(uh_bp));
            UHSystem s(breakpoints_from_json(bj));
            if (*uh_check) {
                int64_t E = uh_E > 0 ? uh_E : bj.value("E_lemma", int64_t{0});
                if (E <= 0) fail(ErrorKind::invalid_input, "uh check needs --E");
                if (bj.contains("D") && !uh_check->count("--D")) uh_D = bj["D"].get<int>();
                auto rep = check_weak_balance(s, E, uh_D);
                std::string csv = "l,k,max_side,min_side,M,m,pass\n";
                for (const auto& v : rep.nodes)
                    csv += std::to_string(v.node.l) + "," + std::to_string(v.node.k) + "," + format_double(v.max_side) +
                           "," + format_double(v.min_side) + "," + std::to_string(v.M) + "," + std::to_string(v.m) +
                           "," + (v.pass() ? "1" : "0") + "\n";
                RunManifest m = start_manifest("uh check", {{"breakpoints", uh_bp}, {"E", E}, {"D", uh_D}});
                m.write_output(out, "balance", "balance.csv", csv);
                m.write(out);
                std::cout << (rep.all_pass() ? "weakly balanced" : "not weakly balanced") << "\n";
                return 0;
            }
            CoeffArray c = uh_coefficients(read_grid(uh_in), s);
            RunManifest m = start_manifest("uh transform", {{"breakpoints", uh_bp}, {"input", uh_in}});
            m.write_output(out, "coefficients", "coefficients.csv", coeffs_to_csv(c));
            m.write(out);
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error (" << kind_name(e.kind()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << app.help();
    return 2;
}
