#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "bcart/error.hpp"
#include "bcart/experiments.hpp"

using namespace bcart;

namespace {

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Tree full_to_depth(int d, int cap) {
    std::vector<NodeId> v;
    for (int l = 0; l < d; ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k) v.push_back({l, k});
    return Tree(v, cap);
}

ExperimentPlan tiny(ExperimentKind k) {
    ExperimentPlan p;
    p.kind = k;
    p.n_grid = {64, 128, 256};
    p.replicates = 4;
    p.draws = 60;
    p.band.draws = 200;
    p.seed = 11;
    p.threads = 2;
    return p;
}

bool same_bits(const ExperimentReport& a, const ExperimentReport& b) {
    if (a.columns != b.columns || a.rows.size() != b.rows.size()) return false;
    for (size_t i = 0; i < a.rows.size(); ++i) {
        if (a.rows[i].size() != b.rows[i].size()) return false;
        if (std::memcmp(a.rows[i].data(), b.rows[i].data(), a.rows[i].size() * sizeof(double)) != 0) return false;
    }
    return true;
}

void self_audit(const ExperimentPlan& plan, const ExperimentReport& r) {
    ExperimentReport copy = r;
    copy.aggregates = json();
    copy.plot.clear();
    summarize(plan, copy);
    CHECK(copy.aggregates == r.aggregates);
    CHECK(copy.plot_csv() == r.plot_csv());
}

}  // namespace

TEST_CASE("ols") {
    auto f = ols({1, 2, 3, 4, 5}, {2, 4, 5, 4, 5});
    CHECK(f.slope == doctest::Approx(0.6));
    CHECK(f.intercept == doctest::Approx(2.2));
    CHECK(f.slope_se == doctest::Approx(std::sqrt(0.08)));
    auto g = ols({0, 1, 2}, {1, 3, 5});
    CHECK(g.slope == doctest::Approx(2));
    CHECK(g.slope_se == doctest::Approx(0).epsilon(1e-12));
    CHECK(std::isnan(ols({0, 1}, {0, 1}).slope_se));
    CHECK_THROWS_AS(ols({1, 1, 1}, {0, 1, 2}), Error);
    CHECK_THROWS_AS(ols({1}, {1}), Error);
}

TEST_CASE("wilson interval") {
    auto ci = wilson_interval(90, 100);
    CHECK(ci.lo == doctest::Approx(0.82565).epsilon(1e-4));
    CHECK(ci.hi == doctest::Approx(0.94479).epsilon(1e-4));
    CHECK(wilson_interval(0, 10).lo == 0);
    CHECK(wilson_interval(10, 10).hi == 1);
    CHECK(wilson_interval(10, 10).lo > 0.6);
    CHECK_THROWS_AS(wilson_interval(11, 10), Error);
}

TEST_CASE("mean and standard error") {
    CHECK(mean_of({1, 2, 3, 6}) == 3);
    CHECK(stderr_of({1, 2, 3, 6}) == doctest::Approx(std::sqrt(14.0 / 3 / 4)));
    CHECK(std::isnan(stderr_of({1})));
    CHECK(std::isnan(mean_of({})));
}

TEST_CASE("KS distance against a grid oracle") {
    CHECK(ks_to_standard_normal({0.0}) == doctest::Approx(0.5));
    Rng rng(4);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> s(40);
        for (double& x : s) x = 0.5 * rep + rng.normal();
        double exact = ks_to_standard_normal(s);
        // sup over a fine grid, from both sides of every jump
        double grid = 0;
        for (int i = -60000; i <= 60000; ++i) {
            double x = i * 1e-4;
            double F = 0;
            for (double v : s) F += v <= x;
            grid = std::max(grid, std::abs(F / 40 - phi(x)));
        }
        CHECK(grid <= exact + 1e-12);
        CHECK(exact - grid < 1e-3);
    }
}

TEST_CASE("mixture KS and TV") {
    CHECK(ks_mixture_to_standard_normal({1}, {0}, {1}) < 1e-15);
    // a shifted unit normal: sup is at the midpoint
    CHECK(ks_mixture_to_standard_normal({1}, {0.4}, {1}) == doctest::Approx(2 * phi(0.2) - 1).epsilon(1e-6));
    CHECK(ks_mixture_to_standard_normal({0.5, 0.5}, {-0.4, 0.4}, {1, 1}) <
          ks_mixture_to_standard_normal({1}, {0.4}, {1}));
    CHECK(tv_normal(0, 1, 0, 1) < 1e-12);
    CHECK(tv_normal(0, 1, 1, 1) == doctest::Approx(2 * phi(0.5) - 1).epsilon(1e-6));
    CHECK(tv_normal(0, 1, 30, 1) == doctest::Approx(1).epsilon(1e-6));
}

TEST_CASE("rate scales") {
    double n = 16384, ln = std::log(n);
    CHECK(sup_rate(n, 1) == doctest::Approx(std::cbrt(ln * ln / n)));
    CHECK(flat_rate(n, 1) == doctest::Approx(std::pow(ln / n, 0.25)));
    CHECK(band_diameter_scale(n, 1, 2) == doctest::Approx(2 * std::cbrt(ln / n)));
    // M^{1/(a+1/2)} (n / log^2 n)^{1/(2a+1)} = 5.58.. at n = 2^14, a = M = 1
    CHECK(sharp_spike_level(n, {1, 1}) == 3);
    CHECK(sharp_spike_level(n, {1, 4}) == 4);  // 4^{2/3} * 5.58 = 14.1
}

TEST_CASE("flat-tree posterior matches enumeration over flat trees") {
    HolderSpec h{0.5, 4};
    for (int rep = 0; rep < 4; ++rep) {
        int L = 6;
        double n = 256;
        auto d = simulate(make_test_function(TestFunction::single_branch_decay, h, L), n, 100 + rep, L);
        double decay = 0.7 * rep;
        auto fp = flat_tree_posterior(d, decay);
        std::vector<double> lw;
        for (int dd = 0; dd <= L; ++dd) lw.push_back(-decay * dd + log_marginal_likelihood(full_to_depth(dd, L), d, CovSpec{}));
        double z = log_sum_exp(lw);
        REQUIRE(fp.log_weights.size() == lw.size());
        double s = 0;
        for (size_t i = 0; i < lw.size(); ++i) {
            CHECK(std::exp(fp.log_weights[i]) == doctest::Approx(std::exp(lw[i] - z)).epsilon(1e-10));
            s += std::exp(fp.log_weights[i]);
        }
        CHECK(s == doctest::Approx(1).epsilon(1e-12));
        CHECK(fp.mean_depth() >= 0);
        CHECK(fp.mode_depth() == int(std::max_element(lw.begin(), lw.end()) - lw.begin()));
    }
}

TEST_CASE("flat-tree draws") {
    int L = 5;
    double n = 1024;
    auto d = simulate(make_test_function(TestFunction::full_decay, {1, 1}, L), n, 3, L);
    auto fp = flat_tree_posterior(d, 1);
    Rng rng(5);
    std::vector<int> hist(L + 1, 0);
    const int N = 20000;
    double root = 0;
    for (int i = 0; i < N; ++i) {
        CoeffArray f = flat_tree_draw(fp, d, rng);
        int depth = 0;
        for (int l = 0; l < L; ++l)
            if (f.at(l, 0) != 0) depth = l + 1;
        // every level below the sampled depth is zero
        for (int l = depth; l < L; ++l)
            for (double v : f.level(l)) CHECK(v == 0);
        ++hist[depth];
        root += f.root();
    }
    for (int dd = 0; dd <= L; ++dd) {
        double p = std::exp(fp.log_weights[dd]);
        CHECK(std::abs(hist[dd] / double(N) - p) <= 5 * std::sqrt(p * (1 - p) / N) + 1e-9);
    }
    CHECK(root / N == doctest::Approx(n / (n + 1) * d.X.root()).epsilon(5 / std::sqrt(n * N)));
}

TEST_CASE("flat oracle cutoff") {
    CHECK(flat_oracle_cutoff(CoeffArray(8), 1000) == 0);
    Rng rng(6);
    for (int rep = 0; rep < 20; ++rep) {
        CoeffArray c(7);
        for (int l = 0; l < 7; ++l)
            for (double& v : c.level(l)) v = std::pow(2.0, -l) * rng.normal();
        double n = std::ldexp(1.0, 6 + int(rng.below(8)));
        int best = -1;
        double bc = INFINITY;
        for (int D = 0; D < 7; ++D) {
            double tail = 0;
            for (int l = D + 1; l < 7; ++l)
                for (double v : c.level(l)) tail += v * v;
            double cost = std::pow(2.0, D) * std::log(n + 1) + n / 2 * tail;
            if (cost < bc) bc = cost, best = D;
        }
        CHECK(flat_oracle_cutoff(c, n) == best);
    }
}

TEST_CASE("experiment kind names") {
    for (auto k : {ExperimentKind::rates, ExperimentKind::sharp, ExperimentKind::coverage, ExperimentKind::bvm,
                   ExperimentKind::flat_vs_cart, ExperimentKind::diagnostics})
        CHECK(parse_experiment_kind(experiment_kind_name(k)) == k);
    CHECK(std::string(experiment_kind_name(ExperimentKind::flat_vs_cart)) == "flat-vs-cart");
    CHECK_THROWS_AS(parse_experiment_kind("nope"), Error);
}

TEST_CASE("plan validation") {
    ExperimentPlan p = tiny(ExperimentKind::rates);
    CHECK_NOTHROW(p.validate());
    auto bad = [&](auto edit) {
        ExperimentPlan q = p;
        edit(q);
        CHECK_THROWS_AS(q.validate(), Error);
    };
    bad([](ExperimentPlan& q) { q.n_grid.clear(); });
    bad([](ExperimentPlan& q) { q.n_grid = {64, 100}; });
    bad([](ExperimentPlan& q) { q.n_grid = {128, 64}; });
    bad([](ExperimentPlan& q) { q.replicates = 0; });
    bad([](ExperimentPlan& q) { q.gamma_sensitivity = {0.5}; });
    bad([](ExperimentPlan& q) {
        q.kind = ExperimentKind::bvm;
        q.prior.j0 = 0;
    });
    bad([](ExperimentPlan& q) {
        q.kind = ExperimentKind::bvm;
        q.prior.j0 = 1;
        q.coordinates = {{1, 0}};
    });
    CHECK(p.levels_for(256) == 8);
    p.L_max_override = 5;
    CHECK(p.levels_for(256) == 5);
    CHECK(p.levels_for(16) == 4);
}

TEST_CASE("rates: determinism, layout and self-audit") {
    ExperimentPlan p = tiny(ExperimentKind::rates);
    p.gamma_sensitivity = {41};
    auto a = run_experiment(p);
    CHECK(a.rows.size() == 3 * 4 * 2);
    ExperimentPlan q = p;
    q.threads = 1;
    auto b = run_experiment(q);
    CHECK(same_bits(a, b));
    CHECK(a.raw_csv() == b.raw_csv());
    // rows come back in grid order whatever the scheduling
    for (size_t i = 1; i < a.rows.size(); ++i) CHECK(a.rows[i][0] >= a.rows[i - 1][0]);
    for (const auto& row : a.rows) CHECK(row[a.column("loss")] > 0);
    self_audit(p, a);
    REQUIRE(a.aggregates["fits"].size() == 2);
    CHECK(a.aggregates["fits"][0]["target_slope"].get<double>() == doctest::Approx(-1.0 / 3));
    ExperimentPlan other = p;
    other.seed = 12;
    CHECK_FALSE(same_bits(a, run_experiment(other)));
    CHECK_THROWS_AS(a.column("nope"), Error);
}

TEST_CASE("rates: zero truth reports the alpha = 1 comparison") {
    ExperimentPlan p = tiny(ExperimentKind::rates);
    p.zero_truth = true;
    auto r = run_experiment(p);
    CHECK(r.aggregates["fits"][0].contains("at_least_alpha1_rate"));
    self_audit(p, r);
}

TEST_CASE("sharp probe") {
    ExperimentPlan p = tiny(ExperimentKind::sharp);
    p.truth = TestFunction::spike;
    auto r = run_experiment(p);
    CHECK(r.rows.size() == 3 * 4 * 2);
    size_t big = r.column("prob_m2"), inc = r.column("inclusion");
    for (const auto& row : r.rows) {
        CHECK(row[big] == 1.0);  // m = 1e12 covers everything
        CHECK(row[inc] >= 0);
        CHECK(row[inc] <= 1);
        CHECK(row[r.column("prob_m0")] <= row[r.column("prob_m1")]);
    }
    self_audit(p, r);
    p.spike_inflation = 0;
    CHECK(run_experiment(p).rows.size() == 3 * 4);
}

TEST_CASE("coverage experiment") {
    ExperimentPlan p = tiny(ExperimentKind::coverage);
    p.truth = TestFunction::full_decay;
    p.prior.j0 = 2;
    auto r = run_experiment(p);
    CHECK(r.rows.size() == 12);
    for (const auto& row : r.rows) {
        double c = row[r.column("covered")];
        CHECK((c == 0 || c == 1));
        CHECK(row[r.column("diameter")] == doctest::Approx(2 * row[r.column("sigma_n")]));
        CHECK(row[r.column("credibility")] >= 0);
    }
    self_audit(p, r);
    ExperimentPlan zero = p;
    zero.zero_truth = true;
    try {
        run_experiment(zero);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::precondition);
    }
}

TEST_CASE("bvm check") {
    ExperimentPlan p = tiny(ExperimentKind::bvm);
    p.truth = TestFunction::full_decay;
    p.prior.j0 = 1;
    p.draws = 400;
    p.bvm_g_levels = 3;
    auto r = run_experiment(p);
    CHECK(r.rows.size() == 3 * 4 * 2);
    for (const auto& row : r.rows) {
        CHECK(row[r.column("ks")] > 0);
        CHECK(row[r.column("ks")] < 0.2);
        CHECK(row[r.column("tv_bound")] >= 0);
    }
    // identity: the exact marginal is N(-sqrt(n) X/(n+1), n/(n+1))
    for (const auto& row : r.rows) {
        if (row[r.column("prior")] != double(CovKind::identity)) continue;
        double n = row[0];
        CHECK(row[r.column("ks_exact")] < 1.0 / std::sqrt(n));
    }
    self_audit(p, r);
}

TEST_CASE("flat versus CART") {
    ExperimentPlan p = tiny(ExperimentKind::flat_vs_cart);
    p.truth = TestFunction::single_branch_decay;
    p.holder = {0.5, 4};
    auto r = run_experiment(p);
    CHECK(r.rows.size() == 12);
    for (const auto& row : r.rows) {
        CHECK(row[r.column("loss_flat")] > 0);
        CHECK(row[r.column("loss_cart")] > 0);
    }
    self_audit(p, r);
    CHECK(r.aggregates["per_n"].size() == 3);
}

TEST_CASE("proof diagnostics") {
    ExperimentPlan p = tiny(ExperimentKind::diagnostics);
    p.truth = TestFunction::full_decay;
    p.holder = {1, 4};
    p.n_grid = {1024};
    p.replicates = 6;
    auto r = run_experiment(p);
    CHECK(r.rows.size() == 6);
    for (const auto& row : r.rows) {
        CHECK(row[r.column("depth_exceed")] >= 0);
        CHECK(row[r.column("depth_exceed")] <= 1);
    }
    self_audit(p, r);
    CHECK(r.aggregates["per_n"][0]["replicates"] == 6);
}

TEST_CASE("report serialization") {
    ExperimentPlan p = tiny(ExperimentKind::rates);
    p.n_grid = {64, 128};
    p.replicates = 2;
    auto r = run_experiment(p);
    std::string csv = r.raw_csv();
    CHECK(csv.rfind("n,replicate,gamma,loss,loss_mc_se,mean_depth\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);
    CHECK(r.plot_csv().rfind("series,x,y,err\n", 0) == 0);
    json agg = json::parse(r.aggregate_json());
    CHECK(agg["raw_rows"] == 4);
    CHECK(agg["kind"] == "rates");
    CHECK(plan_to_json(p)["n_grid"].size() == 2);
}
