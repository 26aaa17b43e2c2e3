#include "bcart/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "bcart/config.hpp"
#include "bcart/error.hpp"
#include "bcart/haar.hpp"
#include "bcart/pinball.hpp"
#include "bcart/posterior.hpp"
#include "bcart/serialize.hpp"
#include "bcart/unbalanced_haar.hpp"
#include "bcart/uq.hpp"

namespace bcart {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

CoeffArray random_coeffs(int L, Rng& rng, double scale = 1.0) {
    CoeffArray c(L);
    for (double& v : c.raw()) v = scale * rng.normal();
    return c;
}

Tree random_tree(int cap, Rng& rng) {
    PriorSpec p;
    p.gamma = 1.2 + rng.uniform();
    p.L_max = cap;
    return sample_tree(p, rng);
}

// Each check returns an empty string on success, else what went wrong.
using Check = std::function<std::string(Rng&)>;

std::string haar_roundtrip(Rng& rng) {
    for (int L = 0; L <= 10; ++L) {
        std::vector<double> v(size_t{1} << L);
        for (double& x : v) x = rng.normal();
        CoeffArray c = forward_haar(v);
        GridFunction g = inverse_haar(c);
        double err = 0, e2 = 0, c2 = 0;
        for (size_t i = 0; i < v.size(); ++i) err = std::max(err, std::abs(g[i] - v[i])), e2 += v[i] * v[i];
        for (double x : c.raw()) c2 += x * x;
        if (err > 1e-12) return "inverse(forward) error " + fmt(err) + " at L=" + std::to_string(L);
        if (std::abs(e2 / double(v.size()) - c2) > 1e-10 * (1 + c2)) return "Parseval fails at L=" + std::to_string(L);
    }
    return "";
}

std::string pinball_identities(Rng& rng) {
    for (int i = 0; i < 200; ++i) {
        Tree t = random_tree(10, rng);
        double dev = spectrum_checks(t).max_dev();
        if (dev > 1e-10) return "spectrum deviation " + fmt(dev) + " for tree " + t.key();
    }
    return "";
}

std::string prior_masses(Rng&) {
    auto trees = enumerate_trees(3);
    for (PriorKind k : {PriorKind::galton_watson, PriorKind::cond_uniform, PriorKind::exponential})
        for (int j0 : {0, 1}) {
            PriorSpec p;
            p.kind = k;
            p.L_max = 3;
            p.j0 = j0;
            p.gamma = 2.5;
            double s = 0;
            for (const auto& t : trees)
                if (respects_forced_layers(t, j0)) s += std::exp(log_prior_mass(t, p));
            if (std::abs(s - 1) > 1e-10) return std::string(prior_kind_name(k)) + " masses sum to " + fmt(s);
        }
    return "";
}

std::string dp_matches_enumeration(Rng& rng) {
    for (int rep = 0; rep < 10; ++rep) {
        SequenceData d = simulate(random_coeffs(3, rng, 0.3), 16, rng.next());
        for (PriorKind k : {PriorKind::galton_watson, PriorKind::cond_uniform, PriorKind::exponential}) {
            PriorSpec p;
            p.kind = k;
            p.L_max = 3;
            p.gamma = 2.0;
            bool strat = k == PriorKind::cond_uniform;
            TreePosterior a = posterior_exact(d, p, {}, ExactMethod::enumerate);
            TreePosterior b = posterior_exact(d, p, {}, ExactMethod::dp, strat);
            for (const auto& [t, lw] : a.enumerated()) {
                double diff = std::abs(std::exp(lw) - b.probability(t));
                if (diff > 1e-10) return std::string(prior_kind_name(k)) + " dp differs by " + fmt(diff);
            }
        }
    }
    return "";
}

std::string median_heredity(Rng& rng) {
    for (int rep = 0; rep < 50; ++rep) {
        SequenceData d = simulate(random_coeffs(4, rng, 0.4), 32, rng.next());
        PriorSpec p;
        p.L_max = 4;
        p.gamma = 1.5 + rng.uniform();
        TreePosterior post = posterior_exact(d, p, {}, ExactMethod::dp);
        auto incl = post.inclusion();
        Tree m = median_tree(incl, 4);  // the constructor rejects non-trees
        for (const auto& [v, q] : incl)
            if ((q >= 0.5) != m.contains(v)) return "median tree disagrees with inclusion at " + to_string(v);
    }
    return "";
}

std::string detailed_balance(Rng& rng) {
    SequenceData d = simulate(random_coeffs(4, rng, 0.3), 32, rng.next());
    PriorSpec p;
    p.L_max = 4;
    p.gamma = 2.0;
    for (int i = 0; i < 200; ++i) {
        Tree t = random_tree(4, rng);
        if (t.internal_count() == 0) continue;
        auto g = growable_leaves(t);
        if (g.empty()) continue;
        Tree u = t.with_node(g[rng.below(g.size())]);
        double a = log_accept_ratio(t, u, d, p, {}, true), b = log_accept_ratio(u, t, d, p, {}, true);
        if (std::abs(a + b) > 1e-9) return "grow/prune ratios are not reciprocal: " + fmt(a + b);
    }
    return "";
}

std::string band_geometry(Rng& rng) {
    HolderSpec h{1.0, 1.0};
    SequenceData d = simulate(make_test_function(TestFunction::full_decay, h, 8), 256, rng.next());
    PriorSpec p;
    p.L_max = 8;
    p.j0 = 1;
    TreePosterior post = posterior_exact(d, p, {}, ExactMethod::dp);
    BandSpec bs;
    bs.j0 = 1;
    bs.draws = 400;
    CredibleBand band = build_band(post, d, bs, rng);
    auto env = band_envelope(band);
    for (size_t i = 0; i < env.lower.size(); ++i)
        if (std::abs(env.upper[i] - env.lower[i] - 2 * band.sigma_n) > 1e-12) return "envelope width is not 2 sigma_n";
    if (!(band.sigma_n > 0 && band.R_n > 0)) return "degenerate radii";
    size_t inside = 0;
    for_each_draw(post, d, 400, rng, [&](const Tree&, const CoeffArray& f) { inside += band_membership(f, band, d); });
    // 400 fresh draws: 0.1 is about 5 binomial standard errors
    if (double(inside) / 400 < 1 - bs.gamma - 0.1) return "credibility " + fmt(inside / 400.0);
    return "";
}

std::string unbalanced_haar(Rng& rng) {
    for (auto shape : {BetaShape{1, 1}, BetaShape{2, 5}, BetaShape{1 + 3 * rng.uniform(), 1 + 3 * rng.uniform()}}) {
        auto q = quantile_breakpoints(shape, 2, 7);
        UHSystem s(q.breakpoints);
        if (gram_deviation(s) > 1e-10) return "Gram deviation " + fmt(gram_deviation(s));
    }
    Breakpoints b;
    b.resolution = 4;
    b.b = {{{0, 0}, 8}, {{1, 0}, 7}, {{1, 1}, 12}};
    auto rep = check_weak_balance(UHSystem(b), 5, 2);
    if (rep.verdict({1, 0})->pass() || !rep.verdict({1, 1})->pass()) return "weak balance verdicts are wrong";
    // dyadic breakpoints reproduce the standard transform
    std::vector<double> v(64);
    for (double& x : v) x = rng.normal();
    CoeffArray a = uh_coefficients(GridFunction(v), UHSystem(dyadic_breakpoints(6))), c = forward_haar(v);
    if (ell_inf_norm(a - c) > 1e-12) return "dyadic reduction differs by " + fmt(ell_inf_norm(a - c));
    return "";
}

std::string serialization(Rng& rng) {
    CoeffArray c = random_coeffs(5, rng);
    if (!(coeffs_from_csv(coeffs_to_csv(c)) == c)) return "coefficient CSV round trip";
    if (!(coeffs_from_json(coeffs_to_json(c)) == c)) return "coefficient JSON round trip";
    Tree t = random_tree(6, rng);
    if (!(tree_from_json(tree_to_json(t), 6) == t)) return "tree JSON round trip";
    RunConfig rc = parse_config_json(json{{"seed", 7}, {"experiment", "rates"}});
    if (parse_config_json(config_to_json(rc)).resolved != rc.resolved) return "config round trip";
    return "";
}

}  // namespace

std::vector<CheckResult> run_invariant_suite(uint64_t seed) {
    const std::pair<const char*, Check> checks[] = {
        {"haar_roundtrip", haar_roundtrip},
        {"pinball_identities", pinball_identities},
        {"prior_masses", prior_masses},
        {"dp_matches_enumeration", dp_matches_enumeration},
        {"median_heredity", median_heredity},
        {"detailed_balance", detailed_balance},
        {"band_geometry", band_geometry},
        {"unbalanced_haar", unbalanced_haar},
        {"serialization", serialization},
    };
    std::vector<CheckResult> out;
    for (const auto& [name, fn] : checks) {
        Rng rng(stream_seed(seed, std::string("verify/") + name));
        auto t0 = std::chrono::steady_clock::now();
        CheckResult r;
        r.name = name;
        try {
            r.detail = fn(rng);
            r.passed = r.detail.empty();
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(r);
    }
    return out;
}

}  // namespace bcart
