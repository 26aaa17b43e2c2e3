#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "bcart/error.hpp"
#include "bcart/serialize.hpp"
#include "bcart/tree.hpp"
#include "oracles.hpp"

using namespace bcart;

namespace {

void check_invariants(const Tree& t) {
    for (const NodeId& v : t.internal()) {
        CHECK(v.l < t.max_depth_cap());
        if (v.l >= 1) CHECK(t.contains(v.parent()));
    }
    CHECK(t.leaves().size() == t.internal_count() + 1);
    for (const NodeId& v : t.leaves()) {
        CHECK_FALSE(t.contains(v));
        if (v.l >= 1) CHECK(t.contains(v.parent()));
    }
}

PriorSpec gw(double gamma, int L, int j0 = 0) {
    PriorSpec s;
    s.kind = PriorKind::galton_watson;
    s.gamma = gamma;
    s.L_max = L;
    s.j0 = j0;
    return s;
}

// Frequencies over `draws` samples against exact masses, 3 standard errors per tree.
void check_sampler(const PriorSpec& spec, size_t draws, uint64_t seed) {
    Rng rng(seed);
    std::map<Tree, size_t> freq;
    for (size_t i = 0; i < draws; ++i) {
        Tree t = sample_tree(spec, rng);
        ++freq[t];
    }
    for (const Tree& t : enumerate_trees(spec.L_max)) {
        double p = respects_forced_layers(t, spec.j0) ? std::exp(log_prior_mass(t, spec)) : 0.0;
        double phat = double(freq[t]) / double(draws);
        double se = std::sqrt(std::max(p * (1 - p), 1e-12) / double(draws));
        CHECK_MESSAGE(std::abs(phat - p) <= 3 * se + 1e-12, "tree ", t.key(), " p=", p, " phat=", phat);
    }
}

}  // namespace

TEST_CASE("node ids") {
    NodeId v{2, 3};
    CHECK(v.index() == 7);
    CHECK(NodeId::from_index(7) == v);
    CHECK(NodeId::from_index(0) == kRootNode);
    CHECK(v.parent() == NodeId{1, 1});
    CHECK(v.left() == NodeId{3, 6});
    CHECK_FALSE((NodeId{1, 2}.valid()));
    CHECK((NodeId{1, 0} < NodeId{1, 1}));
    CHECK((NodeId{1, 1} < NodeId{2, 0}));
}

TEST_CASE("tree invariants are enforced") {
    CHECK_THROWS_AS(Tree({{1, 0}}, 3), Error);         // heredity
    CHECK_THROWS_AS(Tree({{0, 0}, {1, 0}}, 1), Error);  // depth cap
    Tree t({{0, 0}, {1, 1}}, 3);
    CHECK(t.depth() == 2);
    CHECK(t.leaf_count() == 3);
    CHECK(t.leaves() == std::vector<NodeId>{{1, 0}, {2, 2}, {2, 3}});
    CHECK(Tree(3).leaves() == std::vector<NodeId>{{0, 0}});
    CHECK(t.coefficient_nodes().front() == kRootNode);
    check_invariants(t);
}

TEST_CASE("GW examples") {
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(sample_tree(gw(4, 1), rng) == flat_tree(1, 1));
    Tree root_only({{0, 0}}, 2);
    CHECK(log_prior_mass(root_only, gw(4, 2)) == doctest::Approx(std::log(9.0 / 16.0)));
    Tree empty(2);
    CHECK(std::exp(log_prior_mass(empty, gw(4, 2))) == doctest::Approx(0.0));
}

TEST_CASE("GW sampler frequencies match masses") {
    check_sampler(gw(4, 3), 100000, 7);
    check_sampler(gw(2, 3, 1), 100000, 8);
}

TEST_CASE("cond_uniform and exponential samplers match masses") {
    PriorSpec cu;
    cu.kind = PriorKind::cond_uniform;
    cu.lambda = 2.0;
    cu.L_max = 3;
    check_sampler(cu, 100000, 9);
    PriorSpec ex;
    ex.kind = PriorKind::exponential;
    ex.c = 0.3;
    ex.n = 16;
    ex.L_max = 3;
    check_sampler(ex, 100000, 10);
}

TEST_CASE("forced layers") {
    Rng rng(2);
    auto spec = gw(8, 6, 3);
    for (int i = 0; i < 500; ++i) {
        Tree t = sample_tree(spec, rng);
        check_invariants(t);
        for (uint64_t j = 1; j < 8; ++j) CHECK(t.contains(NodeId::from_index(j)));
    }
    CHECK_THROWS_AS(log_prior_mass(flat_tree(2, 6), spec), Error);
}

TEST_CASE("masses sum to one for every prior") {
    for (int L = 0; L <= 4; ++L) {
        auto trees = enumerate_trees(L);
        std::vector<PriorSpec> specs;
        specs.push_back(gw(4, L));
        PriorSpec p2 = gw(3, L);
        p2.exponent = 2;
        specs.push_back(p2);
        PriorSpec cu;
        cu.kind = PriorKind::cond_uniform;
        cu.lambda = 1.5;
        cu.L_max = L;
        specs.push_back(cu);
        PriorSpec ex;
        ex.kind = PriorKind::exponential;
        ex.c = 0.5;
        ex.L_max = L;
        specs.push_back(ex);
        for (int j0 = 0; j0 <= std::min(L, 2); ++j0)
            for (PriorSpec s : specs) {
                s.j0 = j0;
                double total = 0;
                for (const Tree& t : trees)
                    if (respects_forced_layers(t, j0)) total += std::exp(log_prior_mass(t, s));
                CHECK_MESSAGE(std::abs(total - 1) < 1e-10, prior_kind_name(s.kind), " L=", L, " j0=", j0);
            }
    }
}

TEST_CASE("exponential mass ratio is n^c") {
    PriorSpec ex;
    ex.kind = PriorKind::exponential;
    ex.c = 0.7;
    ex.n = 1000;
    ex.L_max = 4;
    Tree a({{0, 0}}, 4), b({{0, 0}, {1, 0}}, 4);
    double r = log_prior_unnormalized(a, ex) - log_prior_unnormalized(b, ex);
    CHECK(r == doctest::Approx(0.7 * std::log(1000.0)));
}

TEST_CASE("catalan numbers") {
    CHECK(catalan(0) == 1);
    CHECK(catalan(3) == 5);
    CHECK(catalan(10) == 16796);
    std::vector<boost::multiprecision::cpp_int> c{1};
    for (unsigned n = 0; n < 30; ++n) {
        boost::multiprecision::cpp_int s = 0;
        for (unsigned i = 0; i <= n; ++i) s += c[i] * c[n - i];
        c.push_back(s);
    }
    for (unsigned n = 0; n <= 30; ++n) CHECK(catalan(n) == c[n]);
    CHECK(std::exp(log_catalan(10)) == doctest::Approx(16796.0));

    // full binary trees with K+1 leaves by growth from the empty tree
    std::set<Tree> level{Tree(9)};
    for (unsigned K = 0; K <= 8; ++K) {
        CHECK(catalan(K) == level.size());
        std::set<Tree> next;
        for (const Tree& t : level)
            for (const NodeId& v : t.leaves()) next.insert(t.with_node(v));
        level = std::move(next);
    }
}

TEST_CASE("flat trees") {
    CHECK(flat_tree(0, 3).internal_count() == 0);
    CHECK(flat_tree(0, 3).leaves() == std::vector<NodeId>{{0, 0}});
    CHECK(flat_tree(2, 3).internal() == std::vector<NodeId>{{0, 0}, {1, 0}, {1, 1}});
    CHECK(flat_tree(2, 3).leaf_count() == 4);
    CHECK(flat_tree(3, 3).internal_count() == 7);
    CHECK(flat_tree(3, 3).leaves().size() == 8);
    CHECK_THROWS_AS(flat_tree(4, 3), Error);
}

TEST_CASE("prune deepest rightmost") {
    auto [t0, v0] = prune_deepest_rightmost(flat_tree(1, 3));
    CHECK(t0 == flat_tree(0, 3));
    CHECK(v0 == NodeId{0, 0});
    Tree fig({{0, 0}, {1, 1}, {2, 2}}, 3);
    CHECK(prune_deepest_rightmost(fig).second == NodeId{2, 2});
    CHECK_THROWS_AS(prune_deepest_rightmost(Tree(3)), Error);

    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        Tree t = sample_tree(gw(1.5, 6), rng);
        while (t.internal_count() > 0) {
            auto [tm, v] = prune_deepest_rightmost(t);
            check_invariants(tm);
            CHECK(extend_to_node(tm, v) == t);
            t = tm;
        }
    }
}

TEST_CASE("extend to node is the minimal superset") {
    CHECK(extend_to_node(Tree(3), {0, 0}) == Tree({{0, 0}}, 3));
    CHECK(extend_to_node(Tree({{0, 0}}, 3), {2, 3}) == Tree({{0, 0}, {1, 1}, {2, 3}}, 3));
    Tree fig({{0, 0}, {1, 1}, {2, 2}}, 3);
    CHECK(extend_to_node(fig, {1, 1}) == fig);
    CHECK_THROWS_AS(extend_to_node(fig, {3, 0}), Error);

    auto all = enumerate_trees(3);
    for (const Tree& t : all)
        for (uint64_t i = 1; i < 8; ++i) {
            NodeId target = NodeId::from_index(i);
            size_t best = SIZE_MAX;
            std::vector<Tree> argmin;
            for (const Tree& s : all) {
                if (!s.contains(target)) continue;
                bool sup = true;
                for (const NodeId& v : t.internal()) sup = sup && s.contains(v);
                if (!sup) continue;
                if (s.internal_count() < best) {
                    best = s.internal_count();
                    argmin = {s};
                } else if (s.internal_count() == best) {
                    argmin.push_back(s);
                }
            }
            REQUIRE(argmin.size() == 1);
            CHECK(extend_to_node(t, target) == argmin[0]);
        }
}

TEST_CASE("enumeration") {
    CHECK(enumerate_trees(0).size() == 1);
    CHECK(enumerate_trees(1).size() == 2);
    CHECK(enumerate_trees(2).size() == 5);
    CHECK(enumerate_trees(3).size() == 26);
    for (int L = 0; L <= 5; ++L) {
        auto v = enumerate_trees(L);
        CHECK(v.size() == size_t(oracle::capped_tree_count(L)));
        CHECK(std::set<Tree>(v.begin(), v.end()).size() == v.size());
    }
    try {
        enumerate_trees(6);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::refusal);
    }
}

TEST_CASE("leaf-count DP matches enumeration") {
    for (int L = 1; L <= 4; ++L)
        for (int j0 = 0; j0 <= 1; ++j0) {
            auto counts = log_tree_counts_by_leaves(L, j0, 1000);
            std::map<size_t, size_t> brute;
            for (const Tree& t : enumerate_trees(L))
                if (respects_forced_layers(t, j0)) ++brute[t.leaf_count()];
            for (auto [K, n] : brute) CHECK(std::exp(counts[K]) == doctest::Approx(double(n)));
        }
}

TEST_CASE("tree JSON") {
    Tree t({{0, 0}, {1, 1}, {2, 2}}, 4);
    auto j = tree_to_json(t);
    CHECK(j.dump() == "[[0,0],[1,1],[2,2]]");
    CHECK(tree_from_json(j, 4) == t);
    CHECK_THROWS_AS(tree_from_json(json::parse("[[1,0]]"), 4), Error);
}
