#include "bcart/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <queue>
#include <tuple>

#include "bcart/error.hpp"
#include "bcart/haar.hpp"

namespace bcart {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxCap = 30;
}

double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}

double log_sum_exp(const std::vector<double>& v) {
    double m = kNegInf;
    for (double x : v) m = std::max(m, x);
    if (m == kNegInf) return m;
    double s = 0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

NodeId NodeId::from_index(uint64_t idx) {
    if (idx == 0) return kRootNode;
    int l = floor_log2(idx);
    return {l, int64_t(idx - (uint64_t{1} << l))};
}

std::string to_string(const NodeId& v) {
    return "(" + std::to_string(v.l) + "," + std::to_string(v.k) + ")";
}

// ---- Tree ------------------------------------------------------------------

Tree::Tree(int max_depth_cap) : cap_(max_depth_cap) {
    require(cap_ >= 0 && cap_ <= kMaxCap, "tree depth cap out of range");
}

Tree::Tree(const std::vector<NodeId>& internal, int max_depth_cap) : cap_(max_depth_cap) {
    require(cap_ >= 0 && cap_ <= kMaxCap, "tree depth cap out of range");
    for (const NodeId& v : internal) {
        require(v.valid() && v.l >= 0, "internal node " + to_string(v) + " is not a dyadic node");
        idx_.push_back(v.index());
    }
    std::sort(idx_.begin(), idx_.end());
    idx_.erase(std::unique(idx_.begin(), idx_.end()), idx_.end());
    validate();
}

Tree Tree::from_indices(std::vector<uint64_t> idx, int max_depth_cap) {
    Tree t(max_depth_cap);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    t.idx_ = std::move(idx);
    t.validate();
    return t;
}

void Tree::validate() const {
    for (uint64_t i : idx_) {
        require(i >= 1, "internal set may not contain the root coefficient");
        NodeId v = NodeId::from_index(i);
        require(v.l < cap_, "node " + to_string(v) + " exceeds depth cap " + std::to_string(cap_));
        if (i > 1)
            require(std::binary_search(idx_.begin(), idx_.end(), i / 2),
                    "heredity violated at " + to_string(v));
    }
}

std::vector<NodeId> Tree::internal() const {
    std::vector<NodeId> out;
    out.reserve(idx_.size());
    for (uint64_t i : idx_) out.push_back(NodeId::from_index(i));
    return out;
}

std::vector<NodeId> Tree::leaves() const {
    if (idx_.empty()) return {NodeId{0, 0}};
    std::vector<uint64_t> out;
    out.reserve(idx_.size() + 1);
    for (uint64_t i : idx_)
        for (uint64_t c : {2 * i, 2 * i + 1})
            if (!std::binary_search(idx_.begin(), idx_.end(), c)) out.push_back(c);
    std::sort(out.begin(), out.end());
    std::vector<NodeId> nodes;
    nodes.reserve(out.size());
    for (uint64_t i : out) nodes.push_back(NodeId::from_index(i));
    return nodes;
}

std::vector<NodeId> Tree::coefficient_nodes() const {
    std::vector<NodeId> out{kRootNode};
    for (uint64_t i : idx_) out.push_back(NodeId::from_index(i));
    return out;
}

bool Tree::contains(NodeId v) const {
    if (v.l < 0) return true;
    return std::binary_search(idx_.begin(), idx_.end(), v.index());
}

int Tree::depth() const {
    if (idx_.empty()) return 0;
    return floor_log2(idx_.back()) + 1;
}

Tree Tree::with_cap(int cap) const {
    Tree t(cap);
    t.idx_ = idx_;
    t.validate();
    return t;
}

Tree Tree::with_node(NodeId v) const {
    Tree t = *this;
    uint64_t i = v.index();
    require(!contains(v), "grow: node already internal");
    t.idx_.insert(std::lower_bound(t.idx_.begin(), t.idx_.end(), i), i);
    t.validate();
    return t;
}

Tree Tree::without_node(NodeId v) const {
    uint64_t i = v.index();
    require(contains(v) && v.l >= 0, "prune: node not internal");
    require(!contains(v.left()) && !contains(v.right()), "prune: node has internal children");
    Tree t = *this;
    t.idx_.erase(std::lower_bound(t.idx_.begin(), t.idx_.end(), i));
    return t;
}

std::string Tree::key() const {
    std::string s;
    for (uint64_t i : idx_) {
        s += std::to_string(i);
        s += ',';
    }
    return s;
}

// ---- priors ----------------------------------------------------------------

PriorKind parse_prior_kind(const std::string& s) {
    if (s == "gw" || s == "galton_watson") return PriorKind::galton_watson;
    if (s == "cond_uniform" || s == "uniform") return PriorKind::cond_uniform;
    if (s == "exponential" || s == "exp") return PriorKind::exponential;
    fail(ErrorKind::invalid_input, "unknown prior kind '" + s + "'");
}

const char* prior_kind_name(PriorKind k) {
    switch (k) {
        case PriorKind::galton_watson: return "gw";
        case PriorKind::cond_uniform: return "cond_uniform";
        case PriorKind::exponential: return "exponential";
    }
    return "?";
}

void PriorSpec::validate() const {
    require(L_max >= 0 && L_max <= kMaxCap, "prior: L_max out of range");
    require(j0 >= 0 && j0 <= L_max, "prior: forced layers j0 must lie in [0, L_max]");
    switch (kind) {
        case PriorKind::galton_watson:
            require(gamma > 1, "prior: gamma must exceed 1");
            require(exponent >= 1, "prior: exponent must be >= 1");
            break;
        case PriorKind::cond_uniform:
            require(lambda > 0, "prior: lambda must be positive");
            break;
        case PriorKind::exponential:
            require(c > 0, "prior: c must be positive");
            require(n == 0 || n >= 2, "prior: n must be >= 2");
            break;
    }
}

double PriorSpec::log_n() const { return std::log(n > 0 ? n : std::ldexp(1.0, L_max)); }

double PriorSpec::split_prob(int l) const {
    return std::pow(gamma, -std::pow(double(l), exponent));
}

bool respects_forced_layers(const Tree& t, int j0) {
    uint64_t need = (uint64_t{1} << j0) - 1;  // indices 1..2^j0-1
    if (t.internal_count() < need) return false;
    const auto& idx = t.internal_indices();
    for (uint64_t i = 1; i <= need; ++i)
        if (idx[i - 1] != i) return false;
    return true;
}

size_t default_leaf_cap(const PriorSpec& spec) {
    size_t full = size_t{1} << spec.L_max;
    size_t want = (size_t{1} << spec.j0) + 512 + size_t(std::ceil(8 * spec.lambda));
    return std::min(full, want);
}

namespace {

// out[m] = log sum_{i+j=m} exp(a[i] + b[j]), entries below index 1 unused.
std::vector<double> log_convolve(const std::vector<double>& a, const std::vector<double>& b, size_t cap) {
    size_t n = std::min(cap, a.size() - 1 + b.size() - 1);
    std::vector<double> out(n + 1, kNegInf);
    for (size_t m = 2; m <= n; ++m) {
        size_t lo = (m + 1 > b.size()) ? m + 1 - b.size() : 1;
        size_t hi = std::min(m - 1, a.size() - 1);
        double mx = kNegInf;
        for (size_t i = lo; i <= hi; ++i) mx = std::max(mx, a[i] + b[m - i]);
        if (mx == kNegInf) continue;
        double s = 0;
        for (size_t i = lo; i <= hi; ++i) s += std::exp(a[i] + b[m - i] - mx);
        out[m] = mx + std::log(s);
    }
    return out;
}

}  // namespace

std::vector<double> log_tree_counts_by_leaves(int L_max, int j0, size_t leaf_cap) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, size_t>, std::vector<double>> cache;
    auto key = std::make_tuple(L_max, j0, leaf_cap);
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    std::vector<double> p{kNegInf, 0.0};  // level L_max: a single leaf
    for (int l = L_max - 1; l >= 0; --l) {
        std::vector<double> q = log_convolve(p, p, leaf_cap);
        if (q.size() < 2) q.resize(2, kNegInf);
        q[1] = l >= j0 ? 0.0 : kNegInf;
        p = std::move(q);
    }
    std::lock_guard<std::mutex> lock(mu);
    cache[key] = p;
    return p;
}

boost::multiprecision::cpp_int catalan(unsigned K) {
    boost::multiprecision::cpp_int c = 1;
    for (unsigned n = 0; n < K; ++n) c = c * 2 * (2 * n + 1) / (n + 2);
    return c;
}

double log_catalan(size_t K) {
    double k = double(K);
    return std::lgamma(2 * k + 1) - std::lgamma(k + 2) - std::lgamma(k + 1);
}

namespace {

double cond_uniform_log_weight(size_t K, double lambda) {
    // lambda^K / ((e^lambda - 1) K!) / catalan(K-1)
    return double(K) * std::log(lambda) - std::log(std::expm1(lambda)) - std::lgamma(double(K) + 1) -
           log_catalan(K - 1);
}

}  // namespace

double log_prior_unnormalized(const Tree& t, const PriorSpec& spec) {
    spec.validate();
    require(t.depth() <= spec.L_max, "tree deeper than the prior's L_max");
    require(respects_forced_layers(t, spec.j0), "tree violates forced layers j0=" + std::to_string(spec.j0));
    size_t K = t.leaf_count();
    switch (spec.kind) {
        case PriorKind::galton_watson: {
            double s = 0;
            for (const NodeId& v : t.internal())
                if (v.l >= spec.j0) s += std::log(spec.split_prob(v.l));
            for (const NodeId& v : t.leaves())
                if (v.l < spec.L_max) s += std::log1p(-spec.split_prob(v.l));
            return s;
        }
        case PriorKind::cond_uniform:
            return cond_uniform_log_weight(K, spec.lambda);
        case PriorKind::exponential:
            return -spec.c * double(K) * spec.log_n();
    }
    return kNegInf;
}

double log_prior_normalizer(const PriorSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case PriorKind::galton_watson:
            return 0.0;
        case PriorKind::cond_uniform: {
            auto counts = log_tree_counts_by_leaves(spec.L_max, spec.j0, default_leaf_cap(spec));
            std::vector<double> terms;
            for (size_t K = 1; K < counts.size(); ++K)
                if (counts[K] > kNegInf) terms.push_back(counts[K] + cond_uniform_log_weight(K, spec.lambda));
            return log_sum_exp(terms);
        }
        case PriorKind::exponential: {
            // Z_l = leaf + Z_{l+1}^2 with leaf weight n^{-c}; exact, no truncation.
            double leaf = -spec.c * spec.log_n();
            double z = leaf;
            for (int l = spec.L_max - 1; l >= 0; --l) z = log_add_exp(l >= spec.j0 ? leaf : kNegInf, 2 * z);
            return z;
        }
    }
    return 0.0;
}

double log_prior_mass(const Tree& t, const PriorSpec& spec) {
    return log_prior_unnormalized(t, spec) - log_prior_normalizer(spec);
}

// ---- sampling --------------------------------------------------------------

namespace {

Tree sample_gw(const PriorSpec& spec, Rng& rng, const SplitAllowed& allowed) {
    std::priority_queue<uint64_t, std::vector<uint64_t>, std::greater<>> queue;
    std::vector<uint64_t> internal;
    queue.push(1);
    while (!queue.empty()) {
        uint64_t i = queue.top();
        queue.pop();
        NodeId v = NodeId::from_index(i);
        if (v.l >= spec.L_max) continue;
        if (allowed && !allowed(v)) continue;
        bool split = v.l < spec.j0 || rng.bernoulli(spec.split_prob(v.l));
        if (!split) continue;
        internal.push_back(i);
        queue.push(2 * i);
        queue.push(2 * i + 1);
    }
    return Tree::from_indices(std::move(internal), spec.L_max);
}

size_t sample_truncated_poisson(double lambda, Rng& rng) {
    // P(K) = lambda^K / (K! (e^lambda - 1)), K >= 1, by inversion.
    double u = rng.uniform_open();
    double logp = std::log(lambda) - std::log(std::expm1(lambda));
    double cdf = 0;
    for (size_t K = 1; K < 100000; ++K) {
        cdf += std::exp(logp);
        if (u <= cdf) return K;
        logp += std::log(lambda) - std::log(double(K + 1));
    }
    return 100000;
}

// Uniform full binary tree with K leaves; returns false as soon as a node
// would exceed the depth limit.
bool uniform_shape(size_t K, Rng& rng, int depth_limit, std::vector<uint64_t>& internal) {
    internal.clear();
    std::vector<std::pair<uint64_t, size_t>> stack{{1, K}};
    while (!stack.empty()) {
        auto [i, m] = stack.back();
        stack.pop_back();
        if (m == 1) continue;
        if (floor_log2(i) >= depth_limit) return false;
        internal.push_back(i);
        // left subtree gets a leaves w.p. C_{a-1} C_{m-a-1} / C_{m-1}
        double u = rng.uniform_open(), total = log_catalan(m - 1), cdf = 0;
        size_t a = 1;
        for (; a < m - 1; ++a) {
            cdf += std::exp(log_catalan(a - 1) + log_catalan(m - a - 1) - total);
            if (u <= cdf) break;
        }
        stack.push_back({2 * i + 1, m - a});
        stack.push_back({2 * i, a});
    }
    return true;
}

Tree sample_cond_uniform(const PriorSpec& spec, Rng& rng, const SplitAllowed& allowed) {
    constexpr int kRetryCap = 1000000;
    std::vector<uint64_t> internal;
    for (int attempt = 0; attempt < kRetryCap; ++attempt) {
        size_t K = sample_truncated_poisson(spec.lambda, rng);
        if (!uniform_shape(K, rng, spec.L_max, internal)) continue;
        Tree t = Tree::from_indices(internal, spec.L_max);
        if (!respects_forced_layers(t, spec.j0)) continue;
        if (allowed) {
            bool ok = true;
            for (uint64_t i : t.internal_indices()) ok = ok && allowed(NodeId::from_index(i));
            if (!ok) continue;
        }
        return t;
    }
    fail(ErrorKind::sampling_failure, "cond_uniform sampler exceeded the retry cap of 1e6");
}

Tree sample_exponential(const PriorSpec& spec, Rng& rng, const SplitAllowed& allowed) {
    // Exact top-down sampling from the unit-data recursion Z_l = leaf + Z_{l+1}^2.
    // Restrictions via `allowed` are handled per node since Z depends on them.
    int L = spec.L_max;
    double leaf = -spec.c * spec.log_n();
    std::vector<double> logz(size_t{1} << (L + 1), kNegInf);
    for (uint64_t i = (uint64_t{1} << (L + 1)) - 1; i >= 1; --i) {
        NodeId v = NodeId::from_index(i);
        double lw = v.l >= spec.j0 ? leaf : kNegInf;
        bool can = v.l < L && (!allowed || allowed(v));
        logz[i] = can ? log_add_exp(lw, logz[2 * i] + logz[2 * i + 1]) : lw;
        if (i == 1) break;
    }
    require(logz[1] > kNegInf, "exponential prior: no tree satisfies the restrictions");
    std::vector<uint64_t> internal, stack{1};
    while (!stack.empty()) {
        uint64_t i = stack.back();
        stack.pop_back();
        NodeId v = NodeId::from_index(i);
        if (v.l >= L || (allowed && !allowed(v))) continue;
        double ps = std::exp(logz[2 * i] + logz[2 * i + 1] - logz[i]);
        if (rng.uniform() < ps) {
            internal.push_back(i);
            stack.push_back(2 * i + 1);
            stack.push_back(2 * i);
        }
    }
    return Tree::from_indices(std::move(internal), L);
}

}  // namespace

Tree sample_uniform_shape(size_t K, Rng& rng, int cap_for_result) {
    std::vector<uint64_t> internal;
    require(uniform_shape(K, rng, cap_for_result, internal), "uniform shape exceeded the depth cap");
    return Tree::from_indices(std::move(internal), cap_for_result);
}

Tree sample_tree(const PriorSpec& spec, Rng& rng, const SplitAllowed& allowed) {
    spec.validate();
    switch (spec.kind) {
        case PriorKind::galton_watson: return sample_gw(spec, rng, allowed);
        case PriorKind::cond_uniform: return sample_cond_uniform(spec, rng, allowed);
        case PriorKind::exponential: return sample_exponential(spec, rng, allowed);
    }
    return Tree(spec.L_max);
}

// ---- surgeries and enumeration ----------------------------------------------

Tree flat_tree(int d, int L_max) {
    require(d >= 0 && d <= L_max, "flat_tree: depth out of range");
    std::vector<uint64_t> idx;
    for (uint64_t i = 1; i < (uint64_t{1} << d); ++i) idx.push_back(i);
    return Tree::from_indices(std::move(idx), L_max);
}

std::pair<Tree, NodeId> prune_deepest_rightmost(const Tree& t) {
    require(t.internal_count() > 0, "prune: tree has no internal node");
    std::vector<uint64_t> idx = t.internal_indices();
    NodeId removed = NodeId::from_index(idx.back());
    idx.pop_back();
    return {Tree::from_indices(std::move(idx), t.max_depth_cap()), removed};
}

Tree extend_to_node(const Tree& t, NodeId target) {
    require(target.valid() && target.l >= 0, "extend: target is not a dyadic node");
    require(target.l <= t.max_depth_cap() - 1, "extend: target deeper than the cap");
    std::vector<uint64_t> idx = t.internal_indices();
    for (uint64_t i = target.index(); i >= 1; i /= 2) idx.push_back(i);
    return Tree::from_indices(std::move(idx), t.max_depth_cap());
}

std::vector<Tree> enumerate_trees(int L_max) {
    if (L_max > 5) fail(ErrorKind::refusal, "enumerate_trees refuses L_max > 5");
    require(L_max >= 0, "enumerate_trees: negative L_max");
    using Set = std::vector<uint64_t>;
    std::function<std::vector<Set>(uint64_t)> sub = [&](uint64_t i) -> std::vector<Set> {
        std::vector<Set> out{Set{}};
        if (floor_log2(i) >= L_max) return out;
        auto a = sub(2 * i), b = sub(2 * i + 1);
        for (const Set& x : a)
            for (const Set& y : b) {
                Set s{i};
                s.insert(s.end(), x.begin(), x.end());
                s.insert(s.end(), y.begin(), y.end());
                out.push_back(std::move(s));
            }
        return out;
    };
    std::vector<Tree> trees;
    for (Set& s : sub(1)) trees.push_back(Tree::from_indices(std::move(s), L_max));
    return trees;
}

}  // namespace bcart
