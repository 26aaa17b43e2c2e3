#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "bcart/rng.hpp"

namespace bcart {

struct NodeId {
    int l = 0;
    int64_t k = 0;

    // 0 for the root (-1,0), 2^l + k otherwise.
    uint64_t index() const { return l < 0 ? 0 : (uint64_t{1} << l) + uint64_t(k); }
    static NodeId from_index(uint64_t idx);

    NodeId parent() const { return {l - 1, k / 2}; }
    NodeId left() const { return {l + 1, 2 * k}; }
    NodeId right() const { return {l + 1, 2 * k + 1}; }
    bool valid() const { return l == -1 ? k == 0 : (l >= 0 && k >= 0 && k < (int64_t{1} << l)); }

    friend bool operator==(const NodeId& a, const NodeId& b) { return a.l == b.l && a.k == b.k; }
    friend std::strong_ordering operator<=>(const NodeId& a, const NodeId& b) {
        return a.index() <=> b.index();
    }
};

constexpr NodeId kRootNode{-1, 0};

std::string to_string(const NodeId& v);

// A full binary tree over dyadic nodes, stored as its sorted internal indices.
class Tree {
public:
    explicit Tree(int max_depth_cap = 0);
    Tree(const std::vector<NodeId>& internal, int max_depth_cap);
    static Tree from_indices(std::vector<uint64_t> idx, int max_depth_cap);

    int max_depth_cap() const { return cap_; }
    const std::vector<uint64_t>& internal_indices() const { return idx_; }
    std::vector<NodeId> internal() const;
    std::vector<NodeId> leaves() const;
    // Root (-1,0) followed by the internal nodes, ascending index.
    std::vector<NodeId> coefficient_nodes() const;

    bool contains(NodeId v) const;
    size_t internal_count() const { return idx_.size(); }
    size_t leaf_count() const { return idx_.size() + 1; }
    // 0 for the empty tree, else max internal level + 1.
    int depth() const;

    Tree with_cap(int cap) const;
    Tree with_node(NodeId v) const;     // grow a leaf
    Tree without_node(NodeId v) const;  // prune an internal node with two leaf children

    bool operator==(const Tree& o) const { return idx_ == o.idx_; }
    bool operator<(const Tree& o) const { return idx_ < o.idx_; }

    std::string key() const;

private:
    void validate() const;
    int cap_;
    std::vector<uint64_t> idx_;
};

enum class PriorKind { galton_watson, cond_uniform, exponential };

struct PriorSpec {
    PriorKind kind = PriorKind::galton_watson;
    double gamma = 4.0;     // GW: p_l = gamma^{-l^exponent}
    double exponent = 1.0;
    double lambda = 1.0;    // conditionally uniform
    double c = 1.0;         // exponential: mass ~ exp(-c K log n)
    double n = 0.0;         // sample size entering log n; 0 means 2^L_max
    int L_max = 0;
    int j0 = 0;             // forced layers

    void validate() const;
    double log_n() const;
    double split_prob(int l) const;  // GW only
};

PriorKind parse_prior_kind(const std::string& s);
const char* prior_kind_name(PriorKind k);

// Log number of depth-capped trees honoring forced layers, indexed by leaf
// count K (entry 0 unused). Truncated at leaf_cap.
std::vector<double> log_tree_counts_by_leaves(int L_max, int j0, size_t leaf_cap);
size_t default_leaf_cap(const PriorSpec& spec);

// Unnormalized log mass: the normalizer is dropped. Used by MCMC and DP.
double log_prior_unnormalized(const Tree& t, const PriorSpec& spec);
double log_prior_normalizer(const PriorSpec& spec);
double log_prior_mass(const Tree& t, const PriorSpec& spec);
bool respects_forced_layers(const Tree& t, int j0);

// Optional restriction of which nodes may split (used for unbalanced bases).
using SplitAllowed = std::function<bool(NodeId)>;

Tree sample_tree(const PriorSpec& spec, Rng& rng, const SplitAllowed& allowed = {});
Tree sample_uniform_shape(size_t K, Rng& rng, int cap_for_result);

boost::multiprecision::cpp_int catalan(unsigned K);
double log_catalan(size_t K);

Tree flat_tree(int d, int L_max);
std::pair<Tree, NodeId> prune_deepest_rightmost(const Tree& t);
Tree extend_to_node(const Tree& t, NodeId target);
std::vector<Tree> enumerate_trees(int L_max);

double log_add_exp(double a, double b);
double log_sum_exp(const std::vector<double>& v);

}  // namespace bcart
