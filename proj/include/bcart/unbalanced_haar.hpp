#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bcart/haar.hpp"
#include "bcart/pinball.hpp"
#include "bcart/posterior.hpp"
#include "bcart/tree.hpp"

namespace bcart {

// Breakpoints on the grid {i / 2^R}; values are stored as the integer i.
struct Breakpoints {
    int resolution = 0;
    std::map<NodeId, int64_t> b;
};

struct Bracket {
    int64_t lo = 0, hi = 0;  // (lo, hi] in grid units
};

class UHSystem {
public:
    struct Node {
        NodeId id;
        int64_t lo, mid, hi;  // L = (lo, mid], R = (mid, hi]
        double left_value, right_value;
    };

    explicit UHSystem(const Breakpoints& b);

    int resolution() const { return R_; }
    const Breakpoints& breakpoints() const { return bp_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const Node* find(NodeId v) const;
    bool admissible(NodeId v) const { return find(v) != nullptr; }
    // Bracket of any node whose parent is admissible, and of (0,0).
    std::optional<Bracket> bracket(NodeId v) const;
    int max_level() const;

    double cell() const { return std::ldexp(1.0, -R_); }
    std::vector<double> evaluate(NodeId v, int L) const;  // psi^B_v on 2^L cells, L >= R

    // Balancing constants carried for reporting; 0 when not flagged.
    int64_t E = 0;
    int D = 0;

private:
    int R_;
    Breakpoints bp_;
    std::vector<Node> nodes_;  // ascending index
};

UHSystem build_uh(const Breakpoints& b);
// Midpoint breakpoints at every level below R.
Breakpoints dyadic_breakpoints(int R);

double gram_deviation(const UHSystem& s);

struct BalanceVerdict {
    NodeId node;
    double max_side = 0, min_side = 0;  // lengths
    int64_t M = -1, m = -1;             // side * 2^{l+D} when integral
    bool pass_max = false, pass_min = false;
    bool pass() const { return pass_max && pass_min; }
};

struct BalanceReport {
    std::vector<BalanceVerdict> nodes;
    bool all_pass() const;
    const BalanceVerdict* verdict(NodeId v) const;
};

BalanceReport check_weak_balance(const UHSystem& s, int64_t E, int D);
int granularity(const UHSystem& s, int l);

struct BetaShape {
    double a = 1, b = 1;
    double pdf(double x) const;
    double cdf(double x) const;
    double quantile(double p) const;
};

enum class QuantileRounding {
    level,   // median of the rounded parent bracket, rounded at 2^{-min(l+D, L_max)}
    finest,  // G^{-1} rounded at 2^{-(L_max+D)} for every node, grid 2^{-(L_max+D)}
};

struct QuantileSystem {
    Breakpoints breakpoints;
    double C_q = 0;     // sup of 1/g on the check grid
    double g_sup = 0;   // sup of g on the check grid
    int64_t E_lemma = 0;  // 2 + 3 C_q 2^{D-1}, rounded up
    int D = 0;
};

QuantileSystem quantile_breakpoints(const std::function<double(double)>& G_inverse,
                                    const std::function<double(double)>& density, int D, int L_max,
                                    QuantileRounding mode = QuantileRounding::level);
QuantileSystem quantile_breakpoints(const BetaShape& shape, int D, int L_max,
                                    QuantileRounding mode = QuantileRounding::level);

int admissible_depth(double n, double c);
// Nodes (l,k) with l <= min(Lambda, R-1) that are not admissible.
size_t admissibility_violations(const UHSystem& s, int Lambda);

// Coefficients on levels 0..R-1 (zeros at non-admissible nodes); root is the mean.
CoeffArray uh_coefficients(const GridFunction& f, const UHSystem& s);
GridFunction uh_reconstruct(const CoeffArray& c, const UHSystem& s, int L, int max_level = -1);

struct DecayCheck {
    double max_ratio = 0;  // |beta| / (M 2^{alpha-1/2} maxside^{alpha+1/2})
    NodeId worst;
    bool pass() const { return max_ratio <= 1.0 + 1e-9; }
};
DecayCheck decay_bound_check(const CoeffArray& coef, const UHSystem& s, const HolderSpec& h);

struct ComplexityReport {
    // (B1)
    size_t max_count = 0;
    std::vector<size_t> counts;  // per node, ascending index
    bool counts_within_lemma = true;  // count <= 2(E+l)(l+D) and level <= l+D
    double C0 = 0;                    // 2(E+1)(1+D): C0 max(l,1)^3 dominates 2(E+l)(l+D)
    bool cubic_bound = true;          // count <= C0 max(l,1)^3
    // (B2), only with a function
    double C1_lemma = 0, C1_needed = 0;
    bool b2_pass = true;
};
ComplexityReport complexity_certificates(const UHSystem& s, int64_t E, int D, const GridFunction* f = nullptr,
                                         const HolderSpec* h = nullptr);

struct BiasReport {
    double bias = 0;
    double ratio = 0;  // bias / (Lambda 2^{-Lambda})^alpha
};
BiasReport projection_bias(const GridFunction& f, const UHSystem& s, int Lambda, double alpha);

// Leaf-height map for a tree on an unbalanced system (Haar sign convention:
// psi^B is positive on L). A A^T = diag(1/|cell|).
class UHPinball {
public:
    UHPinball(const Tree& t, const UHSystem& s);
    const Eigen::MatrixXd& dense() const { return A_; }
    const std::vector<NodeId>& rows() const { return rows_; }
    const std::vector<NodeId>& cols() const { return cols_; }
    const std::vector<Bracket>& cells() const { return cells_; }
    Eigen::VectorXd cell_widths() const;
    std::vector<double> render(const Eigen::VectorXd& heights, int L) const;

private:
    int R_;
    std::vector<NodeId> rows_, cols_;
    std::vector<Bracket> cells_;
    Eigen::MatrixXd A_;
};

struct BasisPrior {
    std::vector<BetaShape> shapes{{1, 1}, {2, 2}, {2, 5}, {5, 2}};
    std::vector<double> weights;  // empty: uniform
    int D = 2;
    int L_max = 8;
};

struct NondyadicDraw {
    UHSystem system;
    size_t shape_index = 0;
    Tree tree;
    CoeffArray coefficients;
    GridFunction histogram;
};

NondyadicDraw nondyadic_prior_sample(const BasisPrior& basis, const PriorSpec& tree_prior, const CovSpec& cov,
                                     Rng& rng);
UHSystem basis_from_prior(const BasisPrior& basis, size_t shape_index);

// Noisy cell averages y_i = f_i + eps_i / sqrt(n 2^{-L}), so that every
// orthonormal step basis sees N(beta, 1/n) coefficients.
GridFunction simulate_white_noise(const GridFunction& f0, double n, uint64_t seed);
SequenceData uh_sequence_data(const GridFunction& obs, const UHSystem& s, double n);

struct BasisPosterior {
    std::vector<double> weights;  // Pi[B | X] over the support
    std::vector<TreePosterior> trees;
};
BasisPosterior posterior_over_bases(const GridFunction& obs, double n, const std::vector<UHSystem>& support,
                                    const std::vector<double>& prior_weights, const PriorSpec& tree_prior);

}  // namespace bcart
