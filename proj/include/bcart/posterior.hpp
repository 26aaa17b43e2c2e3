#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bcart/haar.hpp"
#include "bcart/pinball.hpp"
#include "bcart/rng.hpp"
#include "bcart/tree.hpp"

namespace bcart {

struct SequenceData {
    CoeffArray X;
    double n = 2;
    std::optional<CoeffArray> truth;

    int L_max() const { return X.max_level(); }
};

// Levels default to floor(log2 n); truth is zero-padded or truncated.
SequenceData simulate(const CoeffArray& truth, double n, uint64_t seed, int L = -1);
SequenceData simulate_with_noise(const CoeffArray& truth, double n, const CoeffArray& eps);
bool noise_event_holds(const SequenceData& d);

double log_marginal_node_factor(double x, double n);
// sigma is the covariance of (beta_{-1,0}, beta_T) in the Haar convention.
double log_marginal_likelihood(const Tree& t, const SequenceData& d, const Eigen::MatrixXd& sigma);
double log_marginal_likelihood(const Tree& t, const SequenceData& d, const CovSpec& cov);

using InclusionMap = std::map<NodeId, double>;

struct McmcStats {
    size_t iterations = 0;
    size_t burn_in = 0;
    size_t thinning = 10;
    size_t accepted = 0;
    size_t proposed = 0;
    double acceptance_rate() const { return proposed ? double(accepted) / double(proposed) : 0.0; }
    double ess_leaf_count = 0;  // batch-means ESS proxy on the leaf-count trace
};

class TreePosterior {
public:
    enum class Mode { enumerated, dp, stratified_dp, mcmc };

    Mode mode() const { return mode_; }
    const PriorSpec& prior() const { return prior_; }
    const CovSpec& cov() const { return cov_; }
    int L_max() const { return prior_.L_max; }

    // Exact modes: Pi[T | X]. mcmc: chain frequency.
    double probability(const Tree& t) const;
    double log_probability(const Tree& t) const;
    InclusionMap inclusion() const;
    InclusionMap inclusion_stderr() const;  // mcmc only, empty otherwise
    Tree sample(Rng& rng) const;
    // Highest-probability trees. dp modes search among `pool` posterior samples.
    std::vector<std::pair<Tree, double>> top_trees(size_t k, size_t pool = 4000, uint64_t seed = 1) const;
    // Posterior probability that d(T) > depth.
    double depth_exceeds(int depth, size_t samples = 0, uint64_t seed = 1) const;
    // log sum_T Pi(T) N_X(T), exact modes only.
    double log_evidence() const { return log_evidence_; }

    const std::vector<std::pair<Tree, double>>& enumerated() const { return trees_; }
    const std::vector<Tree>& chain() const { return chain_; }
    const McmcStats& stats() const { return stats_; }

private:
    friend TreePosterior posterior_exact_impl(const SequenceData&, const PriorSpec&, const CovSpec&, int, bool,
                                              const SplitAllowed&);
    friend TreePosterior posterior_mcmc(const SequenceData&, const PriorSpec&, const CovSpec&, size_t, Rng&,
                                        bool, const Tree*);

    Mode mode_ = Mode::enumerated;
    PriorSpec prior_;
    CovSpec cov_;
    double log_evidence_ = 0;

    // enumerated: (tree, log-probability)
    std::vector<std::pair<Tree, double>> trees_;
    // dp: per node index (1..2^{L+1}-1) conditional log split / stop probabilities
    std::vector<double> log_split_, log_stop_;
    // stratified: log w_K + log P_root(K) - log Z per K, inside polys, log g per node
    std::vector<std::vector<double>> poly_;
    std::vector<double> root_k_, log_g_, log_leafw_;
    std::vector<double> strat_inclusion_;
    double log_w_norm_ = 0;
    // mcmc
    std::vector<Tree> chain_;
    McmcStats stats_;
};

enum class ExactMethod { enumerate, dp };

// dp requires identity covariance and GW or exponential priors, or
// cond_uniform with stratified = true. `allowed` restricts splittable nodes.
TreePosterior posterior_exact(const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, ExactMethod m,
                              bool stratified = false, const SplitAllowed& allowed = {});

// Grow/prune Metropolis-Hastings. use_data = false targets the prior alone.
TreePosterior posterior_mcmc(const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, size_t iters,
                             Rng& rng, bool use_data = true, const Tree* start = nullptr);

InclusionMap marginal_inclusion(const TreePosterior& p);

// Proposal machinery, exposed for detailed-balance checks.
std::vector<NodeId> growable_leaves(const Tree& t);
std::vector<NodeId> prunable_nodes(const Tree& t, int j0);
double log_proposal(const Tree& from, const Tree& to, int j0);
double log_target(const Tree& t, const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, bool use_data);
double log_accept_ratio(const Tree& from, const Tree& to, const SequenceData& d, const PriorSpec& prior,
                        const CovSpec& cov, bool use_data);

struct GaussianPosterior {
    std::vector<NodeId> nodes;  // root then internal, ascending index
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    bool diagonal = false;
    Eigen::VectorXd sd;  // diagonal case
    Eigen::MatrixXd chol;

    Eigen::VectorXd sample(Rng& rng) const;
};

GaussianPosterior coefficients_given_tree(const Tree& t, const SequenceData& d, const CovSpec& cov);

std::vector<CoeffArray> draw_functions(const TreePosterior& p, const SequenceData& d, size_t count, Rng& rng);
// Streaming variant; the buffer passed to fn is reused between draws.
void for_each_draw(const TreePosterior& p, const SequenceData& d, size_t count, Rng& rng,
                   const std::function<void(const Tree&, const CoeffArray&)>& fn);

// Proof-apparatus diagnostics. log is natural.
int depth_cutoff(double n, const HolderSpec& h);  // L_c
std::vector<NodeId> signal_set(const CoeffArray& truth, double n, double A = 8.0);

}  // namespace bcart

namespace bcart {

// Standard error of the mean of a correlated trace by non-overlapping batch means.
double batch_means_stderr(const std::vector<double>& trace, size_t batches = 20);

}  // namespace bcart
