#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcart/haar.hpp"
#include "bcart/pinball.hpp"
#include "bcart/posterior.hpp"
#include "bcart/serialize.hpp"
#include "bcart/tree.hpp"
#include "bcart/uq.hpp"

namespace bcart {

enum class ExperimentKind { rates, sharp, coverage, bvm, flat_vs_cart, diagnostics };

ExperimentKind parse_experiment_kind(const std::string& s);
const char* experiment_kind_name(ExperimentKind k);

struct ExperimentPlan {
    ExperimentKind kind = ExperimentKind::rates;

    TestFunction truth = TestFunction::cusp;
    HolderSpec holder;
    bool zero_truth = false;
    int spike_level = -1;          // -1: L* from the lower-bound construction
    double spike_inflation = 1.0;  // sharp: extra series with the spike times this factor times log n; <= 0 disables

    std::vector<double> n_grid;  // powers of two, strictly increasing
    size_t replicates = 50;
    int L_max_override = 0;      // 0: floor(log2 n)

    // n and L_max are filled per grid point.
    PriorSpec prior;
    CovSpec cov;
    bool g_equals_n = true;  // g-prior scale g_n = n
    BandSpec band;
    size_t draws = 500;
    size_t mcmc_iterations = 20000;

    std::vector<double> gamma_sensitivity;          // rates: extra GW Gamma values
    std::vector<double> m_values{0.5, 1.0, 1e12};   // sharp: Pi[loss <= m eps_n | X]
    double flat_decay = 1.0;                        // flat prior pi(d) ~ exp(-flat_decay d)
    std::vector<NodeId> coordinates{{0, 0}};        // bvm
    std::vector<CovKind> bvm_priors{CovKind::identity, CovKind::g_prior};
    int bvm_g_levels = 4;                           // L_max used with the g-prior (enumeration)
    double self_similarity_eps = 0.05;              // coverage precondition
    double signal_A = 8.0;                          // diagnostics: S(f0; A)

    uint64_t seed = 1;
    unsigned threads = 0;  // 0: hardware concurrency

    void validate() const;
    int levels_for(double n) const;
};

json plan_to_json(const ExperimentPlan& p);

struct PlotPoint {
    std::string series;
    double x = 0, y = 0, err = 0;
};

struct ExperimentReport {
    ExperimentKind kind = ExperimentKind::rates;
    json config;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    json aggregates;
    std::vector<PlotPoint> plot;
    double runtime_seconds = 0;

    size_t column(const std::string& name) const;
    std::string raw_csv() const;
    std::string aggregate_json() const;
    std::string plot_csv() const;
};

ExperimentReport rate_experiment(const ExperimentPlan& plan);
ExperimentReport sharp_lower_probe(const ExperimentPlan& plan);
ExperimentReport coverage_experiment(const ExperimentPlan& plan);
ExperimentReport bvm_check(const ExperimentPlan& plan);
ExperimentReport flat_vs_cart(const ExperimentPlan& plan);
ExperimentReport proof_diagnostics(const ExperimentPlan& plan);
ExperimentReport run_experiment(const ExperimentPlan& plan);

// Recomputes aggregates and plot points from the raw rows alone.
void summarize(const ExperimentPlan& plan, ExperimentReport& r);

// ---- helpers shared with tests --------------------------------------------------------

struct OlsFit {
    double slope = 0, intercept = 0, slope_se = 0;
};
OlsFit ols(const std::vector<double>& x, const std::vector<double>& y);

struct Interval {
    double lo = 0, hi = 0;
};
Interval wilson_interval(double successes, double trials, double z = 1.96);

double mean_of(const std::vector<double>& v);
double stderr_of(const std::vector<double>& v);

double normal_cdf(double x);
// sup_x |F_emp(x) - Phi(x)|
double ks_to_standard_normal(std::vector<double> sample);
// sup_x |sum_i w_i Phi((x - mu_i)/s_i) - Phi(x)|, on a fine grid
double ks_mixture_to_standard_normal(const std::vector<double>& w, const std::vector<double>& mu,
                                     const std::vector<double>& s);
double tv_normal(double mu1, double s1, double mu2, double s2);

double sup_rate(double n, double alpha);         // (log^2 n / n)^{alpha/(2 alpha + 1)}
double flat_rate(double n, double alpha);        // (log n / n)^{alpha/(2 alpha + 2)}
int sharp_spike_level(double n, const HolderSpec& h);
double band_diameter_scale(double n, double alpha, double v_n);  // (n/log n)^{-alpha/(2alpha+1)} v_n

// Random-depth sieve: flat trees of depth d (levels < d active) with N(0,1) coefficients.
struct FlatTreePosterior {
    std::vector<double> log_weights;  // normalized, index d = 0..L
    double n = 0;

    int sample_depth(Rng& rng) const;
    double mean_depth() const;
    int mode_depth() const;
};
FlatTreePosterior flat_tree_posterior(const SequenceData& d, double decay);
CoeffArray flat_tree_draw(const FlatTreePosterior& fp, const SequenceData& d, Rng& rng);
// argmin_D [2^D log(n+1) + n/2 sum_{l > D} sum_k beta_lk^2]; levels <= D active.
int flat_oracle_cutoff(const CoeffArray& truth, double n);

// Picks dp, stratified dp, enumeration or MCMC according to what the prior and covariance allow.
TreePosterior fit_posterior(const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, size_t mcmc_iterations,
                            Rng& rng);

}  // namespace bcart
