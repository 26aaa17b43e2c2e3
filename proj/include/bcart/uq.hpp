#pragma once

#include <vector>

#include "bcart/haar.hpp"
#include "bcart/posterior.hpp"

namespace bcart {

struct BandSpec {
    double gamma = 0.05;
    double v_n = 0.0;  // 0 selects (log n)^{0.75}
    AdmissibleWeights weights;
    int j0 = 0;
    // Count psi_{-1,0} in sigma_n; negative means "when j0 >= 1".
    int include_root = -1;
    size_t draws = 2000;

    void validate() const;
    double resolved_vn(double n) const;
    bool root_counted() const { return include_root < 0 ? j0 >= 1 : include_root > 0; }
};

struct CredibleBand {
    CoeffArray center;
    Tree median;
    double sigma_n = 0;
    double R_n = 0;
    BandSpec spec;
};

// Nodes with inclusion >= 1/2. tol is the admissible excess of a child's
// inclusion over its parent's (Monte Carlo slack); beyond it a diagnostic
// error is raised.
Tree median_tree(const InclusionMap& incl, int max_depth_cap, double tol = 1e-9);
CoeffArray median_tree_estimator(const Tree& t, const SequenceData& d);
double radius_sigma(const Tree& t, const SequenceData& d, const BandSpec& spec);
double radius_R(const TreePosterior& p, const SequenceData& d, const BandSpec& spec, size_t draws, Rng& rng);
// Empirical (1-gamma) quantile in the ">=" form: smallest r with F(r) >= 1-gamma.
double empirical_quantile(std::vector<double> v, double level);
CredibleBand build_band(const TreePosterior& p, const SequenceData& d, const BandSpec& spec, Rng& rng,
                        double inclusion_tol = 1e-9);
bool band_membership(const CoeffArray& f, const CredibleBand& band, const SequenceData& d);

struct BandEnvelope {
    std::vector<double> lower, upper;
};
BandEnvelope band_envelope(const CredibleBand& band);

}  // namespace bcart
