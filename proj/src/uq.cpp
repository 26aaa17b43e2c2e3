#include "bcart/uq.hpp"

#include <algorithm>
#include <cmath>

#include "bcart/error.hpp"

namespace bcart {

void BandSpec::validate() const {
    require(gamma > 0 && gamma < 1, "gamma must lie in (0,1)");
    require(v_n >= 0, "v_n must be positive");
    require(j0 >= 0, "j0 must be >= 0");
}

double BandSpec::resolved_vn(double n) const { return v_n > 0 ? v_n : std::pow(std::log(n), 0.75); }

Tree median_tree(const InclusionMap& incl, int max_depth_cap, double tol) {
    auto get = [&](NodeId v) {
        auto it = incl.find(v);
        return it == incl.end() ? 0.0 : it->second;
    };
    std::vector<uint64_t> idx;
    for (const auto& [v, p] : incl) {
        if (v.l < 0) continue;
        if (v.l >= 1) {
            double parent = get(v.parent());
            if (p > parent + tol)
                fail(ErrorKind::diagnostic, "inclusion of " + to_string(v) + " exceeds its parent's by " +
                                                std::to_string(p - parent) + " (Monte Carlo noise?)");
        }
        if (p >= 0.5 && v.l < max_depth_cap) idx.push_back(v.index());
    }
    // Within tolerance a child can sit at 1/2 with its parent just below;
    // close the set under ancestry so the result is always a tree.
    std::vector<uint64_t> closed = idx;
    for (uint64_t i : idx)
        for (uint64_t a = i / 2; a >= 1; a /= 2) closed.push_back(a);
    return Tree::from_indices(std::move(closed), max_depth_cap);
}

CoeffArray median_tree_estimator(const Tree& t, const SequenceData& d) {
    CoeffArray f(d.L_max());
    f.root() = d.X.root();
    for (uint64_t i : t.internal_indices()) f.raw()[i] = d.X.raw()[i];
    return f;
}

double radius_sigma(const Tree& t, const SequenceData& d, const BandSpec& spec) {
    spec.validate();
    // sup_x sum_{(l,k) in T*} |psi_lk(x)| = max over root-to-leaf paths of sum 2^{l/2}
    std::vector<uint64_t> idx = t.internal_indices();
    std::vector<double> path(idx.empty() ? 1 : idx.back() + 1, 0.0);
    double best = 0;
    for (uint64_t i : idx) {
        double here = std::sqrt(std::ldexp(1.0, floor_log2(i))) + (i > 1 ? path[i / 2] : 0.0);
        path[i] = here;
        best = std::max(best, here);
    }
    if (spec.root_counted()) best += 1.0;
    double n = d.n;
    return spec.resolved_vn(n) * std::sqrt(std::log(n) / n) * best;
}

double empirical_quantile(std::vector<double> v, double level) {
    require(!v.empty(), "quantile of an empty sample");
    std::sort(v.begin(), v.end());
    size_t need = size_t(std::ceil(level * double(v.size()) - 1e-12));
    if (need == 0) need = 1;
    return v[std::min(need, v.size()) - 1];
}

double radius_R(const TreePosterior& p, const SequenceData& d, const BandSpec& spec, size_t draws, Rng& rng) {
    spec.validate();
    require(draws >= 100, "radius_R needs at least 100 draws");
    std::vector<double> dist;
    dist.reserve(draws);
    double rn = std::sqrt(d.n);
    CoeffArray diff(d.L_max());
    for_each_draw(p, d, draws, rng, [&](const Tree&, const CoeffArray& f) {
        for (size_t i = 0; i < f.size(); ++i) diff.raw()[i] = f.raw()[i] - d.X.raw()[i];
        dist.push_back(rn * multiscale_norm(diff, spec.weights));
    });
    return empirical_quantile(std::move(dist), 1.0 - spec.gamma);
}

CredibleBand build_band(const TreePosterior& p, const SequenceData& d, const BandSpec& spec, Rng& rng,
                        double inclusion_tol) {
    CredibleBand b;
    b.spec = spec;
    b.median = median_tree(p.inclusion(), p.L_max(), inclusion_tol);
    b.center = median_tree_estimator(b.median, d);
    b.sigma_n = radius_sigma(b.median, d, spec);
    b.R_n = radius_R(p, d, spec, spec.draws, rng);
    return b;
}

bool band_membership(const CoeffArray& f, const CredibleBand& band, const SequenceData& d) {
    int L = std::max(f.max_level(), d.L_max());
    CoeffArray diff = f.resized(L) - d.X.resized(L);
    if (multiscale_norm(diff, band.spec.weights) > band.R_n / std::sqrt(d.n)) return false;
    return grid_sup_distance(f, band.center) <= band.sigma_n;
}

BandEnvelope band_envelope(const CredibleBand& band) {
    BandEnvelope e;
    for (double v : inverse_haar(band.center).values()) {
        e.lower.push_back(v - band.sigma_n);
        e.upper.push_back(v + band.sigma_n);
    }
    return e;
}

}  // namespace bcart
