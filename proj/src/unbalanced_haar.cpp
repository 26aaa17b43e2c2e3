#include "bcart/unbalanced_haar.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <boost/math/distributions/beta.hpp>

#include "bcart/error.hpp"

namespace bcart {

// ---- construction -------------------------------------------------------------

UHSystem::UHSystem(const Breakpoints& b) : R_(b.resolution), bp_(b) {
    require(R_ >= 1 && R_ <= 24, "breakpoints: resolution out of range");
    const int64_t full = int64_t{1} << R_;
    for (const auto& [v, x] : b.b) {  // ascending index: parents first
        require(v.valid() && v.l >= 0, "breakpoint at invalid node " + to_string(v));
        Bracket br{0, full};
        if (v.l > 0) {
            const Node* p = find(v.parent());
            require(p != nullptr, "breakpoint at " + to_string(v) + " without a breakpoint at its parent");
            br = (v.k % 2 == 0) ? Bracket{p->lo, p->mid} : Bracket{p->mid, p->hi};
        }
        require(br.hi - br.lo >= 2, "empty bracket interval at " + to_string(v) + " offered a breakpoint");
        require(x > br.lo && x < br.hi, "breakpoint at " + to_string(v) + " leaves one side empty");
        Node n{v, br.lo, x, br.hi, 0, 0};
        double L = std::ldexp(double(x - br.lo), -R_), Rr = std::ldexp(double(br.hi - x), -R_);
        double s = 1.0 / std::sqrt(1.0 / L + 1.0 / Rr);
        n.left_value = s / L;
        n.right_value = -s / Rr;
        nodes_.push_back(n);
    }
}

const UHSystem::Node* UHSystem::find(NodeId v) const {
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), v,
                               [](const Node& a, const NodeId& b) { return a.id < b; });
    return (it != nodes_.end() && it->id == v) ? &*it : nullptr;
}

std::optional<Bracket> UHSystem::bracket(NodeId v) const {
    if (v.l == 0 && v.k == 0) return Bracket{0, int64_t{1} << R_};
    if (v.l <= 0) return std::nullopt;
    const Node* p = find(v.parent());
    if (!p) return std::nullopt;
    return (v.k % 2 == 0) ? Bracket{p->lo, p->mid} : Bracket{p->mid, p->hi};
}

int UHSystem::max_level() const {
    int m = -1;
    for (const Node& n : nodes_) m = std::max(m, n.id.l);
    return m;
}

std::vector<double> UHSystem::evaluate(NodeId v, int L) const {
    require(L >= R_, "evaluate: grid coarser than the system");
    const Node* n = find(v);
    require(n != nullptr, "evaluate: node not admissible");
    std::vector<double> g(size_t{1} << L, 0.0);
    int64_t sc = int64_t{1} << (L - R_);
    std::fill(g.begin() + n->lo * sc, g.begin() + n->mid * sc, n->left_value);
    std::fill(g.begin() + n->mid * sc, g.begin() + n->hi * sc, n->right_value);
    return g;
}

UHSystem build_uh(const Breakpoints& b) { return UHSystem(b); }

Breakpoints dyadic_breakpoints(int R) {
    Breakpoints b;
    b.resolution = R;
    for (int l = 0; l < R; ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k) b.b[{l, k}] = (2 * k + 1) << (R - l - 1);
    return b;
}

double gram_deviation(const UHSystem& s) {
    // Inner products of step functions from exact interval overlaps.
    struct Piece {
        int64_t a, b;
        double v;
    };
    std::vector<std::vector<Piece>> f;
    f.push_back({{0, int64_t{1} << s.resolution(), 1.0}});
    for (const auto& n : s.nodes()) f.push_back({{n.lo, n.mid, n.left_value}, {n.mid, n.hi, n.right_value}});
    double w = s.cell(), dev = 0;
    for (size_t i = 0; i < f.size(); ++i)
        for (size_t j = i; j < f.size(); ++j) {
            double ip = 0;
            for (const Piece& p : f[i])
                for (const Piece& q : f[j]) {
                    int64_t ov = std::min(p.b, q.b) - std::max(p.a, q.a);
                    if (ov > 0) ip += double(ov) * w * p.v * q.v;
                }
            dev = std::max(dev, std::abs(ip - (i == j ? 1.0 : 0.0)));
        }
    return dev;
}

// ---- balance and granularity ------------------------------------------------------

bool BalanceReport::all_pass() const {
    for (const auto& v : nodes)
        if (!v.pass()) return false;
    return true;
}

const BalanceVerdict* BalanceReport::verdict(NodeId v) const {
    for (const auto& x : nodes)
        if (x.node == v) return &x;
    return nullptr;
}

namespace {

// side * 2^{l+D} as an integer, -1 if not integral
int64_t scaled_side(int64_t side, int R, int shift_to) {
    int shift = R - shift_to;
    if (shift <= 0) return side << (-shift);
    if (side % (int64_t{1} << shift) != 0) return -1;
    return side >> shift;
}

}  // namespace

BalanceReport check_weak_balance(const UHSystem& s, int64_t E, int D) {
    BalanceReport rep;
    for (const auto& n : s.nodes()) {
        BalanceVerdict v;
        v.node = n.id;
        int64_t a = n.mid - n.lo, b = n.hi - n.mid;
        v.max_side = std::ldexp(double(std::max(a, b)), -s.resolution());
        v.min_side = std::ldexp(double(std::min(a, b)), -s.resolution());
        v.M = scaled_side(std::max(a, b), s.resolution(), n.id.l + D);
        v.m = scaled_side(std::min(a, b), s.resolution(), n.id.l + D);
        v.pass_max = v.M >= 1 && v.M <= E + n.id.l;
        v.pass_min = v.m >= 1 && v.m <= E + n.id.l;
        rep.nodes.push_back(v);
    }
    return rep;
}

int granularity(const UHSystem& s, int l) {
    int64_t best = std::numeric_limits<int64_t>::max();
    for (const auto& n : s.nodes())
        if (n.id.l == l) best = std::min({best, n.mid - n.lo, n.hi - n.mid});
    require(best != std::numeric_limits<int64_t>::max(), "granularity: level not populated");
    int tz = std::countr_zero(uint64_t(best));
    return std::max(1, s.resolution() - tz);
}

// ---- quantile systems ---------------------------------------------------------------

double BetaShape::pdf(double x) const { return boost::math::pdf(boost::math::beta_distribution<>(a, b), x); }

double BetaShape::cdf(double x) const { return boost::math::cdf(boost::math::beta_distribution<>(a, b), x); }

double BetaShape::quantile(double p) const {
    if (a == 1 && b == 1) return p;
    return boost::math::quantile(boost::math::beta_distribution<>(a, b), p);
}

namespace {

// G(x) from G^{-1} by bisection; G^{-1} is monotone on [0,1].
double cdf_of(const std::function<double(double)>& G_inverse, double x) {
    double lo = 0, hi = 1;
    for (int i = 0; i < 60; ++i) {
        double mid = 0.5 * (lo + hi);
        (G_inverse(mid) < x ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

namespace {

QuantileSystem quantile_impl(const std::function<double(double)>& G_inverse, const std::function<double(double)>& G,
                             const std::function<double(double)>& density, int D, int L_max, QuantileRounding mode) {
    require(D >= 1, "quantile_breakpoints: D must be >= 1");
    require(L_max >= 1, "quantile_breakpoints: L_max must be >= 1");
    QuantileSystem q;
    q.D = D;
    const int R = mode == QuantileRounding::level ? L_max : L_max + D;
    q.breakpoints.resolution = R;
    const size_t N = size_t{1} << R;
    for (size_t i = 0; i < N; ++i) {
        double g = density((i + 0.5) / double(N));
        if (!std::isfinite(g) || !(g > 0))
            fail(ErrorKind::precondition, "density is not finite and positive on the check grid");
        q.g_sup = std::max(q.g_sup, g);
        q.C_q = std::max(q.C_q, 1.0 / g);
    }
    q.E_lemma = int64_t(std::ceil(2.0 + 3.0 * q.C_q * std::ldexp(1.0, D - 1)));

    std::vector<std::pair<NodeId, Bracket>> frontier{{{0, 0}, {0, int64_t{1} << R}}};
    while (!frontier.empty()) {
        auto [v, br] = frontier.back();
        frontier.pop_back();
        if (v.l >= L_max) continue;
        int64_t bi;
        if (mode == QuantileRounding::finest) {
            double x = G_inverse(double(2 * v.k + 1) / std::ldexp(1.0, v.l + 1));
            // small guard: an exact grid point must not round down through float error
            bi = int64_t(std::floor(x * std::ldexp(1.0, R) + 1e-9));
        } else {
            // The (2k+1)/2^{l+1} quantile is the conditional median of the
            // unrounded bracket; taking the median of the rounded bracket keeps
            // rounding errors from compounding down the tree.
            int r = std::min(v.l + D, L_max);
            int64_t unit = int64_t{1} << (R - r);
            if (br.hi - br.lo < 2 * unit) continue;
            double glo = br.lo == 0 ? 0.0 : G(std::ldexp(double(br.lo), -R));
            double ghi = br.hi == (int64_t{1} << R) ? 1.0 : G(std::ldexp(double(br.hi), -R));
            double x = G_inverse(0.5 * (glo + ghi));
            bi = int64_t(std::llround(x * std::ldexp(1.0, r))) * unit;
            bi = std::clamp(bi, br.lo + unit, br.hi - unit);
        }
        if (bi <= br.lo || bi >= br.hi) continue;
        q.breakpoints.b[v] = bi;
        frontier.push_back({v.right(), {bi, br.hi}});
        frontier.push_back({v.left(), {br.lo, bi}});
    }
    return q;
}

}  // namespace

QuantileSystem quantile_breakpoints(const std::function<double(double)>& G_inverse,
                                    const std::function<double(double)>& density, int D, int L_max,
                                    QuantileRounding mode) {
    return quantile_impl(G_inverse, [&](double x) { return cdf_of(G_inverse, x); }, density, D, L_max, mode);
}

QuantileSystem quantile_breakpoints(const BetaShape& shape, int D, int L_max, QuantileRounding mode) {
    return quantile_impl([&](double p) { return shape.quantile(p); }, [&](double x) { return shape.cdf(x); },
                         [&](double x) { return shape.pdf(x); }, D, L_max, mode);
}

int admissible_depth(double n, double c) {
    require(c > 0, "admissible_depth: c must be positive");
    return int(std::floor(std::log2(n / std::pow(std::log(n), c))));
}

size_t admissibility_violations(const UHSystem& s, int Lambda) {
    size_t bad = 0;
    for (int l = 0; l <= std::min(Lambda, s.resolution() - 1); ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k)
            if (!s.admissible({l, k})) ++bad;
    return bad;
}

// ---- transforms ---------------------------------------------------------------------

CoeffArray uh_coefficients(const GridFunction& f, const UHSystem& s) {
    int Lf = f.max_level(), R = s.resolution();
    require(Lf >= R, "uh_coefficients: grid resolution below the system's");
    std::vector<double> P(f.size() + 1, 0.0);
    for (size_t i = 0; i < f.size(); ++i) P[i + 1] = P[i] + f[i];
    double w = std::ldexp(1.0, -Lf);
    int64_t sc = int64_t{1} << (Lf - R);
    CoeffArray c(R);
    c.root() = P.back() * w;
    for (const auto& n : s.nodes()) {
        double left = (P[n.mid * sc] - P[n.lo * sc]) * w, right = (P[n.hi * sc] - P[n.mid * sc]) * w;
        c.at(n.id.l, n.id.k) = n.left_value * left + n.right_value * right;
    }
    return c;
}

GridFunction uh_reconstruct(const CoeffArray& c, const UHSystem& s, int L, int max_level) {
    require(L >= s.resolution(), "uh_reconstruct: grid coarser than the system");
    std::vector<double> g(size_t{1} << L, c.root());
    int64_t sc = int64_t{1} << (L - s.resolution());
    for (const auto& n : s.nodes()) {
        if (max_level >= 0 && n.id.l > max_level) continue;
        if (n.id.l >= c.max_level()) continue;
        double b = c.at(n.id.l, n.id.k);
        if (b == 0) continue;
        for (int64_t i = n.lo * sc; i < n.mid * sc; ++i) g[i] += b * n.left_value;
        for (int64_t i = n.mid * sc; i < n.hi * sc; ++i) g[i] += b * n.right_value;
    }
    return GridFunction(std::move(g));
}

DecayCheck decay_bound_check(const CoeffArray& coef, const UHSystem& s, const HolderSpec& h) {
    DecayCheck d;
    for (const auto& n : s.nodes()) {
        double maxside = std::ldexp(double(std::max(n.mid - n.lo, n.hi - n.mid)), -s.resolution());
        double bound = h.M * std::pow(2.0, h.alpha - 0.5) * std::pow(maxside, h.alpha + 0.5);
        double r = std::abs(coef.at(n.id.l, n.id.k)) / bound;
        if (r > d.max_ratio) {
            d.max_ratio = r;
            d.worst = n.id;
        }
    }
    return d;
}

ComplexityReport complexity_certificates(const UHSystem& s, int64_t E, int D, const GridFunction* f,
                                         const HolderSpec* h) {
    ComplexityReport rep;
    rep.C0 = 2.0 * double(E + 1) * double(1 + D);
    const int R = s.resolution();
    for (const auto& n : s.nodes()) {
        CoeffArray h_coef = forward_haar(s.evaluate(n.id, R));
        size_t count = 0;
        int deepest = -1;
        for (int l = 0; l < R; ++l)
            for (double v : h_coef.level(l))
                if (std::abs(v) > 1e-12) {
                    ++count;
                    deepest = l;
                }
        if (std::abs(h_coef.root()) > 1e-12) ++count;
        int l = n.id.l;
        rep.counts.push_back(count);
        rep.max_count = std::max(rep.max_count, count);
        if (double(count) > 2.0 * double(E + l) * double(l + D) || deepest > l + D) rep.counts_within_lemma = false;
        double lc = std::max(l, 1);
        if (double(count) > rep.C0 * lc * lc * lc) rep.cubic_bound = false;
    }
    if (f && h) {
        CoeffArray c = uh_coefficients(*f, s);
        int top = s.max_level();
        for (int l = 0; l <= top; ++l) {
            double lc = std::max(l, 1);
            double v = std::pow(2.0, h->alpha - 0.5) * std::pow(double(E + l), h->alpha + 0.5) *
                       std::pow(2.0, -D * (h->alpha + 0.5)) / std::pow(lc, 1.5);
            rep.C1_lemma = std::max(rep.C1_lemma, v);
        }
        for (const auto& n : s.nodes()) {
            double lc = std::max(n.id.l, 1);
            double denom = h->M * std::pow(lc, 1.5) * std::pow(2.0, -n.id.l * (h->alpha + 0.5));
            rep.C1_needed = std::max(rep.C1_needed, std::abs(c.at(n.id.l, n.id.k)) / denom);
        }
        rep.b2_pass = rep.C1_needed <= rep.C1_lemma * (1 + 1e-12);
    }
    return rep;
}

BiasReport projection_bias(const GridFunction& f, const UHSystem& s, int Lambda, double alpha) {
    CoeffArray c = uh_coefficients(f, s);
    GridFunction approx = uh_reconstruct(c, s, f.max_level(), Lambda);
    BiasReport r;
    for (size_t i = 0; i < f.size(); ++i) r.bias = std::max(r.bias, std::abs(f[i] - approx[i]));
    double lam = std::max(Lambda, 1);
    r.ratio = r.bias / std::pow(lam * std::ldexp(1.0, -int(lam)), alpha);
    return r;
}

// ---- histogram map and priors --------------------------------------------------------

UHPinball::UHPinball(const Tree& t, const UHSystem& s) : R_(s.resolution()), rows_(t.leaves()), cols_(t.coefficient_nodes()) {
    for (const NodeId& v : t.internal())
        require(s.admissible(v), "tree uses non-admissible node " + to_string(v));
    size_t K = rows_.size();
    A_ = Eigen::MatrixXd::Zero(K, K);
    for (size_t r = 0; r < K; ++r) {
        auto br = s.bracket(rows_[r]);
        require(br.has_value(), "leaf without a bracket");
        cells_.push_back(*br);
        A_(r, 0) = 1.0;
        for (NodeId a = rows_[r].parent(); a.l >= 0; a = a.parent()) {
            const auto* n = s.find(a);
            size_t c = std::lower_bound(cols_.begin(), cols_.end(), a) - cols_.begin();
            A_(r, c) = br->hi <= n->mid ? n->left_value : n->right_value;
        }
    }
}

Eigen::VectorXd UHPinball::cell_widths() const {
    Eigen::VectorXd w(cells_.size());
    for (size_t i = 0; i < cells_.size(); ++i) w[i] = std::ldexp(double(cells_[i].hi - cells_[i].lo), -R_);
    return w;
}

std::vector<double> UHPinball::render(const Eigen::VectorXd& heights, int L) const {
    require(L >= R_, "render: grid coarser than the system");
    std::vector<double> g(size_t{1} << L, 0.0);
    int64_t sc = int64_t{1} << (L - R_);
    for (size_t r = 0; r < cells_.size(); ++r)
        std::fill(g.begin() + cells_[r].lo * sc, g.begin() + cells_[r].hi * sc, heights[r]);
    return g;
}

UHSystem basis_from_prior(const BasisPrior& basis, size_t shape_index) {
    require(shape_index < basis.shapes.size(), "basis prior: shape index out of range");
    QuantileSystem q = quantile_breakpoints(basis.shapes[shape_index], basis.D, basis.L_max);
    UHSystem s(q.breakpoints);
    s.E = q.E_lemma;
    s.D = basis.D;
    return s;
}

NondyadicDraw nondyadic_prior_sample(const BasisPrior& basis, const PriorSpec& tree_prior, const CovSpec& cov,
                                     Rng& rng) {
    require(!basis.shapes.empty(), "basis prior: no shapes");
    std::vector<double> w = basis.weights;
    if (w.empty()) w.assign(basis.shapes.size(), 1.0);
    require(w.size() == basis.shapes.size(), "basis prior: weight count mismatch");
    double tot = 0;
    for (double x : w) tot += x;
    double u = rng.uniform() * tot, c = 0;
    size_t idx = w.size() - 1;
    for (size_t i = 0; i < w.size(); ++i) {
        c += w[i];
        if (u < c) {
            idx = i;
            break;
        }
    }
    UHSystem s = basis_from_prior(basis, idx);
    PriorSpec p = tree_prior;
    p.L_max = basis.L_max;
    Tree t = sample_tree(p, rng, [&](NodeId v) { return s.admissible(v); });
    UHPinball A(t, s);
    size_t K = t.leaf_count();
    Eigen::VectorXd beta(K);
    if (cov.kind == CovKind::identity) {
        for (size_t i = 0; i < K; ++i) beta[i] = rng.normal();
    } else if (cov.kind == CovKind::g_prior) {
        // i.i.d. N(0, g) heights, mapped back with A^{-1} = A^T W
        Eigen::VectorXd h(K);
        for (size_t i = 0; i < K; ++i) h[i] = std::sqrt(cov.g) * rng.normal();
        beta = A.dense().transpose() * A.cell_widths().cwiseProduct(h);
    } else {
        fail(ErrorKind::unsupported, "nondyadic prior supports identity and g_prior covariances");
    }
    CoeffArray coef(s.resolution());
    auto nodes = t.coefficient_nodes();
    for (size_t i = 0; i < K; ++i) coef.raw()[nodes[i].index()] = beta[i];
    GridFunction hist(A.render(A.dense() * beta, s.resolution()));
    return {std::move(s), idx, std::move(t), std::move(coef), std::move(hist)};
}

GridFunction simulate_white_noise(const GridFunction& f0, double n, uint64_t seed) {
    require(n >= 2, "simulate: n must be >= 2");
    std::vector<double> y = f0.values();
    double s = std::sqrt(std::ldexp(1.0, f0.max_level()) / n);
    for (size_t i = 0; i < y.size(); ++i) y[i] += s * keyed_normal(seed, i);
    return GridFunction(std::move(y));
}

SequenceData uh_sequence_data(const GridFunction& obs, const UHSystem& s, double n) {
    SequenceData d;
    d.n = n;
    d.X = uh_coefficients(obs, s);
    return d;
}

BasisPosterior posterior_over_bases(const GridFunction& obs, double n, const std::vector<UHSystem>& support,
                                    const std::vector<double>& prior_weights, const PriorSpec& tree_prior) {
    require(!support.empty() && support.size() == prior_weights.size(), "basis posterior: support mismatch");
    BasisPosterior bp;
    std::vector<double> lw;
    for (size_t i = 0; i < support.size(); ++i) {
        const UHSystem& s = support[i];
        SequenceData d = uh_sequence_data(obs, s, n);
        PriorSpec p = tree_prior;
        p.L_max = std::min(p.L_max, s.resolution());
        CovSpec id;
        bp.trees.push_back(posterior_exact(d, p, id, ExactMethod::dp, false, [&s](NodeId v) { return s.admissible(v); }));
        lw.push_back(std::log(prior_weights[i]) + bp.trees.back().log_evidence());
    }
    double z = log_sum_exp(lw);
    for (double x : lw) bp.weights.push_back(std::exp(x - z));
    return bp;
}

}  // namespace bcart
