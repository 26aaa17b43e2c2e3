#include "bcart/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "bcart/error.hpp"

namespace bcart {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd gather(const Tree& t, const CoeffArray& X) {
    auto nodes = t.coefficient_nodes();
    Eigen::VectorXd x(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) x[i] = X.raw()[nodes[i].index()];
    return x;
}

std::vector<double> log_convolve(const std::vector<double>& a, const std::vector<double>& b, size_t cap) {
    size_t n = std::min(cap, a.size() - 1 + b.size() - 1);
    std::vector<double> out(std::max<size_t>(n + 1, 2), kNegInf);
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

double cond_uniform_log_weight(size_t K, double lambda) {
    return double(K) * std::log(lambda) - std::log(std::expm1(lambda)) - std::lgamma(double(K) + 1) -
           log_catalan(K - 1);
}

}  // namespace

// ---- data -------------------------------------------------------------------

SequenceData simulate(const CoeffArray& truth, double n, uint64_t seed, int L) {
    require(n >= 2, "simulate: n must be >= 2");
    if (L < 0) L = int(std::floor(std::log2(n) + 1e-12));
    SequenceData d;
    d.n = n;
    d.truth = truth.resized(L);
    d.X = *d.truth;
    double s = 1.0 / std::sqrt(n);
    for (size_t i = 0; i < d.X.size(); ++i) d.X.raw()[i] += s * keyed_normal(seed, i);
    return d;
}

SequenceData simulate_with_noise(const CoeffArray& truth, double n, const CoeffArray& eps) {
    require(n >= 2, "simulate: n must be >= 2");
    SequenceData d;
    d.n = n;
    d.truth = truth.resized(eps.max_level());
    d.X = *d.truth;
    double s = 1.0 / std::sqrt(n);
    for (size_t i = 0; i < d.X.size(); ++i) d.X.raw()[i] += s * eps.raw()[i];
    return d;
}

bool noise_event_holds(const SequenceData& d) {
    require(d.truth.has_value(), "noise_event_holds: truth absent");
    CoeffArray t = d.truth->resized(d.L_max());
    double bound = 2.0 * std::log(std::ldexp(1.0, d.L_max() + 1));
    double rn = std::sqrt(d.n);
    for (size_t i = 0; i < d.X.size(); ++i) {
        double e = rn * (d.X.raw()[i] - t.raw()[i]);
        if (e * e > bound) return false;
    }
    return true;
}

double log_marginal_node_factor(double x, double n) {
    return n * n * x * x / (2.0 * (n + 1.0)) - 0.5 * std::log1p(n);
}

double log_marginal_likelihood(const Tree& t, const SequenceData& d, const Eigen::MatrixXd& sigma) {
    Eigen::VectorXd x = gather(t, d.X);
    require(sigma.rows() == x.size() && sigma.cols() == x.size(), "marginal likelihood: covariance dimension");
    double n = d.n;
    // log N = -1/2 log det(I + n S) + n^2/2 x^T S (I + n S)^{-1} x;
    // (n I + S^{-1})^{-1} = S (I + n S)^{-1}, which avoids inverting S.
    Eigen::MatrixXd C = Eigen::MatrixXd::Identity(x.size(), x.size()) + n * sigma;
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) {
        Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(C, Eigen::EigenvaluesOnly).eigenvalues();
        fail(ErrorKind::numerical, "Cholesky failed; eigenvalue range [" + std::to_string(ev.minCoeff()) + ", " +
                                       std::to_string(ev.maxCoeff()) + "]");
    }
    double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    Eigen::VectorXd y = llt.solve(x);
    double quad = n * n * x.dot(sigma * y);
    return -0.5 * logdet + 0.5 * quad;
}

double log_marginal_likelihood(const Tree& t, const SequenceData& d, const CovSpec& cov) {
    if (cov.kind == CovKind::identity) {
        double s = log_marginal_node_factor(d.X.root(), d.n);
        for (uint64_t i : t.internal_indices()) s += log_marginal_node_factor(d.X.raw()[i], d.n);
        return s;
    }
    CovSpec c = cov;
    if (c.n == 0) c.n = d.n;
    return log_marginal_likelihood(t, d, haar_covariance(t, c));
}

// ---- exact posteriors -------------------------------------------------------

TreePosterior posterior_exact_impl(const SequenceData& d, const PriorSpec& prior_in, const CovSpec& cov, int method,
                                   bool stratified, const SplitAllowed& allowed) {
    PriorSpec prior = prior_in;
    if (prior.n == 0) prior.n = d.n;
    prior.validate();
    cov.validate();
    require(prior.L_max <= d.L_max(), "posterior: prior L_max exceeds the data resolution");
    TreePosterior p;
    p.prior_ = prior;
    p.cov_ = cov;
    const int L = prior.L_max;

    if (method == 0) {
        p.mode_ = TreePosterior::Mode::enumerated;
        std::vector<double> lw;
        double norm = log_prior_normalizer(prior);
        for (Tree& t : enumerate_trees(L)) {
            if (!respects_forced_layers(t, prior.j0)) continue;
            if (allowed) {
                bool ok = true;
                for (const NodeId& v : t.internal()) ok = ok && allowed(v);
                if (!ok) continue;
            }
            double lp = log_prior_unnormalized(t, prior) - norm;
            double w = lp == kNegInf ? kNegInf : lp + log_marginal_likelihood(t, d, cov);
            lw.push_back(w);
            p.trees_.emplace_back(std::move(t), w);
        }
        double z = log_sum_exp(lw);
        for (auto& [t, w] : p.trees_) w -= z;
        p.log_evidence_ = z;
        return p;
    }

    if (cov.kind != CovKind::identity)
        fail(ErrorKind::unsupported, "dp requires the identity coefficient covariance");
    if (prior.kind == PriorKind::cond_uniform && !stratified)
        fail(ErrorKind::unsupported, "dp with the cond_uniform prior needs the leaf-count-stratified variant");

    const size_t N = size_t{1} << (L + 1);
    std::vector<double> logg(N, 0.0);
    for (size_t i = 1; i < N; ++i)
        if (floor_log2(i) < L) logg[i] = log_marginal_node_factor(d.X.raw()[i], d.n);
    double log_root = log_marginal_node_factor(d.X.root(), d.n);
    auto can_split = [&](size_t i) {
        int l = floor_log2(i);
        return l < L && (!allowed || allowed(NodeId::from_index(i)));
    };
    const bool use_strat = stratified && prior.kind != PriorKind::galton_watson;

    if (!use_strat) {
        // GW: a node stops with 1 - p_l and splits with p_l g(l,k); forced
        // layers split with weight g alone; the cap (or a disallowed node)
        // stops with weight 1. Exponential: n^{-cK} = prod over leaves of
        // n^{-c}, so each leaf carries n^{-c} and each split carries g.
        p.mode_ = TreePosterior::Mode::dp;
        std::vector<double> logz(N, kNegInf);
        p.log_split_.assign(N, kNegInf);
        p.log_stop_.assign(N, kNegInf);
        const double leaf_exp = -prior.c * prior.log_n();
        for (size_t i = N - 1; i >= 1; --i) {
            int l = floor_log2(i);
            bool can = can_split(i);
            double leafw, splitw = kNegInf;
            if (prior.kind == PriorKind::galton_watson) {
                if (l < prior.j0 && can) leafw = kNegInf;
                else if (!can) leafw = 0.0;
                else leafw = std::log1p(-prior.split_prob(l));
                if (can) splitw = (l < prior.j0 ? 0.0 : std::log(prior.split_prob(l))) + logg[i];
            } else {
                leafw = l < prior.j0 ? kNegInf : leaf_exp;
                if (can) splitw = logg[i];
            }
            double sp = can ? splitw + logz[2 * i] + logz[2 * i + 1] : kNegInf;
            logz[i] = log_add_exp(leafw, sp);
            if (logz[i] == kNegInf)
                fail(ErrorKind::invalid_input, "no tree satisfies the forced layers under the split restriction");
            p.log_split_[i] = sp - logz[i];
            p.log_stop_[i] = leafw - logz[i];
        }
        p.log_evidence_ = logz[1] + log_root - log_prior_normalizer(prior);
        return p;
    }

    // Leaf-count-stratified recursion for priors that depend on K only.
    p.mode_ = TreePosterior::Mode::stratified_dp;
    const size_t cap = default_leaf_cap(prior);
    p.poly_.assign(N, {});
    p.log_g_ = logg;
    p.log_leafw_.assign(N, kNegInf);
    for (size_t i = N - 1; i >= 1; --i) {
        int l = floor_log2(i);
        std::vector<double> poly =
            can_split(i) ? log_convolve(p.poly_[2 * i], p.poly_[2 * i + 1], cap) : std::vector<double>(2, kNegInf);
        if (can_split(i))
            for (size_t m = 2; m < poly.size(); ++m) poly[m] += logg[i];
        p.log_leafw_[i] = l < prior.j0 && can_split(i) ? kNegInf : 0.0;
        poly[1] = p.log_leafw_[i];
        p.poly_[i] = std::move(poly);
    }
    auto log_w = [&](size_t K) {
        return prior.kind == PriorKind::cond_uniform ? cond_uniform_log_weight(K, prior.lambda)
                                                     : -prior.c * double(K) * prior.log_n();
    };
    const auto& root = p.poly_[1];
    p.root_k_.assign(root.size(), kNegInf);
    for (size_t K = 1; K < root.size(); ++K)
        if (root[K] > kNegInf) p.root_k_[K] = log_w(K) + root[K];
    double z = log_sum_exp(p.root_k_);
    require(z > kNegInf, "no tree satisfies the forced layers under the split restriction");
    for (double& v : p.root_k_) v -= z;
    p.log_w_norm_ = z;
    p.log_evidence_ = z + log_root - log_prior_normalizer(prior);

    // Outside pass for the inclusion probabilities.
    std::vector<std::vector<double>> out(N);
    out[1].assign(root.size(), kNegInf);
    for (size_t K = 1; K < root.size(); ++K) out[1][K] = log_w(K);
    p.strat_inclusion_.assign(N, 0.0);
    for (size_t i = 1; i < N / 2; ++i) {
        if (out[i].empty() || !can_split(i)) continue;
        const auto &pa = p.poly_[2 * i], &pb = p.poly_[2 * i + 1];
        double incl = kNegInf;
        std::vector<double> split = log_convolve(pa, pb, cap);
        for (size_t m = 2; m < std::min(split.size(), out[i].size()); ++m)
            incl = log_add_exp(incl, out[i][m] + logg[i] + split[m] - z);
        p.strat_inclusion_[i] = std::exp(incl);
        // out_a[x] = log sum_y out_i[x+y] + g_i + P_b[y]
        auto outside = [&](const std::vector<double>& other, size_t len) {
            std::vector<double> o(len, kNegInf);
            for (size_t x = 1; x < len; ++x) {
                double acc = kNegInf;
                for (size_t y = 1; y < other.size() && x + y < out[i].size(); ++y)
                    if (other[y] > kNegInf && out[i][x + y] > kNegInf)
                        acc = log_add_exp(acc, out[i][x + y] + logg[i] + other[y]);
                o[x] = acc;
            }
            return o;
        };
        out[2 * i] = outside(pb, pa.size());
        out[2 * i + 1] = outside(pa, pb.size());
        out[i].clear();
        out[i].shrink_to_fit();
    }
    return p;
}

TreePosterior posterior_exact(const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, ExactMethod m,
                              bool stratified, const SplitAllowed& allowed) {
    return posterior_exact_impl(d, prior, cov, m == ExactMethod::enumerate ? 0 : 1, stratified, allowed);
}

// ---- queries ----------------------------------------------------------------

double TreePosterior::log_probability(const Tree& t) const {
    switch (mode_) {
        case Mode::enumerated:
            for (const auto& [u, w] : trees_)
                if (u == t) return w;
            return kNegInf;
        case Mode::dp: {
            if (t.depth() > prior_.L_max) return kNegInf;
            double s = 0;
            for (uint64_t i : t.internal_indices()) s += log_split_[i];
            for (const NodeId& v : t.leaves()) s += log_stop_[v.index()];
            return s;
        }
        case Mode::stratified_dp: {
            if (t.depth() > prior_.L_max || !respects_forced_layers(t, prior_.j0)) return kNegInf;
            size_t K = t.leaf_count();
            if (K >= root_k_.size()) return kNegInf;
            double s = root_k_[K] - poly_[1][K];  // log w_K - log Z
            for (uint64_t i : t.internal_indices()) {
                if (poly_[i].size() < 3) return kNegInf;
                s += log_g_[i];
            }
            for (const NodeId& v : t.leaves()) s += log_leafw_[v.index()];
            return s;
        }
        case Mode::mcmc: {
            size_t c = 0;
            for (const Tree& u : chain_) c += (u == t);
            return c ? std::log(double(c) / double(chain_.size())) : kNegInf;
        }
    }
    return kNegInf;
}

double TreePosterior::probability(const Tree& t) const { return std::exp(log_probability(t)); }

InclusionMap TreePosterior::inclusion() const {
    InclusionMap m;
    switch (mode_) {
        case Mode::enumerated:
            for (const auto& [t, w] : trees_) {
                double p = std::exp(w);
                for (const NodeId& v : t.internal()) m[v] += p;
            }
            break;
        case Mode::dp: {
            size_t N = log_split_.size();
            std::vector<double> reach(N, 0.0);
            reach[1] = 1.0;
            for (size_t i = 1; i < N; ++i) {
                double inc = reach[i] * std::exp(log_split_[i]);
                if (inc > 0) {
                    m[NodeId::from_index(i)] = inc;
                    reach[2 * i] = reach[2 * i + 1] = inc;
                }
            }
            break;
        }
        case Mode::stratified_dp:
            for (size_t i = 1; i < strat_inclusion_.size(); ++i)
                if (strat_inclusion_[i] > 0) m[NodeId::from_index(i)] = strat_inclusion_[i];
            break;
        case Mode::mcmc:
            for (const Tree& t : chain_)
                for (uint64_t i : t.internal_indices()) m[NodeId::from_index(i)] += 1.0;
            for (auto& [v, c] : m) c /= double(chain_.size());
            break;
    }
    return m;
}

InclusionMap TreePosterior::inclusion_stderr() const {
    InclusionMap se;
    if (mode_ != Mode::mcmc) return se;
    for (const auto& [v, p] : inclusion()) {
        std::vector<double> trace(chain_.size());
        for (size_t s = 0; s < chain_.size(); ++s) trace[s] = chain_[s].contains(v) ? 1.0 : 0.0;
        se[v] = batch_means_stderr(trace);
    }
    return se;
}

Tree TreePosterior::sample(Rng& rng) const {
    switch (mode_) {
        case Mode::enumerated: {
            double u = rng.uniform(), c = 0;
            for (const auto& [t, w] : trees_) {
                c += std::exp(w);
                if (u < c) return t;
            }
            for (auto it = trees_.rbegin(); it != trees_.rend(); ++it)
                if (it->second > kNegInf) return it->first;
            return trees_.back().first;
        }
        case Mode::dp: {
            std::vector<uint64_t> internal, stack{1};
            while (!stack.empty()) {
                uint64_t i = stack.back();
                stack.pop_back();
                if (i >= log_split_.size() || log_split_[i] == kNegInf) continue;
                if (log_stop_[i] == kNegInf || rng.uniform() < std::exp(log_split_[i])) {
                    internal.push_back(i);
                    stack.push_back(2 * i + 1);
                    stack.push_back(2 * i);
                }
            }
            return Tree::from_indices(std::move(internal), prior_.L_max);
        }
        case Mode::stratified_dp: {
            auto pick = [&](const std::vector<double>& logw) {
                double u = rng.uniform(), c = 0, mx = kNegInf;
                for (double x : logw) mx = std::max(mx, x);
                double tot = 0;
                for (double x : logw) tot += x > kNegInf ? std::exp(x - mx) : 0.0;
                size_t last = 0;
                for (size_t j = 0; j < logw.size(); ++j) {
                    if (logw[j] == kNegInf) continue;
                    last = j;
                    c += std::exp(logw[j] - mx) / tot;
                    if (u < c) return j;
                }
                return last;
            };
            size_t K = pick(root_k_);
            std::vector<uint64_t> internal;
            std::vector<std::pair<uint64_t, size_t>> stack{{1, K}};
            while (!stack.empty()) {
                auto [i, m] = stack.back();
                stack.pop_back();
                if (m == 1) continue;
                internal.push_back(i);
                const auto &pa = poly_[2 * i], &pb = poly_[2 * i + 1];
                std::vector<double> w(m, kNegInf);
                for (size_t a = 1; a < m; ++a)
                    if (a < pa.size() && m - a < pb.size()) w[a] = pa[a] + pb[m - a];
                size_t a = pick(w);
                stack.push_back({2 * i + 1, m - a});
                stack.push_back({2 * i, a});
            }
            return Tree::from_indices(std::move(internal), prior_.L_max);
        }
        case Mode::mcmc:
            return chain_[rng.below(chain_.size())];
    }
    return Tree(prior_.L_max);
}

std::vector<std::pair<Tree, double>> TreePosterior::top_trees(size_t k, size_t pool, uint64_t seed) const {
    std::vector<std::pair<Tree, double>> all;
    if (mode_ == Mode::enumerated) {
        for (const auto& [t, w] : trees_) all.emplace_back(t, std::exp(w));
    } else {
        std::map<Tree, size_t> seen;
        if (mode_ == Mode::mcmc) {
            for (const Tree& t : chain_) ++seen[t];
            for (const auto& [t, c] : seen) all.emplace_back(t, double(c) / double(chain_.size()));
        } else {
            Rng rng(seed);
            for (size_t s = 0; s < pool; ++s) ++seen[sample(rng)];
            for (const auto& [t, c] : seen) all.emplace_back(t, probability(t));
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (all.size() > k) all.resize(k);
    return all;
}

double TreePosterior::depth_exceeds(int depth, size_t samples, uint64_t seed) const {
    switch (mode_) {
        case Mode::enumerated: {
            double s = 0;
            for (const auto& [t, w] : trees_)
                if (t.depth() > depth) s += std::exp(w);
            return s;
        }
        case Mode::dp: {
            if (depth >= prior_.L_max) return 0.0;
            if (depth < 0) return 1.0;
            // q_i = P(no internal node at level >= depth below i | i reached)
            size_t N = log_split_.size();
            std::vector<double> q(N, 1.0);
            for (size_t i = N - 1; i >= 1; --i) {
                int l = floor_log2(i);
                if (l > depth) continue;
                double stop = std::exp(log_stop_[i]);
                q[i] = l == depth ? stop : stop + std::exp(log_split_[i]) * q[2 * i] * q[2 * i + 1];
            }
            return std::max(0.0, 1.0 - q[1]);
        }
        case Mode::stratified_dp: {
            Rng rng(seed);
            size_t S = samples ? samples : 4000, c = 0;
            for (size_t s = 0; s < S; ++s) c += sample(rng).depth() > depth;
            return double(c) / double(S);
        }
        case Mode::mcmc: {
            size_t c = 0;
            for (const Tree& t : chain_) c += t.depth() > depth;
            return double(c) / double(chain_.size());
        }
    }
    return 0.0;
}

InclusionMap marginal_inclusion(const TreePosterior& p) { return p.inclusion(); }

// ---- MCMC -------------------------------------------------------------------

std::vector<NodeId> growable_leaves(const Tree& t) {
    std::vector<NodeId> out;
    for (const NodeId& v : t.leaves())
        if (v.l < t.max_depth_cap()) out.push_back(v);
    return out;
}

std::vector<NodeId> prunable_nodes(const Tree& t, int j0) {
    std::vector<NodeId> out;
    for (const NodeId& v : t.internal())
        if (v.l >= j0 && !t.contains(v.left()) && !t.contains(v.right())) out.push_back(v);
    return out;
}

namespace {

double log_move_prob(size_t n_grow, size_t n_prune, bool grow) {
    if (n_grow == 0 && n_prune == 0) return kNegInf;
    if (grow) return n_grow == 0 ? kNegInf : (n_prune == 0 ? 0.0 : std::log(0.5));
    return n_prune == 0 ? kNegInf : (n_grow == 0 ? 0.0 : std::log(0.5));
}

}  // namespace

double log_proposal(const Tree& from, const Tree& to, int j0) {
    auto g = growable_leaves(from);
    auto p = prunable_nodes(from, j0);
    if (to.internal_count() == from.internal_count() + 1) {
        for (const NodeId& v : g)
            if (to.contains(v)) return log_move_prob(g.size(), p.size(), true) - std::log(double(g.size()));
    } else if (to.internal_count() + 1 == from.internal_count()) {
        for (const NodeId& v : p)
            if (!to.contains(v)) return log_move_prob(g.size(), p.size(), false) - std::log(double(p.size()));
    }
    return kNegInf;
}

double log_target(const Tree& t, const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, bool use_data) {
    double lp = log_prior_unnormalized(t, prior);
    if (!use_data || lp == kNegInf) return lp;
    return lp + log_marginal_likelihood(t, d, cov);
}

double log_accept_ratio(const Tree& from, const Tree& to, const SequenceData& d, const PriorSpec& prior,
                        const CovSpec& cov, bool use_data) {
    return log_target(to, d, prior, cov, use_data) - log_target(from, d, prior, cov, use_data) +
           log_proposal(to, from, prior.j0) - log_proposal(from, to, prior.j0);
}

double batch_means_stderr(const std::vector<double>& trace, size_t batches) {
    size_t n = trace.size();
    if (n < 2 * batches) batches = std::max<size_t>(1, n / 2);
    size_t b = n / batches;
    if (b == 0 || batches < 2) return 0.0;
    std::vector<double> means(batches, 0.0);
    for (size_t j = 0; j < batches; ++j) {
        for (size_t i = 0; i < b; ++i) means[j] += trace[j * b + i];
        means[j] /= double(b);
    }
    double mu = 0;
    for (double m : means) mu += m;
    mu /= double(batches);
    double v = 0;
    for (double m : means) v += (m - mu) * (m - mu);
    v /= double(batches - 1);
    return std::sqrt(v / double(batches));
}

TreePosterior posterior_mcmc(const SequenceData& d, const PriorSpec& prior_in, const CovSpec& cov, size_t iters,
                             Rng& rng, bool use_data, const Tree* start) {
    require(iters >= 1, "mcmc: iters must be >= 1");
    PriorSpec prior = prior_in;
    if (prior.n == 0) prior.n = d.n;
    prior.validate();
    cov.validate();
    require(prior.L_max <= d.L_max(), "posterior: prior L_max exceeds the data resolution");
    TreePosterior p;
    p.mode_ = TreePosterior::Mode::mcmc;
    p.prior_ = prior;
    p.cov_ = cov;

    Tree t = start ? start->with_cap(prior.L_max) : flat_tree(prior.j0, prior.L_max);
    require(respects_forced_layers(t, prior.j0), "mcmc: start tree violates forced layers");
    {
        auto g = growable_leaves(t);
        auto pr = prunable_nodes(t, prior.j0);
        if (g.empty() && pr.empty())
            fail(ErrorKind::stuck_state, "mcmc: no valid grow or prune move from the start tree");
    }
    double lw = log_target(t, d, prior, cov, use_data);
    McmcStats& st = p.stats_;
    st.iterations = iters;
    st.burn_in = iters / 5;
    st.thinning = 10;
    for (size_t it = 0; it < iters; ++it) {
        auto g = growable_leaves(t);
        auto pr = prunable_nodes(t, prior.j0);
        bool grow = pr.empty() || (!g.empty() && rng.uniform() < 0.5);
        Tree prop = grow ? t.with_node(g[rng.below(g.size())]) : t.without_node(pr[rng.below(pr.size())]);
        double lw_prop = log_target(prop, d, prior, cov, use_data);
        double la = lw_prop - lw + log_proposal(prop, t, prior.j0) - log_proposal(t, prop, prior.j0);
        ++st.proposed;
        if (la >= 0 || std::log(rng.uniform_open()) < la) {
            t = std::move(prop);
            lw = lw_prop;
            ++st.accepted;
        }
        if (it >= st.burn_in && (it - st.burn_in) % st.thinning == 0) p.chain_.push_back(t);
    }
    std::vector<double> ks;
    ks.reserve(p.chain_.size());
    for (const Tree& u : p.chain_) ks.push_back(double(u.leaf_count()));
    double mu = 0, var = 0;
    for (double k : ks) mu += k;
    mu /= double(ks.size());
    for (double k : ks) var += (k - mu) * (k - mu);
    var /= std::max<double>(1.0, double(ks.size()) - 1.0);
    double se = batch_means_stderr(ks);
    st.ess_leaf_count = se > 0 ? var / (se * se) : double(ks.size());
    return p;
}

// ---- coefficients -------------------------------------------------------------

Eigen::VectorXd GaussianPosterior::sample(Rng& rng) const {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    if (diagonal) return mean + sd.cwiseProduct(z);
    return mean + chol * z;
}

GaussianPosterior coefficients_given_tree(const Tree& t, const SequenceData& d, const CovSpec& cov) {
    GaussianPosterior g;
    g.nodes = t.coefficient_nodes();
    Eigen::VectorXd x = gather(t, d.X);
    double n = d.n;
    size_t K = g.nodes.size();
    if (cov.kind == CovKind::identity) {
        g.diagonal = true;
        g.mean = (n / (n + 1.0)) * x;
        g.cov = Eigen::MatrixXd::Identity(K, K) / (n + 1.0);
        g.sd = Eigen::VectorXd::Constant(K, 1.0 / std::sqrt(n + 1.0));
        return g;
    }
    CovSpec c = cov;
    if (c.n == 0) c.n = n;
    Eigen::MatrixXd S = haar_covariance(t, c);
    Eigen::MatrixXd C = Eigen::MatrixXd::Identity(K, K) + n * S;
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "coefficient posterior: Cholesky failed");
    Eigen::MatrixXd post = llt.solve(S);  // (I + nS)^{-1} S = (nI + S^{-1})^{-1}
    post = 0.5 * (post + post.transpose());
    g.cov = post;
    g.mean = n * post * x;
    Eigen::LLT<Eigen::MatrixXd> lp(post);
    if (lp.info() != Eigen::Success) fail(ErrorKind::numerical, "coefficient posterior covariance not positive");
    g.chol = lp.matrixL();
    return g;
}

void for_each_draw(const TreePosterior& p, const SequenceData& d, size_t count, Rng& rng,
                   const std::function<void(const Tree&, const CoeffArray&)>& fn) {
    CoeffArray buf(d.L_max());
    std::vector<uint64_t> touched;
    std::unordered_map<std::string, GaussianPosterior> cache;
    const bool identity = p.cov().kind == CovKind::identity;
    const double shrink = d.n / (d.n + 1.0), sd = 1.0 / std::sqrt(d.n + 1.0);
    for (size_t s = 0; s < count; ++s) {
        for (uint64_t i : touched) buf.raw()[i] = 0.0;
        touched.clear();
        Tree t = p.sample(rng);
        if (identity) {
            buf.root() = shrink * d.X.root() + sd * rng.normal();
            touched.push_back(0);
            for (uint64_t i : t.internal_indices()) {
                buf.raw()[i] = shrink * d.X.raw()[i] + sd * rng.normal();
                touched.push_back(i);
            }
        } else {
            auto it = cache.find(t.key());
            if (it == cache.end()) it = cache.emplace(t.key(), coefficients_given_tree(t, d, p.cov())).first;
            Eigen::VectorXd b = it->second.sample(rng);
            const auto& nodes = it->second.nodes;
            for (size_t j = 0; j < nodes.size(); ++j) {
                buf.raw()[nodes[j].index()] = b[j];
                touched.push_back(nodes[j].index());
            }
        }
        fn(t, buf);
    }
}

std::vector<CoeffArray> draw_functions(const TreePosterior& p, const SequenceData& d, size_t count, Rng& rng) {
    std::vector<CoeffArray> out;
    out.reserve(count);
    for_each_draw(p, d, count, rng, [&](const Tree&, const CoeffArray& c) { out.push_back(c); });
    return out;
}

// ---- diagnostics ------------------------------------------------------------

int depth_cutoff(double n, const HolderSpec& h) {
    double v = std::pow(8.0 * h.M, 1.0 / (h.alpha + 0.5)) * std::pow(n / std::log(n), 1.0 / (2 * h.alpha + 1));
    return int(std::ceil(std::log2(v)));
}

std::vector<NodeId> signal_set(const CoeffArray& truth, double n, double A) {
    double thr = A * std::log(n) / std::sqrt(n);
    std::vector<NodeId> out;
    for (int l = 0; l < truth.max_level(); ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k)
            if (std::abs(truth.at(l, k)) >= thr) out.push_back({l, k});
    return out;
}

}  // namespace bcart
