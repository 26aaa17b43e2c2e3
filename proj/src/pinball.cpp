#include "bcart/pinball.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bcart/error.hpp"

namespace bcart {

namespace {

int column_of(const std::vector<NodeId>& cols, NodeId v) {
    auto it = std::lower_bound(cols.begin(), cols.end(), v);
    return int(it - cols.begin());
}

double amp(int l) { return std::sqrt(std::ldexp(1.0, l)); }

}  // namespace

PinballMatrix::PinballMatrix(const Tree& t) : tree_(t), rows_(t.leaves()), cols_(t.coefficient_nodes()) {
    chains_.resize(rows_.size());
    for (size_t r = 0; r < rows_.size(); ++r) {
        const NodeId leaf = rows_[r];
        auto& chain = chains_[r];
        chain.push_back({0, 1.0});
        for (int j = 0; j < leaf.l; ++j) {
            NodeId anc{j, leaf.k >> (leaf.l - j)};
            int64_t m = leaf.k >> (leaf.l - j - 1);  // the path node at level j+1
            double s = (m % 2 == 1) ? 1.0 : -1.0;
            chain.push_back({column_of(cols_, anc), s * amp(j)});
        }
    }
    size_t K = rows_.size();
    if (K <= kDenseLimit) {
        dense_ = Eigen::MatrixXd::Zero(K, K);
        for (size_t r = 0; r < K; ++r)
            for (const Entry& e : chains_[r]) dense_(r, e.col) = e.w;
    }
}

const Eigen::MatrixXd& PinballMatrix::dense() const {
    if (!has_dense()) fail(ErrorKind::unsupported, "pinball matrix too large for dense storage");
    return dense_;
}

Eigen::VectorXd PinballMatrix::row_scales() const {
    Eigen::VectorXd d(rows_.size());
    for (size_t r = 0; r < rows_.size(); ++r) d[r] = std::ldexp(1.0, rows_[r].l);
    return d;
}

Eigen::VectorXd PinballMatrix::apply(const Eigen::VectorXd& beta) const {
    require(size_t(beta.size()) == size(), "pinball: dimension mismatch");
    Eigen::VectorXd h = Eigen::VectorXd::Zero(size());
    for (size_t r = 0; r < size(); ++r)
        for (const Entry& e : chains_[r]) h[r] += e.w * beta[e.col];
    return h;
}

Eigen::VectorXd PinballMatrix::apply_transpose(const Eigen::VectorXd& h) const {
    require(size_t(h.size()) == size(), "pinball: dimension mismatch");
    Eigen::VectorXd b = Eigen::VectorXd::Zero(size());
    for (size_t r = 0; r < size(); ++r)
        for (const Entry& e : chains_[r]) b[e.col] += e.w * h[r];
    return b;
}

PinballMatrix build_pinball(const Tree& t) { return PinballMatrix(t); }

Eigen::VectorXd internal_to_external(const PinballMatrix& A, const Eigen::VectorXd& beta) { return A.apply(beta); }

Eigen::VectorXd external_to_internal(const PinballMatrix& A, const Eigen::VectorXd& heights) {
    require(size_t(heights.size()) == A.size(), "pinball: dimension mismatch");
    // A A^T = D, hence A^{-1} = A^T D^{-1}.
    return A.apply_transpose(heights.cwiseQuotient(A.row_scales()));
}

std::vector<double> render_histogram(const PinballMatrix& A, const Eigen::VectorXd& heights, int L) {
    require(size_t(heights.size()) == A.size(), "render: dimension mismatch");
    std::vector<double> g(size_t{1} << L, 0.0);
    for (size_t r = 0; r < A.size(); ++r) {
        const NodeId& v = A.rows()[r];
        require(v.l <= L, "render: grid coarser than the tree");
        size_t w = size_t{1} << (L - v.l);
        std::fill(g.begin() + v.k * w, g.begin() + (v.k + 1) * w, heights[r]);
    }
    return g;
}

// ---- covariances ------------------------------------------------------------

CovKind parse_cov_kind(const std::string& s) {
    if (s == "identity") return CovKind::identity;
    if (s == "g_prior" || s == "gprior" || s == "g") return CovKind::g_prior;
    if (s == "ar1" || s == "ar1_external") return CovKind::ar1_external;
    if (s == "custom") return CovKind::custom;
    fail(ErrorKind::invalid_input, "unknown covariance kind '" + s + "'");
}

const char* cov_kind_name(CovKind k) {
    switch (k) {
        case CovKind::identity: return "identity";
        case CovKind::g_prior: return "g_prior";
        case CovKind::ar1_external: return "ar1";
        case CovKind::custom: return "custom";
    }
    return "?";
}

void CovSpec::validate() const {
    switch (kind) {
        case CovKind::identity: break;
        case CovKind::g_prior: require(g > 0, "g_prior: g_n must be positive"); break;
        case CovKind::ar1_external:
            require(rho > 0 && rho < 1, "ar1: rho must lie in (0,1)");
            require(c_n >= 0, "ar1: c_n must be positive");
            require(c_n > 0 || n >= 2, "ar1: automatic c_n needs n >= 2");
            break;
        case CovKind::custom: require(bool(custom), "custom covariance needs a provider"); break;
    }
}

namespace {

Eigen::MatrixXd pull_back(const PinballMatrix& A, const Eigen::MatrixXd& ext) {
    // (A^T A)^{-1} A^T S A (A^T A)^{-1} = A^T D^{-1} S D^{-1} A
    const Eigen::MatrixXd& M = A.dense();
    Eigen::VectorXd dinv = A.row_scales().cwiseInverse();
    Eigen::MatrixXd B = dinv.asDiagonal() * M;
    return B.transpose() * ext * B;
}

Eigen::MatrixXd ar1_external(const PinballMatrix& A, double rho, double c) {
    // AR(1) over leaves in left-to-right spatial order.
    size_t K = A.size();
    std::vector<size_t> order(K);
    for (size_t i = 0; i < K; ++i) order[i] = i;
    auto left = [&](size_t r) { return std::ldexp(double(A.rows()[r].k), -A.rows()[r].l); };
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return left(a) < left(b); });
    std::vector<int> pos(K);
    for (size_t i = 0; i < K; ++i) pos[order[i]] = int(i);
    Eigen::MatrixXd S(K, K);
    for (size_t i = 0; i < K; ++i)
        for (size_t j = 0; j < K; ++j) S(i, j) = c * std::pow(rho, std::abs(pos[i] - pos[j]));
    return pull_back(A, S);
}

}  // namespace

CoefCovariance covariance(const Tree& t, const CovSpec& spec) {
    spec.validate();
    PinballMatrix A(t);
    size_t K = A.size();
    CoefCovariance out;
    out.kind = spec.kind;
    switch (spec.kind) {
        case CovKind::identity:
            out.realized = Eigen::MatrixXd::Identity(K, K);
            break;
        case CovKind::g_prior:
            out.realized = spec.g * pull_back(A, Eigen::MatrixXd::Identity(K, K));
            break;
        case CovKind::ar1_external: {
            double c = spec.c_n;
            if (c == 0) {
                Eigen::MatrixXd unit = ar1_external(A, spec.rho, 1.0);
                double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(unit, Eigen::EigenvaluesOnly)
                                  .eigenvalues()
                                  .minCoeff();
                c = 1.0 / (std::sqrt(std::log(spec.n)) * lmin);
            }
            out.c_n = c;
            out.realized = ar1_external(A, spec.rho, c);
            break;
        }
        case CovKind::custom: {
            Eigen::MatrixXd m = spec.custom(t);
            require(size_t(m.rows()) == K && size_t(m.cols()) == K, "custom covariance has wrong dimension");
            require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1 + m.cwiseAbs().maxCoeff()),
                    "custom covariance is not symmetric");
            out.realized = 0.5 * (m + m.transpose());
            break;
        }
    }
    Eigen::VectorXd ev =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(out.realized, Eigen::EigenvaluesOnly).eigenvalues();
    out.lambda_min = ev.minCoeff();
    out.lambda_max = ev.maxCoeff();
    if (!(out.lambda_min > 0)) fail(ErrorKind::invalid_input, "covariance is not positive definite");
    return out;
}

Eigen::MatrixXd to_haar_convention(const Eigen::MatrixXd& sigma) {
    Eigen::MatrixXd s = sigma;
    // s_i s_j with s = (1,-1,...,-1); conjugating by -S is the same thing
    s.row(0) *= -1.0;
    s.col(0) *= -1.0;
    return s;
}

Eigen::MatrixXd haar_covariance(const Tree& t, const CovSpec& spec) {
    if (spec.kind == CovKind::identity) return Eigen::MatrixXd::Identity(t.leaf_count(), t.leaf_count());
    return to_haar_convention(covariance(t, spec).realized);
}

// ---- spectral identities ----------------------------------------------------

double SpectrumReport::max_dev() const { return std::max({eigen_dev, block_dev, diagonal_dev, gram_dev}); }

SpectrumReport spectrum_checks(const Tree& t) {
    SpectrumReport rep;
    PinballMatrix A(t);
    const Eigen::MatrixXd& M = A.dense();
    size_t K = A.size();
    Eigen::VectorXd d = A.row_scales();

    Eigen::MatrixXd gram = M * M.transpose();
    gram.diagonal() -= d;
    rep.gram_dev = gram.cwiseAbs().maxCoeff();

    Eigen::MatrixXd AtA = M.transpose() * M;
    Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(AtA, Eigen::EigenvaluesOnly).eigenvalues();
    std::vector<double> want(d.data(), d.data() + K);
    std::sort(want.begin(), want.end());
    for (size_t i = 0; i < K; ++i) rep.eigen_dev = std::max(rep.eigen_dev, std::abs(ev[i] - want[i]) / want[i]);

    // diag: K at the root, 2^l times the number of leaves below (l,k) otherwise
    for (size_t c = 0; c < K; ++c) {
        const NodeId& v = A.cols()[c];
        double expect;
        if (v.l < 0) {
            expect = double(K);
        } else {
            size_t below = 0;
            for (const NodeId& leaf : A.rows())
                if (leaf.l > v.l && (leaf.k >> (leaf.l - v.l)) == v.k) ++below;
            expect = std::ldexp(double(below), v.l);
        }
        rep.diagonal_dev = std::max(rep.diagonal_dev, std::abs(AtA(c, c) - expect));
    }

    if (t.internal_count() >= 1) {
        auto [tm, removed] = prune_deepest_rightmost(t);
        PinballMatrix Am(tm);
        const Eigen::MatrixXd& Mm = Am.dense();
        size_t r = std::lower_bound(Am.rows().begin(), Am.rows().end(), removed) - Am.rows().begin();
        Eigen::VectorXd v = Mm.row(r).transpose();
        Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(K, K);
        expect.topLeftCorner(K - 1, K - 1) = Mm.transpose() * Mm + v * v.transpose();
        expect(K - 1, K - 1) = std::ldexp(1.0, removed.l + 1);
        rep.block_dev = (AtA - expect).cwiseAbs().maxCoeff();
    }
    return rep;
}

std::string pinball_to_csv(const PinballMatrix& A) {
    std::string out = "row,col,value\n";
    char buf[64];
    for (size_t r = 0; r < A.size(); ++r)
        for (const auto& e : A.chains()[r]) {
            std::snprintf(buf, sizeof buf, "%zu,%d,%.17g\n", r, e.col, e.w);
            out += buf;
        }
    return out;
}

}  // namespace bcart
