#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bcart/error.hpp"
#include "bcart/haar.hpp"
#include "bcart/pinball.hpp"
#include "oracles.hpp"

using namespace bcart;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Tree four_leaf() { return Tree({{0, 0}, {1, 0}, {2, 1}}, 4); }

Tree random_tree(Rng& rng, int L, double p = 0.6) {
    PriorSpec s;
    s.gamma = 1.0 / p;
    s.exponent = 1;
    s.L_max = L;
    // at least one split
    Tree t(L);
    while (t.internal_count() == 0) t = sample_tree(s, rng);
    return t;
}

VectorXd random_vec(size_t K, Rng& rng) {
    VectorXd v(K);
    for (size_t i = 0; i < K; ++i) v[i] = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("flat_tree(1) matrix") {
    PinballMatrix A(flat_tree(1, 3));
    MatrixXd want(2, 2);
    want << 1, -1, 1, 1;
    CHECK((A.dense() - want).cwiseAbs().maxCoeff() == 0);
    CHECK(A.rows() == std::vector<NodeId>{{1, 0}, {1, 1}});
    CHECK(A.cols() == std::vector<NodeId>{kRootNode, {0, 0}});
}

TEST_CASE("four-leaf example matrix") {
    PinballMatrix A(four_leaf());
    double r2 = std::sqrt(2.0);
    MatrixXd want(4, 4);
    want << 1, 1, 0, 0, 1, -1, -r2, 0, 1, -1, r2, -2, 1, -1, r2, 2;
    CHECK((A.dense() - want).cwiseAbs().maxCoeff() < 1e-15);
    VectorXd e = VectorXd::Zero(4);
    e[3] = 1;
    VectorXd h = internal_to_external(A, e);
    CHECK((h - VectorXd((VectorXd(4) << 0, 0, -2, 2).finished())).cwiseAbs().maxCoeff() < 1e-15);
    auto ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(A.dense().transpose() * A.dense()).eigenvalues();
    CHECK(ev[0] == doctest::Approx(2));
    CHECK(ev[1] == doctest::Approx(4));
    CHECK(ev[2] == doctest::Approx(8));
    CHECK(ev[3] == doctest::Approx(8));
    // diag(A^T A): K at the root, 2^l * (#leaves below) elsewhere
    VectorXd d = (A.dense().transpose() * A.dense()).diagonal();
    CHECK(d[0] == doctest::Approx(4));
    CHECK(d[1] == doctest::Approx(4));
    CHECK(d[2] == doctest::Approx(6));
    CHECK(d[3] == doctest::Approx(8));
    CHECK(spectrum_checks(four_leaf()).max_dev() < 1e-12);
}

TEST_CASE("Gram identity and orthogonality on random trees") {
    Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        Tree t = random_tree(rng, 10);
        PinballMatrix A(t);
        const MatrixXd& M = A.dense();
        MatrixXd G = M * M.transpose();
        MatrixXd D = MatrixXd::Zero(G.rows(), G.cols());
        for (size_t i = 0; i < A.rows().size(); ++i) D(i, i) = std::ldexp(1.0, A.rows()[i].l);
        CHECK((G - D).cwiseAbs().maxCoeff() < 1e-10);
        VectorXd s = D.diagonal().cwiseSqrt().cwiseInverse();
        MatrixXd Q = s.asDiagonal() * M;
        CHECK((Q * Q.transpose() - MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((A.row_scales() - D.diagonal()).cwiseAbs().maxCoeff() == 0);

        // nonzero pattern equals the ancestor chain
        for (size_t r = 0; r < A.rows().size(); ++r) {
            NodeId leaf = A.rows()[r];
            for (size_t c = 0; c < A.cols().size(); ++c) {
                NodeId col = A.cols()[c];
                bool ancestor = col.l < 0 || (col.l < leaf.l && (leaf.k >> (leaf.l - col.l)) == col.k);
                CHECK((M(r, c) != 0) == ancestor);
                if (ancestor && col.l >= 0) CHECK(std::abs(M(r, c)) == doctest::Approx(std::pow(2.0, col.l / 2.0)));
            }
        }

        auto rep_ = spectrum_checks(t);
        CHECK(rep_.max_dev() < 1e-9);

        // eigenvalues of A^T A and A A^T coincide; extremes
        auto e1 = Eigen::SelfAdjointEigenSolver<MatrixXd>(M.transpose() * M).eigenvalues();
        auto e2 = Eigen::SelfAdjointEigenSolver<MatrixXd>(G).eigenvalues();
        CHECK((e1 - e2).cwiseAbs().maxCoeff() < 1e-8 * e2.maxCoeff());
        double minleaf = 1e300;
        for (const NodeId& v : t.leaves()) minleaf = std::min(minleaf, std::ldexp(1.0, v.l));
        CHECK(e1.minCoeff() == doctest::Approx(minleaf));
        CHECK(e1.maxCoeff() <= std::ldexp(1.0, t.depth() + 1) + 1e-9);

        // sparse products agree with dense
        VectorXd b = random_vec(A.size(), rng);
        CHECK((A.apply(b) - M * b).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((A.apply_transpose(b) - M.transpose() * b).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((internal_to_external(A, external_to_internal(A, b)) - b).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("flat_tree(2) spectrum") {
    PinballMatrix A(flat_tree(2, 3));
    auto ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(A.dense().transpose() * A.dense()).eigenvalues();
    for (int i = 0; i < 4; ++i) CHECK(ev[i] == doctest::Approx(4));
}

TEST_CASE("external to internal") {
    PinballMatrix A(four_leaf());
    VectorXd c = VectorXd::Constant(4, 3.0);
    VectorXd b = external_to_internal(A, c);
    CHECK(b[0] == doctest::Approx(3));
    CHECK(b.tail(3).cwiseAbs().maxCoeff() < 1e-14);
    PinballMatrix B(flat_tree(1, 2));
    VectorXd h(2);
    h << 0, 2;
    VectorXd x = external_to_internal(B, h);
    CHECK(x[0] == doctest::Approx(1));
    CHECK(x[1] == doctest::Approx(1));
    CHECK_THROWS_AS(external_to_internal(B, VectorXd::Zero(3)), Error);
    CHECK_THROWS_AS(internal_to_external(B, VectorXd::Zero(3)), Error);

    VectorXd er = VectorXd::Zero(4);
    er[0] = 1.5;
    CHECK((internal_to_external(A, er) - VectorXd::Constant(4, 1.5)).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("histogram render agrees with inverse Haar") {
    Rng rng(2);
    for (int rep = 0; rep < 30; ++rep) {
        int L = 7;
        Tree t = random_tree(rng, L);
        PinballMatrix A(t);
        VectorXd beta = random_vec(A.size(), rng);
        auto grid = render_histogram(A, A.apply(beta), L);
        // pinball psi is the negative of the left-positive Haar psi
        CoeffArray c(L);
        for (size_t i = 0; i < A.cols().size(); ++i) {
            NodeId v = A.cols()[i];
            if (v.l < 0) c.root() = beta[i];
            else c.at(v.l, v.k) = -beta[i];
        }
        auto f = oracle::synthesize(c);
        double m = 0;
        for (size_t i = 0; i < f.size(); ++i) m = std::max(m, std::abs(f[i] - grid[i]));
        CHECK(m < 1e-10);
    }
}

TEST_CASE("covariances") {
    auto g = covariance(flat_tree(1, 3), {CovKind::g_prior, 2.0});
    CHECK((g.realized - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
    Tree t = four_leaf();
    auto id = covariance(t, {});
    CHECK((id.realized - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0);

    PinballMatrix A(t);
    MatrixXd AtA = A.dense().transpose() * A.dense();
    MatrixXd inv = AtA.inverse();
    auto gp = covariance(t, {CovKind::g_prior, 3.0});
    CHECK((gp.realized - 3.0 * inv).cwiseAbs().maxCoeff() < 1e-12);

    CovSpec ar;
    ar.kind = CovKind::ar1_external;
    ar.rho = 1e-12;
    ar.c_n = 1.0;
    auto a1 = covariance(t, ar);
    CHECK((a1.realized - inv).cwiseAbs().maxCoeff() < 1e-10);

    // general AR(1): pull-back of c rho^{|i-j|} in spatial leaf order
    ar.rho = 0.6;
    ar.c_n = 2.0;
    auto a2 = covariance(t, ar);
    // spatial order of the four-leaf example: (2,0),(3,2),(3,3),(1,1) = rows 1,2,3,0
    std::vector<int> pos{3, 0, 1, 2};
    MatrixXd St(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) St(i, j) = 2.0 * std::pow(0.6, std::abs(pos[i] - pos[j]));
    MatrixXd Ainv = A.dense().inverse();
    CHECK((a2.realized - Ainv * St * Ainv.transpose()).cwiseAbs().maxCoeff() < 1e-10);

    // automatic scale meets lambda_min >= 1/sqrt(log n) with equality
    ar.c_n = 0;
    ar.n = 1000;
    auto a3 = covariance(t, ar);
    CHECK(a3.lambda_min == doctest::Approx(1 / std::sqrt(std::log(1000.0))));
    CHECK(a3.c_n > 0);

    CovSpec bad;
    bad.kind = CovKind::custom;
    bad.custom = [](const Tree& t) {
        MatrixXd m = MatrixXd::Identity(t.leaf_count(), t.leaf_count());
        m(0, 0) = -1;
        return m;
    };
    CHECK_THROWS_AS(covariance(t, bad), Error);
    CHECK_THROWS_AS(covariance(t, {CovKind::g_prior, -1.0}), Error);
}

TEST_CASE("g-prior decorrelates cherries") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        Tree t = random_tree(rng, 8);
        auto S = covariance(t, {CovKind::g_prior, 1.0}).realized;
        auto cols = t.coefficient_nodes();
        for (size_t i = 1; i < cols.size(); ++i) {
            NodeId v = cols[i];
            if (t.contains(v.left()) || t.contains(v.right())) continue;
            for (size_t j = 0; j < cols.size(); ++j)
                if (j != i) CHECK(std::abs(S(i, j)) < 1e-12);
        }
    }
}

TEST_CASE("Haar convention") {
    Tree t = four_leaf();
    MatrixXd S = covariance(t, {CovKind::g_prior, 1.0}).realized;
    MatrixXd H = to_haar_convention(S);
    Eigen::VectorXd s = Eigen::VectorXd::Constant(4, -1.0);
    s[0] = 1;
    CHECK((H - s.asDiagonal() * S * s.asDiagonal()).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("CSV export") {
    PinballMatrix A(flat_tree(1, 2));
    CHECK(pinball_to_csv(A) == "row,col,value\n0,0,1\n0,1,-1\n1,0,1\n1,1,1\n");
}
