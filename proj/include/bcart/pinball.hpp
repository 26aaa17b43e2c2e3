#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcart/tree.hpp"

namespace bcart {

// K x K map from internal coefficients (root first, then internal nodes by
// index) to histogram heights on the leaves (by index). Signs follow the
// s_k = (-1)^{k+1} convention: a left move contributes -2^{j/2}.
class PinballMatrix {
public:
    struct Entry {
        int col;
        double w;
    };

    explicit PinballMatrix(const Tree& t);

    const Tree& tree() const { return tree_; }
    size_t size() const { return rows_.size(); }
    const std::vector<NodeId>& rows() const { return rows_; }
    const std::vector<NodeId>& cols() const { return cols_; }
    const std::vector<std::vector<Entry>>& chains() const { return chains_; }
    bool has_dense() const { return dense_.size() > 0; }
    const Eigen::MatrixXd& dense() const;
    // Diagonal of A A^T: 2^l for each leaf row.
    Eigen::VectorXd row_scales() const;

    Eigen::VectorXd apply(const Eigen::VectorXd& beta) const;             // A beta
    Eigen::VectorXd apply_transpose(const Eigen::VectorXd& h) const;      // A^T h

    static constexpr size_t kDenseLimit = 4096;

private:
    Tree tree_;
    std::vector<NodeId> rows_, cols_;
    std::vector<std::vector<Entry>> chains_;
    Eigen::MatrixXd dense_;
};

PinballMatrix build_pinball(const Tree& t);
Eigen::VectorXd internal_to_external(const PinballMatrix& A, const Eigen::VectorXd& beta);
Eigen::VectorXd external_to_internal(const PinballMatrix& A, const Eigen::VectorXd& heights);

// Render histogram heights (leaf order) on a grid of 2^L cells.
std::vector<double> render_histogram(const PinballMatrix& A, const Eigen::VectorXd& heights, int L);

enum class CovKind { identity, g_prior, ar1_external, custom };

CovKind parse_cov_kind(const std::string& s);
const char* cov_kind_name(CovKind k);

struct CovSpec {
    CovKind kind = CovKind::identity;
    double g = 1.0;      // g-prior scale g_n
    double rho = 0.5;    // AR(1) correlation
    double c_n = 0.0;    // AR(1) scale; 0 selects the smallest value with lambda_min >= 1/sqrt(log n)
    double n = 0.0;      // sample size used by the automatic c_n
    // Custom covariance in the same convention as covariance() output.
    std::function<Eigen::MatrixXd(const Tree&)> custom;

    void validate() const;
};

struct CoefCovariance {
    CovKind kind = CovKind::identity;
    Eigen::MatrixXd realized;
    double lambda_min = 0, lambda_max = 0;
    double c_n = 0;  // AR(1) scale actually used
};

// Covariance of (beta_{-1,0}, beta_T) in the pinball sign convention.
CoefCovariance covariance(const Tree& t, const CovSpec& spec);

// The pinball convention differs from the Haar basis (positive on the left
// half) by a sign on every non-root coefficient. Returns S Sigma S.
Eigen::MatrixXd to_haar_convention(const Eigen::MatrixXd& sigma);
Eigen::MatrixXd haar_covariance(const Tree& t, const CovSpec& spec);

struct SpectrumReport {
    double eigen_dev = 0;     // eig(A^T A) vs {2^l : leaves}
    double block_dev = 0;     // recursive block identity under pruning
    double diagonal_dev = 0;  // diag(A^T A): K at the root, 2^l * #leaves below
    double gram_dev = 0;      // A A^T vs diag(2^l)
    double max_dev() const;
};

SpectrumReport spectrum_checks(const Tree& t);

std::string pinball_to_csv(const PinballMatrix& A);

}  // namespace bcart
