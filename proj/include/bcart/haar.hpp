#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bcart {

// Multiscale coefficients. Flat storage: slot 0 holds the root beta_{-1,0},
// slot 2^l + k holds beta_{lk} for 0 <= l < L. Total size 2^L.
class CoeffArray {
public:
    CoeffArray() : L_(0), data_(1, 0.0) {}
    explicit CoeffArray(int L);

    int max_level() const { return L_; }
    size_t size() const { return data_.size(); }

    double root() const { return data_[0]; }
    double& root() { return data_[0]; }
    double at(int l, int64_t k) const { return data_[(size_t{1} << l) + k]; }
    double& at(int l, int64_t k) { return data_[(size_t{1} << l) + k]; }

    std::span<const double> level(int l) const;
    std::span<double> level(int l);

    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    // Zero-pads or truncates to L levels.
    CoeffArray resized(int L) const;
    void set_zero();

    bool operator==(const CoeffArray&) const = default;

private:
    int L_;
    std::vector<double> data_;
};

class GridFunction {
public:
    GridFunction() : values_(1, 0.0) {}
    explicit GridFunction(std::vector<double> values);

    int max_level() const { return L_; }
    size_t size() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    double operator[](size_t i) const { return values_[i]; }

private:
    int L_ = 0;
    std::vector<double> values_;
};

struct HolderSpec {
    double alpha = 1.0;
    double M = 1.0;
    void validate() const;
};

struct AdmissibleWeights {
    std::function<double(int)> w = [](int l) { return l < 1 ? 1.0 : double(l); };

    double operator()(int l) const { return w(l); }
    // Monotone, >= 1, and w_l/sqrt(l) growing over the prefix 0..upto.
    void validate(int upto) const;
};

int ilog2_exact(size_t n);  // -1 if not a power of two
int floor_log2(uint64_t n);

GridFunction inverse_haar(const CoeffArray& c);
CoeffArray forward_haar(const GridFunction& g);
CoeffArray forward_haar(const std::vector<double>& values);

double ell_inf_distance(const CoeffArray& a, const CoeffArray& b);
double ell_inf_norm(const CoeffArray& a);
double grid_sup_distance(const CoeffArray& a, const CoeffArray& b);
double multiscale_norm(const CoeffArray& a, const AdmissibleWeights& w = {});
bool holder_membership(const CoeffArray& c, const HolderSpec& h);
CoeffArray level_projection(const CoeffArray& c, int j);
bool self_similarity_check(const CoeffArray& c, const HolderSpec& h, double eps, int j0);

enum class TestFunction { spike, full_decay, single_branch_decay, cusp };

TestFunction parse_test_function(const std::string& name);
const char* test_function_name(TestFunction kind);

// spike_level is L* and only used for kind == spike.
CoeffArray make_test_function(TestFunction kind, const HolderSpec& h, int L, int spike_level = 0);

CoeffArray operator-(const CoeffArray& a, const CoeffArray& b);

}  // namespace bcart
