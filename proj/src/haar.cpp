#include "bcart/haar.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bcart/error.hpp"

namespace bcart {

namespace {
// Slack for comparisons that hold with equality in exact arithmetic.
constexpr double kRel = 1e-12;
}

CoeffArray::CoeffArray(int L) : L_(L) {
    require(L >= 0 && L <= 30, "CoeffArray: max_level out of range");
    data_.assign(size_t{1} << L, 0.0);
}

std::span<const double> CoeffArray::level(int l) const {
    return {data_.data() + (size_t{1} << l), size_t{1} << l};
}

std::span<double> CoeffArray::level(int l) {
    return {data_.data() + (size_t{1} << l), size_t{1} << l};
}

CoeffArray CoeffArray::resized(int L) const {
    CoeffArray out(L);
    size_t m = std::min(out.size(), size());
    std::copy(data_.begin(), data_.begin() + m, out.data_.begin());
    return out;
}

void CoeffArray::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

int ilog2_exact(size_t n) {
    if (n == 0 || (n & (n - 1)) != 0) return -1;
    int L = 0;
    while ((size_t{1} << L) < n) ++L;
    return L;
}

int floor_log2(uint64_t n) {
    int L = -1;
    while (n) {
        n >>= 1;
        ++L;
    }
    return L;
}

GridFunction::GridFunction(std::vector<double> values) : values_(std::move(values)) {
    L_ = ilog2_exact(values_.size());
    require(L_ >= 0, "grid length must be a power of two");
}

void HolderSpec::validate() const {
    require(alpha > 0 && alpha <= 1, "alpha must lie in (0,1]");
    require(M > 0, "M must be positive");
}

void AdmissibleWeights::validate(int upto) const {
    double prev = 0;
    for (int l = 0; l <= upto; ++l) {
        double v = w(l);
        require(v >= 1.0, "weights must satisfy w_l >= 1");
        require(v >= prev, "weights must be non-decreasing");
        prev = v;
    }
    if (upto >= 4) {
        double lo = w(upto / 2) / std::sqrt(double(upto / 2));
        double hi = w(upto) / std::sqrt(double(upto));
        require(hi > lo, "w_l/sqrt(l) must grow");
    }
}

CoeffArray forward_haar(const std::vector<double>& values) {
    int L = ilog2_exact(values.size());
    require(L >= 0, "forward_haar: length not a power of two");
    CoeffArray c(L);
    std::vector<double> avg(values);
    // beta_{jk} = 2^{j/2} (mean_left - mean_right) / 2
    for (int j = L - 1; j >= 0; --j) {
        size_t m = size_t{1} << j;
        double s = std::ldexp(std::sqrt(std::ldexp(1.0, -j)), -1);
        for (size_t k = 0; k < m; ++k) {
            double a = avg[2 * k], b = avg[2 * k + 1];
            c.at(j, k) = s * (a - b);
            avg[k] = 0.5 * (a + b);
        }
    }
    c.root() = avg[0];
    return c;
}

CoeffArray forward_haar(const GridFunction& g) { return forward_haar(g.values()); }

GridFunction inverse_haar(const CoeffArray& c) {
    int L = c.max_level();
    std::vector<double> v(size_t{1} << L);
    v[0] = c.root();
    for (int j = 0; j < L; ++j) {
        size_t m = size_t{1} << j;
        double amp = std::sqrt(std::ldexp(1.0, j));
        for (size_t k = m; k-- > 0;) {
            double a = v[k], d = amp * c.at(j, k);
            v[2 * k] = a + d;
            v[2 * k + 1] = a - d;
        }
    }
    return GridFunction(std::move(v));
}

CoeffArray operator-(const CoeffArray& a, const CoeffArray& b) {
    int L = std::max(a.max_level(), b.max_level());
    CoeffArray x = a.resized(L), y = b.resized(L);
    for (size_t i = 0; i < x.size(); ++i) x.raw()[i] -= y.raw()[i];
    return x;
}

double ell_inf_norm(const CoeffArray& d) {
    double total = std::abs(d.root());
    for (int l = 0; l < d.max_level(); ++l) {
        double m = 0;
        for (double v : d.level(l)) m = std::max(m, std::abs(v));
        total += std::sqrt(std::ldexp(1.0, l)) * m;
    }
    return total;
}

double ell_inf_distance(const CoeffArray& a, const CoeffArray& b) { return ell_inf_norm(a - b); }

double grid_sup_distance(const CoeffArray& a, const CoeffArray& b) {
    GridFunction g = inverse_haar(a - b);
    double m = 0;
    for (double v : g.values()) m = std::max(m, std::abs(v));
    return m;
}

double multiscale_norm(const CoeffArray& a, const AdmissibleWeights& w) {
    double best = std::abs(a.root()) / w(0);
    for (int l = 0; l < a.max_level(); ++l) {
        double m = 0;
        for (double v : a.level(l)) m = std::max(m, std::abs(v));
        best = std::max(best, m / w(l));
    }
    return best;
}

bool holder_membership(const CoeffArray& c, const HolderSpec& h) {
    h.validate();
    double bound = h.M * (1 + kRel);
    if (std::abs(c.root()) > bound) return false;
    for (int l = 0; l < c.max_level(); ++l) {
        double scale = std::pow(2.0, l * (0.5 + h.alpha));
        for (double v : c.level(l))
            if (scale * std::abs(v) > bound) return false;
    }
    return true;
}

CoeffArray level_projection(const CoeffArray& c, int j) {
    require(j >= 0 && j <= c.max_level(), "level_projection: j out of range");
    CoeffArray out = c;
    std::fill(out.raw().begin() + (size_t{1} << j), out.raw().end(), 0.0);
    return out;
}

bool self_similarity_check(const CoeffArray& c, const HolderSpec& h, double eps, int j0) {
    h.validate();
    int L = c.max_level();
    std::vector<double> g = inverse_haar(c).values();
    // ||K_j f - f||_inf = max deviation of g from its level-j cell means.
    // At j = L the projection is the identity on the stored grid, so the
    // check runs over j0 <= j < L.
    std::vector<double> avg = g;
    std::vector<std::vector<double>> means(L + 1);
    means[L] = g;
    for (int j = L - 1; j >= 0; --j) {
        size_t m = size_t{1} << j;
        for (size_t k = 0; k < m; ++k) avg[k] = 0.5 * (avg[2 * k] + avg[2 * k + 1]);
        means[j].assign(avg.begin(), avg.begin() + m);
    }
    bool any = false;
    for (int j = std::max(j0, 0); j < L; ++j) {
        any = true;
        int shift = L - j;
        double sup = 0;
        for (size_t i = 0; i < g.size(); ++i) sup = std::max(sup, std::abs(g[i] - means[j][i >> shift]));
        if (sup < eps * std::pow(2.0, -j * h.alpha) * (1 - kRel)) return false;
    }
    return any;
}

TestFunction parse_test_function(const std::string& name) {
    if (name == "spike") return TestFunction::spike;
    if (name == "full_decay") return TestFunction::full_decay;
    if (name == "single_branch_decay") return TestFunction::single_branch_decay;
    if (name == "cusp") return TestFunction::cusp;
    fail(ErrorKind::invalid_input, "unknown test function kind '" + name + "'");
}

const char* test_function_name(TestFunction kind) {
    switch (kind) {
        case TestFunction::spike: return "spike";
        case TestFunction::full_decay: return "full_decay";
        case TestFunction::single_branch_decay: return "single_branch_decay";
        case TestFunction::cusp: return "cusp";
    }
    return "?";
}

CoeffArray make_test_function(TestFunction kind, const HolderSpec& h, int L, int spike_level) {
    h.validate();
    CoeffArray c(L);
    auto decay = [&](int l) { return h.M * std::pow(2.0, -l * (0.5 + h.alpha)); };
    switch (kind) {
        case TestFunction::spike:
            require(spike_level >= 0 && spike_level < L, "spike level must lie in [0, L)");
            c.at(spike_level, 0) = decay(spike_level);
            break;
        case TestFunction::full_decay:
            for (int l = 0; l < L; ++l)
                for (double& v : c.level(l)) v = decay(l);
            break;
        case TestFunction::single_branch_decay:
            for (int l = 0; l < L; ++l) c.at(l, 0) = decay(l);
            break;
        case TestFunction::cusp: {
            size_t N = size_t{1} << L;
            std::vector<double> v(N);
            double mean = 0;
            for (size_t i = 0; i < N; ++i) {
                double x = (i + 0.5) / double(N);
                v[i] = std::pow(std::abs(x - 0.5), h.alpha);
                mean += v[i];
            }
            mean /= double(N);
            for (double& x : v) x = h.M * (x - mean);
            c = forward_haar(v);
            c.root() = 0.0;  // exact zero mean; summation noise otherwise
            break;
        }
    }
    return c;
}

}  // namespace bcart
