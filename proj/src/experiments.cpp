#include "bcart/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "bcart/error.hpp"

namespace bcart {

namespace {

using Row = std::vector<double>;

const std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::rates, "rates"},
    {ExperimentKind::sharp, "sharp"},
    {ExperimentKind::coverage, "coverage"},
    {ExperimentKind::bvm, "bvm"},
    {ExperimentKind::flat_vs_cart, "flat-vs-cart"},
    {ExperimentKind::diagnostics, "diagnostics"},
};

// Runs fn(i) for i < count on a few threads. Results must go to slot i.
void parallel_for(size_t count, unsigned threads, const std::function<void(size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = unsigned(std::min<size_t>(threads, count));
    if (threads <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr err;
    std::mutex m;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(m);
                    if (!err) err = std::current_exception();
                    next = count;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

uint64_t task_key(double n, size_t rep) { return (uint64_t(floor_log2(uint64_t(n))) << 32) | uint64_t(rep); }

struct Task {
    size_t n_index;
    size_t rep;
};

// Runs body over the (n, replicate) grid; rows come back in grid order.
ExperimentReport run_grid(const ExperimentPlan& plan, std::vector<std::string> columns,
                          const std::function<std::vector<Row>(double n, size_t rep)>& body) {
    plan.validate();
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Task> tasks;
    for (size_t i = 0; i < plan.n_grid.size(); ++i)
        for (size_t r = 0; r < plan.replicates; ++r) tasks.push_back({i, r});
    std::vector<std::vector<Row>> out(tasks.size());
    parallel_for(tasks.size(), plan.threads,
                 [&](size_t i) { out[i] = body(plan.n_grid[tasks[i].n_index], tasks[i].rep); });

    ExperimentReport r;
    r.kind = plan.kind;
    r.config = plan_to_json(plan);
    r.columns = std::move(columns);
    for (auto& rows : out)
        for (auto& row : rows) {
            if (row.size() != r.columns.size()) fail(ErrorKind::numerical, "row width mismatch");
            r.rows.push_back(std::move(row));
        }
    summarize(plan, r);
    r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

CoeffArray truth_for(const ExperimentPlan& plan, int L, double n) {
    if (plan.zero_truth) return CoeffArray(L);
    int spike = plan.spike_level;
    if (plan.truth == TestFunction::spike && spike < 0) spike = std::min(sharp_spike_level(n, plan.holder), L - 1);
    return make_test_function(plan.truth, plan.holder, L, std::max(spike, 0));
}

PriorSpec prior_for(const ExperimentPlan& plan, int L, double n) {
    PriorSpec p = plan.prior;
    p.L_max = L;
    p.n = n;
    p.j0 = std::min(p.j0, L);
    return p;
}

CovSpec cov_for(const ExperimentPlan& plan, double n) {
    CovSpec c = plan.cov;
    if (c.kind == CovKind::g_prior && plan.g_equals_n) c.g = n;
    c.n = n;
    return c;
}

struct LossSummary {
    double mean = 0, se = 0, mean_depth = 0;
    std::vector<double> losses;
};

LossSummary posterior_losses(const TreePosterior& p, const SequenceData& d, const CoeffArray& truth, size_t draws,
                             Rng& rng) {
    LossSummary s;
    s.losses.reserve(draws);
    for_each_draw(p, d, draws, rng, [&](const Tree& t, const CoeffArray& f) {
        s.losses.push_back(ell_inf_distance(f, truth));
        s.mean_depth += t.depth();
    });
    s.mean = mean_of(s.losses);
    s.se = stderr_of(s.losses);
    s.mean_depth /= double(draws);
    return s;
}

// ---- grouping for aggregates ----------------------------------------------------------

std::vector<double> col(const ExperimentReport& r, const std::string& name,
                        const std::function<bool(const Row&)>& keep = {}) {
    size_t c = r.column(name);
    std::vector<double> v;
    for (const auto& row : r.rows)
        if (!keep || keep(row)) v.push_back(row[c]);
    return v;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json quantiles(const std::vector<double>& v) {
    if (v.empty()) return json(nullptr);
    return json{{"q10", empirical_quantile(v, 0.1)}, {"q50", empirical_quantile(v, 0.5)},
                {"q90", empirical_quantile(v, 0.9)}};
}

std::string series_name(const std::string& key, double v) {
    std::ostringstream os;
    os << key << "=" << v;
    return os.str();
}

// ---- per-kind summaries -----------------------------------------------------------------

void summarize_rates(const ExperimentPlan& plan, ExperimentReport& r) {
    size_t cn = r.column("n"), cg = r.column("gamma");
    std::vector<double> gammas;
    for (const auto& row : r.rows)
        if (std::find(gammas.begin(), gammas.end(), row[cg]) == gammas.end()) gammas.push_back(row[cg]);
    double target = -plan.holder.alpha / (2 * plan.holder.alpha + 1);
    json fits = json::array();
    for (double g : gammas) {
        json per_n = json::array();
        std::vector<double> lx, ly;
        for (double n : plan.n_grid) {
            auto keep = [&](const Row& row) { return row[cn] == n && row[cg] == g; };
            auto loss = col(r, "loss", keep), depth = col(r, "mean_depth", keep);
            double m = mean_of(loss), se = stderr_of(loss);
            per_n.push_back({{"n", n}, {"mean_loss", m}, {"se", num(se)}, {"quantiles", quantiles(loss)},
                             {"mean_depth", mean_of(depth)}});
            lx.push_back(std::log(n));
            ly.push_back(std::log(m));
            r.plot.push_back({series_name("gamma", g), n, m, std::isfinite(se) ? se : 0.0});
        }
        OlsFit f = ols(lx, ly);
        json fit{{"gamma", g}, {"per_n", per_n}, {"slope", f.slope}, {"slope_se", num(f.slope_se)},
                 {"intercept", f.intercept}};
        if (plan.zero_truth) {
            fit["alpha1_slope"] = -1.0 / 3.0;
            fit["at_least_alpha1_rate"] = f.slope <= -1.0 / 3.0;
        } else {
            fit["target_slope"] = target;
            fit["within_0.1"] = std::abs(f.slope - target) <= 0.1;
        }
        fits.push_back(fit);
    }
    r.aggregates = {{"fits", fits}};
}

void summarize_sharp(const ExperimentPlan& plan, ExperimentReport& r) {
    size_t cn = r.column("n"), ci = r.column("inflated");
    json series = json::array();
    for (int infl : {0, 1}) {
        json per_n = json::array();
        for (double n : plan.n_grid) {
            auto keep = [&](const Row& row) { return row[cn] == n && row[ci] == infl; };
            auto inc = col(r, "inclusion", keep);
            if (inc.empty()) continue;
            json probs = json::array();
            for (size_t m = 0; m < plan.m_values.size(); ++m) {
                auto pr = col(r, "prob_m" + std::to_string(m), keep);
                probs.push_back({{"m", plan.m_values[m]}, {"mean", mean_of(pr)}, {"se", num(stderr_of(pr))}});
            }
            auto ls = col(r, "L_star", keep);
            double m = mean_of(inc), se = stderr_of(inc);
            per_n.push_back({{"n", n}, {"L_star", ls.front()}, {"mean_inclusion", m}, {"se", num(se)},
                             {"probe", probs}});
            r.plot.push_back({infl ? "inclusion_inflated" : "inclusion", n, m, std::isfinite(se) ? se : 0.0});
        }
        if (!per_n.empty()) series.push_back({{"inflated", bool(infl)}, {"per_n", per_n}});
    }
    r.aggregates = {{"series", series}};
}

void summarize_coverage(const ExperimentPlan& plan, ExperimentReport& r) {
    size_t cn = r.column("n");
    json per_n = json::array();
    std::vector<Interval> cis;
    std::vector<double> scaled;
    for (double n : plan.n_grid) {
        auto keep = [&](const Row& row) { return row[cn] == n; };
        auto cov = col(r, "covered", keep), cred = col(r, "credibility", keep), diam = col(r, "diameter", keep);
        double hits = std::accumulate(cov.begin(), cov.end(), 0.0);
        Interval ci = wilson_interval(hits, double(cov.size()));
        cis.push_back(ci);
        double vn = plan.band.resolved_vn(n);
        double sc = mean_of(diam) / band_diameter_scale(n, plan.holder.alpha, vn);
        scaled.push_back(sc);
        per_n.push_back({{"n", n},
                         {"coverage", hits / double(cov.size())},
                         {"ci_lo", ci.lo},
                         {"ci_hi", ci.hi},
                         {"mean_credibility", mean_of(cred)},
                         {"min_credibility", *std::min_element(cred.begin(), cred.end())},
                         {"credibility_se", num(stderr_of(cred))},
                         {"mean_diameter", mean_of(diam)},
                         {"diameter_over_scale", sc}});
        r.plot.push_back({"coverage", n, hits / double(cov.size()), 0.5 * (ci.hi - ci.lo)});
        r.plot.push_back({"diameter_over_scale", n, sc, 0.0});
    }
    bool no_drop = true;
    for (size_t i = 0; i < cis.size(); ++i)
        for (size_t j = i + 1; j < cis.size(); ++j)
            if (cis[j].hi < cis[i].lo) no_drop = false;
    double smax = *std::max_element(scaled.begin(), scaled.end()), smin = *std::min_element(scaled.begin(), scaled.end());
    r.aggregates = {{"per_n", per_n},
                    {"non_decreasing_within_ci", no_drop},
                    {"scaled_diameter_max_over_min", smax / smin}};
}

void summarize_bvm(const ExperimentPlan& plan, ExperimentReport& r) {
    size_t cn = r.column("n"), cp = r.column("prior"), cc = r.column("coordinate");
    json series = json::array();
    for (CovKind kind : plan.bvm_priors)
        for (size_t c = 0; c < plan.coordinates.size(); ++c) {
            json per_n = json::array();
            std::vector<double> means;
            for (double n : plan.n_grid) {
                auto keep = [&](const Row& row) { return row[cn] == n && row[cp] == double(kind) && row[cc] == double(c); };
                auto ks = col(r, "ks", keep), kse = col(r, "ks_exact", keep), tv = col(r, "tv_bound", keep);
                double m = mean_of(ks);
                means.push_back(m);
                per_n.push_back({{"n", n}, {"mean_ks", m}, {"max_ks", *std::max_element(ks.begin(), ks.end())},
                                 {"se", num(stderr_of(ks))}, {"mean_ks_exact", num(mean_of(kse))},
                                 {"mean_tv_bound", num(mean_of(tv))}});
                r.plot.push_back({std::string(cov_kind_name(kind)) + "_" + to_string(plan.coordinates[c]), n, m,
                                  std::isfinite(stderr_of(ks)) ? stderr_of(ks) : 0.0});
            }
            bool dec = true;
            for (size_t i = 1; i < means.size(); ++i) dec = dec && means[i] < means[i - 1];
            series.push_back({{"prior", cov_kind_name(kind)},
                              {"coordinate", to_string(plan.coordinates[c])},
                              {"per_n", per_n},
                              {"decreasing", dec}});
        }
    r.aggregates = {{"series", series}};
}

void summarize_flat(const ExperimentPlan& plan, ExperimentReport& r) {
    size_t cn = r.column("n");
    json per_n = json::array();
    std::vector<double> lx, ratios;
    std::vector<Interval> cis;
    bool tracks = true;
    for (double n : plan.n_grid) {
        auto keep = [&](const Row& row) { return row[cn] == n; };
        auto a = col(r, "loss_flat", keep), b = col(r, "loss_cart", keep);
        auto mode = col(r, "flat_mode_depth", keep), dstar = col(r, "D_star", keep);
        double ma = mean_of(a), mb = mean_of(b), R = ma / mb;
        // delta method on the paired replicate means
        double va = 0, vb = 0, cab = 0, m = double(a.size());
        for (size_t i = 0; i < a.size(); ++i) {
            va += (a[i] - ma) * (a[i] - ma);
            vb += (b[i] - mb) * (b[i] - mb);
            cab += (a[i] - ma) * (b[i] - mb);
        }
        double se = 0;
        if (m > 1) {
            va /= m - 1, vb /= m - 1, cab /= m - 1;
            se = std::abs(R) * std::sqrt(std::max(0.0, (va / (ma * ma) + vb / (mb * mb) - 2 * cab / (ma * mb)) / m));
        }
        cis.push_back({R - 1.96 * se, R + 1.96 * se});
        lx.push_back(std::log(n));
        ratios.push_back(R);
        // chosen depth d keeps levels < d, i.e. levels <= d - 1
        double chosen = empirical_quantile(mode, 0.5) - 1;
        double ds = dstar.front();
        double depth_ratio = std::ldexp(1.0, int(chosen) - int(ds));
        tracks = tracks && depth_ratio <= 2.0 && depth_ratio >= 0.5;
        per_n.push_back({{"n", n},
                         {"mean_loss_flat", ma},
                         {"mean_loss_cart", mb},
                         {"ratio", R},
                         {"ratio_se", se},
                         {"chosen_D", chosen},
                         {"D_star", ds},
                         {"two_pow_D_over_two_pow_Dstar", depth_ratio},
                         {"predicted_two_pow_Dstar", std::pow(n / std::log(n), 1.0 / (2 * plan.holder.alpha + 2))}});
        r.plot.push_back({"ratio", n, R, 1.96 * se});
        r.plot.push_back({"loss_flat", n, ma, std::isfinite(stderr_of(a)) ? stderr_of(a) : 0.0});
        r.plot.push_back({"loss_cart", n, mb, std::isfinite(stderr_of(b)) ? stderr_of(b) : 0.0});
    }
    OlsFit f = ols(lx, ratios);
    r.aggregates = {{"per_n", per_n},
                    {"ratio_slope_vs_log_n", f.slope},
                    {"ratio_slope_se", num(f.slope_se)},
                    {"endpoint_cis_disjoint", cis.back().lo > cis.front().hi},
                    {"depth_tracks_within_factor_2", tracks}};
}

void summarize_diagnostics(const ExperimentPlan& plan, ExperimentReport& r) {
    size_t cn = r.column("n"), ce = r.column("noise_event");
    json per_n = json::array();
    for (double n : plan.n_grid) {
        auto all = [&](const Row& row) { return row[cn] == n; };
        auto held = [&](const Row& row) { return row[cn] == n && row[ce] == 1.0; };
        auto ex = col(r, "depth_exceed", held), inc = col(r, "min_signal_inclusion", held);
        auto sc = col(r, "signal_count", all), lc = col(r, "L_c", all);
        json e{{"n", n}, {"replicates", col(r, "noise_event", all).size()}, {"noise_event_held", ex.size()},
               {"L_c", lc.front()}, {"signal_count", sc.front()}};
        if (!ex.empty()) {
            e["max_depth_exceed"] = *std::max_element(ex.begin(), ex.end());
            e["min_signal_inclusion"] = *std::min_element(inc.begin(), inc.end());
            e["mean_depth_exceed"] = mean_of(ex);
            r.plot.push_back({"max_depth_exceed", n, *std::max_element(ex.begin(), ex.end()), 0.0});
            r.plot.push_back({"min_signal_inclusion", n, *std::min_element(inc.begin(), inc.end()), 0.0});
        }
        per_n.push_back(e);
    }
    r.aggregates = {{"per_n", per_n}};
}

}  // namespace

// ---- plan --------------------------------------------------------------------------

ExperimentKind parse_experiment_kind(const std::string& s) {
    for (const auto& [k, name] : kKindNames)
        if (s == name) return k;
    fail(ErrorKind::invalid_input, "unknown experiment kind '" + s + "'");
}

const char* experiment_kind_name(ExperimentKind k) {
    for (const auto& [kk, name] : kKindNames)
        if (kk == k) return name;
    return "?";
}

void ExperimentPlan::validate() const {
    holder.validate();
    require(!n_grid.empty(), "experiment: n grid is empty");
    for (size_t i = 0; i < n_grid.size(); ++i) {
        double n = n_grid[i];
        require(n >= 4 && n <= 1e12 && n == std::floor(n) && ilog2_exact(size_t(n)) >= 2,
                "experiment: n grid entries must be powers of two >= 4");
        if (i > 0) require(n > n_grid[i - 1], "experiment: n grid must be strictly increasing");
    }
    require(replicates >= 1, "experiment: replicates must be >= 1");
    require(draws >= 1, "experiment: draws must be >= 1");
    require(L_max_override >= 0, "experiment: L_max override must be >= 0");
    if (kind == ExperimentKind::coverage) require(band.draws >= 100, "experiment: band draws must be >= 100");
    if (kind == ExperimentKind::bvm) {
        require(prior.j0 >= 1, "bvm: forced layers j0 must be >= 1");
        for (const auto& c : coordinates)
            require(c.valid() && c.l < prior.j0, "bvm: coordinate " + to_string(c) + " is outside the forced layers");
        require(!bvm_priors.empty(), "bvm: no priors selected");
    }
    require(flat_decay >= 0, "experiment: flat_decay must be >= 0");
    for (double g : gamma_sensitivity) require(g > 1, "experiment: gamma sensitivity values must exceed 1");
    require(!m_values.empty(), "experiment: m_values is empty");
}

int ExperimentPlan::levels_for(double n) const {
    int L = floor_log2(uint64_t(n));
    return L_max_override > 0 ? std::min(L, L_max_override) : L;
}

json plan_to_json(const ExperimentPlan& p) {
    json coords = json::array();
    for (const auto& c : p.coordinates) coords.push_back({c.l, c.k});
    json priors = json::array();
    for (CovKind k : p.bvm_priors) priors.push_back(cov_kind_name(k));
    return {{"kind", experiment_kind_name(p.kind)},
            {"truth", p.zero_truth ? "zero" : test_function_name(p.truth)},
            {"alpha", p.holder.alpha},
            {"M", p.holder.M},
            {"spike_level", p.spike_level},
            {"spike_inflation", p.spike_inflation},
            {"n_grid", p.n_grid},
            {"replicates", p.replicates},
            {"L_max_override", p.L_max_override},
            {"prior",
             {{"kind", prior_kind_name(p.prior.kind)},
              {"gamma", p.prior.gamma},
              {"exponent", p.prior.exponent},
              {"lambda", p.prior.lambda},
              {"c", p.prior.c},
              {"j0", p.prior.j0}}},
            {"covariance", {{"kind", cov_kind_name(p.cov.kind)}, {"g", p.cov.g}, {"rho", p.cov.rho},
                            {"c_n", p.cov.c_n}, {"g_equals_n", p.g_equals_n}}},
            {"band", {{"gamma", p.band.gamma}, {"v_n", p.band.v_n}, {"j0", p.band.j0},
                      {"include_root", p.band.include_root}, {"draws", p.band.draws}}},
            {"draws", p.draws},
            {"mcmc_iterations", p.mcmc_iterations},
            {"gamma_sensitivity", p.gamma_sensitivity},
            {"m_values", p.m_values},
            {"flat_decay", p.flat_decay},
            {"coordinates", coords},
            {"bvm_priors", priors},
            {"bvm_g_levels", p.bvm_g_levels},
            {"self_similarity_eps", p.self_similarity_eps},
            {"signal_A", p.signal_A},
            {"seed", p.seed}};
}

// ---- report ------------------------------------------------------------------------

size_t ExperimentReport::column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) fail(ErrorKind::invalid_input, "report has no column '" + name + "'");
    return size_t(it - columns.begin());
}

std::string ExperimentReport::raw_csv() const {
    std::string s;
    for (size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
    s += "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + format_double(row[i]);
        s += "\n";
    }
    return s;
}

std::string ExperimentReport::aggregate_json() const {
    json j{{"kind", experiment_kind_name(kind)},
           {"config", config},
           {"aggregates", aggregates},
           {"raw_rows", rows.size()},
           {"runtime_seconds", runtime_seconds}};
    return j.dump(2) + "\n";
}

std::string ExperimentReport::plot_csv() const {
    std::string s = "series,x,y,err\n";
    for (const auto& p : plot)
        s += p.series + "," + format_double(p.x) + "," + format_double(p.y) + "," + format_double(p.err) + "\n";
    return s;
}

void summarize(const ExperimentPlan& plan, ExperimentReport& r) {
    r.plot.clear();
    switch (r.kind) {
        case ExperimentKind::rates: summarize_rates(plan, r); break;
        case ExperimentKind::sharp: summarize_sharp(plan, r); break;
        case ExperimentKind::coverage: summarize_coverage(plan, r); break;
        case ExperimentKind::bvm: summarize_bvm(plan, r); break;
        case ExperimentKind::flat_vs_cart: summarize_flat(plan, r); break;
        case ExperimentKind::diagnostics: summarize_diagnostics(plan, r); break;
    }
}

// ---- statistics helpers ------------------------------------------------------------

OlsFit ols(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "ols: need at least two points");
    double m = double(x.size());
    double mx = mean_of(x), my = mean_of(y), sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    require(sxx > 0, "ols: x values are all equal");
    OlsFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (x.size() > 2) {
        double rss = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            double e = y[i] - f.intercept - f.slope * x[i];
            rss += e * e;
        }
        f.slope_se = std::sqrt(rss / (m - 2) / sxx);
    } else {
        f.slope_se = std::nan("");
    }
    return f;
}

Interval wilson_interval(double s, double t, double z) {
    require(t > 0 && s >= 0 && s <= t, "wilson_interval: bad counts");
    double p = s / t, z2 = z * z;
    double c = (p + z2 / (2 * t)) / (1 + z2 / t);
    double h = z / (1 + z2 / t) * std::sqrt(p * (1 - p) / t + z2 / (4 * t * t));
    return {std::max(0.0, c - h), std::min(1.0, c + h)};
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return std::nan("");
    double m = mean_of(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1) / double(v.size()));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_to_standard_normal(std::vector<double> s) {
    require(!s.empty(), "ks: empty sample");
    std::sort(s.begin(), s.end());
    double m = double(s.size()), d = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        double F = normal_cdf(s[i]);
        d = std::max({d, double(i + 1) / m - F, F - double(i) / m});
    }
    return d;
}

double ks_mixture_to_standard_normal(const std::vector<double>& w, const std::vector<double>& mu,
                                     const std::vector<double>& s) {
    double d = 0;
    for (int i = -8000; i <= 8000; ++i) {
        double x = i * 1e-3, F = 0;
        for (size_t j = 0; j < w.size(); ++j) F += w[j] * normal_cdf((x - mu[j]) / s[j]);
        d = std::max(d, std::abs(F - normal_cdf(x)));
    }
    return d;
}

double tv_normal(double mu1, double s1, double mu2, double s2) {
    // midpoint rule over a window holding both densities
    double lo = std::min(mu1 - 12 * s1, mu2 - 12 * s2), hi = std::max(mu1 + 12 * s1, mu2 + 12 * s2);
    const int N = 20000;
    double h = (hi - lo) / N, acc = 0;
    boost::math::normal_distribution<> a(mu1, s1), b(mu2, s2);
    for (int i = 0; i < N; ++i) {
        double x = lo + (i + 0.5) * h;
        acc += std::abs(boost::math::pdf(a, x) - boost::math::pdf(b, x));
    }
    return 0.5 * acc * h;
}

double sup_rate(double n, double alpha) {
    double ln = std::log(n);
    return std::pow(ln * ln / n, alpha / (2 * alpha + 1));
}

double flat_rate(double n, double alpha) { return std::pow(std::log(n) / n, alpha / (2 * alpha + 2)); }

int sharp_spike_level(double n, const HolderSpec& h) {
    double ln = std::log(n);
    double v = std::pow(h.M, 1.0 / (h.alpha + 0.5)) * std::pow(n / (ln * ln), 1.0 / (2 * h.alpha + 1));
    return std::max(0, int(std::ceil(std::log2(v))));
}

double band_diameter_scale(double n, double alpha, double v_n) {
    return std::pow(n / std::log(n), -alpha / (2 * alpha + 1)) * v_n;
}

// ---- flat trees --------------------------------------------------------------------

FlatTreePosterior flat_tree_posterior(const SequenceData& d, double decay) {
    int L = d.L_max();
    FlatTreePosterior fp;
    fp.n = d.n;
    fp.log_weights.resize(size_t(L) + 1);
    double acc = 0;
    for (int dd = 0; dd <= L; ++dd) {
        fp.log_weights[dd] = -decay * dd + acc;
        if (dd < L)
            for (double x : d.X.level(dd)) acc += log_marginal_node_factor(x, d.n);
    }
    double z = log_sum_exp(fp.log_weights);
    for (double& v : fp.log_weights) v -= z;
    return fp;
}

int FlatTreePosterior::sample_depth(Rng& rng) const {
    double u = rng.uniform();
    for (size_t dd = 0; dd < log_weights.size(); ++dd) {
        u -= std::exp(log_weights[dd]);
        if (u < 0) return int(dd);
    }
    return int(log_weights.size()) - 1;
}

double FlatTreePosterior::mean_depth() const {
    double m = 0;
    for (size_t dd = 0; dd < log_weights.size(); ++dd) m += double(dd) * std::exp(log_weights[dd]);
    return m;
}

int FlatTreePosterior::mode_depth() const {
    return int(std::max_element(log_weights.begin(), log_weights.end()) - log_weights.begin());
}

CoeffArray flat_tree_draw(const FlatTreePosterior& fp, const SequenceData& d, Rng& rng) {
    int depth = fp.sample_depth(rng);
    double n = d.n, shrink = n / (n + 1), sd = 1.0 / std::sqrt(n + 1);
    CoeffArray f(d.L_max());
    f.root() = shrink * d.X.root() + sd * rng.normal();
    for (int l = 0; l < depth; ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k) f.at(l, k) = shrink * d.X.at(l, k) + sd * rng.normal();
    return f;
}

int flat_oracle_cutoff(const CoeffArray& truth, double n) {
    int L = truth.max_level();
    std::vector<double> tail(size_t(L) + 1, 0.0);  // tail[l] = sum over levels >= l
    for (int l = L - 1; l >= 0; --l) {
        double s = 0;
        for (double v : truth.level(l)) s += v * v;
        tail[l] = tail[l + 1] + s;
    }
    int best = 0;
    double best_cost = INFINITY;
    for (int D = 0; D < L; ++D) {
        double cost = std::ldexp(1.0, D) * std::log(n + 1) + 0.5 * n * tail[D + 1];
        if (cost < best_cost) best_cost = cost, best = D;
    }
    return best;
}

TreePosterior fit_posterior(const SequenceData& d, const PriorSpec& prior, const CovSpec& cov, size_t iters, Rng& rng) {
    if (cov.kind == CovKind::identity)
        return posterior_exact(d, prior, cov, ExactMethod::dp, prior.kind == PriorKind::cond_uniform);
    if (prior.L_max <= 5) return posterior_exact(d, prior, cov, ExactMethod::enumerate);
    return posterior_mcmc(d, prior, cov, iters, rng);
}

// ---- experiments -------------------------------------------------------------------

ExperimentReport rate_experiment(const ExperimentPlan& plan) {
    std::vector<double> gammas{plan.prior.gamma};
    for (double g : plan.gamma_sensitivity)
        if (std::find(gammas.begin(), gammas.end(), g) == gammas.end()) gammas.push_back(g);
    return run_grid(plan, {"n", "replicate", "gamma", "loss", "loss_mc_se", "mean_depth"}, [&](double n, size_t rep) {
        int L = plan.levels_for(n);
        CoeffArray truth = truth_for(plan, L, n);
        SequenceData d = simulate(truth, n, stream_seed(plan.seed, "rates/data", task_key(n, rep)), L);
        CovSpec cov = cov_for(plan, n);
        std::vector<Row> rows;
        for (size_t gi = 0; gi < gammas.size(); ++gi) {
            PriorSpec p = prior_for(plan, L, n);
            if (p.kind == PriorKind::galton_watson) p.gamma = gammas[gi];
            else if (gi > 0) break;
            Rng rng(stream_seed(plan.seed, "rates/draws", (task_key(n, rep) << 4) | gi));
            TreePosterior post = fit_posterior(d, p, cov, plan.mcmc_iterations, rng);
            LossSummary s = posterior_losses(post, d, truth, plan.draws, rng);
            rows.push_back({n, double(rep), p.gamma, s.mean, std::isfinite(s.se) ? s.se : 0.0, s.mean_depth});
        }
        return rows;
    });
}

ExperimentReport sharp_lower_probe(const ExperimentPlan& plan) {
    std::vector<std::string> cols{"n", "replicate", "inflated", "L_star", "inclusion", "eps_n"};
    for (size_t m = 0; m < plan.m_values.size(); ++m) cols.push_back("prob_m" + std::to_string(m));
    return run_grid(plan, cols, [&](double n, size_t rep) {
        int L = plan.levels_for(n);
        int Ls = plan.spike_level >= 0 ? plan.spike_level : sharp_spike_level(n, plan.holder);
        Ls = std::clamp(Ls, 0, L - 1);
        double eps = sup_rate(n, plan.holder.alpha);
        std::vector<Row> rows;
        for (int infl : {0, 1}) {
            if (infl && plan.spike_inflation <= 0) break;
            CoeffArray truth = make_test_function(TestFunction::spike, plan.holder, L, Ls);
            if (infl) truth.at(Ls, 0) *= plan.spike_inflation * std::log(n);
            SequenceData d = simulate(truth, n, stream_seed(plan.seed, "sharp/data", task_key(n, rep)), L);
            Rng rng(stream_seed(plan.seed, "sharp/draws", (task_key(n, rep) << 1) | uint64_t(infl)));
            TreePosterior post = fit_posterior(d, prior_for(plan, L, n), cov_for(plan, n), plan.mcmc_iterations, rng);
            auto incl = post.inclusion();
            auto it = incl.find({Ls, 0});
            LossSummary s = posterior_losses(post, d, truth, plan.draws, rng);
            Row row{n, double(rep), double(infl), double(Ls), it == incl.end() ? 0.0 : it->second, eps};
            for (double m : plan.m_values) {
                double hit = 0;
                for (double x : s.losses) hit += x <= m * eps;
                row.push_back(hit / double(s.losses.size()));
            }
            rows.push_back(row);
        }
        return rows;
    });
}

ExperimentReport coverage_experiment(const ExperimentPlan& plan) {
    plan.validate();
    for (double n : plan.n_grid) {
        int L = plan.levels_for(n);
        CoeffArray truth = truth_for(plan, L, n);
        if (!self_similarity_check(truth, plan.holder, plan.self_similarity_eps, std::max(plan.prior.j0, 0)))
            fail(ErrorKind::precondition, "coverage: truth is not self-similar at n = " + format_double(n));
    }
    return run_grid(plan, {"n", "replicate", "covered", "credibility", "diameter", "sigma_n", "R_n", "median_leaves",
                           "noise_event"},
                    [&](double n, size_t rep) {
                        int L = plan.levels_for(n);
                        CoeffArray truth = truth_for(plan, L, n);
                        SequenceData d =
                            simulate(truth, n, stream_seed(plan.seed, "coverage/data", task_key(n, rep)), L);
                        Rng rng(stream_seed(plan.seed, "coverage/draws", task_key(n, rep)));
                        PriorSpec p = prior_for(plan, L, n);
                        TreePosterior post = fit_posterior(d, p, cov_for(plan, n), plan.mcmc_iterations, rng);
                        BandSpec bs = plan.band;
                        bs.j0 = p.j0;
                        CredibleBand band =
                            build_band(post, d, bs, rng, post.mode() == TreePosterior::Mode::mcmc ? 0.02 : 1e-9);
                        size_t inside = 0;
                        for_each_draw(post, d, bs.draws, rng,
                                      [&](const Tree&, const CoeffArray& f) { inside += band_membership(f, band, d); });
                        return std::vector<Row>{{n, double(rep), double(band_membership(truth, band, d)),
                                                 double(inside) / double(bs.draws), 2 * band.sigma_n, band.sigma_n,
                                                 band.R_n, double(band.median.leaf_count()),
                                                 double(noise_event_holds(d))}};
                    });
}

ExperimentReport bvm_check(const ExperimentPlan& plan) {
    return run_grid(plan, {"n", "replicate", "prior", "coordinate", "ks", "ks_exact", "tv_bound"}, [&](double n,
                                                                                                     size_t rep) {
        std::vector<Row> rows;
        double rn = std::sqrt(n);
        for (CovKind kind : plan.bvm_priors) {
            int L = plan.levels_for(n);
            if (kind != CovKind::identity) L = std::min(L, plan.bvm_g_levels);
            CoeffArray truth = truth_for(plan, L, n);
            SequenceData d = simulate(truth, n, stream_seed(plan.seed, "bvm/data", task_key(n, rep)), L);
            PriorSpec p = prior_for(plan, L, n);
            CovSpec cov = cov_for(plan, n);
            cov.kind = kind;
            if (kind == CovKind::g_prior && plan.g_equals_n) cov.g = n;
            Rng rng(stream_seed(plan.seed, "bvm/draws", (task_key(n, rep) << 2) | uint64_t(kind)));
            TreePosterior post = fit_posterior(d, p, cov, plan.mcmc_iterations, rng);

            for (size_t c = 0; c < plan.coordinates.size(); ++c) {
                NodeId v = plan.coordinates[c];
                double x = d.X.at(v.l, v.k);
                // marginal of sqrt(n)(beta_v - X_v) given the tree
                auto marginal = [&](const Tree& t) {
                    GaussianPosterior g = coefficients_given_tree(t, d, cov);
                    size_t i = size_t(std::find(g.nodes.begin(), g.nodes.end(), v) - g.nodes.begin());
                    if (i == g.nodes.size()) fail(ErrorKind::diagnostic, "bvm: coordinate not in the tree");
                    double s = g.diagonal ? g.sd(i) : std::sqrt(g.cov(i, i));
                    return std::pair<double, double>{rn * (g.mean(i) - x), rn * s};
                };
                std::vector<double> w, mu, sd;
                if (post.mode() == TreePosterior::Mode::enumerated) {
                    for (const auto& [t, lw] : post.enumerated()) {
                        if (lw < -40) continue;
                        auto [m, s] = marginal(t);
                        w.push_back(std::exp(lw));
                        mu.push_back(m);
                        sd.push_back(s);
                    }
                } else if (kind == CovKind::identity) {
                    // every tree holds v; the marginal does not depend on it
                    w = {1.0};
                    mu = {-rn * x / (n + 1)};
                    sd = {std::sqrt(n / (n + 1))};
                }
                std::map<Tree, std::pair<double, double>> cache;
                std::vector<double> z;
                z.reserve(plan.draws);
                for (size_t i = 0; i < plan.draws; ++i) {
                    Tree t = post.sample(rng);
                    auto it = cache.find(t);
                    if (it == cache.end()) it = cache.emplace(t, marginal(t)).first;
                    z.push_back(it->second.first + it->second.second * rng.normal());
                }
                double ks_exact = NAN, tv = NAN;
                if (!w.empty()) {
                    ks_exact = ks_mixture_to_standard_normal(w, mu, sd);
                    tv = 0;
                    for (size_t j = 0; j < w.size(); ++j) tv += w[j] * tv_normal(mu[j], sd[j], 0, 1);
                }
                rows.push_back({n, double(rep), double(kind), double(c), ks_to_standard_normal(z), ks_exact, tv});
            }
        }
        return rows;
    });
}

ExperimentReport flat_vs_cart(const ExperimentPlan& plan) {
    return run_grid(plan, {"n", "replicate", "loss_cart", "loss_flat", "flat_mean_depth", "flat_mode_depth", "D_star"},
                    [&](double n, size_t rep) {
                        int L = plan.levels_for(n);
                        CoeffArray truth = truth_for(plan, L, n);
                        SequenceData d = simulate(truth, n, stream_seed(plan.seed, "flat/data", task_key(n, rep)), L);
                        Rng rng(stream_seed(plan.seed, "flat/draws", task_key(n, rep)));
                        TreePosterior post =
                            fit_posterior(d, prior_for(plan, L, n), cov_for(plan, n), plan.mcmc_iterations, rng);
                        LossSummary cart = posterior_losses(post, d, truth, plan.draws, rng);
                        FlatTreePosterior fp = flat_tree_posterior(d, plan.flat_decay);
                        double lf = 0;
                        for (size_t i = 0; i < plan.draws; ++i) lf += ell_inf_distance(flat_tree_draw(fp, d, rng), truth);
                        return std::vector<Row>{{n, double(rep), cart.mean, lf / double(plan.draws), fp.mean_depth(),
                                                 double(fp.mode_depth()), double(flat_oracle_cutoff(truth, n))}};
                    });
}

ExperimentReport proof_diagnostics(const ExperimentPlan& plan) {
    return run_grid(plan, {"n", "replicate", "noise_event", "L_c", "depth_exceed", "min_signal_inclusion",
                           "signal_count"},
                    [&](double n, size_t rep) {
                        int L = plan.levels_for(n);
                        CoeffArray truth = truth_for(plan, L, n);
                        SequenceData d = simulate(truth, n, stream_seed(plan.seed, "diag/data", task_key(n, rep)), L);
                        Rng rng(stream_seed(plan.seed, "diag/draws", task_key(n, rep)));
                        TreePosterior post =
                            fit_posterior(d, prior_for(plan, L, n), cov_for(plan, n), plan.mcmc_iterations, rng);
                        int Lc = depth_cutoff(n, plan.holder);
                        double ex = post.depth_exceeds(Lc, 4000, rng.next());
                        auto incl = post.inclusion();
                        auto S = signal_set(truth, n, plan.signal_A);
                        double mi = 1.0;
                        for (const auto& v : S) {
                            auto it = incl.find(v);
                            mi = std::min(mi, it == incl.end() ? 0.0 : it->second);
                        }
                        return std::vector<Row>{{n, double(rep), double(noise_event_holds(d)), double(Lc), ex, mi,
                                                 double(S.size())}};
                    });
}

ExperimentReport run_experiment(const ExperimentPlan& plan) {
    switch (plan.kind) {
        case ExperimentKind::rates: return rate_experiment(plan);
        case ExperimentKind::sharp: return sharp_lower_probe(plan);
        case ExperimentKind::coverage: return coverage_experiment(plan);
        case ExperimentKind::bvm: return bvm_check(plan);
        case ExperimentKind::flat_vs_cart: return flat_vs_cart(plan);
        case ExperimentKind::diagnostics: return proof_diagnostics(plan);
    }
    fail(ErrorKind::invalid_input, "unknown experiment kind");
}

}  // namespace bcart
