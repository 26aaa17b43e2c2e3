#include "bcart/serialize.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bcart/error.hpp"

namespace bcart {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

struct CsvRow {
    std::string role;
    long long l, k;
    double value;
};

std::vector<CsvRow> parse_rows(const std::string& text) {
    std::vector<CsvRow> rows;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("role", 0) == 0) continue;
        }
        std::istringstream ls(line);
        std::string role, l, k, v;
        if (!std::getline(ls, role, ',') || !std::getline(ls, l, ',') || !std::getline(ls, k, ',') ||
            !std::getline(ls, v))
            fail(ErrorKind::invalid_input, "malformed CSV row: " + line);
        try {
            rows.push_back({role, std::stoll(l), std::stoll(k), std::stod(v)});
        } catch (const std::exception&) {
            fail(ErrorKind::invalid_input, "malformed CSV row: " + line);
        }
    }
    return rows;
}

}  // namespace

std::string coeffs_to_csv(const CoeffArray& c) {
    std::string out = "role,l,k,value\n";
    out += "root,-1,0," + format_double(c.root()) + "\n";
    for (int l = 0; l < c.max_level(); ++l)
        for (int64_t k = 0; k < (int64_t{1} << l); ++k)
            out += "detail," + std::to_string(l) + "," + std::to_string(k) + "," + format_double(c.at(l, k)) + "\n";
    return out;
}

CoeffArray coeffs_from_csv(const std::string& text) {
    auto rows = parse_rows(text);
    int L = 0;
    for (const auto& r : rows)
        if (r.role == "detail") L = std::max<int>(L, int(r.l) + 1);
    CoeffArray c(L);
    for (const auto& r : rows) {
        if (r.role == "root") {
            c.root() = r.value;
        } else if (r.role == "detail") {
            require(r.l >= 0 && r.k >= 0 && r.k < (1LL << r.l), "CSV: node out of range");
            c.at(int(r.l), r.k) = r.value;
        } else {
            fail(ErrorKind::invalid_input, "CSV: unknown role '" + r.role + "'");
        }
    }
    return c;
}

json coeffs_to_json(const CoeffArray& c) {
    json j;
    j["max_level"] = c.max_level();
    j["root"] = c.root();
    json levels = json::array();
    for (int l = 0; l < c.max_level(); ++l) {
        auto s = c.level(l);
        levels.push_back(std::vector<double>(s.begin(), s.end()));
    }
    j["levels"] = levels;
    return j;
}

CoeffArray coeffs_from_json(const json& j) {
    int L = j.at("max_level").get<int>();
    CoeffArray c(L);
    c.root() = j.at("root").get<double>();
    const json& levels = j.at("levels");
    require(levels.size() == size_t(L), "JSON: level count mismatch");
    for (int l = 0; l < L; ++l) {
        auto v = levels[l].get<std::vector<double>>();
        require(v.size() == (size_t{1} << l), "JSON: level " + std::to_string(l) + " has the wrong size");
        std::copy(v.begin(), v.end(), c.level(l).begin());
    }
    return c;
}

std::string grid_to_csv(const GridFunction& g) {
    std::string out = "role,l,k,value\n";
    for (size_t i = 0; i < g.size(); ++i)
        out += "grid," + std::to_string(g.max_level()) + "," + std::to_string(i) + "," + format_double(g[i]) + "\n";
    return out;
}

GridFunction grid_from_csv(const std::string& text) {
    auto rows = parse_rows(text);
    std::vector<double> v(rows.size());
    for (const auto& r : rows) {
        require(r.role == "grid", "CSV: expected grid rows");
        require(r.k >= 0 && size_t(r.k) < v.size(), "CSV: grid index out of range");
        v[r.k] = r.value;
    }
    return GridFunction(std::move(v));
}

json grid_to_json(const GridFunction& g) {
    json j;
    j["max_level"] = g.max_level();
    j["values"] = g.values();
    return j;
}

GridFunction grid_from_json(const json& j) { return GridFunction(j.at("values").get<std::vector<double>>()); }

json tree_to_json(const Tree& t) {
    json a = json::array();
    for (const NodeId& v : t.internal()) a.push_back({v.l, v.k});
    return a;
}

Tree tree_from_json(const json& j, int max_depth_cap) {
    std::vector<NodeId> nodes;
    for (const auto& p : j) {
        require(p.is_array() && p.size() == 2, "tree JSON: expected [l,k] pairs");
        nodes.push_back({p[0].get<int>(), p[1].get<int64_t>()});
    }
    return Tree(nodes, max_depth_cap);
}

json breakpoints_to_json(const Breakpoints& b) {
    json j;
    j["resolution"] = b.resolution;
    json a = json::array();
    for (const auto& [v, x] : b.b)
        a.push_back({{"l", v.l}, {"k", v.k}, {"grid_index", x}, {"value", std::ldexp(double(x), -b.resolution)}});
    j["breakpoints"] = a;
    return j;
}

Breakpoints breakpoints_from_json(const json& j) {
    Breakpoints b;
    b.resolution = j.at("resolution").get<int>();
    for (const auto& e : j.at("breakpoints"))
        b.b[{e.at("l").get<int>(), e.at("k").get<int64_t>()}] = e.at("grid_index").get<int64_t>();
    return b;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::invalid_input, "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) fail(ErrorKind::invalid_input, "cannot write '" + path + "'");
        out << content;
    }
    std::filesystem::rename(tmp, p);
}

}  // namespace bcart
