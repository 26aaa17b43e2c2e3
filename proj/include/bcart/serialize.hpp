#pragma once

#include <string>

#include <json.hpp>

#include "bcart/haar.hpp"
#include "bcart/tree.hpp"
#include "bcart/unbalanced_haar.hpp"

namespace bcart {

using json = nlohmann::ordered_json;

std::string format_double(double v);  // 17 significant digits

// CSV rows: role,l,k,value with role in {root, detail, grid}.
std::string coeffs_to_csv(const CoeffArray& c);
CoeffArray coeffs_from_csv(const std::string& text);
json coeffs_to_json(const CoeffArray& c);
CoeffArray coeffs_from_json(const json& j);

std::string grid_to_csv(const GridFunction& g);
GridFunction grid_from_csv(const std::string& text);
json grid_to_json(const GridFunction& g);
GridFunction grid_from_json(const json& j);

// Sorted list of [l,k] internal pairs.
json tree_to_json(const Tree& t);
Tree tree_from_json(const json& j, int max_depth_cap);

json breakpoints_to_json(const Breakpoints& b);
Breakpoints breakpoints_from_json(const json& j);

std::string read_file(const std::string& path);
// Writes via a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace bcart
