#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pvrnn/core/encoding.hpp"
#include "pvrnn/io/csv.hpp"
#include "pvrnn/train/trainer.hpp"

namespace pvrnn {

/// Body-part categories of the demo set, in the order used by the observer.
inline constexpr std::array<std::string_view, 7> kCategories = {"Eye",   "Head",  "Beak", "Neck",
                                                                "Rwing", "Belly", "Lwing"};

inline int category_index(std::string_view label) {
  for (std::size_t i = 0; i < kCategories.size(); ++i)
    if (kCategories[i] == label) return static_cast<int>(i);
  return -1;
}

inline constexpr double kSamplingMs = 100.0;

struct Primitive {
  std::string label;
  std::vector<Point2> rows;
  double sampling_ms = kSamplingMs;

  /// Last sample within `tol` of the first one.
  bool is_closed(double tol = 0.1) const {
    if (rows.size() < 2) return false;
    return std::hypot(rows.back().x - rows.front().x, rows.back().y - rows.front().y) <= tol;
  }
};

struct PrimitiveSet {
  std::vector<Primitive> primitives;

  const Primitive* find(std::string_view label) const {
    for (const auto& p : primitives)
      if (p.label == label) return &p;
    return nullptr;
  }

  int index_of(std::string_view label) const {
    for (std::size_t i = 0; i < primitives.size(); ++i)
      if (primitives[i].label == label) return static_cast<int>(i);
    return -1;
  }
};

inline Primitive load_primitive(const std::filesystem::path& file) {
  const auto table = csv::read_table(file.string());
  if (table.header.size() != 2 || table.header[0] != "x" || table.header[1] != "y")
    throw FormatError(file.string() + ": header must be 'x,y'");
  Primitive p;
  p.label = file.stem().string();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    Point2 pt;
    const auto where = file.string() + ":" + std::to_string(table.line_numbers[r]);
    if (!csv::parse_double(table.rows[r][0], pt.x) || !csv::parse_double(table.rows[r][1], pt.y))
      throw FormatError(where + ": not a number");
    if (!(pt.x >= -1.0 && pt.x <= 1.0 && pt.y >= -1.0 && pt.y <= 1.0))
      throw FormatError(where + ": value out of range [-1, 1]");
    p.rows.push_back(pt);
  }
  if (p.rows.size() < 2) throw FormatError(file.string() + ": needs at least 2 rows");
  return p;
}

/// One CSV per primitive (`<label>.csv`, header `x,y`). Known body-part labels
/// come first in category order, other labels follow alphabetically.
inline PrimitiveSet load_primitives(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError("primitive directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  if (files.empty()) throw FormatError("primitive directory is empty: " + dir.string());

  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const int ia = category_index(a.stem().string());
    const int ib = category_index(b.stem().string());
    if ((ia >= 0) != (ib >= 0)) return ia >= 0;
    if (ia >= 0) return ia < ib;
    return a.stem().string() < b.stem().string();
  });

  PrimitiveSet set;
  std::set<std::string> seen;
  for (const auto& f : files) {
    auto p = load_primitive(f);
    if (!seen.insert(p.label).second) throw FormatError("duplicate primitive label: " + p.label);
    set.primitives.push_back(std::move(p));
  }
  return set;
}

/// Encodes every primitive into softmax frames with the network's codec.
inline TrainingSet encode_primitives(const PrimitiveSet& set, const NetworkConfig& cfg) {
  if (cfg.dof != 2) throw ConfigError("encode_primitives: primitives are planar, dof must be 2");
  const SoftmaxCodec codec(cfg);
  TrainingSet ts;
  for (const auto& p : set.primitives) ts.sequences.push_back({p.label, codec.encode_path(p.rows)});
  return ts;
}

}  // namespace pvrnn
