#include "gradunc/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gradunc/common.hpp"

namespace gradunc {

std::string_view map_name(ScalarMap m) {
  switch (m) {
    case ScalarMap::kMin: return "min";
    case ScalarMap::kMax: return "max";
    case ScalarMap::kMean: return "mean";
    case ScalarMap::kStd: return "std";
    case ScalarMap::kNorm1: return "norm1";
    case ScalarMap::kNorm2: return "norm2";
  }
  return "unknown";
}

double apply_map(ScalarMap m, std::span<const double> g, std::string_view feature) {
  if (g.empty()) {
    throw ValidationError("empty gradient vector for feature '" + std::string(feature) + "'");
  }
  const double n = static_cast<double>(g.size());
  switch (m) {
    case ScalarMap::kMin: return *std::min_element(g.begin(), g.end());
    case ScalarMap::kMax: return *std::max_element(g.begin(), g.end());
    case ScalarMap::kMean: {
      double s = 0;
      for (double v : g) s += v;
      return s / n;
    }
    case ScalarMap::kStd: {
      double mean = 0;
      for (double v : g) mean += v;
      mean /= n;
      double ss = 0;
      for (double v : g) ss += (v - mean) * (v - mean);
      return std::sqrt(ss / n);
    }
    case ScalarMap::kNorm1: {
      double s = 0;
      for (double v : g) s += std::abs(v);
      return s;
    }
    case ScalarMap::kNorm2: {
      // Scaled to avoid overflow for large entries.
      double scale = 0;
      for (double v : g) scale = std::max(scale, std::abs(v));
      if (scale == 0) return 0.0;
      double s = 0;
      for (double v : g) s += (v / scale) * (v / scale);
      return scale * std::sqrt(s);
    }
  }
  return 0.0;
}

std::array<double, 6> apply_all_maps(std::span<const double> g, std::string_view feature) {
  std::array<double, 6> out{};
  for (std::size_t i = 0; i < kAllMaps.size(); ++i) out[i] = apply_map(kAllMaps[i], g, feature);
  return out;
}

SourceSet SourceSet::parse(std::string_view text) {
  SourceSet s;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('+', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view tok = text.substr(start, end - start);
    if (tok == "G") {
      s.gradient = true;
    } else if (tok == "norms2") {
      s.norms2 = true;
    } else if (tok == "norms12") {
      s.norms12 = true;
    } else if (tok == "MC") {
      s.dropout = true;
    } else if (tok == "score") {
      s.score = true;
    } else {
      throw ValidationError("unknown feature source '" + std::string(tok) + "'");
    }
    start = end + 1;
  }
  return s;
}

std::string SourceSet::str() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(gradient, "G");
  add(norms2, "norms2");
  add(norms12, "norms12");
  add(dropout, "MC");
  add(score, "score");
  return out;
}

std::vector<std::string> gradient_layer_names(GradDepth depth) {
  if (depth == GradDepth::kLast) return {"T"};
  return {"T", "T-1"};
}

std::vector<std::string> gradient_columns(HeadKind kind, GradDepth depth) {
  std::vector<std::string> cols;
  for (LossPart part : loss_parts(kind)) {
    for (const std::string& layer : gradient_layer_names(depth)) {
      for (ScalarMap m : kAllMaps) {
        cols.push_back(std::string(loss_part_name(part)) + "." + layer + "." +
                       std::string(map_name(m)));
      }
    }
  }
  return cols;
}

std::vector<double> gradient_features(std::span<const KernelGradient> grads, GradDepth depth) {
  std::vector<double> out;
  for (const KernelGradient& g : grads) {
    for (const auto& m : apply_all_maps(g.last, "T")) out.push_back(m);
    if (depth == GradDepth::kLastTwo) {
      for (const auto& m : apply_all_maps(g.prev, "T-1")) out.push_back(m);
    }
  }
  return out;
}

std::vector<std::string> component_names(HeadKind kind, int num_classes) {
  std::vector<std::string> names = {"x", "y", "w", "h"};
  switch (kind) {
    case HeadKind::kYolo:
      names.push_back("s");
      for (int j = 1; j <= num_classes; ++j) names.push_back("p" + std::to_string(j));
      break;
    case HeadKind::kRpn:
      names.push_back("s");
      break;
    case HeadKind::kRoi:
      for (int j = 0; j <= num_classes; ++j) names.push_back("p" + std::to_string(j));
      break;
    case HeadKind::kRetina:
      for (int j = 1; j <= num_classes; ++j) names.push_back("p" + std::to_string(j));
      break;
  }
  return names;
}

std::vector<std::string> dropout_columns(HeadKind kind, int num_classes) {
  const std::vector<std::string> comps = component_names(kind, num_classes);
  std::vector<std::string> cols;
  for (const auto& c : comps) cols.push_back("mc.mean." + c);
  for (const auto& c : comps) cols.push_back("mc.std." + c);
  for (ScalarMap m : kAllMaps) cols.push_back("mc.std." + std::string(map_name(m)));
  return cols;
}

std::vector<double> dropout_features(const std::vector<std::vector<double>>& samples) {
  if (samples.size() < 2) throw ValidationError("dropout features need at least two samples");
  const std::size_t dim = samples.front().size();
  const double n = static_cast<double>(samples.size());
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (const auto& s : samples) {
    if (s.size() != dim) throw ValidationError("dropout samples differ in dimension");
    for (std::size_t r = 0; r < dim; ++r) mean[r] += s[r];
  }
  for (double& m : mean) m /= n;
  for (const auto& s : samples) {
    for (std::size_t r = 0; r < dim; ++r) sd[r] += (s[r] - mean[r]) * (s[r] - mean[r]);
  }
  for (double& v : sd) v = std::sqrt(v / (n - 1));
  std::vector<double> out = mean;
  out.insert(out.end(), sd.begin(), sd.end());
  for (double m : apply_all_maps(sd, "mc.std")) out.push_back(m);
  return out;
}

std::string FeatureTable::schema_id() const {
  std::string joined;
  for (const auto& c : columns) {
    joined += c;
    joined += ',';
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash_string(joined)));
  return "features-v1-" + std::string(buf);
}

int FeatureTable::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

FeatureTable concat_tables(const FeatureTable& a, const FeatureTable& b) {
  if (a.rows.size() != b.rows.size()) throw ValidationError("tables cover different boxes");
  FeatureTable out = a;
  for (const auto& c : b.columns) {
    if (a.column_index(c) >= 0) throw ValidationError("duplicate column '" + c + "'");
    out.columns.push_back(c);
  }
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const BoxRecord& ra = a.rows[i];
    const BoxRecord& rb = b.rows[i];
    if (ra.image_id != rb.image_id || ra.box_index != rb.box_index) {
      throw ValidationError("row " + std::to_string(i) + " refers to different boxes");
    }
    out.rows[i].features.insert(out.rows[i].features.end(), rb.features.begin(),
                                rb.features.end());
  }
  return out;
}

namespace {

bool is_gradient_column(const std::string& c) {
  const auto first = c.find('.');
  if (first == std::string::npos) return false;
  const std::string part = c.substr(0, first);
  return part == "loc" || part == "score" || part == "cls";
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

FeatureMatrix select_features(const FeatureTable& table, const SourceSet& sources) {
  std::vector<int> idx;
  bool any_grad = false, any_mc = false;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    const std::string& c = table.columns[i];
    if (!is_gradient_column(c)) continue;
    const bool take = sources.gradient || (sources.norms2 && ends_with(c, ".norm2")) ||
                      (sources.norms12 && (ends_with(c, ".norm1") || ends_with(c, ".norm2")));
    if (take) {
      idx.push_back(static_cast<int>(i));
      any_grad = true;
    }
  }
  if (sources.dropout) {
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      if (table.columns[i].rfind("mc.", 0) == 0) {
        idx.push_back(static_cast<int>(i));
        any_mc = true;
      }
    }
  }
  if ((sources.gradient || sources.norms2 || sources.norms12) && !any_grad) {
    throw ValidationError("feature table has no gradient columns");
  }
  if (sources.dropout && !any_mc) throw ValidationError("feature table has no dropout columns");
  if (!sources.gradient && !sources.norms2 && !sources.norms12 && !sources.dropout &&
      !sources.score) {
    throw ValidationError("empty feature source set");
  }
  FeatureMatrix m;
  for (int i : idx) m.columns.push_back(table.columns[static_cast<std::size_t>(i)]);
  if (sources.score) m.columns.push_back("score");
  for (const BoxRecord& r : table.rows) {
    if (r.features.size() != table.columns.size()) {
      throw ValidationError("row for box " + std::to_string(r.box_index) + " of '" + r.image_id +
                            "' has the wrong number of features");
    }
    std::vector<double> row;
    row.reserve(m.columns.size());
    for (int i : idx) row.push_back(r.features[static_cast<std::size_t>(i)]);
    if (sources.score) row.push_back(r.score);
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace gradunc
