#ifndef GRADUNC_FEATURES_HPP_
#define GRADUNC_FEATURES_HPP_

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradunc/gradient.hpp"
#include "gradunc/losses.hpp"

namespace gradunc {

enum class ScalarMap { kMin, kMax, kMean, kStd, kNorm1, kNorm2 };
inline constexpr std::array<ScalarMap, 6> kAllMaps = {
    ScalarMap::kMin, ScalarMap::kMax, ScalarMap::kMean,
    ScalarMap::kStd, ScalarMap::kNorm1, ScalarMap::kNorm2};

std::string_view map_name(ScalarMap m);

// std is the population standard deviation. Throws ValidationError naming
// `feature` for an empty vector.
double apply_map(ScalarMap m, std::span<const double> g, std::string_view feature = "");
std::array<double, 6> apply_all_maps(std::span<const double> g, std::string_view feature = "");

// Feature sources: G (all six maps of every partial gradient), norms2,
// norms12, MC (dropout statistics) and score. Sets combine with '+'.
struct SourceSet {
  bool gradient = false;
  bool norms2 = false;
  bool norms12 = false;
  bool dropout = false;
  bool score = false;

  static SourceSet parse(std::string_view text);
  std::string str() const;
};

// Layer labels "T" and "T-1".
std::vector<std::string> gradient_layer_names(GradDepth depth);

// Columns part.layer.map, part major, layer middle, map minor.
std::vector<std::string> gradient_columns(HeadKind kind, GradDepth depth);
// Six maps per (part, layer) flattened in gradient_columns order. `grads`
// holds one KernelGradient per loss part in loss_parts order.
std::vector<double> gradient_features(std::span<const KernelGradient> grads, GradDepth depth);

// Per-component names of a head's outputs: x, y, w, h, then s/p_j.
std::vector<std::string> component_names(HeadKind kind, int num_classes);
// mc.mean.<comp>, mc.std.<comp>, then mc.std.<map>.
std::vector<std::string> dropout_columns(HeadKind kind, int num_classes);
// samples[i] is the decoded output vector of the box's anchor in sample i.
// Sample std (n - 1); needs at least two samples.
std::vector<double> dropout_features(const std::vector<std::vector<double>>& samples);

struct BoxRecord {
  std::string image_id;
  int box_index = 0;
  double score = 0;
  int label = 0;  // 1 true positive, 0 false positive
  double target_iou = 0;
  std::vector<double> features;

  friend bool operator==(const BoxRecord&, const BoxRecord&) = default;
};

struct FeatureTable {
  std::vector<std::string> columns;
  std::vector<BoxRecord> rows;

  std::string schema_id() const;
  int column_index(std::string_view name) const;  // -1 if absent
  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

// Side-by-side concatenation of two tables over the same boxes.
FeatureTable concat_tables(const FeatureTable& a, const FeatureTable& b);

// Columns (and the score column for the score source) selected by a source
// set, in gradient, dropout, score order. Throws when a requested source has
// no columns.
struct FeatureMatrix {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};
FeatureMatrix select_features(const FeatureTable& table, const SourceSet& sources);

}  // namespace gradunc

#endif  // GRADUNC_FEATURES_HPP_
