#ifndef GRADUNC_LOSSES_HPP_
#define GRADUNC_LOSSES_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradunc/detection.hpp"
#include "gradunc/flop_ledger.hpp"

namespace gradunc {

// Detector head families. kRpn and kRoi are the two stages of a two-stage
// detector and are differentiated separately.
enum class HeadKind { kYolo, kRpn, kRoi, kRetina };
enum class LossPart { kLocalization, kScore, kClassification };

std::string_view head_kind_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);
std::string_view loss_part_name(LossPart part);
LossPart parse_loss_part(std::string_view name);

// Parts the head's loss splits into, in schema order.
std::vector<LossPart> loss_parts(HeadKind kind);

// Raw outputs per anchor:
//   yolo   (x, y, w, h, s, p_1..p_C)       4 + 1 + C
//   rpn    (x, y, w, h, s)                 4 + 1
//   roi    (x, y, w, h, p_0, p_1..p_C)     4 + (C + 1), p_0 background
//   retina (x, y, w, h, p_1..p_C)          4 + C
int output_dim(HeadKind kind, int num_classes);
// Index of the first class logit (p_1, or p_0 for roi); -1 for rpn.
int class_offset(HeadKind kind);
inline constexpr int kScoreIndex = 4;

struct AnchorPrior {
  double w = 1, h = 1;
};

// Regular grid of anchors: grid_h x grid_w cells of side `cell_size`, with
// one anchor per prior in every cell. Anchor index a = cell * A + slot,
// cell = row * grid_w + col.
struct AnchorGrid {
  int grid_h = 1;
  int grid_w = 1;
  double cell_size = 1;
  std::vector<AnchorPrior> priors;

  struct Anchor {
    double corner_x, corner_y;  // top-left corner of the cell
    double cx, cy;              // prior center (cell center)
    double w, h;                // prior size
  };

  int anchors_per_cell() const { return static_cast<int>(priors.size()); }
  int num_anchors() const { return grid_h * grid_w * anchors_per_cell(); }
  Anchor anchor(int a) const;
  BoundingBox anchor_box(int a) const;
  void validate() const;
};

// Raw head outputs for all anchors, row-major [anchor][component].
struct RawOutputs {
  int dim = 0;
  std::vector<double> values;

  int num_anchors() const { return dim == 0 ? 0 : static_cast<int>(values.size()) / dim; }
  std::span<const double> anchor(int a) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(a) * dim, dim);
  }
  std::span<double> anchor(int a) {
    return std::span<double>(values).subspan(static_cast<std::size_t>(a) * dim, dim);
  }
};

struct HeadSpec {
  HeadKind kind = HeadKind::kYolo;
  int num_classes = 1;
  AnchorGrid anchors;

  int dim() const { return output_dim(kind, num_classes); }
};

// Sigmoid/softmax values of the raw outputs, as left behind by a forward
// pass. Same layout as RawOutputs; localization w/h slots hold exp(τ).
struct OutputActivations {
  int dim = 0;
  std::vector<double> values;

  std::span<const double> anchor(int a) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(a) * dim, dim);
  }
};

// Elementary evaluations are charged to Phase::kPostprocess.
OutputActivations activate_outputs(const HeadSpec& head, const RawOutputs& raw,
                                   FlopLedger* ledger = nullptr);

// One Instance per anchor. Throws ValidationError naming the anchor when a
// raw output is not finite. Postprocessing arithmetic is charged to the
// ledger's kPostprocess phase.
std::vector<Instance> transform_outputs(const HeadSpec& head, const RawOutputs& raw,
                                        FlopLedger* ledger = nullptr);

// Center-form outputs in the raw layout: (x, y, w, h) followed by the
// activated score/class entries. Cheaper than transform_outputs; used for
// dropout sample statistics. Charged to kPostprocess.
std::vector<double> decode_outputs(const HeadSpec& head, const RawOutputs& raw,
                                   FlopLedger* ledger = nullptr);

// Raw outputs that reproduce `inst` at its own anchor. Softmax logits are
// returned as log-probabilities (the representative with logsumexp = 0).
std::vector<double> inverse_transform(const HeadSpec& head, const Instance& inst);

// Ground-truth box encoded relative to anchor `a` in the scale the loss
// compares against. For yolo, x/y are cell-relative offsets in [0, 1] (the
// sigmoid-space target), w/h are log-ratios to the prior.
std::array<double, 4> encode_localization(const HeadSpec& head, const BoundingBox& box,
                                          int a);

struct AssignmentConfig {
  double eps_pos = 0.5;
  double eps_neg = 0.5;
  // Each ground-truth object is also assigned to its max-IoU anchor.
  bool best_anchor_rule = true;
};
AssignmentConfig default_assignment(HeadKind kind);

// Anchor/ground-truth association. Depends only on ground truth and anchors.
struct AssignmentTensors {
  int num_anchors = 0;
  int num_gt = 0;
  double eps_pos = 0.5;
  double eps_neg = 0.5;
  std::vector<std::uint8_t> obj;    // [a * num_gt + t]
  std::vector<std::uint8_t> noobj;  // [a * num_gt + t]

  bool is_obj(int a, int t) const { return obj[static_cast<std::size_t>(a) * num_gt + t] != 0; }
  bool is_noobj(int a, int t) const {
    return noobj[static_cast<std::size_t>(a) * num_gt + t] != 0;
  }
  bool any_obj(int a) const;
  bool any_noobj(int a) const;
};

AssignmentTensors compute_assignments(const HeadSpec& head,
                                      std::span<const GroundTruthObject> gt,
                                      std::optional<AssignmentConfig> config = std::nullopt);

// Random positive/negative subsets entering the proposal losses.
struct SampleMasks {
  std::vector<std::uint8_t> pos;
  std::vector<std::uint8_t> neg;
  int batch_size = 256;
  std::uint64_t rng_seed = 0;

  int num_pos() const;
  int num_neg() const;
};

// n+ = min(#positive anchors, b/2), n- = min(#negative anchors, b - n+),
// drawn without replacement. `anchor_mask` restricts the eligible anchors.
SampleMasks sample_proposals(const AssignmentTensors& assign, int batch_size,
                             std::uint64_t seed,
                             const std::vector<std::uint8_t>* anchor_mask = nullptr);

// Everything a loss evaluation needs besides the raw outputs. When
// `anchor_mask` is set, only those anchors are part of the prediction;
// normalizers count masked anchors only.
struct LossContext {
  const HeadSpec* head = nullptr;
  std::span<const GroundTruthObject> gt;
  const AssignmentTensors* assign = nullptr;
  const SampleMasks* masks = nullptr;                    // rpn only
  const std::vector<std::uint8_t>* anchor_mask = nullptr;
};

// Ground truth transformed to output scale, per (anchor, object) pair that
// some loss term can touch.
struct TargetMap {
  int num_gt = 0;
  std::vector<std::array<double, 4>> loc;  // [a * num_gt + t]
  std::vector<int> class_ids;              // per object, 1-based

  const std::array<double, 4>& at(int a, int t) const {
    return loc[static_cast<std::size_t>(a) * num_gt + t];
  }
};
TargetMap encode_targets(const LossContext& ctx);

inline constexpr double kSmoothL1Beta = 1.0 / 9.0;
inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

double smooth_l1(double residual, double beta = kSmoothL1Beta);

// Scalar loss of one part. Zero when a 1/|obj| (or 1/|I+|) normalizer has
// an empty denominator.
double loss_value(LossPart part, const RawOutputs& raw, const TargetMap& targets,
                  const LossContext& ctx);
double total_loss(const RawOutputs& raw, const TargetMap& targets, const LossContext& ctx);

// Sparse derivative of one loss part w.r.t. the raw outputs. Only anchors
// where the part is active appear.
struct LossPartDerivative {
  HeadKind head_kind = HeadKind::kYolo;
  LossPart part = LossPart::kLocalization;
  int dim = 0;
  std::map<int, std::vector<double>> values;  // anchor -> dense component vector

  double at(int a, int r) const;
};

// Uses the precomputed activations for sigmoids/softmax. Arithmetic and
// any fresh elementary evaluations are charged to Phase::kDloss.
LossPartDerivative loss_derivative(LossPart part, const RawOutputs& raw,
                                   const OutputActivations& act, const TargetMap& targets,
                                   const LossContext& ctx, FlopLedger* ledger = nullptr);

}  // namespace gradunc

#endif  // GRADUNC_LOSSES_HPP_
