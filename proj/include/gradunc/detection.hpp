#ifndef GRADUNC_DETECTION_HPP_
#define GRADUNC_DETECTION_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gradunc/flop_ledger.hpp"

namespace gradunc {

struct CenterBox {
  double cx = 0, cy = 0, w = 0, h = 0;
};

// Axis-aligned box in corner form, image pixel coordinates.
struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;
  CenterBox center_form() const;
  static BoundingBox from_center(const CenterBox& c);

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Instance {
  BoundingBox bbox;
  double score = 0;
  std::vector<double> class_probs;
  int class_id = 1;  // 1-based
  int anchor_index = 0;
  std::vector<double> raw_outputs;  // empty when absent

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct GroundTruthObject {
  BoundingBox bbox;
  int class_id = 1;

  friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

struct ImageSample {
  std::string image_id;
  double width = 0;
  double height = 0;
  std::vector<Instance> predictions;
  std::vector<GroundTruthObject> ground_truth;

  friend bool operator==(const ImageSample&, const ImageSample&) = default;
};

// 1-based index of the largest entry, lowest index on ties.
int argmax_class(std::span<const double> probs);

BoundingBox clip_to_image(const BoundingBox& box, double width, double height);

// Throws ValidationError naming the offending element.
void validate_sample(const ImageSample& sample);

// |A ∩ B| / |A ∪ B|; zero whenever either box has zero area.
double iou(const BoundingBox& a, const BoundingBox& b);

// Same value, charging the ledger 12 flops: three each for the two areas
// and the intersection, two for the union and one for the ratio.
double iou_counted(const BoundingBox& a, const BoundingBox& b, const Counter& counter);

std::vector<Instance> score_threshold(std::span<const Instance> instances, double eps_s);

inline constexpr double kDefaultIouThreshold = 0.5;

// Indices into `pool` of the candidate boxes of `j`: score >= eps_s, same
// class and IoU >= eps_iou.
std::vector<std::size_t> candidate_indices(const Instance& j,
                                           std::span<const Instance> pool,
                                           double eps_s,
                                           double eps_iou = kDefaultIouThreshold);
std::vector<Instance> candidate_set(const Instance& j, std::span<const Instance> pool,
                                    double eps_s,
                                    double eps_iou = kDefaultIouThreshold);

// Descending score, then ascending anchor index, then list position.
std::vector<std::size_t> ranking_order(std::span<const Instance> instances);

// Greedy non-maximum suppression; returns the survivors' indices in the
// order they were selected.
std::vector<std::size_t> nms_indices(std::span<const Instance> instances, double eps_s,
                                     double eps_iou = kDefaultIouThreshold);
std::vector<Instance> nms(std::span<const Instance> instances, double eps_s,
                          double eps_iou = kDefaultIouThreshold);

enum class MatchLabel { kTruePositive, kFalsePositive };

struct MatchResult {
  Instance instance;
  MatchLabel label = MatchLabel::kFalsePositive;
  // Max IoU with any same-class ground truth object, claimed or not.
  double matched_iou = 0;
  int gt_index = -1;  // claimed object for true positives
};

// Greedy one-to-one matching in ranking order. A prediction claims the
// unclaimed same-class object of highest IoU if that IoU >= iou_threshold.
// Results are returned in input order.
std::vector<MatchResult> match_tp_fp(const ImageSample& sample,
                                     double iou_threshold = kDefaultIouThreshold);

}  // namespace gradunc

#endif  // GRADUNC_DETECTION_HPP_
