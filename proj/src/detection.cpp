#include "gradunc/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradunc/common.hpp"

namespace gradunc {

bool BoundingBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

CenterBox BoundingBox::center_form() const {
  return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max), width(), height()};
}

BoundingBox BoundingBox::from_center(const CenterBox& c) {
  return {c.cx - 0.5 * c.w, c.cy - 0.5 * c.h, c.cx + 0.5 * c.w, c.cy + 0.5 * c.h};
}

int argmax_class(std::span<const double> probs) {
  if (probs.empty()) {
    throw ValidationError("argmax_class: empty class distribution");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return static_cast<int>(best) + 1;
}

BoundingBox clip_to_image(const BoundingBox& box, double width, double height) {
  BoundingBox out;
  out.x_min = std::clamp(box.x_min, 0.0, width);
  out.x_max = std::clamp(box.x_max, 0.0, width);
  out.y_min = std::clamp(box.y_min, 0.0, height);
  out.y_max = std::clamp(box.y_max, 0.0, height);
  return out;
}

void validate_sample(const ImageSample& sample) {
  const std::string where = "image '" + sample.image_id + "'";
  if (!(sample.width > 0) || !(sample.height > 0) || !std::isfinite(sample.width) ||
      !std::isfinite(sample.height)) {
    throw ValidationError(where + ": image size must be positive");
  }
  auto check_box = [&](const BoundingBox& b, const std::string& what) {
    if (!b.valid()) {
      throw ValidationError(where + ": " + what + " has an invalid box");
    }
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > sample.width || b.y_max > sample.height) {
      throw ValidationError(where + ": " + what + " lies outside the image");
    }
  };
  for (std::size_t i = 0; i < sample.predictions.size(); ++i) {
    const Instance& p = sample.predictions[i];
    const std::string what = "prediction " + std::to_string(i);
    check_box(p.bbox, what);
    if (!(p.score > 0 && p.score < 1)) {
      throw ValidationError(where + ": " + what + " score outside (0,1)");
    }
    if (p.class_probs.empty()) {
      throw ValidationError(where + ": " + what + " has no class probabilities");
    }
    for (double q : p.class_probs) {
      if (!(q > 0 && q < 1)) {
        throw ValidationError(where + ": " + what + " class probability outside (0,1)");
      }
    }
    if (p.class_id != argmax_class(p.class_probs)) {
      throw ValidationError(where + ": " + what + " class_id is not the argmax");
    }
    if (p.anchor_index < 0) {
      throw ValidationError(where + ": " + what + " negative anchor index");
    }
    for (double r : p.raw_outputs) {
      if (!std::isfinite(r)) {
        throw ValidationError(where + ": " + what + " non-finite raw output");
      }
    }
  }
  for (std::size_t i = 0; i < sample.ground_truth.size(); ++i) {
    const auto& g = sample.ground_truth[i];
    check_box(g.bbox, "ground truth " + std::to_string(i));
    if (g.class_id < 1) {
      throw ValidationError(where + ": ground truth " + std::to_string(i) +
                            " class out of range");
    }
  }
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0 || area_b <= 0) return 0.0;
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (area_a + area_b - inter);
}

double iou_counted(const BoundingBox& a, const BoundingBox& b, const Counter& counter) {
  counter.flops(12);
  return iou(a, b);
}

std::vector<Instance> score_threshold(std::span<const Instance> instances, double eps_s) {
  std::vector<Instance> out;
  for (const Instance& inst : instances) {
    if (inst.score >= eps_s) out.push_back(inst);
  }
  return out;
}

std::vector<std::size_t> candidate_indices(const Instance& j, std::span<const Instance> pool,
                                           double eps_s, double eps_iou) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Instance& c = pool[i];
    if (c.score >= eps_s && c.class_id == j.class_id && iou(c.bbox, j.bbox) >= eps_iou) {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<Instance> candidate_set(const Instance& j, std::span<const Instance> pool,
                                    double eps_s, double eps_iou) {
  std::vector<Instance> out;
  for (std::size_t i : candidate_indices(j, pool, eps_s, eps_iou)) out.push_back(pool[i]);
  return out;
}

std::vector<std::size_t> ranking_order(std::span<const Instance> instances) {
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (instances[a].score != instances[b].score) {
      return instances[a].score > instances[b].score;
    }
    return instances[a].anchor_index < instances[b].anchor_index;
  });
  return order;
}

std::vector<std::size_t> nms_indices(std::span<const Instance> instances, double eps_s,
                                     double eps_iou) {
  const std::vector<std::size_t> order = ranking_order(instances);
  std::vector<bool> removed(instances.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t j = order[oi];
    if (removed[j]) continue;
    // Ranked order: once below the threshold, nothing further qualifies.
    if (instances[j].score < eps_s) break;
    kept.push_back(j);
    removed[j] = true;
    for (std::size_t ok = oi + 1; ok < order.size(); ++ok) {
      const std::size_t i = order[ok];
      if (removed[i]) continue;
      const Instance& c = instances[i];
      if (c.score >= eps_s && c.class_id == instances[j].class_id &&
          iou(c.bbox, instances[j].bbox) >= eps_iou) {
        removed[i] = true;
      }
    }
  }
  return kept;
}

std::vector<Instance> nms(std::span<const Instance> instances, double eps_s, double eps_iou) {
  std::vector<Instance> out;
  for (std::size_t i : nms_indices(instances, eps_s, eps_iou)) out.push_back(instances[i]);
  return out;
}

std::vector<MatchResult> match_tp_fp(const ImageSample& sample, double iou_threshold) {
  const auto& preds = sample.predictions;
  const auto& gts = sample.ground_truth;
  std::vector<MatchResult> results(preds.size());
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t i : ranking_order(preds)) {
    MatchResult& r = results[i];
    r.instance = preds[i];
    double best_unclaimed = -1.0;
    int best_index = -1;
    for (std::size_t t = 0; t < gts.size(); ++t) {
      if (gts[t].class_id != preds[i].class_id) continue;
      const double v = iou(preds[i].bbox, gts[t].bbox);
      r.matched_iou = std::max(r.matched_iou, v);
      if (!claimed[t] && v >= iou_threshold && v > best_unclaimed) {
        best_unclaimed = v;
        best_index = static_cast<int>(t);
      }
    }
    if (best_index >= 0) {
      claimed[static_cast<std::size_t>(best_index)] = true;
      r.label = MatchLabel::kTruePositive;
      r.gt_index = best_index;
    }
  }
  return results;
}

}  // namespace gradunc
