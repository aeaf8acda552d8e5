#ifndef GRADUNC_PIPELINE_HPP_
#define GRADUNC_PIPELINE_HPP_

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradunc/detection.hpp"
#include "gradunc/features.hpp"
#include "gradunc/gbt.hpp"

namespace gradunc {

inline constexpr double kScorePrefilter = 1e-4;

enum class PipelineMode { kBaseline, kMetaFusion };

// Meta-classifier probability per (image_id, prediction index).
using MetaScores = std::map<std::pair<std::string, int>, double>;

MetaScores meta_scores_from(const FeatureTable& table, std::span<const double> probs);
MetaScores meta_scores_from_model(const GbtModel& model, const FeatureTable& table,
                                  const SourceSet& sources);

// Boxes surviving NMS (at the score pre-filter) and the decision threshold.
// `confidence` is the thresholding quantity, also used for ranking.
struct PipelineImage {
  std::string image_id;
  std::vector<int> box_index;  // into the image's predictions
  std::vector<Instance> kept;
  std::vector<double> confidence;
};

// NMS precedes thresholding in both modes. Metafusion needs a probability
// for every post-NMS box.
std::vector<PipelineImage> run_pipeline(PipelineMode mode, std::span<const ImageSample> samples,
                                        const MetaScores* meta, double threshold,
                                        double nms_iou = kDefaultIouThreshold,
                                        double prefilter = kScorePrefilter);

// Predictions scored by the ranking quantity, with the image's ground truth.
struct EvalImage {
  std::vector<Instance> predictions;
  std::vector<GroundTruthObject> ground_truth;
};
std::vector<EvalImage> eval_images(std::span<const PipelineImage> out,
                                   std::span<const ImageSample> samples);

// All-point interpolated AP per class from greedy matching in rank order;
// equal confidences are one threshold group. Classes without ground truth
// are left out of the mean.
double mean_average_precision(std::span<const EvalImage> images,
                              double iou_threshold = kDefaultIouThreshold);

// i / n for i = 0..n.
std::vector<double> threshold_grid(int n);
// 0:0.025:1 and 0:1e-4:1.
std::vector<double> map_sweep_grid();
std::vector<double> fpfn_sweep_grid();

struct SweepRow {
  double threshold = 0;
  double map = 0;
  long fp = 0;
  long fn = 0;
};

std::vector<SweepRow> sweep_map(PipelineMode mode, std::span<const ImageSample> samples,
                                const MetaScores* meta, const std::vector<double>& grid);

// False positives and negatives of one class against its ground truth,
// matched one-to-one.
std::vector<SweepRow> sweep_fp_fn(PipelineMode mode, std::span<const ImageSample> samples,
                                  const MetaScores* meta, const std::vector<double>& grid,
                                  int class_id);

}  // namespace gradunc

#endif  // GRADUNC_PIPELINE_HPP_
