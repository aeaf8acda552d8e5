#ifndef GRADUNC_TOY_DETECTOR_HPP_
#define GRADUNC_TOY_DETECTOR_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gradunc/conv_head.hpp"
#include "gradunc/detection.hpp"
#include "gradunc/features.hpp"
#include "gradunc/gradient.hpp"
#include "gradunc/losses.hpp"

namespace gradunc {

// A seeded convolutional head over a seeded input map per image. It stands
// in for a trained detector so that the gradient and dropout commands run
// the real code paths end to end.
struct ToyDetector {
  HeadSpec spec;
  ConvHead net;
  std::uint64_t input_seed = 0;

  int grid() const { return spec.anchors.grid_w; }
  double image_size() const { return spec.anchors.cell_size * grid(); }
  FeatureMap input_for(const std::string& image_id) const;
};

// 8x8 grid of 16-pixel cells, two priors, channels (3, 8, 16, D A), all
// radii 1.
ToyDetector make_toy_detector(HeadKind kind, int num_classes, std::uint64_t seed);

std::string toy_detector_to_json(const ToyDetector& det);
ToyDetector toy_detector_from_json(std::string_view text);

// Anchors with score >= prefilter as predictions, raw outputs attached.
ImageSample toy_detect(const ToyDetector& det, const std::string& image_id,
                       std::vector<GroundTruthObject> ground_truth, double prefilter);

// Images with 1..3 ground-truth objects each. The head is untrained, so
// objects are placed on jittered copies of its post-NMS boxes (with
// probability 0.7) to give a mix of true and false positives; the rest
// are random.
std::vector<ImageSample> toy_corpus(const ToyDetector& det, int num_images, std::uint64_t seed,
                                    double prefilter);

// Recomputes the image's raw outputs and checks every prediction's stored
// raw_outputs against them. Throws ValidationError on a mismatch.
RawOutputs verified_raw_outputs(const ToyDetector& det, const ImageSample& sample,
                                const ForwardPass& pass);

struct ToyFeatureOptions {
  double prefilter = 1e-4;
  double nms_iou = kDefaultIouThreshold;
  double candidate_iou = kDefaultIouThreshold;
  GradDepth depth = GradDepth::kLastTwo;
  double dropout_rate = 0.5;
  int dropout_samples = 30;
  std::uint64_t seed = 0;
  int threads = 1;
};

// One row per post-NMS box, labelled by greedy matching.
FeatureTable toy_gradient_features(const ToyDetector& det, const std::vector<ImageSample>& samples,
                                   const ToyFeatureOptions& options);
FeatureTable toy_dropout_features(const ToyDetector& det, const std::vector<ImageSample>& samples,
                                  const ToyFeatureOptions& options);

}  // namespace gradunc

#endif  // GRADUNC_TOY_DETECTOR_HPP_
