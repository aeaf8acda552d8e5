#ifndef GRADUNC_SYNTHETIC_HPP_
#define GRADUNC_SYNTHETIC_HPP_

#include <cstdint>
#include <vector>

#include "gradunc/detection.hpp"
#include "gradunc/features.hpp"

namespace gradunc {

// Desk-scale stand-in for a trained detector on a labelled dataset.
//
// Each image holds 1..max_objects ground-truth boxes. Every object gets
// `predictions_per_object` jittered predictions (sometimes with the wrong
// class) and each image `decoys_per_image` random boxes on average. The
// score is an overconfident noisy function of a prediction's IoU with its
// source object.
//
// Features are emitted for the boxes surviving NMS. With c = matched IoU
// for true positives and 0 otherwise, gradient columns are noisy views of
// z_G = signal * (c - 0.25) + e_G and dropout columns of
// z_MC = dropout_signal * (c - 0.25) + e_MC, with independent standard
// normal e_G, e_MC. Since true positives have c >= 0.5, the latent alone
// separates TP from FP with AuROC >= Phi(signal / (2 sqrt 2)).
struct SyntheticConfig {
  int num_images = 200;
  int num_classes = 3;
  double image_size = 256;
  int max_objects = 4;
  int predictions_per_object = 3;
  double decoys_per_image = 4;
  double wrong_class_rate = 0.15;
  double score_slope = 4.0;
  double score_bias = 1.5;  // overconfidence on the logit scale
  double score_noise = 1.5;
  double signal = 6.0;
  double dropout_signal = 3.0;
  double view_noise = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<ImageSample> images;
  FeatureTable features;  // gradient (yolo, two layers) then dropout columns
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config);

// Lower bound on the latent AuROC for a signal strength.
double latent_auroc_bound(double signal);

// Labels and matched IoUs of the post-NMS boxes of one image, as used for
// feature rows: (prediction index, match).
std::vector<std::pair<int, MatchResult>> label_post_nms(const ImageSample& sample,
                                                        double prefilter, double nms_iou);

}  // namespace gradunc

#endif  // GRADUNC_SYNTHETIC_HPP_
