#ifndef GRADUNC_TESTS_ORACLES_HPP_
#define GRADUNC_TESTS_ORACLES_HPP_

// Independent reference implementations used by the unit tests and the
// acceptance suite. They share no code with the library beyond its data
// types and the forward evaluation of losses.

#include <cstdint>
#include <span>
#include <vector>

#include "gradunc/common.hpp"
#include "gradunc/conv_head.hpp"
#include "gradunc/detection.hpp"
#include "gradunc/gradient.hpp"
#include "gradunc/losses.hpp"
#include "gradunc/pipeline.hpp"

namespace oracle {

using namespace gradunc;

// Inclusion-exclusion with clamped overlaps.
double iou_analytic(const BoundingBox& a, const BoundingBox& b);
// Cell-center rasterization at `cells_per_unit` cells per unit length.
double iou_raster(const BoundingBox& a, const BoundingBox& b, int cells_per_unit = 1024);

// Random scene: boxes in [0, extent]^2, scores with occasional ties,
// classes in 1..num_classes.
std::vector<Instance> random_instances(Rng& rng, int n, int num_classes, double extent);
ImageSample random_scene(Rng& rng, int num_pred, int num_gt, int num_classes, double extent);

// True when instance a ranks before b: higher score, then lower anchor
// index, then lower position.
bool ranks_before(std::span<const Instance> v, std::size_t a, std::size_t b);

// Kept set of greedy NMS from its recursive definition: a qualifying box
// survives iff no higher-ranked surviving box of its class overlaps it.
// Returned in rank order.
std::vector<std::size_t> nms_brute(std::span<const Instance> v, double eps_s, double eps_iou);
std::vector<std::size_t> candidates_brute(const Instance& j, std::span<const Instance> pool,
                                          double eps_s, double eps_iou);

struct Match {
  bool tp = false;
  int gt = -1;
  double max_iou = 0;
};
std::vector<Match> match_brute(const ImageSample& s, double thr);

double auroc_pairs(std::span<const double> scores, std::span<const int> labels);
double ap_enumerate(std::span<const double> scores, std::span<const int> labels);
double r2_direct(std::span<const double> pred, std::span<const double> target);

struct CalErr {
  double mce = 0, ace = 0, ece = 0;
};
CalErr calibration_scan(std::span<const double> conf, std::span<const int> labels, int bins);

// mAP by re-running matching at every distinct confidence of a class.
double map_brute(std::span<const EvalImage> images, double thr);

// Finite-difference check of per_box_gradient on a toy head.
struct FdPartResult {
  LossPart part;
  int checked = 0;
  int excluded = 0;
  double max_rel_err = 0;
  double max_abs_grad = 0;
};
struct FdOptions {
  double step = 1e-4;
  // Denominator floor relative to the largest gradient entry of the part.
  double scale_floor = 1e-3;
};
struct FdSetup {
  HeadSpec spec;
  ConvHead net;
  FeatureMap input;
  Instance box;
};
FdSetup fd_setup(HeadKind kind, int num_classes, std::uint64_t seed);
std::vector<FdPartResult> fd_check(const FdSetup& setup, std::uint64_t seed,
                                   const FdOptions& options = {});

}  // namespace oracle

#endif  // GRADUNC_TESTS_ORACLES_HPP_
