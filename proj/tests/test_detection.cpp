#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradunc/common.hpp"
#include "gradunc/detection.hpp"
#include "oracles.hpp"

using namespace gradunc;

TEST_CASE("iou agrees with inclusion-exclusion and rasterization") {
  Rng rng(7);
  for (int i = 0; i < 300; ++i) {
    auto inst = oracle::random_instances(rng, 2, 1, 100);
    const BoundingBox& a = inst[0].bbox;
    const BoundingBox& b = inst[1].bbox;
    CHECK(iou(a, b) == doctest::Approx(oracle::iou_analytic(a, b)).epsilon(1e-12));
    CHECK(iou(a, b) == iou(b, a));
  }
  // Small boxes, where a 1024-per-unit raster resolves IoU to ~1e-3.
  for (int i = 0; i < 40; ++i) {
    const double x = rng.uniform(2, 6), y = rng.uniform(2, 6);
    const BoundingBox a{x, y, x + rng.uniform(1, 4), y + rng.uniform(1, 4)};
    const BoundingBox b{x + rng.uniform(-2, 2), y + rng.uniform(-2, 2), x + 3, y + 3.5};
    if (!b.valid()) continue;
    CHECK(std::abs(iou(a, b) - oracle::iou_raster(a, b)) < 2e-3);
  }
}

TEST_CASE("iou edge cases") {
  const BoundingBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {10, 0, 20, 10}) == 0.0);  // shared edge
  CHECK(iou(a, {5, 5, 5, 9}) == 0.0);     // degenerate
  CHECK(iou(a, {0, 0, 5, 10}) == doctest::Approx(0.5));
  FlopLedger ledger;
  const double v = iou_counted(a, {2, 2, 12, 12}, Counter(&ledger, Phase::kMaskIou));
  CHECK(v == doctest::Approx(64.0 / 136.0));
  CHECK(ledger.flops(Phase::kMaskIou) == 12);
}

TEST_CASE("center form round trip and clipping") {
  const BoundingBox b{3, 4, 13, 24};
  const CenterBox c = b.center_form();
  CHECK(c.cx == 8);
  CHECK(c.cy == 14);
  CHECK(BoundingBox::from_center(c) == b);
  CHECK(clip_to_image({-5, 2, 50, 70}, 40, 60) == BoundingBox{0, 2, 40, 60});
}

TEST_CASE("argmax_class takes the lowest index on ties") {
  const std::vector<double> p{0.2, 0.4, 0.4};
  CHECK(argmax_class(p) == 2);
}

TEST_CASE("nms matches its recursive definition") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = oracle::random_instances(rng, 1 + static_cast<int>(rng.below(25)), 3, 60);
    const double eps_s = rng.uniform(0, 0.3);
    const double eps_iou = rng.uniform(0.2, 0.8);
    CHECK(nms_indices(v, eps_s, eps_iou) == oracle::nms_brute(v, eps_s, eps_iou));
  }
}

TEST_CASE("nms keeps exact duplicates once and respects the ranking tie break") {
  Instance a;
  a.bbox = {0, 0, 10, 10};
  a.score = 0.9;
  a.anchor_index = 5;
  Instance b = a;
  b.anchor_index = 2;
  const std::vector<Instance> v{a, b};
  CHECK(nms_indices(v, 0.0) == std::vector<std::size_t>{1});
}

TEST_CASE("candidate sets match brute force") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = oracle::random_instances(rng, 20, 2, 50);
    const Instance& j = v[rng.below(v.size())];
    CHECK(candidate_indices(j, v, 0.1, 0.4) == oracle::candidates_brute(j, v, 0.1, 0.4));
  }
}

TEST_CASE("greedy matching matches brute force") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const ImageSample s = oracle::random_scene(rng, 15, 4, 2, 60);
    const auto got = match_tp_fp(s, 0.5);
    const auto want = oracle::match_brute(s, 0.5);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK((got[i].label == MatchLabel::kTruePositive) == want[i].tp);
      CHECK(got[i].gt_index == want[i].gt);
      CHECK(got[i].matched_iou == doctest::Approx(want[i].max_iou));
    }
  }
}

TEST_CASE("validate_sample rejects malformed input") {
  ImageSample s;
  s.image_id = "a";
  s.width = s.height = 100;
  Instance p;
  p.bbox = {0, 0, 10, 10};
  p.score = 0.5;
  p.class_probs = {0.3, 0.7};
  p.class_id = 2;
  s.predictions.push_back(p);
  s.ground_truth.push_back({{1, 1, 5, 5}, 1});
  CHECK_NOTHROW(validate_sample(s));

  auto broken = s;
  broken.predictions[0].score = 1.5;
  CHECK_THROWS_AS(validate_sample(broken), ValidationError);
  broken = s;
  broken.predictions[0].bbox = {10, 0, 5, 10};
  CHECK_THROWS_AS(validate_sample(broken), ValidationError);
  broken = s;
  broken.predictions[0].score = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate_sample(broken), ValidationError);
  broken = s;
  broken.ground_truth[0].class_id = 0;
  CHECK_THROWS_AS(validate_sample(broken), ValidationError);
}
