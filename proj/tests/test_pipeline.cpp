#include <doctest.h>

#include <algorithm>

#include "gradunc/common.hpp"
#include "gradunc/pipeline.hpp"
#include "oracles.hpp"

using namespace gradunc;

namespace {

std::vector<ImageSample> scenes(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i) {
    ImageSample s = oracle::random_scene(rng, 12, 3, 2, 80);
    s.image_id = "s" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

MetaScores random_meta(const std::vector<ImageSample>& samples, std::uint64_t seed) {
  Rng rng(seed);
  MetaScores m;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.predictions.size(); ++i) {
      m[{s.image_id, static_cast<int>(i)}] = rng.uniform();
    }
  }
  return m;
}

}  // namespace

TEST_CASE("baseline is nms followed by the score threshold") {
  const auto samples = scenes(1, 30);
  for (double thr : {0.0, 0.3, 0.5, 0.9}) {
    const auto out = run_pipeline(PipelineMode::kBaseline, samples, nullptr, thr);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      std::vector<int> want;
      for (std::size_t i : oracle::nms_brute(samples[k].predictions, kScorePrefilter, 0.5)) {
        if (samples[k].predictions[i].score >= thr) want.push_back(static_cast<int>(i));
      }
      CHECK(out[k].box_index == want);
    }
  }
}

TEST_CASE("metafusion thresholds the meta probability of nms survivors") {
  const auto samples = scenes(2, 20);
  const MetaScores meta = random_meta(samples, 3);
  const auto out = run_pipeline(PipelineMode::kMetaFusion, samples, &meta, 0.4);
  const auto all = run_pipeline(PipelineMode::kBaseline, samples, nullptr, 0.0);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    std::vector<int> want;
    for (int i : all[k].box_index) {
      if (meta.at({samples[k].image_id, i}) >= 0.4) want.push_back(i);
    }
    CHECK(out[k].box_index == want);
    for (std::size_t j = 0; j < out[k].kept.size(); ++j) {
      CHECK(out[k].confidence[j] == meta.at({samples[k].image_id, out[k].box_index[j]}));
    }
  }
  CHECK_THROWS_AS(run_pipeline(PipelineMode::kMetaFusion, samples, nullptr, 0.4), ValidationError);
  MetaScores partial = meta;
  partial.erase(partial.begin());
  CHECK_THROWS_AS(run_pipeline(PipelineMode::kMetaFusion, samples, &partial, 0.0), ValidationError);
}

TEST_CASE("meta probabilities equal to the score reproduce the baseline") {
  const auto samples = scenes(4, 15);
  MetaScores meta;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.predictions.size(); ++i) {
      meta[{s.image_id, static_cast<int>(i)}] = s.predictions[i].score;
    }
  }
  const auto a = run_pipeline(PipelineMode::kBaseline, samples, nullptr, 0.35);
  const auto b = run_pipeline(PipelineMode::kMetaFusion, samples, &meta, 0.35);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].box_index == b[k].box_index);
}

TEST_CASE("mAP matches re-matching at every confidence") {
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    const auto samples = scenes(seed, 8);
    const auto out = run_pipeline(PipelineMode::kBaseline, samples, nullptr, 0.0);
    const auto ev = eval_images(out, samples);
    CHECK(mean_average_precision(ev) == doctest::Approx(oracle::map_brute(ev, 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("mAP of perfect detections is one") {
  EvalImage im;
  im.ground_truth = {{{0, 0, 10, 10}, 1}, {{20, 20, 30, 40}, 2}};
  for (const auto& g : im.ground_truth) {
    Instance p;
    p.bbox = g.bbox;
    p.class_id = g.class_id;
    p.score = 0.9;
    im.predictions.push_back(p);
  }
  const std::vector<EvalImage> ev{im};
  CHECK(mean_average_precision(ev) == 1.0);
}

TEST_CASE("threshold grids") {
  const auto g = threshold_grid(4);
  CHECK(g == std::vector<double>{0, 0.25, 0.5, 0.75, 1});
  CHECK(map_sweep_grid().size() == 41);
  CHECK(fpfn_sweep_grid().size() == 10001);
  CHECK(fpfn_sweep_grid().back() == 1.0);
}

TEST_CASE("false positives fall and false negatives rise with the threshold") {
  const auto samples = scenes(5, 40);
  const MetaScores meta = random_meta(samples, 6);
  const auto grid = threshold_grid(200);
  for (PipelineMode mode : {PipelineMode::kBaseline, PipelineMode::kMetaFusion}) {
    for (int c : {1, 2}) {
      const auto rows = sweep_fp_fn(mode, samples, &meta, grid, c);
      REQUIRE(rows.size() == grid.size());
      for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].fp <= rows[i - 1].fp);
        CHECK(rows[i].fn >= rows[i - 1].fn);
      }
    }
  }
  std::vector<double> bad{0.5, 0.5};
  CHECK_THROWS_AS(sweep_map(PipelineMode::kBaseline, samples, nullptr, bad), ValidationError);
}
