#include <doctest.h>

#include <cmath>

#include "gradunc/common.hpp"
#include "gradunc/features.hpp"
#include "gradunc/synthetic.hpp"

using namespace gradunc;

TEST_CASE("scalar maps on a hand-checked vector") {
  const std::vector<double> g{3, -4, 1, 0};
  CHECK(apply_map(ScalarMap::kMin, g) == -4);
  CHECK(apply_map(ScalarMap::kMax, g) == 3);
  CHECK(apply_map(ScalarMap::kMean, g) == 0);
  // Population std: sqrt((9 + 16 + 1 + 0) / 4).
  CHECK(apply_map(ScalarMap::kStd, g) == doctest::Approx(std::sqrt(26.0 / 4)));
  CHECK(apply_map(ScalarMap::kNorm1, g) == 8);
  CHECK(apply_map(ScalarMap::kNorm2, g) == doctest::Approx(std::sqrt(26.0)));
  CHECK_THROWS_AS(apply_map(ScalarMap::kMax, std::vector<double>{}, "loc.T"), ValidationError);
}

TEST_CASE("constant vectors have zero spread") {
  const std::vector<double> g(7, 2.5);
  const auto m = apply_all_maps(g);
  CHECK(m[3] == 0);
  CHECK(m[0] == m[1]);
}

TEST_CASE("source sets parse and print") {
  const SourceSet s = SourceSet::parse("MC+G");
  CHECK(s.gradient);
  CHECK(s.dropout);
  CHECK_FALSE(s.score);
  CHECK(s.str() == "G+MC");
  CHECK(SourceSet::parse("score").str() == "score");
  CHECK_THROWS_AS(SourceSet::parse("G+"), ValidationError);
  CHECK_THROWS_AS(SourceSet::parse("entropy"), ValidationError);
}

TEST_CASE("gradient column layout") {
  const auto cols = gradient_columns(HeadKind::kYolo, GradDepth::kLastTwo);
  REQUIRE(cols.size() == 36);
  CHECK(cols.front() == "loc.T.min");
  CHECK(cols[6] == "loc.T-1.min");
  CHECK(cols.back() == "cls.T-1.norm2");
  CHECK(gradient_columns(HeadKind::kRetina, GradDepth::kLast).size() == 12);

  KernelGradient a{{1, -2}, {4}}, b{{0, 0}, {-1, 1}};
  const std::vector<KernelGradient> grads{a, b};
  const auto f = gradient_features(grads, GradDepth::kLastTwo);
  REQUIRE(f.size() == 24);
  CHECK(f[0] == -2);          // part 0, T, min
  CHECK(f[6 + 1] == 4);       // part 0, T-1, max
  CHECK(f[12 + 4] == 0);      // part 1, T, norm1
  CHECK(f[18 + 3] == 1);      // part 1, T-1, std
}

TEST_CASE("dropout statistics use the sample std") {
  const std::vector<std::vector<double>> samples{{1, 10}, {3, 10}, {5, 10}};
  const auto f = dropout_features(samples);
  REQUIRE(f.size() == 2 + 2 + 6);
  CHECK(f[0] == 3);
  CHECK(f[1] == 10);
  CHECK(f[2] == doctest::Approx(2.0));
  CHECK(f[3] == 0);
  CHECK(f[4 + 1] == doctest::Approx(2.0));  // max of the stds
  CHECK_THROWS_AS(dropout_features({{1.0}}), ValidationError);
  CHECK(dropout_columns(HeadKind::kYolo, 3).size() == 8 + 8 + 6);
}

TEST_CASE("feature selection follows the source set") {
  FeatureTable t;
  t.columns = {"loc.T.norm1", "loc.T.norm2", "loc.T.max", "mc.std.x"};
  BoxRecord r;
  r.image_id = "a";
  r.score = 0.7;
  r.features = {1, 2, 3, 4};
  t.rows.push_back(r);
  auto m = select_features(t, SourceSet::parse("norms2+score"));
  CHECK(m.columns == std::vector<std::string>{"loc.T.norm2", "score"});
  CHECK(m.rows[0] == std::vector<double>{2, 0.7});
  m = select_features(t, SourceSet::parse("norms12"));
  CHECK(m.columns.size() == 2);
  m = select_features(t, SourceSet::parse("G+MC"));
  CHECK(m.rows[0] == std::vector<double>{1, 2, 3, 4});

  FeatureTable no_mc = t;
  no_mc.columns.pop_back();
  for (auto& row : no_mc.rows) row.features.pop_back();
  CHECK_THROWS_AS(select_features(no_mc, SourceSet::parse("MC")), ValidationError);
  CHECK(t.schema_id() != no_mc.schema_id());
}

TEST_CASE("concatenation requires the same boxes") {
  FeatureTable a, b;
  a.columns = {"loc.T.max"};
  b.columns = {"mc.std.x"};
  BoxRecord r;
  r.image_id = "i";
  r.features = {1};
  a.rows = {r};
  r.features = {2};
  b.rows = {r};
  const FeatureTable c = concat_tables(a, b);
  CHECK(c.rows[0].features == std::vector<double>{1, 2});
  b.rows[0].box_index = 3;
  CHECK_THROWS_AS(concat_tables(a, b), ValidationError);
  CHECK_THROWS_AS(concat_tables(a, a), ValidationError);
}

TEST_CASE("synthetic corpus is deterministic and well formed") {
  SyntheticConfig cfg;
  cfg.num_images = 12;
  cfg.seed = 4;
  const SyntheticCorpus a = generate_synthetic_corpus(cfg);
  const SyntheticCorpus b = generate_synthetic_corpus(cfg);
  CHECK(a.images == b.images);
  CHECK(a.features == b.features);
  REQUIRE(a.images.size() == 12);
  for (const auto& s : a.images) CHECK_NOTHROW(validate_sample(s));
  CHECK(a.features.columns.size() == 36 + 22);
  for (const auto& r : a.features.rows) {
    CHECK(r.features.size() == a.features.columns.size());
    CHECK((r.label == 0 || r.label == 1));
    if (r.label == 1) CHECK(r.target_iou >= 0.5);
  }
  SyntheticConfig bad = cfg;
  bad.image_size = 50;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(latent_auroc_bound(6.0) == doctest::Approx(0.5 * std::erfc(-1.5)));
}
