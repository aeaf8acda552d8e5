#include <doctest.h>

#include <cmath>

#include "gradunc/common.hpp"
#include "gradunc/cross_validation.hpp"
#include "gradunc/gbt.hpp"

using namespace gradunc;

namespace {

void xor_data(Rng& rng, int n, std::vector<std::vector<double>>& x, std::vector<double>& y) {
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    x.push_back({a, b, rng.normal()});
    y.push_back((a > 0) != (b > 0) ? 1.0 : 0.0);
  }
}

}  // namespace

TEST_CASE("boosting fits an interaction and never increases the training loss") {
  Rng rng(12);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  xor_data(rng, 300, x, y);
  GbtConfig cfg;
  cfg.n_estimators = 40;
  cfg.max_depth = 3;
  std::vector<double> hist;
  const GbtModel m = train_gbt(cfg, x, y, "s", &hist);
  REQUIRE(hist.size() == 41);
  for (std::size_t i = 1; i < hist.size(); ++i) CHECK(hist[i] <= hist[i - 1]);
  const auto p = predict(m, x, "s");
  int correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += (p[i] > 0.5) == (y[i] > 0.5) ? 1 : 0;
  CHECK(correct >= 290);
  for (const Tree& t : m.trees) CHECK(t.depth() <= 3);
}

TEST_CASE("boosting starts from a zero margin") {
  std::vector<std::vector<double>> x{{0}, {1}, {2}, {3}};
  std::vector<double> y{1, 0, 0, 0};
  GbtConfig cfg;
  cfg.n_estimators = 0;
  const GbtModel m = train_gbt(cfg, x, y);
  CHECK(m.base_margin == 0);
  CHECK(predict(m, x)[0] == 0.5);
  cfg.n_estimators = 1;
  cfg.lambda = 0;
  cfg.min_child_weight = 0;
  cfg.learning_rate = 1;
  cfg.max_depth = 1;
  // One Newton step on the split x < 0.5: leaf -G/H = (0.5 - 1) / 0.25.
  const GbtModel one = train_gbt(cfg, x, y);
  CHECK(one.margin({0.0}) == doctest::Approx(2.0));
  CHECK(one.margin({3.0}) == doctest::Approx(-2.0));
}

TEST_CASE("squared-error models predict clipped values") {
  Rng rng(2);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 100; ++i) {
    x.push_back({rng.uniform()});
    y.push_back(x.back()[0]);
  }
  GbtConfig cfg;
  cfg.objective = Objective::kSquaredError;
  cfg.n_estimators = 50;
  const GbtModel m = train_gbt(cfg, x, y);
  for (double v : predict(m, {{-5.0}, {0.5}, {5.0}})) {
    CHECK(v >= 0);
    CHECK(v <= 1);
  }
  CHECK(predict(m, {{0.5}})[0] == doctest::Approx(0.5).epsilon(0.1));
  y[0] = 1.5;
  CHECK_THROWS_AS(train_gbt(cfg, x, y), ValidationError);
}

TEST_CASE("model JSON round trip is exact") {
  Rng rng(5);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  xor_data(rng, 120, x, y);
  GbtConfig cfg;
  cfg.n_estimators = 7;
  cfg.learning_rate = 0.1;
  const GbtModel m = train_gbt(cfg, x, y, "schema-a");
  const GbtModel back = model_from_json(model_to_json(m));
  CHECK(back == m);
  CHECK(predict(back, x, "schema-a") == predict(m, x, "schema-a"));
  CHECK_THROWS_AS(predict(m, x, "schema-b"), ValidationError);
  CHECK_THROWS_AS(model_from_json("{\"format\":\"other\"}"), ValidationError);
  CHECK_THROWS_AS(model_from_json("not json"), ValidationError);
}

TEST_CASE("invalid configurations and inputs are rejected") {
  GbtConfig cfg;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.max_depth = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  CHECK_THROWS_AS(train_gbt(cfg, {{1.0}, {2.0, 3.0}}, {0, 1}), ValidationError);
  CHECK_THROWS_AS(train_gbt(cfg, {{1.0}}, {0, 1}), ValidationError);
  CHECK_THROWS_AS(train_gbt(cfg, {{1.0}, {2.0}}, {0, 0.5}), ValidationError);
  CHECK_THROWS_AS(parse_objective("hinge"), ValidationError);
}

TEST_CASE("cross-validation folds are image-wise and cover every image") {
  std::vector<std::string> ids;
  for (int i = 0; i < 23; ++i) {
    ids.push_back("img" + std::to_string(i));
    ids.push_back("img" + std::to_string(i));  // two boxes per image
  }
  const CvPlan plan = make_cv_plan(ids, 5, 3);
  REQUIRE(plan.folds.size() == 5);
  std::size_t total = 0;
  for (const auto& f : plan.folds) {
    total += f.size();
    CHECK(f.size() >= 4);
    CHECK(f.size() <= 5);
  }
  CHECK(total == 23);
  CHECK(plan.fold_of("img7") >= 0);
  CHECK(plan.fold_of("nope") == -1);
  CHECK(make_cv_plan(ids, 5, 3).folds == plan.folds);

  const MeanStd ms = mean_std({1, 2, 3, 4});
  CHECK(ms.mean == 2.5);
  CHECK(ms.std == doctest::Approx(std::sqrt(1.25)));
}

TEST_CASE("cross-validated predictions are held out") {
  Rng rng(6);
  FeatureTable t;
  t.columns = {"loc.T.max", "loc.T.min"};
  for (int i = 0; i < 200; ++i) {
    BoxRecord r;
    r.image_id = "im" + std::to_string(i / 4);
    r.box_index = i % 4;
    r.label = rng.bernoulli(0.5) ? 1 : 0;
    r.score = rng.uniform(0.01, 0.99);
    r.target_iou = r.label ? rng.uniform(0.5, 1) : rng.uniform(0, 0.5);
    r.features = {r.label + 0.5 * rng.normal(), rng.normal()};
    t.rows.push_back(r);
  }
  std::vector<std::string> ids;
  for (const auto& r : t.rows) ids.push_back(r.image_id);
  GbtConfig cfg;
  cfg.n_estimators = 10;
  cfg.max_depth = 2;
  const CvResult res = cross_validate(cfg, t, SourceSet::parse("G"), MetaTask::kClassify,
                                      make_cv_plan(ids, 5, 1));
  CHECK(res.folds.size() == 5);
  CHECK(res.held_out.size() == t.rows.size());
  CHECK(res.auroc.mean > 0.75);
  CHECK(res.auroc.mean < 1.0);
}
