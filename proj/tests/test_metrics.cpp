#include <doctest.h>

#include <vector>

#include "gradunc/common.hpp"
#include "gradunc/metrics.hpp"
#include "oracles.hpp"

using namespace gradunc;

namespace {

// Scores quantized to 0.05 so that ties are frequent.
void random_scores(Rng& rng, int n, std::vector<double>& s, std::vector<int>& l) {
  s.clear();
  l.clear();
  for (int i = 0; i < n; ++i) {
    const int y = rng.bernoulli(0.4) ? 1 : 0;
    s.push_back(static_cast<double>(static_cast<int>((rng.uniform() + 0.3 * y) * 20)) / 20);
    l.push_back(y);
  }
  l[0] = 1;
  l[1] = 0;
}

}  // namespace

TEST_CASE("auroc equals the pairwise count with half-credit ties") {
  Rng rng(1);
  std::vector<double> s;
  std::vector<int> l;
  for (int trial = 0; trial < 100; ++trial) {
    random_scores(rng, 2 + static_cast<int>(rng.below(60)), s, l);
    CHECK(auroc(s, l) == doctest::Approx(oracle::auroc_pairs(s, l)).epsilon(1e-12));
  }
  CHECK(auroc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}) == 1.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
}

TEST_CASE("average precision equals threshold enumeration") {
  Rng rng(2);
  std::vector<double> s;
  std::vector<int> l;
  for (int trial = 0; trial < 100; ++trial) {
    random_scores(rng, 2 + static_cast<int>(rng.below(60)), s, l);
    CHECK(average_precision(s, l) == doctest::Approx(oracle::ap_enumerate(s, l)).epsilon(1e-12));
  }
  // Ranking TP, FP, TP: precision 1 at recall 1/2 and 2/3 at recall 1.
  CHECK(average_precision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1}) ==
        doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
}

TEST_CASE("r squared equals the direct formula") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p, t;
    for (int i = 0; i < 30; ++i) {
      t.push_back(rng.uniform());
      p.push_back(t.back() + 0.2 * rng.normal());
    }
    CHECK(r_squared(p, t) == doctest::Approx(oracle::r2_direct(p, t)).epsilon(1e-12));
  }
  const std::vector<double> t{1, 2, 3};
  CHECK(r_squared(t, t) == 1.0);
  CHECK_THROWS_AS(r_squared(std::vector<double>{1, 1}, std::vector<double>{2, 2}), ValidationError);
}
