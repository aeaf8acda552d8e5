#include <doctest.h>

#include <sstream>

#include "gradunc/calibration.hpp"
#include "gradunc/common.hpp"
#include "oracles.hpp"

using namespace gradunc;

TEST_CASE("bins are left-open and right-closed") {
  CHECK(bin_index(0.0, 10) == 1);
  CHECK(bin_index(0.1, 10) == 1);
  CHECK(bin_index(0.10000000000000002, 10) == 2);
  CHECK(bin_index(0.3, 10) == 3);
  CHECK(bin_index(0.7, 10) == 7);
  CHECK(bin_index(1.0, 10) == 10);
  CHECK_THROWS_AS(bin_index(1.5, 10), ValidationError);
}

TEST_CASE("calibration errors equal a per-bin scan") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> conf;
    std::vector<int> labels;
    const int n = 1 + static_cast<int>(rng.below(200));
    for (int i = 0; i < n; ++i) {
      // Some confidences on bin edges.
      conf.push_back(rng.bernoulli(0.2) ? static_cast<double>(rng.below(11)) / 10 : rng.uniform());
      labels.push_back(rng.bernoulli(conf.back()) ? 1 : 0);
    }
    const auto e = calibration_errors(bin_reliability(conf, labels, 10));
    const auto want = oracle::calibration_scan(conf, labels, 10);
    CHECK(e.mce == doctest::Approx(want.mce).epsilon(1e-12));
    CHECK(e.ace == doctest::Approx(want.ace).epsilon(1e-12));
    CHECK(e.ece == doctest::Approx(want.ece).epsilon(1e-12));
  }
}

TEST_CASE("a perfectly calibrated bin has no error") {
  const std::vector<double> conf{0.75, 0.75, 0.75, 0.75};
  const std::vector<int> labels{1, 1, 1, 0};
  const auto e = calibration_errors(bin_reliability(conf, labels, 4));
  CHECK(e.mce == 0);
  CHECK_THROWS_AS(calibration_errors(ReliabilityBins{{ReliabilityBin{}}}), ValidationError);
}

TEST_CASE("reliability CSV round trip") {
  Rng rng(4);
  std::vector<double> conf;
  std::vector<int> labels;
  for (int i = 0; i < 97; ++i) {
    conf.push_back(rng.uniform());
    labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  const ReliabilityBins bins = bin_reliability(conf, labels, 15);
  std::stringstream ss;
  write_reliability_csv(ss, bins);
  CHECK(read_reliability_csv(ss) == bins);

  std::stringstream bad("bin_low,bin_high,count,acc,conf\n0,0.5,3,0.2\n");
  CHECK_THROWS_AS(read_reliability_csv(bad), ValidationError);
}
