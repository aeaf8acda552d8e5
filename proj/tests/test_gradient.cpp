#include <doctest.h>

#include "gradunc/common.hpp"
#include "gradunc/conv_head.hpp"
#include "gradunc/gradient.hpp"
#include "oracles.hpp"

using namespace gradunc;

TEST_CASE("convolution matches a direct sum") {
  const ConvHead net = make_random_head({2, 3}, {1}, 4);
  const FeatureMap in = random_feature_map(2, 5, 4, 8);
  const FeatureMap out = convolve(net.layers[0], in);
  const ConvLayer& l = net.layers[0];
  for (int d = 0; d < 3; ++d) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 4; ++x) {
        double s = l.bias[static_cast<std::size_t>(d)];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              s += l.kernel[l.kernel_index(d, c, ky, kx)] * in.padded(c, y + ky - 1, x + kx - 1);
        CHECK(out.at(d, y, x) == doctest::Approx(s).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("convolution charges 2 k_in S flops per output entry") {
  const ConvHead net = make_random_head({3, 2}, {1}, 1);
  FlopLedger ledger;
  convolve(net.layers[0], random_feature_map(3, 4, 4, 2), &ledger, Phase::kDropoutForward);
  CHECK(ledger.flops(Phase::kDropoutForward) == 2ull * 3 * 9 * 2 * 16);
}

TEST_CASE("kernel gradient of a single delta is the input patch") {
  const ConvHead net = make_random_head({2, 1}, {1}, 3);
  const FeatureMap in = random_feature_map(2, 4, 4, 6);
  const std::vector<MapDelta> deltas{{0, 1, 2, 2.5}};
  const auto g = kernel_gradient(net.layers[0], in, deltas, nullptr, Phase::kGradLast);
  const ConvLayer& l = net.layers[0];
  for (int c = 0; c < 2; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        CHECK(g[l.kernel_index(0, c, ky, kx)] == 2.5 * in.padded(c, 1 + ky - 1, 2 + kx - 1));
}

TEST_CASE("candidate mask agrees with candidate indices") {
  Rng rng(21);
  auto pool = oracle::random_instances(rng, 40, 2, 80);
  for (int i = 0; i < 10; ++i) {
    const Instance& box = pool[rng.below(pool.size())];
    FlopLedger ledger;
    const CandidateMask m = candidate_mask(pool, box, 0.2, 0.5, &ledger);
    const auto idx = candidate_indices(box, pool, 0.2, 0.5);
    CHECK(m.size() == static_cast<int>(idx.size()));
    for (std::size_t k : idx) CHECK(m.anchors[k] == 1);
    CHECK(ledger.flops(Phase::kMaskIou) == 12u * pool.size());
  }
}

TEST_CASE("per-box gradients match finite differences on every head") {
  for (HeadKind kind : {HeadKind::kYolo, HeadKind::kRpn, HeadKind::kRoi, HeadKind::kRetina}) {
    CAPTURE(head_kind_name(kind));
    const auto setup = oracle::fd_setup(kind, 2, 5);
    for (const auto& r : oracle::fd_check(setup, 5)) {
      CAPTURE(loss_part_name(r.part));
      CHECK(r.max_rel_err < 1e-5);
    }
  }
}
