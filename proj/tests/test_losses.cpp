#include <doctest.h>

#include <cmath>

#include "gradunc/certify.hpp"
#include "gradunc/common.hpp"
#include "gradunc/losses.hpp"

using namespace gradunc;

namespace {

HeadSpec small_head(HeadKind kind, int classes) {
  HeadSpec h;
  h.kind = kind;
  h.num_classes = classes;
  h.anchors.grid_h = h.anchors.grid_w = 4;
  h.anchors.cell_size = 16;
  h.anchors.priors = {{20, 20}, {36, 28}};
  return h;
}

std::vector<GroundTruthObject> random_gt(Rng& rng, int n, int classes) {
  std::vector<GroundTruthObject> gt;
  for (int i = 0; i < n; ++i) {
    const double w = rng.uniform(12, 40), h = rng.uniform(12, 40);
    const double x = rng.uniform(0, 64 - w), y = rng.uniform(0, 64 - h);
    gt.push_back({{x, y, x + w, y + h}, 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)))});
  }
  return gt;
}

RawOutputs random_raw(Rng& rng, const HeadSpec& h) {
  RawOutputs raw;
  raw.dim = h.dim();
  raw.values.resize(static_cast<std::size_t>(h.anchors.num_anchors()) * raw.dim);
  for (double& v : raw.values) v = 0.8 * rng.normal();
  return raw;
}

// Distance of a raw entry from the nearest kink of its loss term.
double kink_distance(HeadKind kind, LossPart part, const RawOutputs& raw, const TargetMap& tm,
                     const AssignmentTensors& as, int a, int r) {
  if (part != LossPart::kLocalization || kind == HeadKind::kYolo || r >= 4) return 1.0;
  double d = 1.0;
  for (int t = 0; t < as.num_gt; ++t) {
    if (!as.is_obj(a, t)) continue;
    const double res = std::abs(raw.anchor(a)[static_cast<std::size_t>(r)] - tm.at(a, t)[static_cast<std::size_t>(r)]);
    d = std::min(d, kind == HeadKind::kRetina ? res : std::abs(res - kSmoothL1Beta));
  }
  return d;
}

}  // namespace

TEST_CASE("smooth l1 is continuous at beta") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(kSmoothL1Beta) == doctest::Approx(0.5 * kSmoothL1Beta));
  CHECK(smooth_l1(-kSmoothL1Beta * (1 + 1e-12)) == doctest::Approx(0.5 * kSmoothL1Beta));
  CHECK(smooth_l1(2.0) == doctest::Approx(2.0 - 0.5 * kSmoothL1Beta));
}

TEST_CASE("output layout") {
  CHECK(output_dim(HeadKind::kYolo, 3) == 8);
  CHECK(output_dim(HeadKind::kRpn, 3) == 5);
  CHECK(output_dim(HeadKind::kRoi, 3) == 8);
  CHECK(output_dim(HeadKind::kRetina, 3) == 7);
  CHECK(loss_parts(HeadKind::kYolo).size() == 3);
  CHECK(loss_parts(HeadKind::kRetina).size() == 2);
  CHECK(parse_head_kind(head_kind_name(HeadKind::kRoi)) == HeadKind::kRoi);
  CHECK_THROWS_AS(parse_head_kind("ssd"), ValidationError);
}

TEST_CASE("inverse_transform reproduces the instance") {
  Rng rng(3);
  for (HeadKind kind : {HeadKind::kYolo, HeadKind::kRpn, HeadKind::kRoi, HeadKind::kRetina}) {
    const HeadSpec h = small_head(kind, 3);
    const RawOutputs raw = random_raw(rng, h);
    const auto inst = transform_outputs(h, raw);
    for (int a : {0, 5, 17, 31}) {
      RawOutputs again = raw;
      const auto back = inverse_transform(h, inst[static_cast<std::size_t>(a)]);
      std::copy(back.begin(), back.end(), again.anchor(a).begin());
      const Instance re = transform_outputs(h, again)[static_cast<std::size_t>(a)];
      const Instance& want = inst[static_cast<std::size_t>(a)];
      CHECK(re.bbox.x_min == doctest::Approx(want.bbox.x_min).epsilon(1e-10));
      CHECK(re.bbox.y_max == doctest::Approx(want.bbox.y_max).epsilon(1e-10));
      CHECK(re.score == doctest::Approx(want.score).epsilon(1e-10));
      CHECK(re.class_id == want.class_id);
    }
  }
}

TEST_CASE("transform rejects non-finite outputs") {
  const HeadSpec h = small_head(HeadKind::kYolo, 2);
  Rng rng(1);
  RawOutputs raw = random_raw(rng, h);
  raw.values[9] = std::nan("");
  CHECK_THROWS_AS(transform_outputs(h, raw), ValidationError);
}

TEST_CASE("every object owns an anchor under the best-anchor rule") {
  Rng rng(5);
  for (HeadKind kind : {HeadKind::kYolo, HeadKind::kRpn, HeadKind::kRoi, HeadKind::kRetina}) {
    const HeadSpec h = small_head(kind, 2);
    const auto gt = random_gt(rng, 3, 2);
    const AssignmentTensors as = compute_assignments(h, gt);
    for (int t = 0; t < as.num_gt; ++t) {
      int owners = 0;
      for (int a = 0; a < as.num_anchors; ++a) {
        owners += as.is_obj(a, t) ? 1 : 0;
        CHECK_FALSE((as.is_obj(a, t) && as.is_noobj(a, t)));
      }
      CHECK(owners >= 1);
    }
  }
}

TEST_CASE("proposal sampling respects the batch split") {
  Rng rng(9);
  const HeadSpec h = small_head(HeadKind::kRpn, 1);
  const auto gt = random_gt(rng, 2, 1);
  const AssignmentTensors as = compute_assignments(h, gt);
  const SampleMasks m = sample_proposals(as, 8, 42);
  CHECK(m.num_pos() <= 4);
  CHECK(m.num_pos() + m.num_neg() <= 8);
  for (std::size_t a = 0; a < m.pos.size(); ++a) CHECK_FALSE((m.pos[a] && m.neg[a]));
  const SampleMasks again = sample_proposals(as, 8, 42);
  CHECK(again.pos == m.pos);
  CHECK(again.neg == m.neg);
}

TEST_CASE("loss derivatives match central differences of the loss") {
  for (HeadKind kind : {HeadKind::kYolo, HeadKind::kRpn, HeadKind::kRoi, HeadKind::kRetina}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      CAPTURE(head_kind_name(kind));
      CAPTURE(seed);
      Rng rng(seed * 31 + static_cast<std::uint64_t>(kind));
      const int classes = 1 + static_cast<int>(seed % 3);
      const HeadSpec h = small_head(kind, classes);
      const auto gt = random_gt(rng, 1 + static_cast<int>(seed % 3), classes);
      const AssignmentTensors as = compute_assignments(h, gt);
      const SampleMasks masks = sample_proposals(as, 16, seed);
      LossContext ctx;
      ctx.head = &h;
      ctx.gt = gt;
      ctx.assign = &as;
      if (kind == HeadKind::kRpn) ctx.masks = &masks;
      const TargetMap tm = encode_targets(ctx);
      RawOutputs raw = random_raw(rng, h);
      const OutputActivations act = activate_outputs(h, raw);
      for (LossPart part : loss_parts(kind)) {
        CAPTURE(loss_part_name(part));
        const LossPartDerivative d = loss_derivative(part, raw, act, tm, ctx);
        const double step = 1e-6;
        for (int a = 0; a < raw.num_anchors(); ++a) {
          for (int r = 0; r < raw.dim; ++r) {
            if (kink_distance(kind, part, raw, tm, as, a, r) < 1e-4) continue;
            double& z = raw.anchor(a)[static_cast<std::size_t>(r)];
            const double z0 = z;
            z = z0 + step;
            const double up = loss_value(part, raw, tm, ctx);
            z = z0 - step;
            const double down = loss_value(part, raw, tm, ctx);
            z = z0;
            const double fd = (up - down) / (2 * step);
            CHECK(d.at(a, r) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
          }
        }
      }
    }
  }
}

TEST_CASE("loss derivative flops stay within the table bound") {
  for (HeadKind kind : {HeadKind::kYolo, HeadKind::kRetina}) {
    Rng rng(77);
    const HeadSpec h = small_head(kind, 4);
    const auto gt = random_gt(rng, 3, 4);
    const AssignmentTensors as = compute_assignments(h, gt);
    LossContext ctx;
    ctx.head = &h;
    ctx.gt = gt;
    ctx.assign = &as;
    const TargetMap tm = encode_targets(ctx);
    const RawOutputs raw = random_raw(rng, h);
    const OutputActivations act = activate_outputs(h, raw);
    FlopLedger ledger;
    for (LossPart part : loss_parts(kind)) loss_derivative(part, raw, act, tm, ctx, &ledger);
    const OpCount bound = dloss_bound(kind, 4, static_cast<std::uint64_t>(raw.num_anchors()));
    CHECK(ledger.flops(Phase::kDloss) <= bound.flops);
    CHECK(ledger.evals(Phase::kDloss) <= bound.elementary_evals);
  }
}
