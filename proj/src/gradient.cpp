#include "gradunc/gradient.hpp"

#include <algorithm>

#include "gradunc/common.hpp"

namespace gradunc {

int CandidateMask::size() const {
  return static_cast<int>(std::count(anchors.begin(), anchors.end(), std::uint8_t{1}));
}

CandidateMask candidate_mask(std::span<const Instance> outputs, const Instance& box,
                             double eps_s, double eps_iou, FlopLedger* ledger) {
  const Counter counter(ledger, Phase::kMaskIou);
  CandidateMask m;
  m.anchors.assign(outputs.size(), 0);
  for (std::size_t a = 0; a < outputs.size(); ++a) {
    const Instance& c = outputs[a];
    const double v = iou_counted(c.bbox, box.bbox, counter);
    if (c.score >= eps_s && c.class_id == box.class_id && v >= eps_iou) m.anchors[a] = 1;
  }
  return m;
}

GradientContext make_gradient_context(const ConvHead& net, const HeadSpec& spec,
                                      const ForwardPass& pass) {
  GradientContext gc;
  gc.net = &net;
  gc.spec = &spec;
  gc.pass = &pass;
  gc.raw = raw_outputs_from(pass.output(), spec);
  gc.act = activate_outputs(spec, gc.raw);
  gc.assignment = default_assignment(spec.kind);
  return gc;
}

LossContext BoxLoss::context(const HeadSpec& spec) const {
  LossContext ctx;
  ctx.head = &spec;
  ctx.gt = gt;
  ctx.assign = &assign;
  ctx.masks = masks ? &*masks : nullptr;
  ctx.anchor_mask = &anchor_mask;
  return ctx;
}

BoxLoss make_box_loss(const GradientContext& gc, const Instance& box, const CandidateMask& mask) {
  BoxLoss bl;
  bl.gt.push_back({box.bbox, box.class_id});
  bl.assign = compute_assignments(*gc.spec, bl.gt, gc.assignment);
  bl.anchor_mask = mask.anchors;
  if (gc.spec->kind == HeadKind::kRpn) {
    bl.masks = sample_proposals(bl.assign, gc.rpn_batch_size,
                                mix_seed(gc.rpn_seed, static_cast<std::uint64_t>(box.anchor_index)),
                                &bl.anchor_mask);
  }
  bl.targets = encode_targets(bl.context(*gc.spec));
  return bl;
}

std::vector<MapDelta> output_deltas(const LossPartDerivative& dl, const HeadSpec& spec,
                                    int width) {
  const int per_cell = spec.anchors.anchors_per_cell();
  std::vector<MapDelta> out;
  for (const auto& [a, vals] : dl.values) {
    const int cell = a / per_cell;
    const int slot = a % per_cell;
    for (int r = 0; r < dl.dim; ++r) {
      const double v = vals[static_cast<std::size_t>(r)];
      if (v != 0.0) out.push_back({slot * dl.dim + r, cell / width, cell % width, v});
    }
  }
  return out;
}

std::vector<double> kernel_gradient(const ConvLayer& layer, const FeatureMap& input,
                                    std::span<const MapDelta> deltas, FlopLedger* ledger,
                                    Phase phase) {
  const Counter counter(ledger, phase);
  std::vector<double> grad(layer.kernel.size(), 0.0);
  std::vector<std::uint8_t> touched(layer.kernel.size(), 0);
  const int side = layer.side();
  const int s = layer.radius;
  for (const MapDelta& dm : deltas) {
    for (int c = 0; c < layer.in_channels; ++c) {
      for (int ky = 0; ky < side; ++ky) {
        const int y = dm.y + ky - s;
        if (y < 0 || y >= input.height) continue;
        for (int kx = 0; kx < side; ++kx) {
          const int x = dm.x + kx - s;
          if (x < 0 || x >= input.width) continue;
          const std::size_t k = layer.kernel_index(dm.channel, c, ky, kx);
          const double prod = dm.value * input.at(c, y, x);
          if (touched[k]) {
            grad[k] += prod;
            counter.flops(2);
          } else {
            grad[k] = prod;
            touched[k] = 1;
            counter.flops(1);
          }
        }
      }
    }
  }
  return grad;
}

std::vector<MapDelta> backprop_deltas(const ConvLayer& layer, const ConvLayer& prev_layer,
                                      const FeatureMap& prev_psi,
                                      std::span<const MapDelta> deltas, FlopLedger* ledger,
                                      Phase phase) {
  const Counter counter(ledger, phase);
  FeatureMap acc(prev_psi.channels, prev_psi.height, prev_psi.width);
  std::vector<std::uint8_t> touched(acc.values.size(), 0);
  const int side = layer.side();
  const int s = layer.radius;
  for (const MapDelta& dm : deltas) {
    for (int c = 0; c < layer.in_channels; ++c) {
      for (int ky = 0; ky < side; ++ky) {
        const int y = dm.y + ky - s;
        if (y < 0 || y >= acc.height) continue;
        for (int kx = 0; kx < side; ++kx) {
          const int x = dm.x + kx - s;
          if (x < 0 || x >= acc.width) continue;
          const std::size_t i = acc.index(c, y, x);
          const double prod = layer.kernel[layer.kernel_index(dm.channel, c, ky, kx)] * dm.value;
          if (touched[i]) {
            acc.values[i] += prod;
            counter.flops(2);
          } else {
            acc.values[i] = prod;
            touched[i] = 1;
            counter.flops(1);
          }
        }
      }
    }
  }
  std::vector<MapDelta> out;
  for (int c = 0; c < acc.channels; ++c) {
    for (int y = 0; y < acc.height; ++y) {
      for (int x = 0; x < acc.width; ++x) {
        const std::size_t i = acc.index(c, y, x);
        if (!touched[i]) continue;
        double v = acc.values[i];
        // Selection on the positive side, one product on the leaky side.
        if (!(prev_layer.identity || prev_psi.values[i] > 0)) {
          v *= prev_layer.leaky_slope;
          counter.flops(1);
        }
        if (v != 0.0) out.push_back({c, y, x, v});
      }
    }
  }
  return out;
}

KernelGradient per_box_gradient(const GradientContext& gc, const Instance& box,
                                const CandidateMask& mask, LossPart part, GradDepth depth,
                                FlopLedger* ledger) {
  const ConvHead& net = *gc.net;
  const int T = net.num_layers();
  if (depth == GradDepth::kLastTwo && T < 2) {
    throw ValidationError("two-layer gradients need at least two layers");
  }
  const ConvLayer& last = net.layers[static_cast<std::size_t>(T - 1)];
  KernelGradient g;
  g.last.assign(last.kernel.size(), 0.0);
  if (depth == GradDepth::kLastTwo) {
    g.prev.assign(net.layers[static_cast<std::size_t>(T - 2)].kernel.size(), 0.0);
  }
  if (mask.empty()) return g;

  const BoxLoss bl = make_box_loss(gc, box, mask);
  const LossContext ctx = bl.context(*gc.spec);
  const LossPartDerivative dl = loss_derivative(part, gc.raw, gc.act, bl.targets, ctx, ledger);
  // The output layer is linear, so D1L is already the delta on psi_T.
  const std::vector<MapDelta> d_t = output_deltas(dl, *gc.spec, gc.pass->output().width);
  const FeatureMap& phi_prev = gc.pass->phi[static_cast<std::size_t>(T - 1)];
  g.last = kernel_gradient(last, phi_prev, d_t, ledger, Phase::kGradLast);
  if (depth == GradDepth::kLastTwo) {
    const ConvLayer& prev = net.layers[static_cast<std::size_t>(T - 2)];
    const std::vector<MapDelta> d_prev =
        backprop_deltas(last, prev, gc.pass->psi[static_cast<std::size_t>(T - 1)], d_t, ledger,
                        Phase::kGradPrev);
    g.prev = kernel_gradient(prev, gc.pass->phi[static_cast<std::size_t>(T - 2)], d_prev, ledger,
                             Phase::kGradPrev);
  }
  return g;
}

}  // namespace gradunc
