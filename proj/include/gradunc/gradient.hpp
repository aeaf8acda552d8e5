#ifndef GRADUNC_GRADIENT_HPP_
#define GRADUNC_GRADIENT_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gradunc/conv_head.hpp"
#include "gradunc/detection.hpp"
#include "gradunc/flop_ledger.hpp"
#include "gradunc/losses.hpp"

namespace gradunc {

// Anchors whose boxes belong to cand[box]: score >= eps_s, same class and
// IoU >= eps_iou. `outputs` holds one instance per anchor. Every output box
// is compared against `box`, 12 flops each, charged to kMaskIou.
struct CandidateMask {
  std::vector<std::uint8_t> anchors;

  int size() const;
  bool empty() const { return size() == 0; }
};
CandidateMask candidate_mask(std::span<const Instance> outputs, const Instance& box,
                             double eps_s, double eps_iou = kDefaultIouThreshold,
                             FlopLedger* ledger = nullptr);

enum class GradDepth { kLast, kLastTwo };

// Per-image state shared by all boxes: the forward pass and the output
// activations it left behind.
struct GradientContext {
  const ConvHead* net = nullptr;
  const HeadSpec* spec = nullptr;
  const ForwardPass* pass = nullptr;
  RawOutputs raw;
  OutputActivations act;
  std::optional<AssignmentConfig> assignment;
  int rpn_batch_size = 256;
  std::uint64_t rpn_seed = 0;
};
GradientContext make_gradient_context(const ConvHead& net, const HeadSpec& spec,
                                      const ForwardPass& pass);

// The box re-encoded as pseudo ground truth, with its assignments, targets
// and (rpn) proposal samples restricted to the candidate anchors.
struct BoxLoss {
  std::vector<GroundTruthObject> gt;
  AssignmentTensors assign;
  std::optional<SampleMasks> masks;
  std::vector<std::uint8_t> anchor_mask;
  TargetMap targets;

  LossContext context(const HeadSpec& spec) const;
};
BoxLoss make_box_loss(const GradientContext& gc, const Instance& box, const CandidateMask& mask);

// Gradients w.r.t. K_T and (for kLastTwo) K_{T-1}, in ConvLayer kernel
// layout. Only kernel weights are differentiated, not biases.
struct KernelGradient {
  std::vector<double> last;
  std::vector<double> prev;  // empty for kLast
};

KernelGradient per_box_gradient(const GradientContext& gc, const Instance& box,
                                const CandidateMask& mask, LossPart part, GradDepth depth,
                                FlopLedger* ledger = nullptr);

// Sparse error signal on an output map: entry (channel, row, col, value).
struct MapDelta {
  int channel, y, x;
  double value;
};

// D1L laid out on phi_T positions.
std::vector<MapDelta> output_deltas(const LossPartDerivative& dl, const HeadSpec& spec,
                                    int width);

// dL/dK for a layer given deltas on its pre-activations and its input map.
// One product per (delta, tap) with a non-padding input, plus an addition
// whenever the gradient entry was already written; charged to `phase`.
std::vector<double> kernel_gradient(const ConvLayer& layer, const FeatureMap& input,
                                    std::span<const MapDelta> deltas, FlopLedger* ledger,
                                    Phase phase);

// Deltas on the pre-activations psi of the previous layer:
// Dalpha(psi) * (C^K)^T delta. Charged to `phase`.
std::vector<MapDelta> backprop_deltas(const ConvLayer& layer, const ConvLayer& prev_layer,
                                      const FeatureMap& prev_psi,
                                      std::span<const MapDelta> deltas, FlopLedger* ledger,
                                      Phase phase);

}  // namespace gradunc

#endif  // GRADUNC_GRADIENT_HPP_
