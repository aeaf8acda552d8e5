#ifndef GRADUNC_CONV_HEAD_HPP_
#define GRADUNC_CONV_HEAD_HPP_

#include <cstdint>
#include <vector>

#include "gradunc/flop_ledger.hpp"
#include "gradunc/losses.hpp"

namespace gradunc {

// Channel-major feature maps [channel][row][col].
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, 0.0) {}

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  double& at(int c, int y, int x) { return values[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values[index(c, y, x)]; }
  // Zero outside the map (zero padding).
  double padded(int c, int y, int x) const {
    if (y < 0 || y >= height || x < 0 || x >= width) return 0.0;
    return at(c, y, x);
  }
};

// One stride-1, zero-padded convolution with (2*radius+1)^2 kernels.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int radius = 0;
  std::vector<double> kernel;  // [out][in][ky][kx]
  std::vector<double> bias;    // [out]
  double leaky_slope = 0.1;
  bool identity = false;       // output layer

  int side() const { return 2 * radius + 1; }
  int taps() const { return side() * side(); }
  std::size_t kernel_index(int d, int c, int ky, int kx) const {
    return ((static_cast<std::size_t>(d) * in_channels + c) * side() + ky) * side() + kx;
  }
  double activate(double psi) const { return identity || psi > 0 ? psi : leaky_slope * psi; }
  double activation_slope(double psi) const { return identity || psi > 0 ? 1.0 : leaky_slope; }
};

struct ConvHead {
  std::vector<ConvLayer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int input_channels() const { return layers.front().in_channels; }
  int output_channels() const { return layers.back().out_channels; }
  void validate() const;
};

// channels = (k_0, ..., k_T), radii = (s_1, ..., s_T). Weights are drawn
// N(0, scale^2 / fan_in), biases N(0, 0.1^2).
ConvHead make_random_head(const std::vector<int>& channels, const std::vector<int>& radii,
                          std::uint64_t seed, double scale = 1.0);

// Pre-activations psi[t] and activations phi[t]; phi[0] is the input and
// psi[0] is unused.
struct ForwardPass {
  std::vector<FeatureMap> psi;
  std::vector<FeatureMap> phi;

  const FeatureMap& output() const { return phi.back(); }
};

// psi = K * phi + b for one layer. Every output entry is one dense dot
// product over k_in (2s+1)^2 taps (padding taps included) plus the bias,
// charged as 2 k_in (2s+1)^2 flops to `phase` when a ledger is given.
FeatureMap convolve(const ConvLayer& layer, const FeatureMap& in, FlopLedger* ledger = nullptr,
                    Phase phase = Phase::kDropoutForward);

ForwardPass forward_pass(const ConvHead& head, const FeatureMap& input);
// phi_1 .. phi_T.
std::vector<FeatureMap> forward(const ConvHead& head, const FeatureMap& input);

FeatureMap random_feature_map(int channels, int height, int width, std::uint64_t seed);

// phi_T read as raw outputs: channel slot*D + r at (row, col) is component
// r of anchor (row*w + col)*A + slot.
RawOutputs raw_outputs_from(const FeatureMap& phi_t, const HeadSpec& spec);

// Anchor grid matching the output map: one cell per pixel.
AnchorGrid anchor_grid_for(const FeatureMap& phi_t, double cell_size,
                           const std::vector<AnchorPrior>& priors);

}  // namespace gradunc

#endif  // GRADUNC_CONV_HEAD_HPP_
