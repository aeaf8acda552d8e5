#include "gradunc/conv_head.hpp"

#include <cmath>
#include <string>

#include "gradunc/common.hpp"

namespace gradunc {

void ConvHead::validate() const {
  if (layers.empty()) throw ValidationError("conv head has no layers");
  for (std::size_t t = 0; t < layers.size(); ++t) {
    const ConvLayer& l = layers[t];
    const std::string where = "layer " + std::to_string(t + 1);
    if (l.in_channels <= 0 || l.out_channels <= 0 || l.radius < 0) {
      throw ValidationError(where + ": invalid shape");
    }
    if (l.kernel.size() != static_cast<std::size_t>(l.out_channels) * l.in_channels * l.taps() ||
        l.bias.size() != static_cast<std::size_t>(l.out_channels)) {
      throw ValidationError(where + ": kernel/bias size mismatch");
    }
    if (t > 0 && l.in_channels != layers[t - 1].out_channels) {
      throw ValidationError(where + ": expects " + std::to_string(l.in_channels) +
                            " input channels, previous layer gives " +
                            std::to_string(layers[t - 1].out_channels));
    }
    for (double v : l.kernel) {
      if (!std::isfinite(v)) throw ValidationError(where + ": non-finite kernel entry");
    }
    for (double v : l.bias) {
      if (!std::isfinite(v)) throw ValidationError(where + ": non-finite bias");
    }
  }
}

ConvHead make_random_head(const std::vector<int>& channels, const std::vector<int>& radii,
                          std::uint64_t seed, double scale) {
  if (channels.size() < 2 || radii.size() + 1 != channels.size()) {
    throw ValidationError("need T+1 channel counts and T radii");
  }
  Rng rng(seed);
  ConvHead head;
  for (std::size_t t = 0; t + 1 < channels.size(); ++t) {
    ConvLayer l;
    l.in_channels = channels[t];
    l.out_channels = channels[t + 1];
    l.radius = radii[t];
    l.identity = t + 2 == channels.size();
    const double sd = scale / std::sqrt(static_cast<double>(l.in_channels * l.taps()));
    l.kernel.resize(static_cast<std::size_t>(l.out_channels) * l.in_channels * l.taps());
    for (double& v : l.kernel) v = sd * rng.normal();
    l.bias.resize(static_cast<std::size_t>(l.out_channels));
    for (double& v : l.bias) v = 0.1 * rng.normal();
    head.layers.push_back(std::move(l));
  }
  head.validate();
  return head;
}

FeatureMap convolve(const ConvLayer& layer, const FeatureMap& in, FlopLedger* ledger,
                    Phase phase) {
  if (in.channels != layer.in_channels) {
    throw ValidationError("convolution expects " + std::to_string(layer.in_channels) +
                          " channels, got " + std::to_string(in.channels));
  }
  FeatureMap out(layer.out_channels, in.height, in.width);
  const int side = layer.side();
  const int s = layer.radius;
  for (int d = 0; d < layer.out_channels; ++d) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double acc = 0;
        for (int c = 0; c < layer.in_channels; ++c) {
          for (int ky = 0; ky < side; ++ky) {
            for (int kx = 0; kx < side; ++kx) {
              acc += layer.kernel[layer.kernel_index(d, c, ky, kx)] *
                     in.padded(c, y + ky - s, x + kx - s);
            }
          }
        }
        out.at(d, y, x) = acc + layer.bias[static_cast<std::size_t>(d)];
      }
    }
  }
  // k_in S products, k_in S - 1 additions and the bias per output entry.
  Counter(ledger, phase)
      .flops(static_cast<std::uint64_t>(out.values.size()) * 2 * layer.in_channels * layer.taps());
  return out;
}

ForwardPass forward_pass(const ConvHead& head, const FeatureMap& input) {
  head.validate();
  ForwardPass pass;
  pass.psi.emplace_back();
  pass.phi.push_back(input);
  for (int t = 0; t < head.num_layers(); ++t) {
    const ConvLayer& l = head.layers[static_cast<std::size_t>(t)];
    FeatureMap psi;
    try {
      psi = convolve(l, pass.phi.back());
    } catch (const ValidationError& e) {
      throw ValidationError("layer " + std::to_string(t + 1) + ": " + e.what());
    }
    FeatureMap phi = psi;
    for (double& v : phi.values) v = l.activate(v);
    pass.psi.push_back(std::move(psi));
    pass.phi.push_back(std::move(phi));
  }
  return pass;
}

std::vector<FeatureMap> forward(const ConvHead& head, const FeatureMap& input) {
  ForwardPass pass = forward_pass(head, input);
  return {pass.phi.begin() + 1, pass.phi.end()};
}

FeatureMap random_feature_map(int channels, int height, int width, std::uint64_t seed) {
  FeatureMap m(channels, height, width);
  Rng rng(seed);
  for (double& v : m.values) v = rng.normal();
  return m;
}

RawOutputs raw_outputs_from(const FeatureMap& phi_t, const HeadSpec& spec) {
  const int dim = spec.dim();
  const int per_cell = spec.anchors.anchors_per_cell();
  if (phi_t.channels != dim * per_cell) {
    throw ValidationError("output map has " + std::to_string(phi_t.channels) +
                          " channels, head needs " + std::to_string(dim * per_cell));
  }
  if (phi_t.height != spec.anchors.grid_h || phi_t.width != spec.anchors.grid_w) {
    throw ValidationError("output map size does not match the anchor grid");
  }
  RawOutputs raw;
  raw.dim = dim;
  raw.values.resize(static_cast<std::size_t>(spec.anchors.num_anchors()) * dim);
  for (int y = 0; y < phi_t.height; ++y) {
    for (int x = 0; x < phi_t.width; ++x) {
      for (int slot = 0; slot < per_cell; ++slot) {
        const int a = (y * phi_t.width + x) * per_cell + slot;
        for (int r = 0; r < dim; ++r) {
          raw.values[static_cast<std::size_t>(a) * dim + r] = phi_t.at(slot * dim + r, y, x);
        }
      }
    }
  }
  return raw;
}

AnchorGrid anchor_grid_for(const FeatureMap& phi_t, double cell_size,
                           const std::vector<AnchorPrior>& priors) {
  AnchorGrid g;
  g.grid_h = phi_t.height;
  g.grid_w = phi_t.width;
  g.cell_size = cell_size;
  g.priors = priors;
  g.validate();
  return g;
}

}  // namespace gradunc
