#include "gradunc/dropout.hpp"

#include "gradunc/common.hpp"

namespace gradunc {

FeatureMap dropout_mask_apply(const FeatureMap& phi_prev, double rate, std::uint64_t seed,
                              int index) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  const double keep_scale = 1.0 / (1.0 - rate);
  FeatureMap out = phi_prev;
  for (double& v : out.values) v = rng.uniform() < rate ? 0.0 : v * keep_scale;
  return out;
}

std::vector<FeatureMap> mc_dropout_sample(const ConvHead& head, const FeatureMap& phi_prev,
                                          double rate, int n_samples, std::uint64_t seed,
                                          FlopLedger* ledger) {
  if (!(rate > 0 && rate < 1)) throw ValidationError("dropout rate must lie in (0, 1)");
  if (n_samples < 1) throw ValidationError("need at least one dropout sample");
  head.validate();
  const ConvLayer& last = head.layers.back();
  if (phi_prev.channels != last.in_channels) {
    throw ValidationError("dropout input has " + std::to_string(phi_prev.channels) +
                          " channels, last layer expects " + std::to_string(last.in_channels));
  }
  std::vector<FeatureMap> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    FeatureMap psi = convolve(last, dropout_mask_apply(phi_prev, rate, seed, i), ledger,
                              Phase::kDropoutForward);
    for (double& v : psi.values) v = last.activate(v);
    out.push_back(std::move(psi));
  }
  return out;
}

}  // namespace gradunc
