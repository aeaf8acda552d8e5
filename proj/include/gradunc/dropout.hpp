#ifndef GRADUNC_DROPOUT_HPP_
#define GRADUNC_DROPOUT_HPP_

#include <cstdint>
#include <vector>

#include "gradunc/conv_head.hpp"
#include "gradunc/flop_ledger.hpp"

namespace gradunc {

inline constexpr int kDefaultDropoutSamples = 30;

// Inverted dropout on phi_{T-1}, then the residual pass through the last
// layer. Sample i draws its mask from mix_seed(seed, i). Only the residual
// convolution is charged (kDropoutForward); masking and rescaling are not.
std::vector<FeatureMap> mc_dropout_sample(const ConvHead& head, const FeatureMap& phi_prev,
                                          double rate, int n_samples, std::uint64_t seed,
                                          FlopLedger* ledger = nullptr);

// The dropout-masked copy of phi_prev used by sample `index`.
FeatureMap dropout_mask_apply(const FeatureMap& phi_prev, double rate, std::uint64_t seed,
                              int index);

}  // namespace gradunc

#endif  // GRADUNC_DROPOUT_HPP_
