#ifndef GRADUNC_CERTIFY_HPP_
#define GRADUNC_CERTIFY_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gradunc/conv_head.hpp"
#include "gradunc/flop_ledger.hpp"
#include "gradunc/gradient.hpp"
#include "gradunc/losses.hpp"

namespace gradunc {

// Parameters of the closed-form counts. "prev" is layer T-1, "prev2" T-2.
struct FlopParams {
  int k_last = 1;
  int k_prev = 1;
  int k_prev2 = 1;
  int s_last = 1;
  int s_prev = 1;
  int height = 1;
  int width = 1;
  int num_boxes = 1;  // boxes compared when building one mask
  int num_samples = 1;

  int taps_last() const { return (2 * s_last + 1) * (2 * s_last + 1); }
  int taps_prev() const { return (2 * s_prev + 1) * (2 * s_prev + 1); }
  // n_T = h w k_T
  std::uint64_t n_last() const {
    return static_cast<std::uint64_t>(height) * width * k_last;
  }
};

// Closed forms as published:
//   mask_iou         12 n_boxes
//   grad_last        [2 k_T S_T - 1] [k_{T-1} S_T]
//   grad_prev        [2 k_T S_T - 1] [k_{T-1} S_{T-1}] + [2 k_{T-1} S_{T-1} - 1] [k_{T-2} S_{T-1}]
//   dropout_forward  (2 n_T k_{T-1} S_T - 1 + n_T) per sample
// with S = (2s+1)^2. Throws for kDloss/kPostprocess, which depend on the head.
std::uint64_t certified_flop_count(Phase phase, const FlopParams& p);

// Table bounds for D L^j over all loss parts, and for post-processing of
// n_samples dropout samples. For the two-stage detector the dloss bound
// covers rpn (n_out_rpn anchors) and roi (n_out anchors) together; pass
// kRpn or kRoi for either.
OpCount dloss_bound(HeadKind kind, int num_classes, std::uint64_t n_out,
                    std::uint64_t n_out_rpn = 0);
OpCount postprocess_bound(HeadKind kind, int num_classes, std::uint64_t n_out,
                          std::uint64_t n_samples);

// Dense collapsed product D L^j . grad psi_T on one interior patch: a row of
// k_T S entries (deltas of k_T channels at S positions) against the
// k_{T-1} S columns of the patch. Its output equals sum_d dL/dK_T[d] for
// the same deltas.
struct GradLastKernel {
  std::vector<MapDelta> deltas;
  FeatureMap phi_prev;
  std::vector<double> output;  // [c][ky][kx]
  FlopLedger ledger;
};
GradLastKernel grad_last_microkernel(int k_last, int k_prev, int s, std::uint64_t seed);

// Backprop step on one interior patch: the delta row times C^{K_T}
// restricted to the k_{T-1} S_{T-1} positions, Dalpha, then the collapsed
// product against phi_{T-2}. Dalpha costs one product per leaky entry,
// reported separately because the closed form omits it.
struct GradPrevKernel {
  std::vector<double> output;
  FlopLedger ledger;
  std::uint64_t activation_flops = 0;
};
GradPrevKernel grad_prev_microkernel(int k_last, int k_prev, int k_prev2, int s_last,
                                     int s_prev, std::uint64_t seed);

struct AffineFit {
  double slope = 0;
  double intercept = 0;
  double r_squared = 0;
};
// Least squares y = slope x + intercept; r_squared is 1 for an exact fit.
AffineFit fit_affine(const std::vector<double>& x, const std::vector<double>& y);

struct CertificationRow {
  std::string name;
  std::uint64_t measured = 0;
  std::uint64_t bound = 0;
  bool exact = false;  // equality required, otherwise measured <= bound
  bool pass() const { return exact ? measured == bound : measured <= bound; }
};

// Runs the micro-kernels and real code paths for `p` and compares them to
// the closed forms.
std::vector<CertificationRow> certification_report(const FlopParams& p, std::uint64_t seed);

}  // namespace gradunc

#endif  // GRADUNC_CERTIFY_HPP_
