#include "gradunc/flop_ledger.hpp"

namespace gradunc {

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::kMaskIou: return "mask_iou";
    case Phase::kDloss: return "dloss";
    case Phase::kGradLast: return "grad_last";
    case Phase::kGradPrev: return "grad_prev";
    case Phase::kDropoutForward: return "dropout_forward";
    case Phase::kPostprocess: return "postprocess";
  }
  return "unknown";
}

FlopLedger& FlopLedger::operator+=(const FlopLedger& other) {
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    counts_[i].flops += other.counts_[i].flops;
    counts_[i].elementary_evals += other.counts_[i].elementary_evals;
  }
  return *this;
}

}  // namespace gradunc
