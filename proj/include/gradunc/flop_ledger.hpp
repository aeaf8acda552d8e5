#ifndef GRADUNC_FLOP_LEDGER_HPP_
#define GRADUNC_FLOP_LEDGER_HPP_

#include <array>
#include <cstdint>
#include <string_view>

namespace gradunc {

enum class Phase : int {
  kMaskIou = 0,
  kDloss,
  kGradLast,
  kGradPrev,
  kDropoutForward,
  kPostprocess,
};
inline constexpr int kNumPhases = 6;

std::string_view phase_name(Phase phase);

struct OpCount {
  std::uint64_t flops = 0;
  std::uint64_t elementary_evals = 0;

  friend bool operator==(const OpCount&, const OpCount&) = default;
};

// Counts scalar arithmetic (+, -, *, / each 1) separately from elementary
// function evaluations (exp, log, sigmoid, pow). Comparisons, sign flips and
// selections are free.
class FlopLedger {
 public:
  void add_flops(Phase phase, std::uint64_t n) { counts_[index(phase)].flops += n; }
  void add_evals(Phase phase, std::uint64_t n) {
    counts_[index(phase)].elementary_evals += n;
  }

  const OpCount& operator[](Phase phase) const { return counts_[index(phase)]; }
  std::uint64_t flops(Phase phase) const { return counts_[index(phase)].flops; }
  std::uint64_t evals(Phase phase) const {
    return counts_[index(phase)].elementary_evals;
  }

  FlopLedger& operator+=(const FlopLedger& other);
  friend FlopLedger operator+(FlopLedger a, const FlopLedger& b) { return a += b; }
  friend bool operator==(const FlopLedger&, const FlopLedger&) = default;

 private:
  static constexpr std::size_t index(Phase p) { return static_cast<std::size_t>(p); }
  std::array<OpCount, kNumPhases> counts_{};
};

// Ledger-aware arithmetic helper: `ledger` may be null.
class Counter {
 public:
  Counter(FlopLedger* ledger, Phase phase) : ledger_(ledger), phase_(phase) {}
  void flops(std::uint64_t n) const {
    if (ledger_ != nullptr) ledger_->add_flops(phase_, n);
  }
  void evals(std::uint64_t n) const {
    if (ledger_ != nullptr) ledger_->add_evals(phase_, n);
  }

 private:
  FlopLedger* ledger_;
  Phase phase_;
};

}  // namespace gradunc

#endif  // GRADUNC_FLOP_LEDGER_HPP_
