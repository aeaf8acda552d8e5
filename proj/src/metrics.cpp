#include "gradunc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gradunc/common.hpp"

namespace gradunc {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ValidationError("non-finite score");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels);
  const auto idx = order_by_score(scores, false);
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // Ranks i+1 .. j share their average.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        rank_sum += avg_rank;
        pos += 1;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw ValidationError("AuROC needs both classes");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels);
  const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw ValidationError("average precision needs a positive sample");
  const auto idx = order_by_score(scores, true);
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double r_squared(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw ValidationError("predictions and targets differ in length");
  }
  if (targets.size() < 2) throw ValidationError("R^2 needs at least two samples");
  double mean = 0;
  for (double t : targets) mean += t;
  mean /= static_cast<double>(targets.size());
  double ss_tot = 0, ss_res = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
    ss_res += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
  }
  if (ss_tot == 0) throw ValidationError("R^2 is undefined for constant targets");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace gradunc
