#ifndef GRADUNC_METRICS_HPP_
#define GRADUNC_METRICS_HPP_

#include <span>

namespace gradunc {

// P(score+ > score-) + P(tie)/2 via average ranks. Throws ValidationError
// unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Step-wise area under the precision-recall curve over descending score
// thresholds; equal scores form one threshold group.
double average_precision(std::span<const double> scores, std::span<const int> labels);

// 1 - SS_res / SS_tot. Throws for fewer than two samples or constant targets.
double r_squared(std::span<const double> predictions, std::span<const double> targets);

}  // namespace gradunc

#endif  // GRADUNC_METRICS_HPP_
