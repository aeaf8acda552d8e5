#ifndef GRADUNC_CROSS_VALIDATION_HPP_
#define GRADUNC_CROSS_VALIDATION_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gradunc/features.hpp"
#include "gradunc/gbt.hpp"

namespace gradunc {

// Image-wise folds: every box of an image lands in the same fold.
struct CvPlan {
  std::vector<std::vector<std::string>> folds;
  std::uint64_t seed = 0;

  int fold_of(const std::string& image_id) const;  // -1 if absent
};

// Distinct image ids are sorted, shuffled with `seed` and dealt round-robin.
CvPlan make_cv_plan(const std::vector<std::string>& image_ids, int num_folds = 10,
                    std::uint64_t seed = 0);

enum class MetaTask { kClassify, kRegress };

struct FoldMetrics {
  int fold = 0;
  int num_test = 0;
  // Classification: AuROC and AP. Regression: R^2 in `r2`.
  double auroc = 0;
  double ap = 0;
  double r2 = 0;
};

struct MeanStd {
  double mean = 0;
  double std = 0;  // population std across folds
};

struct CvResult {
  MetaTask task = MetaTask::kClassify;
  std::vector<FoldMetrics> folds;
  MeanStd auroc, ap, r2;
  std::vector<double> held_out;  // out-of-fold prediction per table row
};

// Trains one model per fold on the other folds and evaluates it on the
// held-out boxes. Targets are the TP label (classify) or target IoU
// (regress). The objective is chosen from the task.
CvResult cross_validate(const GbtConfig& config, const FeatureTable& table,
                        const SourceSet& sources, MetaTask task, const CvPlan& plan);

MeanStd mean_std(const std::vector<double>& v);

}  // namespace gradunc

#endif  // GRADUNC_CROSS_VALIDATION_HPP_
