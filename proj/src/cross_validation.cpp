#include "gradunc/cross_validation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "gradunc/common.hpp"
#include "gradunc/metrics.hpp"

namespace gradunc {

int CvPlan::fold_of(const std::string& image_id) const {
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (std::find(folds[f].begin(), folds[f].end(), image_id) != folds[f].end()) {
      return static_cast<int>(f);
    }
  }
  return -1;
}

CvPlan make_cv_plan(const std::vector<std::string>& image_ids, int num_folds,
                    std::uint64_t seed) {
  std::vector<std::string> ids = image_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (num_folds < 2) throw ValidationError("need at least two folds");
  if (static_cast<int>(ids.size()) < num_folds) {
    throw ValidationError(std::to_string(ids.size()) + " images cannot fill " +
                          std::to_string(num_folds) + " folds");
  }
  Rng rng(seed);
  rng.shuffle(ids);
  CvPlan plan;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(num_folds));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    plan.folds[i % static_cast<std::size_t>(num_folds)].push_back(ids[i]);
  }
  return plan;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(v.size()));
  return out;
}

CvResult cross_validate(const GbtConfig& config, const FeatureTable& table,
                        const SourceSet& sources, MetaTask task, const CvPlan& plan) {
  const FeatureMatrix m = select_features(table, sources);
  std::map<std::string, int> fold_index;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    for (const auto& id : plan.folds[f]) {
      if (!fold_index.emplace(id, static_cast<int>(f)).second) {
        throw ValidationError("image '" + id + "' appears in two folds");
      }
    }
  }
  std::vector<int> row_fold(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    auto it = fold_index.find(table.rows[i].image_id);
    if (it == fold_index.end()) {
      throw ValidationError("image '" + table.rows[i].image_id + "' is not in any fold");
    }
    row_fold[i] = it->second;
  }
  GbtConfig cfg = config;
  cfg.objective = task == MetaTask::kClassify ? Objective::kLogistic : Objective::kSquaredError;
  CvResult res;
  res.task = task;
  res.held_out.assign(table.rows.size(), 0.0);
  std::vector<double> aurocs, aps, r2s;
  for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
    std::vector<std::vector<double>> xtr, xte;
    std::vector<double> ytr, yte;
    std::vector<std::size_t> test_rows;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const double target =
          task == MetaTask::kClassify ? table.rows[i].label : table.rows[i].target_iou;
      if (row_fold[i] == f) {
        xte.push_back(m.rows[i]);
        yte.push_back(target);
        test_rows.push_back(i);
      } else {
        xtr.push_back(m.rows[i]);
        ytr.push_back(target);
      }
    }
    if (xtr.empty() || xte.empty()) {
      throw ValidationError("fold " + std::to_string(f) + " leaves no train or test boxes");
    }
    const GbtModel model = train_gbt(cfg, xtr, ytr);
    const std::vector<double> pred = predict(model, xte);
    for (std::size_t k = 0; k < test_rows.size(); ++k) res.held_out[test_rows[k]] = pred[k];
    FoldMetrics fm;
    fm.fold = f;
    fm.num_test = static_cast<int>(xte.size());
    if (task == MetaTask::kClassify) {
      std::vector<int> labels(yte.begin(), yte.end());
      fm.auroc = auroc(pred, labels);
      fm.ap = average_precision(pred, labels);
      aurocs.push_back(fm.auroc);
      aps.push_back(fm.ap);
    } else {
      fm.r2 = r_squared(pred, yte);
      r2s.push_back(fm.r2);
    }
    res.folds.push_back(fm);
  }
  res.auroc = mean_std(aurocs);
  res.ap = mean_std(aps);
  res.r2 = mean_std(r2s);
  return res;
}

}  // namespace gradunc
