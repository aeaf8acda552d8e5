#ifndef GRADUNC_GBT_HPP_
#define GRADUNC_GBT_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace gradunc {

enum class Objective { kLogistic, kSquaredError };
std::string_view objective_name(Objective o);
Objective parse_objective(std::string_view name);

struct GbtConfig {
  int n_estimators = 30;
  int max_depth = 6;
  double learning_rate = 0.3;
  double min_child_weight = 1.0;
  double lambda = 1.0;  // L2 penalty on leaf values
  Objective objective = Objective::kLogistic;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GbtConfig&, const GbtConfig&) = default;
};

// Internal nodes send x[feature] < threshold left.
struct TreeNode {
  int feature = -1;
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;  // leaf output

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const std::vector<double>& x) const;
  int depth() const;
  friend bool operator==(const Tree&, const Tree&) = default;
};

struct GbtModel {
  GbtConfig config;
  double base_margin = 0;  // margin before the first tree
  std::vector<Tree> trees;
  std::string feature_schema_id;
  int num_features = 0;

  double margin(const std::vector<double>& x) const;
  friend bool operator==(const GbtModel&, const GbtModel&) = default;
};

// Exact greedy second-order boosting. Logistic targets must be 0/1,
// squared-error targets lie in [0, 1]. A logistic target with one class
// yields a constant model and a warning on stderr. When `loss_history` is
// given it receives the training loss before the first and after every
// round.
GbtModel train_gbt(const GbtConfig& config, const std::vector<std::vector<double>>& x,
                   const std::vector<double>& y, const std::string& schema_id = "",
                   std::vector<double>* loss_history = nullptr);

// Probabilities for logistic models, values clipped to [0, 1] otherwise.
std::vector<double> predict(const GbtModel& model, const std::vector<std::vector<double>>& x,
                            const std::string& schema_id = "");

// Mean training loss: log loss or squared error.
double objective_loss(Objective o, const std::vector<double>& margins,
                      const std::vector<double>& y);

std::string model_to_json(const GbtModel& model);
GbtModel model_from_json(std::string_view text);

}  // namespace gradunc

#endif  // GRADUNC_GBT_HPP_
