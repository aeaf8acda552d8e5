#include "gradunc/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "gradunc/common.hpp"
#include "json.hpp"

namespace gradunc {

using nlohmann::json;

std::string_view objective_name(Objective o) {
  return o == Objective::kLogistic ? "logistic" : "squared_error";
}

Objective parse_objective(std::string_view name) {
  if (name == "logistic") return Objective::kLogistic;
  if (name == "squared_error") return Objective::kSquaredError;
  throw ValidationError("unknown objective '" + std::string(name) + "'");
}

void GbtConfig::validate() const {
  if (n_estimators < 0) throw ValidationError("n_estimators must be non-negative");
  if (max_depth < 1) throw ValidationError("max_depth must be at least 1");
  if (!(learning_rate > 0 && learning_rate <= 1)) {
    throw ValidationError("learning_rate must lie in (0, 1]");
  }
  if (!(min_child_weight >= 0) || !(lambda >= 0)) {
    throw ValidationError("min_child_weight and lambda must be non-negative");
  }
}

double Tree::predict(const std::vector<double>& x) const {
  int n = 0;
  while (!nodes[static_cast<std::size_t>(n)].is_leaf()) {
    const TreeNode& node = nodes[static_cast<std::size_t>(n)];
    n = x[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
  }
  return nodes[static_cast<std::size_t>(n)].value;
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

double GbtModel::margin(const std::vector<double>& x) const {
  double m = base_margin;
  for (const Tree& t : trees) m += t.predict(x);
  return m;
}

double objective_loss(Objective o, const std::vector<double>& margins,
                      const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (o == Objective::kLogistic) {
      // log(1 + e^m) - y m
      const double m = margins[i];
      s += std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))) - y[i] * m;
    } else {
      s += (margins[i] - y[i]) * (margins[i] - y[i]);
    }
  }
  return y.empty() ? 0.0 : s / static_cast<double>(y.size());
}

namespace {

struct NodeStats {
  double g = 0, h = 0;
};

struct SplitCandidate {
  double gain = 0;
  int feature = -1;
  double threshold = 0;
};

// Threshold strictly above lo and at most hi, so x < threshold separates.
double split_point(double lo, double hi) {
  const double mid = lo + 0.5 * (hi - lo);
  return mid > lo ? mid : hi;
}

Tree grow_tree(const GbtConfig& cfg, const std::vector<std::vector<double>>& x,
               const std::vector<std::vector<std::size_t>>& sorted, const std::vector<double>& g,
               const std::vector<double>& h) {
  const std::size_t n = x.size();
  const int num_features = n == 0 ? 0 : static_cast<int>(x.front().size());
  Tree tree;
  tree.nodes.emplace_back();
  std::vector<int> node_of(n, 0);
  std::vector<int> frontier = {0};
  std::vector<NodeStats> stats(1);
  for (std::size_t i = 0; i < n; ++i) {
    stats[0].g += g[i];
    stats[0].h += h[i];
  }
  auto leaf_value = [&](const NodeStats& s) {
    return -cfg.learning_rate * s.g / (s.h + cfg.lambda);
  };
  auto score = [&](double gs, double hs) { return gs * gs / (hs + cfg.lambda); };

  for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
    std::vector<SplitCandidate> best(tree.nodes.size());
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < frontier.size(); ++k) slot[static_cast<std::size_t>(frontier[k])] = static_cast<int>(k);
    const std::size_t nf = frontier.size();
    std::vector<double> gl(nf), hl(nf), prev(nf);
    std::vector<std::uint8_t> seen(nf);
    for (int f = 0; f < num_features; ++f) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (std::size_t i : sorted[static_cast<std::size_t>(f)]) {
        const int node = node_of[i];
        if (node < 0) continue;
        const int k = slot[static_cast<std::size_t>(node)];
        if (k < 0) continue;
        const double v = x[i][static_cast<std::size_t>(f)];
        const std::size_t ku = static_cast<std::size_t>(k);
        if (seen[ku] && v != prev[ku]) {
          const NodeStats& tot = stats[static_cast<std::size_t>(node)];
          const double gr = tot.g - gl[ku];
          const double hr = tot.h - hl[ku];
          if (hl[ku] >= cfg.min_child_weight && hr >= cfg.min_child_weight) {
            const double gain =
                score(gl[ku], hl[ku]) + score(gr, hr) - score(tot.g, tot.h);
            SplitCandidate& b = best[static_cast<std::size_t>(node)];
            if (gain > b.gain) b = {gain, f, split_point(prev[ku], v)};
          }
        }
        gl[ku] += g[i];
        hl[ku] += h[i];
        prev[ku] = v;
        seen[ku] = 1;
      }
    }
    std::vector<int> next;
    for (int node : frontier) {
      const SplitCandidate& b = best[static_cast<std::size_t>(node)];
      if (b.feature < 0) continue;
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stats.resize(tree.nodes.size());
      TreeNode& parent = tree.nodes[static_cast<std::size_t>(node)];
      parent.feature = b.feature;
      parent.threshold = b.threshold;
      parent.left = left;
      parent.right = left + 1;
      next.push_back(left);
      next.push_back(left + 1);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int node = node_of[i];
      if (node < 0) continue;
      const TreeNode& t = tree.nodes[static_cast<std::size_t>(node)];
      if (t.is_leaf()) {
        node_of[i] = -1;
        continue;
      }
      const int child = x[i][static_cast<std::size_t>(t.feature)] < t.threshold ? t.left : t.right;
      node_of[i] = child;
      stats[static_cast<std::size_t>(child)].g += g[i];
      stats[static_cast<std::size_t>(child)].h += h[i];
    }
    frontier = std::move(next);
  }
  for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
    if (tree.nodes[k].is_leaf()) tree.nodes[k].value = leaf_value(stats[k]);
  }
  return tree;
}

void check_matrix(const std::vector<std::vector<double>>& x, int num_features) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (static_cast<int>(x[i].size()) != num_features) {
      throw ValidationError("row " + std::to_string(i) + " has " + std::to_string(x[i].size()) +
                            " features, expected " + std::to_string(num_features));
    }
    for (double v : x[i]) {
      if (!std::isfinite(v)) throw ValidationError("row " + std::to_string(i) + " has a non-finite feature");
    }
  }
}

}  // namespace

GbtModel train_gbt(const GbtConfig& config, const std::vector<std::vector<double>>& x,
                   const std::vector<double>& y, const std::string& schema_id,
                   std::vector<double>* loss_history) {
  config.validate();
  if (x.size() != y.size()) {
    throw ValidationError("feature rows (" + std::to_string(x.size()) + ") and targets (" +
                          std::to_string(y.size()) + ") differ");
  }
  if (x.empty()) throw ValidationError("no training samples");
  const int num_features = static_cast<int>(x.front().size());
  check_matrix(x, num_features);
  for (double t : y) {
    if (config.objective == Objective::kLogistic ? !(t == 0 || t == 1) : !(t >= 0 && t <= 1)) {
      throw ValidationError(config.objective == Objective::kLogistic
                                ? "logistic targets must be 0 or 1"
                                : "regression targets must lie in [0, 1]");
    }
  }
  GbtModel model;
  model.config = config;
  model.feature_schema_id = schema_id;
  model.num_features = num_features;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  if (config.objective == Objective::kLogistic) {
    if (mean == 0 || mean == 1) {
      std::cerr << "warning: logistic targets contain a single class; fitting a constant model\n";
      model.base_margin = logit(std::clamp(mean, 1e-6, 1 - 1e-6));
      if (loss_history) {
        loss_history->assign(1, objective_loss(config.objective,
                                               std::vector<double>(y.size(), model.base_margin), y));
      }
      return model;
    }
    model.base_margin = 0.0;  // base score 0.5
  } else {
    model.base_margin = mean;
  }

  std::vector<std::vector<std::size_t>> sorted(static_cast<std::size_t>(num_features));
  for (int f = 0; f < num_features; ++f) {
    auto& idx = sorted[static_cast<std::size_t>(f)];
    idx.resize(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return x[a][static_cast<std::size_t>(f)] < x[b][static_cast<std::size_t>(f)];
    });
  }
  std::vector<double> margins(y.size(), model.base_margin);
  std::vector<double> g(y.size()), h(y.size());
  if (loss_history) loss_history->assign(1, objective_loss(config.objective, margins, y));
  for (int round = 0; round < config.n_estimators; ++round) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (config.objective == Objective::kLogistic) {
        const double p = sigmoid(margins[i]);
        g[i] = p - y[i];
        h[i] = p * (1 - p);
      } else {
        g[i] = margins[i] - y[i];
        h[i] = 1.0;
      }
    }
    Tree tree = grow_tree(config, x, sorted, g, h);
    for (std::size_t i = 0; i < y.size(); ++i) margins[i] += tree.predict(x[i]);
    model.trees.push_back(std::move(tree));
    if (loss_history) loss_history->push_back(objective_loss(config.objective, margins, y));
  }
  return model;
}

std::vector<double> predict(const GbtModel& model, const std::vector<std::vector<double>>& x,
                            const std::string& schema_id) {
  if (!schema_id.empty() && !model.feature_schema_id.empty() &&
      schema_id != model.feature_schema_id) {
    throw ValidationError("feature schema '" + schema_id + "' does not match the model's '" +
                          model.feature_schema_id + "'");
  }
  check_matrix(x, model.num_features);
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& row : x) {
    const double m = model.margin(row);
    out.push_back(model.config.objective == Objective::kLogistic ? sigmoid(m)
                                                                 : std::clamp(m, 0.0, 1.0));
  }
  return out;
}

namespace {

json node_to_json(const Tree& t, int n) {
  const TreeNode& node = t.nodes[static_cast<std::size_t>(n)];
  if (node.is_leaf()) return json{{"leaf", node.value}};
  return json{{"feature", node.feature},
              {"threshold", node.threshold},
              {"left", node_to_json(t, node.left)},
              {"right", node_to_json(t, node.right)}};
}

// Rebuilds breadth-first numbering so a round trip reproduces `nodes`.
Tree tree_from_json(const json& root, int num_features) {
  Tree t;
  std::vector<const json*> queue = {&root};
  t.nodes.emplace_back();
  for (std::size_t k = 0; k < queue.size(); ++k) {
    const json& j = *queue[k];
    if (j.contains("leaf")) {
      t.nodes[k].value = j.at("leaf").get<double>();
      continue;
    }
    TreeNode& node = t.nodes[k];
    node.feature = j.at("feature").get<int>();
    node.threshold = j.at("threshold").get<double>();
    if (node.feature < 0 || node.feature >= num_features) {
      throw ValidationError("tree split on feature " + std::to_string(node.feature) +
                            " outside 0.." + std::to_string(num_features - 1));
    }
    node.left = static_cast<int>(t.nodes.size());
    node.right = node.left + 1;
    queue.push_back(&j.at("left"));
    queue.push_back(&j.at("right"));
    t.nodes.emplace_back();
    t.nodes.emplace_back();
  }
  return t;
}

}  // namespace

std::string model_to_json(const GbtModel& model) {
  json trees = json::array();
  for (const Tree& t : model.trees) trees.push_back(node_to_json(t, 0));
  json j = {
      {"format", "gradunc-gbt"},
      {"version", 1},
      {"config",
       {{"n_estimators", model.config.n_estimators},
        {"max_depth", model.config.max_depth},
        {"learning_rate", model.config.learning_rate},
        {"min_child_weight", model.config.min_child_weight},
        {"lambda", model.config.lambda},
        {"objective", std::string(objective_name(model.config.objective))},
        {"seed", model.config.seed}}},
      {"base_margin", model.base_margin},
      {"feature_schema_id", model.feature_schema_id},
      {"num_features", model.num_features},
      {"trees", trees},
  };
  return j.dump(1) + "\n";
}

GbtModel model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("model JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "gradunc-gbt") {
      throw ValidationError("not a gradient-boosted tree model");
    }
    if (j.at("version").get<int>() != 1) {
      throw ValidationError("unsupported model version " + std::to_string(j.at("version").get<int>()));
    }
    GbtModel m;
    const json& c = j.at("config");
    m.config.n_estimators = c.at("n_estimators").get<int>();
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.min_child_weight = c.at("min_child_weight").get<double>();
    m.config.lambda = c.at("lambda").get<double>();
    m.config.objective = parse_objective(c.at("objective").get<std::string>());
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.base_margin = j.at("base_margin").get<double>();
    m.feature_schema_id = j.at("feature_schema_id").get<std::string>();
    m.num_features = j.at("num_features").get<int>();
    for (const json& t : j.at("trees")) m.trees.push_back(tree_from_json(t, m.num_features));
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model JSON: ") + e.what());
  }
}

}  // namespace gradunc
