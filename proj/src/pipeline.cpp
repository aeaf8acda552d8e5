#include "gradunc/pipeline.hpp"

#include <algorithm>
#include <set>

#include "gradunc/common.hpp"

namespace gradunc {

MetaScores meta_scores_from(const FeatureTable& table, std::span<const double> probs) {
  if (probs.size() != table.rows.size()) {
    throw ValidationError("one probability per feature row is required");
  }
  MetaScores m;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    m[{table.rows[i].image_id, table.rows[i].box_index}] = probs[i];
  }
  return m;
}

MetaScores meta_scores_from_model(const GbtModel& model, const FeatureTable& table,
                                  const SourceSet& sources) {
  const FeatureMatrix x = select_features(table, sources);
  return meta_scores_from(table, predict(model, x.rows));
}

std::vector<PipelineImage> run_pipeline(PipelineMode mode, std::span<const ImageSample> samples,
                                        const MetaScores* meta, double threshold, double nms_iou,
                                        double prefilter) {
  if (mode == PipelineMode::kMetaFusion && meta == nullptr) {
    throw ValidationError("metafusion needs a meta classifier");
  }
  std::vector<PipelineImage> out;
  out.reserve(samples.size());
  for (const ImageSample& s : samples) {
    PipelineImage img;
    img.image_id = s.image_id;
    for (std::size_t i : nms_indices(s.predictions, prefilter, nms_iou)) {
      const Instance& inst = s.predictions[i];
      double conf = inst.score;
      if (mode == PipelineMode::kMetaFusion) {
        auto it = meta->find({s.image_id, static_cast<int>(i)});
        if (it == meta->end()) {
          throw ValidationError("no meta probability for box " + std::to_string(i) + " of image '" +
                                s.image_id + "'");
        }
        conf = it->second;
      }
      if (conf >= threshold) {
        img.box_index.push_back(static_cast<int>(i));
        img.kept.push_back(inst);
        img.confidence.push_back(conf);
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<EvalImage> eval_images(std::span<const PipelineImage> out,
                                   std::span<const ImageSample> samples) {
  if (out.size() != samples.size()) throw ValidationError("pipeline output/sample mismatch");
  std::vector<EvalImage> ev(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (out[k].image_id != samples[k].image_id) throw ValidationError("pipeline output/sample mismatch");
    ev[k].ground_truth = samples[k].ground_truth;
    for (std::size_t i = 0; i < out[k].kept.size(); ++i) {
      Instance inst = out[k].kept[i];
      inst.score = out[k].confidence[i];
      ev[k].predictions.push_back(std::move(inst));
    }
  }
  return ev;
}

namespace {

struct ScoredMatch {
  double confidence;
  bool tp;
};

// Greedy one-to-one matches of one class, per image.
std::vector<ScoredMatch> class_matches(std::span<const EvalImage> images, int class_id,
                                       double iou_threshold, long* num_gt) {
  std::vector<ScoredMatch> out;
  *num_gt = 0;
  for (const EvalImage& im : images) {
    ImageSample s;
    for (const auto& g : im.ground_truth) {
      if (g.class_id == class_id) s.ground_truth.push_back(g);
    }
    for (const auto& p : im.predictions) {
      if (p.class_id == class_id) s.predictions.push_back(p);
    }
    *num_gt += static_cast<long>(s.ground_truth.size());
    for (const MatchResult& r : match_tp_fp(s, iou_threshold)) {
      out.push_back({r.instance.score, r.label == MatchLabel::kTruePositive});
    }
  }
  return out;
}

}  // namespace

double mean_average_precision(std::span<const EvalImage> images, double iou_threshold) {
  std::set<int> classes;
  for (const EvalImage& im : images) {
    for (const auto& g : im.ground_truth) classes.insert(g.class_id);
  }
  if (classes.empty()) throw ValidationError("mAP needs at least one ground truth object");
  double sum = 0;
  for (int c : classes) {
    long npos = 0;
    std::vector<ScoredMatch> m = class_matches(images, c, iou_threshold, &npos);
    std::stable_sort(m.begin(), m.end(), [](const ScoredMatch& a, const ScoredMatch& b) {
      return a.confidence > b.confidence;
    });
    // (recall, precision) after each group of equal confidence.
    std::vector<double> rec, prec;
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < m.size();) {
      std::size_t j = i;
      while (j < m.size() && m[j].confidence == m[i].confidence) {
        (m[j].tp ? tp : fp) += 1;
        ++j;
      }
      rec.push_back(tp / static_cast<double>(npos));
      prec.push_back(tp / (tp + fp));
      i = j;
    }
    for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    double ap = 0, prev = 0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      ap += (rec[i] - prev) * prec[i];
      prev = rec[i];
    }
    sum += ap;
  }
  return sum / static_cast<double>(classes.size());
}

std::vector<double> threshold_grid(int n) {
  if (n < 1) throw ValidationError("threshold grid needs at least one step");
  std::vector<double> g;
  for (int i = 0; i <= n; ++i) g.push_back(static_cast<double>(i) / n);
  return g;
}

std::vector<double> map_sweep_grid() { return threshold_grid(40); }
std::vector<double> fpfn_sweep_grid() { return threshold_grid(10000); }

namespace {

void check_grid(const std::vector<double>& grid) {
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw ValidationError("threshold grid must be strictly increasing");
  }
}

}  // namespace

std::vector<SweepRow> sweep_map(PipelineMode mode, std::span<const ImageSample> samples,
                                const MetaScores* meta, const std::vector<double>& grid) {
  check_grid(grid);
  std::vector<SweepRow> rows;
  for (double t : grid) {
    const auto out = run_pipeline(mode, samples, meta, t);
    const auto ev = eval_images(out, samples);
    SweepRow r;
    r.threshold = t;
    r.map = mean_average_precision(ev);
    rows.push_back(r);
  }
  return rows;
}

std::vector<SweepRow> sweep_fp_fn(PipelineMode mode, std::span<const ImageSample> samples,
                                  const MetaScores* meta, const std::vector<double>& grid,
                                  int class_id) {
  check_grid(grid);
  // Ranking and thresholding use the same quantity, so raising the
  // threshold only drops the lowest-ranked boxes and leaves the greedy
  // matches of the rest unchanged: one matching at the lowest threshold
  // serves the whole grid.
  const double lowest = grid.empty() ? 0.0 : std::min(grid.front(), 0.0);
  const auto ev = eval_images(run_pipeline(mode, samples, meta, lowest), samples);
  long num_gt = 0;
  std::vector<ScoredMatch> m = class_matches(ev, class_id, kDefaultIouThreshold, &num_gt);
  std::vector<double> tp_conf, fp_conf;
  for (const auto& s : m) (s.tp ? tp_conf : fp_conf).push_back(s.confidence);
  std::sort(tp_conf.begin(), tp_conf.end());
  std::sort(fp_conf.begin(), fp_conf.end());
  auto at_least = [](const std::vector<double>& v, double t) {
    return static_cast<long>(v.end() - std::lower_bound(v.begin(), v.end(), t));
  };
  std::vector<SweepRow> rows;
  for (double t : grid) {
    SweepRow r;
    r.threshold = t;
    r.fp = at_least(fp_conf, t);
    r.fn = num_gt - at_least(tp_conf, t);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace gradunc
