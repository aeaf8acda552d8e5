#include "gradunc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gradunc/common.hpp"

namespace gradunc {

namespace {

constexpr std::uint64_t kFeatureStream = 0xfea7u;
constexpr int kClassesForFeatures = 3;

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%05d", i);
  return buf;
}

BoundingBox random_box(Rng& rng, double size, double lo, double hi) {
  const double w = rng.uniform(lo, hi);
  const double h = rng.uniform(lo, hi);
  const double x = rng.uniform(0, size - w);
  const double y = rng.uniform(0, size - h);
  return {x, y, x + w, y + h};
}

std::vector<double> class_distribution(Rng& rng, int num_classes, int class_id) {
  std::vector<double> p(static_cast<std::size_t>(num_classes));
  for (int j = 1; j <= num_classes; ++j) {
    p[static_cast<std::size_t>(j - 1)] = j == class_id ? rng.uniform(0.5, 0.99) : rng.uniform(0.01, 0.45);
  }
  return p;
}

// Gradient-like magnitude of a noisy latent view: larger for lower z.
double magnitude(double v) { return std::exp(-0.5 * v); }

double gradient_column(const std::string& col, double v) {
  if (col.ends_with(".min")) return -magnitude(v);
  if (col.ends_with(".max")) return magnitude(v);
  if (col.ends_with(".mean")) return -0.1 * v;
  if (col.ends_with(".std")) return 0.5 * magnitude(v);
  if (col.ends_with(".norm1")) return 20.0 * magnitude(v);
  return 5.0 * magnitude(v);
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_images < 1) throw ValidationError("synthetic corpus needs at least one image");
  if (num_classes < 1) throw ValidationError("synthetic corpus needs at least one class");
  if (max_objects < 0 || predictions_per_object < 0 || decoys_per_image < 0) {
    throw ValidationError("object, prediction and decoy counts must be non-negative");
  }
  if ((max_objects == 0 || predictions_per_object == 0) && decoys_per_image == 0) {
    throw ValidationError("degenerate corpus: no objects and no decoys");
  }
  if (!(image_size > 100)) throw ValidationError("image size must exceed 100");
  if (!(wrong_class_rate >= 0 && wrong_class_rate <= 1)) {
    throw ValidationError("wrong-class rate must lie in [0, 1]");
  }
  if (!(signal >= 0) || !(dropout_signal >= 0) || !(view_noise >= 0) || !(score_noise >= 0)) {
    throw ValidationError("signal and noise levels must be non-negative");
  }
}

double latent_auroc_bound(double signal) {
  // Phi(signal / (2 sqrt 2)) = erfc(-signal / 4) / 2
  return 0.5 * std::erfc(-signal / 4.0);
}

std::vector<std::pair<int, MatchResult>> label_post_nms(const ImageSample& sample,
                                                        double prefilter, double nms_iou) {
  const std::vector<std::size_t> kept = nms_indices(sample.predictions, prefilter, nms_iou);
  ImageSample post;
  post.image_id = sample.image_id;
  post.ground_truth = sample.ground_truth;
  for (std::size_t i : kept) post.predictions.push_back(sample.predictions[i]);
  const std::vector<MatchResult> m = match_tp_fp(post);
  std::vector<std::pair<int, MatchResult>> out;
  for (std::size_t k = 0; k < kept.size(); ++k) out.emplace_back(static_cast<int>(kept[k]), m[k]);
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticCorpus corpus;
  corpus.features.columns = gradient_columns(HeadKind::kYolo, GradDepth::kLastTwo);
  const std::vector<std::string> mc_cols = dropout_columns(HeadKind::kYolo, kClassesForFeatures);
  corpus.features.columns.insert(corpus.features.columns.end(), mc_cols.begin(), mc_cols.end());
  const std::size_t num_grad = corpus.features.columns.size() - mc_cols.size();
  const int mc_dim = 5 + kClassesForFeatures;

  for (int i = 0; i < cfg.num_images; ++i) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    ImageSample s;
    s.image_id = image_name(i);
    s.width = s.height = cfg.image_size;
    const int n_obj = cfg.max_objects == 0 ? 0 : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects)));
    for (int o = 0; o < n_obj; ++o) {
      s.ground_truth.push_back({random_box(rng, cfg.image_size, 20, 80),
                                1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)))});
    }
    std::vector<std::pair<BoundingBox, int>> boxes;
    for (const auto& g : s.ground_truth) {
      for (int k = 0; k < cfg.predictions_per_object; ++k) {
        const CenterBox c = g.bbox.center_form();
        const double d = rng.uniform(0.0, 0.5);
        CenterBox j{c.cx + d * c.w * rng.normal(), c.cy + d * c.h * rng.normal(),
                    c.w * std::exp(0.5 * d * rng.normal()), c.h * std::exp(0.5 * d * rng.normal())};
        int cls = g.class_id;
        if (cfg.num_classes > 1 && rng.bernoulli(cfg.wrong_class_rate)) {
          cls = 1 + static_cast<int>((static_cast<std::uint64_t>(cls) +
                                      rng.below(static_cast<std::uint64_t>(cfg.num_classes - 1))) %
                                     static_cast<std::uint64_t>(cfg.num_classes));
        }
        boxes.emplace_back(clip_to_image(BoundingBox::from_center(j), s.width, s.height), cls);
      }
    }
    const int n_decoys = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * cfg.decoys_per_image) + 1));
    for (int k = 0; k < n_decoys; ++k) {
      boxes.emplace_back(random_box(rng, cfg.image_size, 10, 90),
                         1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes))));
    }
    for (const auto& [box, cls] : boxes) {
      if (!(box.area() > 0)) continue;
      double u = 0;
      for (const auto& g : s.ground_truth) {
        if (g.class_id == cls) u = std::max(u, iou(box, g.bbox));
      }
      Instance inst;
      inst.bbox = box;
      inst.class_id = cls;
      inst.score = std::clamp(
          sigmoid(cfg.score_slope * (u - 0.5) + cfg.score_bias + cfg.score_noise * rng.normal()),
          1e-6, 1 - 1e-6);
      inst.class_probs = class_distribution(rng, cfg.num_classes, cls);
      inst.anchor_index = static_cast<int>(s.predictions.size());
      s.predictions.push_back(std::move(inst));
    }

    Rng frng(mix_seed(mix_seed(cfg.seed, kFeatureStream), static_cast<std::uint64_t>(i)));
    for (const auto& [index, match] : label_post_nms(s, 1e-4, kDefaultIouThreshold)) {
      const Instance& inst = s.predictions[static_cast<std::size_t>(index)];
      const bool tp = match.label == MatchLabel::kTruePositive;
      const double c = tp ? match.matched_iou : 0.0;
      const double z_g = cfg.signal * (c - 0.25) + frng.normal();
      const double z_mc = cfg.dropout_signal * (c - 0.25) + frng.normal();
      BoxRecord row;
      row.image_id = s.image_id;
      row.box_index = index;
      row.score = inst.score;
      row.label = tp ? 1 : 0;
      row.target_iou = match.matched_iou;
      for (std::size_t k = 0; k < num_grad; ++k) {
        row.features.push_back(gradient_column(corpus.features.columns[k],
                                               z_g + cfg.view_noise * frng.normal()));
      }
      // Dropout sample statistics: means near the decoded box, spreads
      // driven by z_MC.
      const CenterBox cb = inst.bbox.center_form();
      std::vector<double> mean = {cb.cx, cb.cy, cb.w, cb.h, inst.score};
      for (int j = 0; j < kClassesForFeatures; ++j) {
        mean.push_back(j < cfg.num_classes ? inst.class_probs[static_cast<std::size_t>(j)] : 0.01);
      }
      std::vector<double> sd;
      for (int r = 0; r < mc_dim; ++r) {
        const double scale = r < 4 ? 2.0 : 0.05;
        sd.push_back(scale * magnitude(z_mc + cfg.view_noise * frng.normal()));
      }
      row.features.insert(row.features.end(), mean.begin(), mean.end());
      row.features.insert(row.features.end(), sd.begin(), sd.end());
      for (double m : apply_all_maps(sd, "mc.std")) row.features.push_back(m);
      corpus.features.rows.push_back(std::move(row));
    }
    corpus.images.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace gradunc
