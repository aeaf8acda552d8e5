#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradunc/calibration.hpp"
#include "gradunc/certify.hpp"
#include "gradunc/common.hpp"
#include "gradunc/cross_validation.hpp"
#include "gradunc/features.hpp"
#include "gradunc/gbt.hpp"
#include "gradunc/io.hpp"
#include "gradunc/pipeline.hpp"
#include "gradunc/synthetic.hpp"
#include "gradunc/toy_detector.hpp"

using namespace gradunc;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  int format_version = kFormatVersion;
};

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    write_file(path, content);
  }
}

std::vector<ImageSample> load_detections(const std::string& path) {
  std::istringstream in(read_file(path));
  try {
    return read_detections_jsonl(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

FeatureTable load_features(const std::vector<std::string>& paths) {
  FeatureTable t;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::istringstream in(read_file(paths[i]));
    FeatureTable next;
    try {
      next = read_features_csv(in);
    } catch (const ValidationError& e) {
      throw ValidationError(paths[i] + ": " + e.what());
    }
    t = i == 0 ? std::move(next) : concat_tables(t, next);
  }
  return t;
}

MetaTask parse_task(const std::string& s) {
  if (s == "classify") return MetaTask::kClassify;
  if (s == "regress") return MetaTask::kRegress;
  throw ValidationError("unknown task '" + s + "'");
}

GradDepth parse_depth(const std::string& s) {
  if (s == "last") return GradDepth::kLast;
  if (s == "last_two") return GradDepth::kLastTwo;
  throw ValidationError("unknown gradient depth '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct GbtFlags {
  int estimators = 30;
  int depth = 6;
  double learning_rate = 0.3;

  void add(CLI::App* cmd) {
    cmd->add_option("--estimators", estimators, "boosting rounds")->capture_default_str();
    cmd->add_option("--max-depth", depth, "tree depth")->capture_default_str();
    cmd->add_option("--learning-rate", learning_rate, "shrinkage")->capture_default_str();
  }
  GbtConfig config(std::uint64_t seed) const {
    GbtConfig c;
    c.n_estimators = estimators;
    c.max_depth = depth;
    c.learning_rate = learning_rate;
    c.seed = seed;
    c.validate();
    return c;
  }
};

std::string metadata_line(const std::string& text) { return "# " + text + "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based uncertainty features and meta models for object detection"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "seed of every randomized step")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads for per-image work")->capture_default_str();
  app.add_option("--format-version", g.format_version, "file format version")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a corpus");
  std::string synth_mode = "synthetic", synth_det, synth_feat, synth_head, synth_kind = "yolo";
  SyntheticConfig scfg;
  int toy_images = 20;
  synth->add_option("--mode", synth_mode, "synthetic or toy")->capture_default_str();
  synth->add_option("--detections", synth_det, "output JSONL")->required();
  synth->add_option("--features", synth_feat, "output feature CSV (synthetic mode)");
  synth->add_option("--head", synth_head, "output head JSON (toy mode)");
  synth->add_option("--kind", synth_kind, "head kind (toy mode)")->capture_default_str();
  synth->add_option("--images", scfg.num_images, "number of images (synthetic mode)")->capture_default_str();
  synth->add_option("--toy-images", toy_images, "number of images (toy mode)")->capture_default_str();
  synth->add_option("--classes", scfg.num_classes, "number of classes")->capture_default_str();
  synth->add_option("--signal", scfg.signal, "gradient feature signal")->capture_default_str();
  synth->add_option("--dropout-signal", scfg.dropout_signal, "dropout feature signal")->capture_default_str();
  synth->add_option("--score-bias", scfg.score_bias, "score overconfidence (logit)")->capture_default_str();

  // gradients / dropout
  auto* grads = app.add_subcommand("gradients", "per-box gradient features of a toy head");
  auto* drop = app.add_subcommand("dropout", "per-box MC dropout features of a toy head");
  std::string head_path, det_path, feat_out, depth = "last_two";
  ToyFeatureOptions fopt;
  for (auto* cmd : {grads, drop}) {
    cmd->add_option("--head", head_path, "head JSON")->required();
    cmd->add_option("--detections", det_path, "detections JSONL")->required();
    cmd->add_option("--out", feat_out, "feature CSV (default stdout)");
  }
  grads->add_option("--depth", depth, "last or last_two")->capture_default_str();
  drop->add_option("--rate", fopt.dropout_rate, "dropout rate")->capture_default_str();
  drop->add_option("--samples", fopt.dropout_samples, "dropout samples")->capture_default_str();

  // meta models
  auto* train = app.add_subcommand("meta-train", "train a meta model on all rows");
  auto* eval = app.add_subcommand("meta-eval", "10-fold image-wise CV metrics");
  std::vector<std::string> feat_paths;
  std::string sources = "G", task = "classify", out_path;
  int folds = 10;
  GbtFlags gflags;
  for (auto* cmd : {train, eval}) {
    cmd->add_option("--features", feat_paths, "feature CSVs, concatenated column-wise")->required();
    cmd->add_option("--out", out_path, "output path (default stdout)");
    gflags.add(cmd);
  }
  train->add_option("--sources", sources, "feature sources, e.g. G+MC")->capture_default_str();
  train->add_option("--task", task, "classify or regress")->capture_default_str();
  std::string eval_sources = "score,G", eval_tasks = "classify,regress";
  eval->add_option("--sources", eval_sources, "comma-separated source sets")->capture_default_str();
  eval->add_option("--tasks", eval_tasks, "comma-separated tasks")->capture_default_str();
  eval->add_option("--folds", folds, "number of folds")->capture_default_str();

  // calibrate
  auto* calib = app.add_subcommand("calibrate", "reliability bins and calibration errors");
  std::string calib_prefix;
  int bins = 10;
  calib->add_option("--features", feat_paths, "feature CSVs")->required();
  calib->add_option("--sources", sources, "meta classifier sources")->capture_default_str();
  calib->add_option("--bins", bins, "number of bins")->capture_default_str();
  calib->add_option("--folds", folds, "number of folds")->capture_default_str();
  calib->add_option("--out-prefix", calib_prefix, "writes <prefix>_score.csv, <prefix>_meta.csv, <prefix>_summary.csv")
      ->required();
  gflags.add(calib);

  // fuse
  auto* fuse = app.add_subcommand("fuse", "MetaFusion vs score-threshold sweep");
  std::string sweep = "map", model_path;
  int class_id = 1;
  fuse->add_option("--detections", det_path, "detections JSONL")->required();
  fuse->add_option("--features", feat_paths, "feature CSVs")->required();
  fuse->add_option("--sources", sources, "meta classifier sources")->capture_default_str();
  fuse->add_option("--model", model_path, "trained model; default uses CV held-out probabilities");
  fuse->add_option("--sweep", sweep, "map or fpfn")->capture_default_str();
  fuse->add_option("--class", class_id, "class of the FP/FN sweep")->capture_default_str();
  fuse->add_option("--folds", folds, "number of folds")->capture_default_str();
  fuse->add_option("--out", out_path, "sweep CSV (default stdout)");
  gflags.add(fuse);

  // flops
  auto* flops = app.add_subcommand("flops", "FLOP certification report");
  FlopParams fp;
  fp.k_last = 4;
  fp.k_prev = 3;
  fp.k_prev2 = 2;
  fp.height = 5;
  fp.width = 5;
  fp.num_boxes = 100;
  flops->add_option("--k-last", fp.k_last, "channels of the output layer")->capture_default_str();
  flops->add_option("--k-prev", fp.k_prev, "channels of layer T-1")->capture_default_str();
  flops->add_option("--k-prev2", fp.k_prev2, "channels of layer T-2")->capture_default_str();
  flops->add_option("--s-last", fp.s_last, "kernel radius of the output layer")->capture_default_str();
  flops->add_option("--s-prev", fp.s_prev, "kernel radius of layer T-1")->capture_default_str();
  flops->add_option("--height", fp.height, "map height")->capture_default_str();
  flops->add_option("--width", fp.width, "map width")->capture_default_str();
  flops->add_option("--boxes", fp.num_boxes, "boxes compared for one mask")->capture_default_str();
  flops->add_option("--out", out_path, "report CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g.format_version != kFormatVersion) {
      throw ValidationError("unsupported --format-version " + std::to_string(g.format_version));
    }
    if (g.threads < 1) throw ValidationError("--threads must be positive");
    fopt.seed = g.seed;
    fopt.threads = g.threads;

    if (*synth) {
      std::ostringstream det;
      if (synth_mode == "synthetic") {
        scfg.seed = g.seed;
        const SyntheticCorpus c = generate_synthetic_corpus(scfg);
        write_detections_jsonl(det, c.images);
        if (!synth_feat.empty()) {
          std::ostringstream f;
          write_features_csv(f, c.features);
          write_file(synth_feat, f.str());
        }
      } else if (synth_mode == "toy") {
        if (synth_head.empty()) throw ValidationError("toy mode needs --head");
        const ToyDetector d = make_toy_detector(parse_head_kind(synth_kind), scfg.num_classes, g.seed);
        write_detections_jsonl(det, toy_corpus(d, toy_images, mix_seed(g.seed, 3), kScorePrefilter));
        write_file(synth_head, toy_detector_to_json(d));
      } else {
        throw ValidationError("unknown synth mode '" + synth_mode + "'");
      }
      write_file(synth_det, det.str());
    } else if (*grads || *drop) {
      const ToyDetector d = toy_detector_from_json(read_file(head_path));
      const auto samples = load_detections(det_path);
      fopt.depth = parse_depth(depth);
      const FeatureTable t = *grads ? toy_gradient_features(d, samples, fopt)
                                    : toy_dropout_features(d, samples, fopt);
      std::ostringstream f;
      write_features_csv(f, t);
      emit(feat_out, f.str());
    } else if (*train) {
      const FeatureTable t = load_features(feat_paths);
      const SourceSet src = SourceSet::parse(sources);
      const MetaTask mt = parse_task(task);
      GbtConfig cfg = gflags.config(g.seed);
      cfg.objective = mt == MetaTask::kClassify ? Objective::kLogistic : Objective::kSquaredError;
      const FeatureMatrix x = select_features(t, src);
      std::vector<double> y;
      for (const auto& r : t.rows) y.push_back(mt == MetaTask::kClassify ? r.label : r.target_iou);
      FeatureTable sel;
      sel.columns = x.columns;
      emit(out_path, model_to_json(train_gbt(cfg, x.rows, y, sel.schema_id())));
    } else if (*eval) {
      const FeatureTable t = load_features(feat_paths);
      std::vector<std::string> ids;
      for (const auto& r : t.rows) ids.push_back(r.image_id);
      const CvPlan plan = make_cv_plan(ids, folds, g.seed);
      std::ostringstream out;
      out << metadata_line("format_version=" + std::to_string(kFormatVersion));
      out << metadata_line(std::to_string(folds) + "-fold image-wise CV, population std over folds");
      out << "task,sources,metric,mean,std\n";
      for (const std::string& ts : split_list(eval_tasks)) {
        const MetaTask mt = parse_task(ts);
        for (const std::string& ss : split_list(eval_sources)) {
          const CvResult r = cross_validate(gflags.config(g.seed), t, SourceSet::parse(ss), mt, plan);
          auto row = [&](const char* metric, const MeanStd& m) {
            out << ts << ',' << ss << ',' << metric << ',' << format_double(m.mean) << ','
                << format_double(m.std) << '\n';
          };
          if (mt == MetaTask::kClassify) {
            row("auroc", r.auroc);
            row("ap", r.ap);
          } else {
            row("r2", r.r2);
          }
        }
      }
      emit(out_path, out.str());
    } else if (*calib) {
      const FeatureTable t = load_features(feat_paths);
      std::vector<std::string> ids;
      std::vector<double> score;
      std::vector<int> labels;
      for (const auto& r : t.rows) {
        ids.push_back(r.image_id);
        score.push_back(r.score);
        labels.push_back(r.label);
      }
      const CvResult r = cross_validate(gflags.config(g.seed), t, SourceSet::parse(sources),
                                        MetaTask::kClassify, make_cv_plan(ids, folds, g.seed));
      const ReliabilityBins bs = bin_reliability(score, labels, bins);
      const ReliabilityBins bm = bin_reliability(r.held_out, labels, bins);
      std::ostringstream fs, fm, sum;
      write_reliability_csv(fs, bs);
      write_reliability_csv(fm, bm);
      write_file(calib_prefix + "_score.csv", fs.str());
      write_file(calib_prefix + "_meta.csv", fm.str());
      sum << metadata_line("format_version=" + std::to_string(kFormatVersion));
      sum << metadata_line("meta confidences are " + std::to_string(folds) + "-fold held-out probabilities");
      sum << "confidence,mce,ace,ece\n";
      auto line = [&](const std::string& name, const ReliabilityBins& b) {
        const CalibrationErrors e = calibration_errors(b);
        sum << name << ',' << format_double(e.mce) << ',' << format_double(e.ace) << ','
            << format_double(e.ece) << '\n';
      };
      line("score", bs);
      line("meta:" + SourceSet::parse(sources).str(), bm);
      write_file(calib_prefix + "_summary.csv", sum.str());
      std::cout << sum.str();
    } else if (*fuse) {
      const auto samples = load_detections(det_path);
      const FeatureTable t = load_features(feat_paths);
      const SourceSet src = SourceSet::parse(sources);
      MetaScores meta;
      if (!model_path.empty()) {
        meta = meta_scores_from_model(model_from_json(read_file(model_path)), t, src);
      } else {
        std::vector<std::string> ids;
        for (const auto& r : t.rows) ids.push_back(r.image_id);
        const CvResult r = cross_validate(gflags.config(g.seed), t, src, MetaTask::kClassify,
                                          make_cv_plan(ids, folds, g.seed));
        meta = meta_scores_from(t, r.held_out);
      }
      std::vector<SweepSeries> series;
      const bool map = sweep == "map";
      if (!map && sweep != "fpfn") throw ValidationError("unknown sweep '" + sweep + "'");
      const auto grid = map ? map_sweep_grid() : fpfn_sweep_grid();
      for (PipelineMode mode : {PipelineMode::kBaseline, PipelineMode::kMetaFusion}) {
        SweepSeries s;
        s.source = mode == PipelineMode::kBaseline ? "score" : "meta:" + src.str();
        s.rows = map ? sweep_map(mode, samples, &meta, grid)
                     : sweep_fp_fn(mode, samples, &meta, grid, class_id);
        series.push_back(std::move(s));
      }
      std::vector<std::string> md = {"NMS then threshold; score pre-filter 1e-4, NMS IoU 0.5",
                                     "mAP: all-point interpolation, IoU 0.5, one-to-one greedy matching"};
      if (!map) md.push_back("class=" + std::to_string(class_id));
      std::ostringstream out;
      write_sweep_csv(out, map ? SweepKind::kMap : SweepKind::kFpFn, series, md);
      emit(out_path, out.str());
    } else if (*flops) {
      std::ostringstream out;
      out << metadata_line("format_version=" + std::to_string(kFormatVersion));
      out << "name,measured,bound,relation,pass\n";
      for (const CertificationRow& r : certification_report(fp, g.seed)) {
        out << r.name << ',' << r.measured << ',' << r.bound << ',' << (r.exact ? "==" : "<=")
            << ',' << (r.pass() ? "pass" : "FAIL") << '\n';
      }
      emit(out_path, out.str());
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
