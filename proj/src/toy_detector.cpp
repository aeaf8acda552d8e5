#include "gradunc/toy_detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "gradunc/common.hpp"
#include "gradunc/dropout.hpp"
#include "gradunc/synthetic.hpp"

namespace gradunc {

namespace {

using Json = nlohmann::ordered_json;

constexpr int kGrid = 8;
constexpr double kCell = 16;
constexpr int kInputChannels = 3;
constexpr const char* kFormat = "gradunc-toy-head";

template <typename T>
T get(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("head JSON: missing '") + key + "'");
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw ValidationError(std::string("head JSON: bad '") + key + "'");
  }
}

std::uint64_t image_stream(const std::string& image_id) { return hash_string(image_id); }

}  // namespace

FeatureMap ToyDetector::input_for(const std::string& image_id) const {
  return random_feature_map(net.input_channels(), grid(), grid(),
                            mix_seed(input_seed, image_stream(image_id)));
}

ToyDetector make_toy_detector(HeadKind kind, int num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw ValidationError("need at least one class");
  ToyDetector det;
  det.spec.kind = kind;
  det.spec.num_classes = num_classes;
  det.spec.anchors.grid_h = det.spec.anchors.grid_w = kGrid;
  det.spec.anchors.cell_size = kCell;
  det.spec.anchors.priors = {{24, 24}, {48, 40}};
  const int out = det.spec.dim() * det.spec.anchors.anchors_per_cell();
  det.net = make_random_head({kInputChannels, 8, 16, out}, {1, 1, 1}, mix_seed(seed, 1));
  det.input_seed = mix_seed(seed, 2);
  return det;
}

std::string toy_detector_to_json(const ToyDetector& det) {
  Json j;
  j["format"] = kFormat;
  j["format_version"] = 1;
  j["kind"] = std::string(head_kind_name(det.spec.kind));
  j["classes"] = det.spec.num_classes;
  j["grid"] = det.grid();
  j["cell"] = det.spec.anchors.cell_size;
  Json priors = Json::array();
  for (const auto& p : det.spec.anchors.priors) priors.push_back(Json::array({p.w, p.h}));
  j["priors"] = priors;
  j["input_seed"] = det.input_seed;
  Json layers = Json::array();
  for (const ConvLayer& l : det.net.layers) {
    Json e;
    e["in"] = l.in_channels;
    e["out"] = l.out_channels;
    e["radius"] = l.radius;
    e["leaky_slope"] = l.leaky_slope;
    e["identity"] = l.identity;
    e["kernel"] = l.kernel;
    e["bias"] = l.bias;
    layers.push_back(std::move(e));
  }
  j["layers"] = layers;
  return j.dump() + "\n";
}

ToyDetector toy_detector_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("head JSON: ") + e.what());
  }
  if (!j.is_object() || get<std::string>(j, "format") != kFormat) {
    throw ValidationError("not a toy head document");
  }
  if (get<int>(j, "format_version") != 1) throw ValidationError("unsupported head format_version");
  ToyDetector det;
  det.spec.kind = parse_head_kind(get<std::string>(j, "kind"));
  det.spec.num_classes = get<int>(j, "classes");
  if (det.spec.num_classes < 1) throw ValidationError("head JSON: classes must be positive");
  det.spec.anchors.grid_h = det.spec.anchors.grid_w = get<int>(j, "grid");
  det.spec.anchors.cell_size = get<double>(j, "cell");
  for (const auto& p : get<std::vector<std::vector<double>>>(j, "priors")) {
    if (p.size() != 2) throw ValidationError("head JSON: prior needs w and h");
    det.spec.anchors.priors.push_back({p[0], p[1]});
  }
  det.spec.anchors.validate();
  det.input_seed = get<std::uint64_t>(j, "input_seed");
  for (const Json& e : get<Json>(j, "layers")) {
    ConvLayer l;
    l.in_channels = get<int>(e, "in");
    l.out_channels = get<int>(e, "out");
    l.radius = get<int>(e, "radius");
    l.leaky_slope = get<double>(e, "leaky_slope");
    l.identity = get<bool>(e, "identity");
    l.kernel = get<std::vector<double>>(e, "kernel");
    l.bias = get<std::vector<double>>(e, "bias");
    det.net.layers.push_back(std::move(l));
  }
  if (det.net.layers.empty()) throw ValidationError("head JSON: no layers");
  det.net.validate();
  if (det.net.output_channels() != det.spec.dim() * det.spec.anchors.anchors_per_cell()) {
    throw ValidationError("head JSON: output channels do not match kind, classes and priors");
  }
  return det;
}

ImageSample toy_detect(const ToyDetector& det, const std::string& image_id,
                       std::vector<GroundTruthObject> ground_truth, double prefilter) {
  const ForwardPass pass = forward_pass(det.net, det.input_for(image_id));
  const RawOutputs raw = raw_outputs_from(pass.output(), det.spec);
  const std::vector<Instance> all = transform_outputs(det.spec, raw);
  ImageSample s;
  s.image_id = image_id;
  s.width = s.height = det.image_size();
  s.ground_truth = std::move(ground_truth);
  for (std::size_t a = 0; a < all.size(); ++a) {
    if (!(all[a].score >= prefilter)) continue;
    Instance inst = all[a];
    inst.bbox = clip_to_image(inst.bbox, s.width, s.height);
    if (!(inst.bbox.area() > 0)) continue;
    const auto r = raw.anchor(static_cast<int>(a));
    inst.raw_outputs.assign(r.begin(), r.end());
    s.predictions.push_back(std::move(inst));
  }
  validate_sample(s);
  return s;
}

std::vector<ImageSample> toy_corpus(const ToyDetector& det, int num_images, std::uint64_t seed,
                                    double prefilter) {
  if (num_images < 1) throw ValidationError("need at least one image");
  std::vector<ImageSample> out;
  const double size = det.image_size();
  for (int i = 0; i < num_images; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    char id[32];
    std::snprintf(id, sizeof id, "toy%05d", i);
    ImageSample s = toy_detect(det, id, {}, prefilter);
    const std::vector<std::size_t> kept = nms_indices(s.predictions, prefilter);
    std::vector<GroundTruthObject> gt;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < n; ++k) {
      if (!kept.empty() && rng.bernoulli(0.7)) {
        // One of the ten highest-ranked survivors, moved by up to 15%.
        const std::size_t top = std::min<std::size_t>(kept.size(), 10);
        const Instance& p = s.predictions[kept[rng.below(top)]];
        CenterBox c = p.bbox.center_form();
        c.cx += rng.uniform(-0.15, 0.15) * c.w;
        c.cy += rng.uniform(-0.15, 0.15) * c.h;
        c.w *= std::exp(rng.uniform(-0.15, 0.15));
        c.h *= std::exp(rng.uniform(-0.15, 0.15));
        const BoundingBox b = clip_to_image(BoundingBox::from_center(c), size, size);
        if (b.width() >= 2 && b.height() >= 2) {
          gt.push_back({b, p.class_id});
          continue;
        }
      }
      const double w = rng.uniform(16, 64), h = rng.uniform(16, 64);
      const double x = rng.uniform(0, size - w), y = rng.uniform(0, size - h);
      gt.push_back({{x, y, x + w, y + h},
                    1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(det.spec.num_classes)))});
    }
    s.ground_truth = std::move(gt);
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

RawOutputs verified_raw_outputs(const ToyDetector& det, const ImageSample& sample,
                                const ForwardPass& pass) {
  RawOutputs raw = raw_outputs_from(pass.output(), det.spec);
  for (std::size_t i = 0; i < sample.predictions.size(); ++i) {
    const Instance& p = sample.predictions[i];
    const std::string where = "image '" + sample.image_id + "' prediction " + std::to_string(i);
    if (p.anchor_index < 0 || p.anchor_index >= raw.num_anchors()) {
      throw ValidationError(where + ": anchor_index outside the head's grid");
    }
    const auto r = raw.anchor(p.anchor_index);
    if (p.raw_outputs.size() != r.size() || !std::equal(r.begin(), r.end(), p.raw_outputs.begin())) {
      throw ValidationError(where + ": raw_outputs do not match the head");
    }
  }
  return raw;
}

namespace {

BoxRecord record_for(const ImageSample& s, int index, const MatchResult& m) {
  BoxRecord r;
  r.image_id = s.image_id;
  r.box_index = index;
  r.score = s.predictions[static_cast<std::size_t>(index)].score;
  r.label = m.label == MatchLabel::kTruePositive ? 1 : 0;
  r.target_iou = m.matched_iou;
  return r;
}

FeatureTable assemble(std::vector<std::string> columns, std::vector<std::vector<BoxRecord>> per_image) {
  FeatureTable t;
  t.columns = std::move(columns);
  for (auto& rows : per_image) {
    for (auto& r : rows) t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace

FeatureTable toy_gradient_features(const ToyDetector& det, const std::vector<ImageSample>& samples,
                                   const ToyFeatureOptions& opt) {
  std::vector<std::vector<BoxRecord>> per_image(samples.size());
  parallel_for(samples.size(), opt.threads, [&](std::size_t i) {
    const ImageSample& s = samples[i];
    const ForwardPass pass = forward_pass(det.net, det.input_for(s.image_id));
    verified_raw_outputs(det, s, pass);
    GradientContext gc = make_gradient_context(det.net, det.spec, pass);
    gc.rpn_seed = mix_seed(opt.seed, hash_string(s.image_id));
    // Candidates are compared in the same clipped frame as the predictions.
    std::vector<Instance> outputs = transform_outputs(det.spec, gc.raw);
    for (Instance& o : outputs) o.bbox = clip_to_image(o.bbox, s.width, s.height);
    for (const auto& [index, match] : label_post_nms(s, opt.prefilter, opt.nms_iou)) {
      const Instance& box = s.predictions[static_cast<std::size_t>(index)];
      const CandidateMask mask = candidate_mask(outputs, box, opt.prefilter, opt.candidate_iou);
      std::vector<KernelGradient> grads;
      for (LossPart part : loss_parts(det.spec.kind)) {
        grads.push_back(per_box_gradient(gc, box, mask, part, opt.depth));
      }
      BoxRecord r = record_for(s, index, match);
      r.features = gradient_features(grads, opt.depth);
      per_image[i].push_back(std::move(r));
    }
  });
  return assemble(gradient_columns(det.spec.kind, opt.depth), std::move(per_image));
}

FeatureTable toy_dropout_features(const ToyDetector& det, const std::vector<ImageSample>& samples,
                                  const ToyFeatureOptions& opt) {
  if (opt.dropout_samples < 2) throw ValidationError("dropout statistics need at least two samples");
  std::vector<std::vector<BoxRecord>> per_image(samples.size());
  parallel_for(samples.size(), opt.threads, [&](std::size_t i) {
    const ImageSample& s = samples[i];
    const ForwardPass pass = forward_pass(det.net, det.input_for(s.image_id));
    verified_raw_outputs(det, s, pass);
    const FeatureMap& phi_prev = pass.phi[pass.phi.size() - 2];
    const auto maps = mc_dropout_sample(det.net, phi_prev, opt.dropout_rate, opt.dropout_samples,
                                        mix_seed(opt.seed, hash_string(s.image_id)));
    const int dim = det.spec.dim();
    std::vector<std::vector<double>> decoded;
    for (const FeatureMap& m : maps) decoded.push_back(decode_outputs(det.spec, raw_outputs_from(m, det.spec)));
    for (const auto& [index, match] : label_post_nms(s, opt.prefilter, opt.nms_iou)) {
      const int a = s.predictions[static_cast<std::size_t>(index)].anchor_index;
      std::vector<std::vector<double>> per_sample;
      for (const auto& d : decoded) {
        per_sample.emplace_back(d.begin() + static_cast<std::ptrdiff_t>(a) * dim,
                                d.begin() + static_cast<std::ptrdiff_t>(a + 1) * dim);
      }
      BoxRecord r = record_for(s, index, match);
      r.features = dropout_features(per_sample);
      per_image[i].push_back(std::move(r));
    }
  });
  return assemble(dropout_columns(det.spec.kind, det.spec.num_classes), std::move(per_image));
}

}  // namespace gradunc
