#include "gradunc/losses.hpp"

#include <algorithm>
#include <cmath>

#include "gradunc/common.hpp"

namespace gradunc {

namespace {

constexpr double kProbEps = 1e-15;

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

// log(1 + e^z) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// BCE(σ(z), q) evaluated from the logit.
double bce_logit(double z, double q) { return q * softplus(-z) + (1.0 - q) * softplus(z); }

double log_sum_exp(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

// Residuals this small are round-off of an exact match (a box re-encoded
// against its own anchor), so the L1 subgradient takes sgn(0) = 0 there.
constexpr double kResidualZero = 1e-12;
double sgn_residual(double r) { return std::abs(r) <= kResidualZero ? 0.0 : sgn(r); }

bool in_mask(const LossContext& ctx, int a) {
  return ctx.anchor_mask == nullptr || (*ctx.anchor_mask)[static_cast<std::size_t>(a)] != 0;
}

// Default proposal sampling when no SampleMasks are given: every eligible
// positive and negative anchor participates.
bool is_pos(const LossContext& ctx, int a) {
  if (ctx.masks != nullptr) return ctx.masks->pos[static_cast<std::size_t>(a)] != 0;
  return ctx.assign->any_obj(a);
}
bool is_neg(const LossContext& ctx, int a) {
  if (ctx.masks != nullptr) return ctx.masks->neg[static_cast<std::size_t>(a)] != 0;
  return ctx.assign->any_noobj(a);
}

int count_obj_pairs(const LossContext& ctx) {
  int n = 0;
  for (int a = 0; a < ctx.assign->num_anchors; ++a) {
    if (!in_mask(ctx, a)) continue;
    for (int t = 0; t < ctx.assign->num_gt; ++t) n += ctx.assign->is_obj(a, t) ? 1 : 0;
  }
  return n;
}

int count_pos(const LossContext& ctx) {
  int n = 0;
  for (int a = 0; a < ctx.assign->num_anchors; ++a) {
    if (in_mask(ctx, a) && is_pos(ctx, a)) ++n;
  }
  return n;
}

void check_context(const LossContext& ctx, const RawOutputs& raw) {
  if (ctx.head == nullptr || ctx.assign == nullptr) {
    throw std::invalid_argument("LossContext: head and assignments are required");
  }
  if (raw.dim != ctx.head->dim()) {
    throw ValidationError("raw outputs have dimension " + std::to_string(raw.dim) +
                          ", head expects " + std::to_string(ctx.head->dim()));
  }
  if (raw.num_anchors() != ctx.assign->num_anchors ||
      static_cast<int>(ctx.gt.size()) != ctx.assign->num_gt) {
    throw ValidationError("assignment tensors do not match outputs/ground truth");
  }
  if (ctx.anchor_mask != nullptr &&
      static_cast<int>(ctx.anchor_mask->size()) != ctx.assign->num_anchors) {
    throw ValidationError("anchor mask size mismatch");
  }
  if (ctx.masks != nullptr &&
      (static_cast<int>(ctx.masks->pos.size()) != ctx.assign->num_anchors ||
       static_cast<int>(ctx.masks->neg.size()) != ctx.assign->num_anchors)) {
    throw ValidationError("sample mask size mismatch");
  }
}

// Per-anchor derivative accumulator. The first contribution to a component
// is a store; later ones are counted additions.
class Accum {
 public:
  Accum(int dim, const Counter& counter)
      : vals_(static_cast<std::size_t>(dim), 0.0),
        touched_(static_cast<std::size_t>(dim), 0),
        counter_(counter) {}

  void add(int r, double v) {
    auto i = static_cast<std::size_t>(r);
    if (touched_[i]) {
      counter_.flops(1);
      vals_[i] += v;
    } else {
      vals_[i] = v;
      touched_[i] = 1;
    }
    active_ = true;
  }
  void activate() { active_ = true; }
  bool active() const { return active_; }
  std::vector<double> take() { return std::move(vals_); }

 private:
  std::vector<double> vals_;
  std::vector<std::uint8_t> touched_;
  Counter counter_;
  bool active_ = false;
};

}  // namespace

std::string_view head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kYolo: return "yolo";
    case HeadKind::kRpn: return "rpn";
    case HeadKind::kRoi: return "roi";
    case HeadKind::kRetina: return "retina";
  }
  return "unknown";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "yolo") return HeadKind::kYolo;
  if (name == "rpn") return HeadKind::kRpn;
  if (name == "roi") return HeadKind::kRoi;
  if (name == "retina") return HeadKind::kRetina;
  throw ValidationError("unknown head kind '" + std::string(name) + "'");
}

std::string_view loss_part_name(LossPart part) {
  switch (part) {
    case LossPart::kLocalization: return "loc";
    case LossPart::kScore: return "score";
    case LossPart::kClassification: return "cls";
  }
  return "unknown";
}

LossPart parse_loss_part(std::string_view name) {
  if (name == "loc") return LossPart::kLocalization;
  if (name == "score") return LossPart::kScore;
  if (name == "cls") return LossPart::kClassification;
  throw ValidationError("unknown loss part '" + std::string(name) + "'");
}

std::vector<LossPart> loss_parts(HeadKind kind) {
  switch (kind) {
    case HeadKind::kYolo:
      return {LossPart::kLocalization, LossPart::kScore, LossPart::kClassification};
    case HeadKind::kRpn:
      return {LossPart::kLocalization, LossPart::kScore};
    case HeadKind::kRoi:
    case HeadKind::kRetina:
      return {LossPart::kLocalization, LossPart::kClassification};
  }
  return {};
}

int output_dim(HeadKind kind, int num_classes) {
  switch (kind) {
    case HeadKind::kYolo: return 5 + num_classes;
    case HeadKind::kRpn: return 5;
    case HeadKind::kRoi: return 5 + num_classes;
    case HeadKind::kRetina: return 4 + num_classes;
  }
  return 0;
}

int class_offset(HeadKind kind) {
  switch (kind) {
    case HeadKind::kYolo: return 5;
    case HeadKind::kRpn: return -1;
    case HeadKind::kRoi: return 4;
    case HeadKind::kRetina: return 4;
  }
  return -1;
}

AnchorGrid::Anchor AnchorGrid::anchor(int a) const {
  const int per_cell = anchors_per_cell();
  const int cell = a / per_cell;
  const int slot = a % per_cell;
  const int row = cell / grid_w;
  const int col = cell % grid_w;
  Anchor out;
  out.corner_x = col * cell_size;
  out.corner_y = row * cell_size;
  out.cx = out.corner_x + 0.5 * cell_size;
  out.cy = out.corner_y + 0.5 * cell_size;
  out.w = priors[static_cast<std::size_t>(slot)].w;
  out.h = priors[static_cast<std::size_t>(slot)].h;
  return out;
}

BoundingBox AnchorGrid::anchor_box(int a) const {
  const Anchor an = anchor(a);
  return BoundingBox::from_center({an.cx, an.cy, an.w, an.h});
}

void AnchorGrid::validate() const {
  if (grid_h <= 0 || grid_w <= 0) throw ValidationError("anchor grid must be non-empty");
  if (!(cell_size > 0)) throw ValidationError("anchor cell size must be positive");
  if (priors.empty()) throw ValidationError("anchor grid needs at least one prior");
  for (const auto& p : priors) {
    if (!(p.w > 0) || !(p.h > 0)) throw ValidationError("anchor priors must be positive");
  }
}

OutputActivations activate_outputs(const HeadSpec& head, const RawOutputs& raw,
                                   FlopLedger* ledger) {
  const Counter counter(ledger, Phase::kPostprocess);
  OutputActivations act;
  act.dim = raw.dim;
  act.values.assign(raw.values.size(), 0.0);
  const int n = raw.num_anchors();
  const int c = head.num_classes;
  for (int a = 0; a < n; ++a) {
    auto z = raw.anchor(a);
    for (double v : z) {
      if (!std::isfinite(v)) {
        throw ValidationError("non-finite raw output at anchor " + std::to_string(a));
      }
    }
    double* out = act.values.data() + static_cast<std::size_t>(a) * raw.dim;
    out[2] = std::exp(z[2]);
    out[3] = std::exp(z[3]);
    counter.evals(2);
    switch (head.kind) {
      case HeadKind::kYolo:
        out[0] = sigmoid(z[0]);
        out[1] = sigmoid(z[1]);
        out[4] = sigmoid(z[4]);
        for (int j = 0; j < c; ++j) out[5 + j] = sigmoid(z[5 + j]);
        counter.evals(3 + static_cast<std::uint64_t>(c));
        break;
      case HeadKind::kRpn:
        out[4] = sigmoid(z[4]);
        counter.evals(1);
        break;
      case HeadKind::kRoi: {
        double sum = 0;
        for (int k = 0; k <= c; ++k) {
          out[4 + k] = std::exp(z[4 + k]);
          sum += out[4 + k];
        }
        for (int k = 0; k <= c; ++k) out[4 + k] /= sum;
        counter.evals(static_cast<std::uint64_t>(c) + 1);
        counter.flops(2 * static_cast<std::uint64_t>(c) + 1);
        break;
      }
      case HeadKind::kRetina:
        for (int j = 0; j < c; ++j) out[4 + j] = sigmoid(z[4 + j]);
        counter.evals(static_cast<std::uint64_t>(c));
        break;
    }
  }
  return act;
}

std::vector<Instance> transform_outputs(const HeadSpec& head, const RawOutputs& raw,
                                        FlopLedger* ledger) {
  if (raw.dim != head.dim()) {
    throw ValidationError("raw outputs have dimension " + std::to_string(raw.dim) +
                          ", head expects " + std::to_string(head.dim()));
  }
  if (raw.num_anchors() != head.anchors.num_anchors()) {
    throw ValidationError("raw outputs cover " + std::to_string(raw.num_anchors()) +
                          " anchors, grid has " + std::to_string(head.anchors.num_anchors()));
  }
  const Counter counter(ledger, Phase::kPostprocess);
  const OutputActivations act = activate_outputs(head, raw, ledger);
  const int n = raw.num_anchors();
  const int c = head.num_classes;
  const double cell = head.anchors.cell_size;
  std::vector<Instance> out(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    auto z = raw.anchor(a);
    auto s = act.anchor(a);
    const AnchorGrid::Anchor an = head.anchors.anchor(a);
    CenterBox cb;
    if (head.kind == HeadKind::kYolo) {
      cb.cx = cell * s[0] + an.corner_x;
      cb.cy = cell * s[1] + an.corner_y;
    } else {
      cb.cx = an.w * z[0] + an.cx;
      cb.cy = an.h * z[1] + an.cy;
    }
    cb.w = an.w * s[2];
    cb.h = an.h * s[3];
    // center (4) + size (2) + half extents (2) + corners (4)
    counter.flops(12);

    Instance& inst = out[static_cast<std::size_t>(a)];
    inst.bbox = BoundingBox::from_center(cb);
    inst.anchor_index = a;
    inst.raw_outputs.assign(z.begin(), z.end());
    switch (head.kind) {
      case HeadKind::kYolo:
        inst.score = clamp_prob(s[4]);
        for (int j = 0; j < c; ++j) inst.class_probs.push_back(clamp_prob(s[5 + j]));
        inst.class_id = argmax_class(inst.class_probs);
        break;
      case HeadKind::kRpn:
        inst.score = clamp_prob(s[4]);
        inst.class_probs = {inst.score};
        inst.class_id = 1;
        break;
      case HeadKind::kRoi:
        for (int j = 1; j <= c; ++j) inst.class_probs.push_back(clamp_prob(s[4 + j]));
        inst.class_id = argmax_class(inst.class_probs);
        inst.score = inst.class_probs[static_cast<std::size_t>(inst.class_id - 1)];
        break;
      case HeadKind::kRetina:
        for (int j = 0; j < c; ++j) inst.class_probs.push_back(clamp_prob(s[4 + j]));
        inst.class_id = argmax_class(inst.class_probs);
        inst.score = inst.class_probs[static_cast<std::size_t>(inst.class_id - 1)];
        break;
    }
  }
  return out;
}

std::vector<double> decode_outputs(const HeadSpec& head, const RawOutputs& raw,
                                   FlopLedger* ledger) {
  const Counter counter(ledger, Phase::kPostprocess);
  OutputActivations act = activate_outputs(head, raw, ledger);
  std::vector<double>& out = act.values;
  const double cell = head.anchors.cell_size;
  for (int a = 0; a < raw.num_anchors(); ++a) {
    auto z = raw.anchor(a);
    double* o = out.data() + static_cast<std::size_t>(a) * raw.dim;
    const AnchorGrid::Anchor an = head.anchors.anchor(a);
    if (head.kind == HeadKind::kYolo) {
      o[0] = cell * o[0] + an.corner_x;
      o[1] = cell * o[1] + an.corner_y;
    } else {
      o[0] = an.w * z[0] + an.cx;
      o[1] = an.h * z[1] + an.cy;
    }
    o[2] = an.w * o[2];
    o[3] = an.h * o[3];
    counter.flops(6);
  }
  return out;
}

std::vector<double> inverse_transform(const HeadSpec& head, const Instance& inst) {
  const AnchorGrid::Anchor an = head.anchors.anchor(inst.anchor_index);
  const CenterBox cb = inst.bbox.center_form();
  const int c = head.num_classes;
  std::vector<double> z(static_cast<std::size_t>(head.dim()), 0.0);
  if (head.kind == HeadKind::kYolo) {
    z[0] = logit((cb.cx - an.corner_x) / head.anchors.cell_size);
    z[1] = logit((cb.cy - an.corner_y) / head.anchors.cell_size);
  } else {
    z[0] = (cb.cx - an.cx) / an.w;
    z[1] = (cb.cy - an.cy) / an.h;
  }
  z[2] = std::log(cb.w / an.w);
  z[3] = std::log(cb.h / an.h);
  switch (head.kind) {
    case HeadKind::kYolo:
      z[4] = logit(inst.score);
      for (int j = 0; j < c; ++j) z[5 + j] = logit(inst.class_probs[static_cast<std::size_t>(j)]);
      break;
    case HeadKind::kRpn:
      z[4] = logit(inst.score);
      break;
    case HeadKind::kRoi: {
      double fg = 0;
      for (double p : inst.class_probs) fg += p;
      z[4] = std::log(1.0 - fg);
      for (int j = 0; j < c; ++j) z[5 + j] = std::log(inst.class_probs[static_cast<std::size_t>(j)]);
      break;
    }
    case HeadKind::kRetina:
      for (int j = 0; j < c; ++j) z[4 + j] = logit(inst.class_probs[static_cast<std::size_t>(j)]);
      break;
  }
  return z;
}

std::array<double, 4> encode_localization(const HeadSpec& head, const BoundingBox& box, int a) {
  const CenterBox cb = box.center_form();
  if (!(cb.w > 0) || !(cb.h > 0)) {
    throw ValidationError("cannot encode a zero-area ground truth box");
  }
  const AnchorGrid::Anchor an = head.anchors.anchor(a);
  std::array<double, 4> out{};
  if (head.kind == HeadKind::kYolo) {
    out[0] = std::clamp((cb.cx - an.corner_x) / head.anchors.cell_size, 0.0, 1.0);
    out[1] = std::clamp((cb.cy - an.corner_y) / head.anchors.cell_size, 0.0, 1.0);
  } else {
    out[0] = (cb.cx - an.cx) / an.w;
    out[1] = (cb.cy - an.cy) / an.h;
  }
  out[2] = std::log(cb.w / an.w);
  out[3] = std::log(cb.h / an.h);
  return out;
}

AssignmentConfig default_assignment(HeadKind kind) {
  switch (kind) {
    case HeadKind::kYolo: return {0.5, 0.5, true};
    case HeadKind::kRpn: return {0.7, 0.3, true};
    case HeadKind::kRoi: return {0.5, 0.5, true};
    case HeadKind::kRetina: return {0.5, 0.4, true};
  }
  return {};
}

bool AssignmentTensors::any_obj(int a) const {
  for (int t = 0; t < num_gt; ++t) {
    if (is_obj(a, t)) return true;
  }
  return false;
}

bool AssignmentTensors::any_noobj(int a) const {
  for (int t = 0; t < num_gt; ++t) {
    if (is_noobj(a, t)) return true;
  }
  return false;
}

AssignmentTensors compute_assignments(const HeadSpec& head,
                                      std::span<const GroundTruthObject> gt,
                                      std::optional<AssignmentConfig> config) {
  const AssignmentConfig cfg = config.value_or(default_assignment(head.kind));
  if (cfg.eps_pos < cfg.eps_neg || cfg.eps_neg < 0) {
    throw ValidationError("assignment thresholds need eps_pos >= eps_neg >= 0");
  }
  AssignmentTensors out;
  out.num_anchors = head.anchors.num_anchors();
  out.num_gt = static_cast<int>(gt.size());
  out.eps_pos = cfg.eps_pos;
  out.eps_neg = cfg.eps_neg;
  const std::size_t cells = static_cast<std::size_t>(out.num_anchors) * gt.size();
  out.obj.assign(cells, 0);
  out.noobj.assign(cells, 0);
  if (gt.empty()) return out;

  std::vector<double> ious(cells);
  for (int a = 0; a < out.num_anchors; ++a) {
    const BoundingBox ab = head.anchors.anchor_box(a);
    for (int t = 0; t < out.num_gt; ++t) {
      ious[static_cast<std::size_t>(a) * gt.size() + t] = iou(ab, gt[static_cast<std::size_t>(t)].bbox);
    }
  }
  for (int a = 0; a < out.num_anchors; ++a) {
    for (int t = 0; t < out.num_gt; ++t) {
      const std::size_t k = static_cast<std::size_t>(a) * gt.size() + t;
      if (ious[k] > 0 && ious[k] >= cfg.eps_pos) out.obj[k] = 1;
    }
  }
  if (cfg.best_anchor_rule) {
    for (int t = 0; t < out.num_gt; ++t) {
      int best = -1;
      double best_iou = 0;
      for (int a = 0; a < out.num_anchors; ++a) {
        const double v = ious[static_cast<std::size_t>(a) * gt.size() + t];
        if (v > best_iou) {
          best_iou = v;
          best = a;
        }
      }
      if (best >= 0) out.obj[static_cast<std::size_t>(best) * gt.size() + t] = 1;
    }
  }
  for (int a = 0; a < out.num_anchors; ++a) {
    double max_iou = 0;
    for (int t = 0; t < out.num_gt; ++t) {
      max_iou = std::max(max_iou, ious[static_cast<std::size_t>(a) * gt.size() + t]);
    }
    if (max_iou < cfg.eps_neg && !out.any_obj(a)) {
      for (int t = 0; t < out.num_gt; ++t) out.noobj[static_cast<std::size_t>(a) * gt.size() + t] = 1;
    }
  }
  return out;
}

int SampleMasks::num_pos() const {
  return static_cast<int>(std::count(pos.begin(), pos.end(), std::uint8_t{1}));
}
int SampleMasks::num_neg() const {
  return static_cast<int>(std::count(neg.begin(), neg.end(), std::uint8_t{1}));
}

SampleMasks sample_proposals(const AssignmentTensors& assign, int batch_size,
                             std::uint64_t seed, const std::vector<std::uint8_t>* anchor_mask) {
  if (batch_size <= 0) throw ValidationError("proposal batch size must be positive");
  SampleMasks m;
  m.batch_size = batch_size;
  m.rng_seed = seed;
  m.pos.assign(static_cast<std::size_t>(assign.num_anchors), 0);
  m.neg.assign(static_cast<std::size_t>(assign.num_anchors), 0);
  std::vector<int> pos, neg;
  for (int a = 0; a < assign.num_anchors; ++a) {
    if (anchor_mask != nullptr && (*anchor_mask)[static_cast<std::size_t>(a)] == 0) continue;
    if (assign.any_obj(a)) {
      pos.push_back(a);
    } else if (assign.any_noobj(a)) {
      neg.push_back(a);
    }
  }
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  const std::size_t n_pos = std::min(pos.size(), static_cast<std::size_t>(batch_size / 2));
  const std::size_t n_neg =
      std::min(neg.size(), static_cast<std::size_t>(batch_size) - n_pos);
  for (std::size_t i = 0; i < n_pos; ++i) m.pos[static_cast<std::size_t>(pos[i])] = 1;
  for (std::size_t i = 0; i < n_neg; ++i) m.neg[static_cast<std::size_t>(neg[i])] = 1;
  return m;
}

TargetMap encode_targets(const LossContext& ctx) {
  TargetMap tm;
  tm.num_gt = static_cast<int>(ctx.gt.size());
  const int n = ctx.assign->num_anchors;
  tm.loc.assign(static_cast<std::size_t>(n) * ctx.gt.size(), std::array<double, 4>{});
  for (const auto& g : ctx.gt) tm.class_ids.push_back(g.class_id);
  for (int a = 0; a < n; ++a) {
    if (!in_mask(ctx, a)) continue;
    for (int t = 0; t < tm.num_gt; ++t) {
      if (ctx.assign->is_obj(a, t)) {
        tm.loc[static_cast<std::size_t>(a) * ctx.gt.size() + t] =
            encode_localization(*ctx.head, ctx.gt[static_cast<std::size_t>(t)].bbox, a);
      }
    }
  }
  return tm;
}

double smooth_l1(double residual, double beta) {
  const double r = std::abs(residual);
  return r < beta ? 0.5 * r * r / beta : r - 0.5 * beta;
}

double loss_value(LossPart part, const RawOutputs& raw, const TargetMap& targets,
                  const LossContext& ctx) {
  check_context(ctx, raw);
  const HeadSpec& head = *ctx.head;
  const AssignmentTensors& as = *ctx.assign;
  const int n = as.num_anchors;
  const int ngt = as.num_gt;
  const int c = head.num_classes;
  double total = 0;

  switch (head.kind) {
    case HeadKind::kYolo: {
      for (int a = 0; a < n; ++a) {
        if (!in_mask(ctx, a)) continue;
        auto z = raw.anchor(a);
        for (int t = 0; t < ngt; ++t) {
          const bool obj = as.is_obj(a, t);
          if (part == LossPart::kLocalization && obj) {
            const auto& g = targets.at(a, t);
            total += 2.0 * ((z[2] - g[2]) * (z[2] - g[2]) + (z[3] - g[3]) * (z[3] - g[3]) +
                            bce_logit(z[0], g[0]) + bce_logit(z[1], g[1]));
          } else if (part == LossPart::kScore) {
            if (obj) total += softplus(-z[4]);
            if (as.is_noobj(a, t)) total += softplus(z[4]);
          } else if (part == LossPart::kClassification && obj) {
            const int k = targets.class_ids[static_cast<std::size_t>(t)];
            for (int j = 1; j <= c; ++j) total += bce_logit(z[4 + j], j == k ? 1.0 : 0.0);
          }
        }
      }
      break;
    }
    case HeadKind::kRpn: {
      if (part == LossPart::kLocalization) {
        const int npos = count_pos(ctx);
        if (npos == 0) return 0.0;
        for (int a = 0; a < n; ++a) {
          if (!in_mask(ctx, a) || !is_pos(ctx, a)) continue;
          auto z = raw.anchor(a);
          for (int t = 0; t < ngt; ++t) {
            if (!as.is_obj(a, t)) continue;
            const auto& g = targets.at(a, t);
            for (int r = 0; r < 4; ++r) total += smooth_l1(z[r] - g[r]);
          }
        }
        total /= npos;
      } else if (part == LossPart::kScore) {
        for (int a = 0; a < n; ++a) {
          if (!in_mask(ctx, a)) continue;
          auto z = raw.anchor(a);
          for (int t = 0; t < ngt; ++t) {
            if (is_pos(ctx, a) && as.is_obj(a, t)) total += softplus(-z[4]);
            if (is_neg(ctx, a) && as.is_noobj(a, t)) total += softplus(z[4]);
          }
        }
      }
      break;
    }
    case HeadKind::kRoi: {
      if (part == LossPart::kLocalization) {
        const int nobj = count_obj_pairs(ctx);
        if (nobj == 0) return 0.0;
        for (int a = 0; a < n; ++a) {
          if (!in_mask(ctx, a)) continue;
          auto z = raw.anchor(a);
          for (int t = 0; t < ngt; ++t) {
            if (!as.is_obj(a, t)) continue;
            const auto& g = targets.at(a, t);
            for (int r = 0; r < 4; ++r) total += smooth_l1(z[r] - g[r]);
          }
        }
        total /= nobj;
      } else if (part == LossPart::kClassification) {
        for (int a = 0; a < n; ++a) {
          if (!in_mask(ctx, a)) continue;
          auto z = raw.anchor(a);
          const double lse = log_sum_exp(z.subspan(4, static_cast<std::size_t>(c) + 1));
          for (int t = 0; t < ngt; ++t) {
            if (as.is_obj(a, t)) total += lse - z[4 + targets.class_ids[static_cast<std::size_t>(t)]];
            if (as.is_noobj(a, t)) total += lse - z[4];
          }
        }
      }
      break;
    }
    case HeadKind::kRetina: {
      const int nobj = count_obj_pairs(ctx);
      if (nobj == 0) return 0.0;
      for (int a = 0; a < n; ++a) {
        if (!in_mask(ctx, a)) continue;
        auto z = raw.anchor(a);
        for (int t = 0; t < ngt; ++t) {
          const bool obj = as.is_obj(a, t);
          if (part == LossPart::kLocalization && obj) {
            const auto& g = targets.at(a, t);
            for (int r = 0; r < 4; ++r) total += std::abs(z[r] - g[r]);
          } else if (part == LossPart::kClassification) {
            const int k = targets.class_ids[static_cast<std::size_t>(t)];
            for (int j = 1; j <= c; ++j) {
              const double zj = z[3 + j];
              const double p = sigmoid(zj);
              if (obj) {
                total += kFocalAlpha * std::pow(1.0 - p, kFocalGamma) *
                         bce_logit(zj, j == k ? 1.0 : 0.0);
              }
              if (as.is_noobj(a, t)) {
                total += (1.0 - kFocalAlpha) * std::pow(p, kFocalGamma) * softplus(zj);
              }
            }
          }
        }
      }
      total /= nobj;
      break;
    }
  }
  return total;
}

double total_loss(const RawOutputs& raw, const TargetMap& targets, const LossContext& ctx) {
  double sum = 0;
  for (LossPart part : loss_parts(ctx.head->kind)) sum += loss_value(part, raw, targets, ctx);
  return sum;
}

double LossPartDerivative::at(int a, int r) const {
  auto it = values.find(a);
  if (it == values.end()) return 0.0;
  return it->second[static_cast<std::size_t>(r)];
}

LossPartDerivative loss_derivative(LossPart part, const RawOutputs& raw,
                                   const OutputActivations& act, const TargetMap& targets,
                                   const LossContext& ctx, FlopLedger* ledger) {
  check_context(ctx, raw);
  const HeadSpec& head = *ctx.head;
  const AssignmentTensors& as = *ctx.assign;
  const Counter counter(ledger, Phase::kDloss);
  LossPartDerivative out;
  out.head_kind = head.kind;
  out.part = part;
  out.dim = raw.dim;
  const int n = as.num_anchors;
  const int ngt = as.num_gt;
  const int c = head.num_classes;

  // Normalizer shared by every entry of a part, computed once.
  double inv_norm = 1.0;
  bool normalized = false;
  if ((head.kind == HeadKind::kRpn && part == LossPart::kLocalization)) {
    const int npos = count_pos(ctx);
    if (npos == 0) return out;
    inv_norm = 1.0 / npos;
    normalized = true;
  } else if ((head.kind == HeadKind::kRoi && part == LossPart::kLocalization) ||
             head.kind == HeadKind::kRetina) {
    const int nobj = count_obj_pairs(ctx);
    if (nobj == 0) return out;
    inv_norm = 1.0 / nobj;
    normalized = true;
  }
  if (normalized) counter.flops(1);

  // Smooth-L1 inner branch: r / beta scaled by the normalizer.
  double inner_scale = inv_norm / kSmoothL1Beta;
  if (normalized && (head.kind == HeadKind::kRpn || head.kind == HeadKind::kRoi) &&
      part == LossPart::kLocalization) {
    counter.flops(1);
  }
  // Focal weights fold in the normalizer; (1-p)^γ and p^γ are squares.
  static_assert(kFocalGamma == 2.0);
  const double obj_scale = kFocalAlpha * inv_norm;
  const double noobj_scale = (1.0 - kFocalAlpha) * inv_norm;
  if (head.kind == HeadKind::kRetina && part == LossPart::kClassification) counter.flops(3);

  auto smooth_l1_grad = [&](Accum& acc, std::span<const double> z, const std::array<double, 4>& g) {
    for (int r = 0; r < 4; ++r) {
      const double d = z[r] - g[r];
      counter.flops(1);
      if (std::abs(d) < kSmoothL1Beta) {
        counter.flops(1);
        acc.add(r, d * inner_scale);
      } else {
        acc.add(r, sgn(d) * inv_norm);
      }
    }
  };

  // m terms of the form s_j - [j == k_t] at one anchor sum to
  // m s_j - hits[j]; a single term costs one flop at its target.
  std::vector<int> hits;
  auto collapsed_terms = [&](Accum& acc, std::span<const double> s, int base, int lo, int hi, int m) {
    if (m == 0) return;
    for (int j = lo; j <= hi; ++j) {
      double v = s[static_cast<std::size_t>(base + j)];
      if (m > 1) {
        v *= m;
        counter.flops(1);
      }
      const int h = hits[static_cast<std::size_t>(j)];
      if (h > 0) {
        v -= h;
        counter.flops(1);
      }
      acc.add(base + j, v);
    }
  };

  for (int a = 0; a < n; ++a) {
    if (!in_mask(ctx, a)) continue;
    auto z = raw.anchor(a);
    auto s = act.anchor(a);
    Accum acc(raw.dim, counter);

    switch (head.kind) {
      case HeadKind::kYolo:
        if (part == LossPart::kLocalization) {
          for (int t = 0; t < ngt; ++t) {
            if (!as.is_obj(a, t)) continue;
            const auto& g = targets.at(a, t);
            acc.add(0, 2.0 * (s[0] - g[0]));
            acc.add(1, 2.0 * (s[1] - g[1]));
            acc.add(2, 4.0 * (z[2] - g[2]));
            acc.add(3, 4.0 * (z[3] - g[3]));
            counter.flops(8);
          }
        } else if (part == LossPart::kScore) {
          int nobj = 0, nnoobj = 0;
          for (int t = 0; t < ngt; ++t) {
            nobj += as.is_obj(a, t) ? 1 : 0;
            nnoobj += as.is_noobj(a, t) ? 1 : 0;
          }
          hits.assign(1, nobj);
          collapsed_terms(acc, s, kScoreIndex, 0, 0, nobj + nnoobj);
        } else {
          hits.assign(static_cast<std::size_t>(c) + 1, 0);
          int m = 0;
          for (int t = 0; t < ngt; ++t) {
            if (!as.is_obj(a, t)) continue;
            ++hits[static_cast<std::size_t>(targets.class_ids[static_cast<std::size_t>(t)])];
            ++m;
          }
          collapsed_terms(acc, s, 4, 1, c, m);
        }
        break;

      case HeadKind::kRpn:
        if (part == LossPart::kLocalization) {
          if (!is_pos(ctx, a)) break;
          for (int t = 0; t < ngt; ++t) {
            if (as.is_obj(a, t)) smooth_l1_grad(acc, z, targets.at(a, t));
          }
        } else {
          int npos = 0, nneg = 0;
          for (int t = 0; t < ngt; ++t) {
            npos += is_pos(ctx, a) && as.is_obj(a, t) ? 1 : 0;
            nneg += is_neg(ctx, a) && as.is_noobj(a, t) ? 1 : 0;
          }
          hits.assign(1, npos);
          collapsed_terms(acc, s, kScoreIndex, 0, 0, npos + nneg);
        }
        break;

      case HeadKind::kRoi:
        if (part == LossPart::kLocalization) {
          for (int t = 0; t < ngt; ++t) {
            if (as.is_obj(a, t)) smooth_l1_grad(acc, z, targets.at(a, t));
          }
        } else {
          // Background is class 0; every obj or noobj pair contributes one
          // softmax cross-entropy term.
          hits.assign(static_cast<std::size_t>(c) + 1, 0);
          int m = 0;
          for (int t = 0; t < ngt; ++t) {
            if (as.is_obj(a, t)) {
              ++hits[static_cast<std::size_t>(targets.class_ids[static_cast<std::size_t>(t)])];
            } else if (as.is_noobj(a, t)) {
              ++hits[0];
            } else {
              continue;
            }
            ++m;
          }
          collapsed_terms(acc, s, 4, 0, c, m);
        }
        break;

      case HeadKind::kRetina:
        if (part == LossPart::kLocalization) {
          for (int t = 0; t < ngt; ++t) {
            if (!as.is_obj(a, t)) continue;
            const auto& g = targets.at(a, t);
            for (int r = 0; r < 4; ++r) {
              acc.add(r, sgn_residual(z[r] - g[r]) * inv_norm);
              counter.flops(1);
            }
          }
        } else if (part == LossPart::kClassification) {
          std::vector<int> obj_classes;
          int noobj_count = 0;
          for (int t = 0; t < ngt; ++t) {
            if (as.is_obj(a, t)) obj_classes.push_back(targets.class_ids[static_cast<std::size_t>(t)]);
            if (as.is_noobj(a, t)) ++noobj_count;
          }
          if (obj_classes.empty() && noobj_count == 0) break;
          // Logs and focal weights are shared by every object term at this
          // anchor, so they are evaluated once per class.
          for (int j = 1; j <= c; ++j) {
            const double p = s[3 + j];
            const double om = 1.0 - p;
            counter.flops(1);
            bool need_lp = false, need_l1p = noobj_count > 0;
            for (int k : obj_classes) (k == j ? need_lp : need_l1p) = true;
            const double lp = need_lp ? std::log(p) : 0.0;
            const double l1p = need_l1p ? std::log(om) : 0.0;
            counter.evals((need_lp ? 1 : 0) + (need_l1p ? 1 : 0));
            if (!obj_classes.empty()) {
              // α(1-p)^γ [-γ p BCE_j + p - q_j]
              const double scale = obj_scale * (om * om);
              const double gp = kFocalGamma * p;
              counter.flops(3);
              for (int k : obj_classes) {
                const double bce = k == j ? -lp : -l1p;
                double inner = gp * bce;
                inner = p - inner;
                counter.flops(2);
                if (k == j) {
                  inner -= 1.0;
                  counter.flops(1);
                }
                acc.add(3 + j, scale * inner);
                counter.flops(1);
              }
            }
            if (noobj_count > 0) {
              // (1-α) p^γ [-γ (1-p) log(1-p) + p], once per noobj object
              const double inner = p - kFocalGamma * om * l1p;
              double v = noobj_scale * (p * p) * inner;
              counter.flops(6);
              if (noobj_count > 1) {
                v *= noobj_count;
                counter.flops(1);
              }
              acc.add(3 + j, v);
            }
          }
        }
        break;
    }
    if (acc.active()) out.values.emplace(a, acc.take());
  }
  return out;
}

}  // namespace gradunc
