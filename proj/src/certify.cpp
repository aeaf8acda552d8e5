#include "gradunc/certify.hpp"

#include <cmath>
#include <string>

#include "gradunc/common.hpp"
#include "gradunc/dropout.hpp"

namespace gradunc {

std::uint64_t certified_flop_count(Phase phase, const FlopParams& p) {
  const std::uint64_t s_t = static_cast<std::uint64_t>(p.taps_last());
  const std::uint64_t s_p = static_cast<std::uint64_t>(p.taps_prev());
  const std::uint64_t k_t = static_cast<std::uint64_t>(p.k_last);
  const std::uint64_t k_p = static_cast<std::uint64_t>(p.k_prev);
  const std::uint64_t k_p2 = static_cast<std::uint64_t>(p.k_prev2);
  switch (phase) {
    case Phase::kMaskIou:
      return 12 * static_cast<std::uint64_t>(p.num_boxes);
    case Phase::kGradLast:
      return (2 * k_t * s_t - 1) * (k_p * s_t);
    case Phase::kGradPrev:
      return (2 * k_t * s_t - 1) * (k_p * s_p) + (2 * k_p * s_p - 1) * (k_p2 * s_p);
    case Phase::kDropoutForward: {
      const std::uint64_t n_t = p.n_last();
      return (2 * n_t * k_p * s_t - 1 + n_t) * static_cast<std::uint64_t>(p.num_samples);
    }
    case Phase::kDloss:
    case Phase::kPostprocess:
      break;
  }
  throw ValidationError("no head-independent closed form for this phase");
}

OpCount dloss_bound(HeadKind kind, int num_classes, std::uint64_t n_out,
                    std::uint64_t n_out_rpn) {
  const std::uint64_t c = static_cast<std::uint64_t>(num_classes);
  switch (kind) {
    case HeadKind::kYolo: return {(9 + c) * n_out, 0};
    case HeadKind::kRpn:
    case HeadKind::kRoi: return {10 * n_out_rpn + (2 + 2 * c) * n_out, 0};
    case HeadKind::kRetina: return {(18 + 11 * c) * n_out, 2 * (1 + c) * n_out};
  }
  return {};
}

OpCount postprocess_bound(HeadKind kind, int num_classes, std::uint64_t n_out,
                          std::uint64_t n_samples) {
  const std::uint64_t c = static_cast<std::uint64_t>(num_classes);
  const std::uint64_t n = n_out * n_samples;
  switch (kind) {
    case HeadKind::kYolo: return {8 * n, (5 + c) * n};
    case HeadKind::kRpn:
    case HeadKind::kRoi: return {(9 + 2 * c) * n, (3 + c) * n};
    case HeadKind::kRetina: return {8 * n, (3 + c) * n};
  }
  return {};
}

GradLastKernel grad_last_microkernel(int k_last, int k_prev, int s, std::uint64_t seed) {
  if (k_last < 1 || k_prev < 1 || s < 0) throw ValidationError("invalid micro-kernel shape");
  Rng rng(seed);
  const int side = 2 * s + 1;
  const int size = 4 * s + 1;
  const int o = 2 * s;
  GradLastKernel k;
  k.phi_prev = random_feature_map(k_prev, size, size, mix_seed(seed, 1));
  for (int d = 0; d < k_last; ++d) {
    for (int py = 0; py < side; ++py) {
      for (int px = 0; px < side; ++px) {
        k.deltas.push_back({d, o + py - s, o + px - s, rng.normal()});
      }
    }
  }
  const Counter counter(&k.ledger, Phase::kGradLast);
  k.output.assign(static_cast<std::size_t>(k_prev) * side * side, 0.0);
  // One column per (c, ky, kx); m = k_T S products and m - 1 additions.
  for (int c = 0; c < k_prev; ++c) {
    for (int ky = 0; ky < side; ++ky) {
      for (int kx = 0; kx < side; ++kx) {
        double acc = 0;
        bool first = true;
        for (const MapDelta& dm : k.deltas) {
          const double prod = dm.value * k.phi_prev.at(c, dm.y + ky - s, dm.x + kx - s);
          if (first) {
            acc = prod;
            counter.flops(1);
            first = false;
          } else {
            acc += prod;
            counter.flops(2);
          }
        }
        k.output[(static_cast<std::size_t>(c) * side + ky) * side + kx] = acc;
      }
    }
  }
  return k;
}

GradPrevKernel grad_prev_microkernel(int k_last, int k_prev, int k_prev2, int s_last,
                                     int s_prev, std::uint64_t seed) {
  if (k_last < 1 || k_prev < 1 || k_prev2 < 1 || s_last < 0 || s_prev < 0) {
    throw ValidationError("invalid micro-kernel shape");
  }
  Rng rng(seed);
  const int side_t = 2 * s_last + 1;
  const int side_p = 2 * s_prev + 1;
  std::vector<double> kernel(static_cast<std::size_t>(k_last) * k_prev * side_t * side_t);
  for (double& v : kernel) v = rng.normal();
  std::vector<double> delta(static_cast<std::size_t>(k_last) * side_t * side_t);
  for (double& v : delta) v = rng.normal();
  std::vector<double> psi(static_cast<std::size_t>(k_prev) * side_p * side_p);
  for (double& v : psi) v = rng.normal();
  const int size = 4 * s_prev + 1;
  const FeatureMap phi = random_feature_map(k_prev2, size, size, mix_seed(seed, 1));

  GradPrevKernel out;
  const Counter counter(&out.ledger, Phase::kGradPrev);
  auto kernel_at = [&](int d, int c, int ky, int kx) {
    if (ky < 0 || ky >= side_t || kx < 0 || kx >= side_t) return 0.0;
    return kernel[((static_cast<std::size_t>(d) * k_prev + c) * side_t + ky) * side_t + kx];
  };
  // u = delta . C^{K_T} on the S_{T-1} positions q around the patch center;
  // delta sits on the S_T positions p, and the matrix entry is K[q - p + s].
  std::vector<double> u(static_cast<std::size_t>(k_prev) * side_p * side_p);
  for (int c = 0; c < k_prev; ++c) {
    for (int qy = -s_prev; qy <= s_prev; ++qy) {
      for (int qx = -s_prev; qx <= s_prev; ++qx) {
        double acc = 0;
        bool first = true;
        for (int d = 0; d < k_last; ++d) {
          for (int py = -s_last; py <= s_last; ++py) {
            for (int px = -s_last; px <= s_last; ++px) {
              const double dv =
                  delta[(static_cast<std::size_t>(d) * side_t + py + s_last) * side_t + px + s_last];
              const double prod = dv * kernel_at(d, c, qy - py + s_last, qx - px + s_last);
              if (first) {
                acc = prod;
                counter.flops(1);
                first = false;
              } else {
                acc += prod;
                counter.flops(2);
              }
            }
          }
        }
        const std::size_t i =
            (static_cast<std::size_t>(c) * side_p + qy + s_prev) * side_p + qx + s_prev;
        if (psi[i] > 0) {
          u[i] = acc;
        } else {
          u[i] = 0.1 * acc;
          ++out.activation_flops;
        }
      }
    }
  }
  out.ledger.add_flops(Phase::kGradPrev, out.activation_flops);
  const int o = 2 * s_prev;
  out.output.assign(static_cast<std::size_t>(k_prev2) * side_p * side_p, 0.0);
  for (int b = 0; b < k_prev2; ++b) {
    for (int ky = 0; ky < side_p; ++ky) {
      for (int kx = 0; kx < side_p; ++kx) {
        double acc = 0;
        bool first = true;
        for (int c = 0; c < k_prev; ++c) {
          for (int qy = -s_prev; qy <= s_prev; ++qy) {
            for (int qx = -s_prev; qx <= s_prev; ++qx) {
              const std::size_t i =
                  (static_cast<std::size_t>(c) * side_p + qy + s_prev) * side_p + qx + s_prev;
              const double prod = u[i] * phi.at(b, o + qy + ky - s_prev, o + qx + kx - s_prev);
              if (first) {
                acc = prod;
                counter.flops(1);
                first = false;
              } else {
                acc += prod;
                counter.flops(2);
              }
            }
          }
        }
        out.output[(static_cast<std::size_t>(b) * side_p + ky) * side_p + kx] = acc;
      }
    }
  }
  return out;
}

AffineFit fit_affine(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ValidationError("affine fit needs at least two paired points");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw ValidationError("affine fit needs distinct x values");
  AffineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += r * r;
  }
  f.r_squared = syy == 0 ? (ss_res == 0 ? 1.0 : 0.0) : 1.0 - ss_res / syy;
  return f;
}

std::vector<CertificationRow> certification_report(const FlopParams& p, std::uint64_t seed) {
  std::vector<CertificationRow> rows;

  {
    Rng rng(mix_seed(seed, 11));
    std::vector<Instance> boxes(static_cast<std::size_t>(p.num_boxes));
    for (auto& b : boxes) {
      const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
      b.bbox = {x, y, x + rng.uniform(1, 20), y + rng.uniform(1, 20)};
      b.score = rng.uniform(0.01, 0.99);
      b.class_probs = {b.score};
    }
    FlopLedger ledger;
    const Instance probe = boxes.empty() ? Instance{} : boxes.front();
    candidate_mask(boxes, probe, 0.0, kDefaultIouThreshold, &ledger);
    rows.push_back({"mask_iou", ledger.flops(Phase::kMaskIou),
                    certified_flop_count(Phase::kMaskIou, p), true});
  }
  {
    const GradLastKernel k = grad_last_microkernel(p.k_last, p.k_prev, p.s_last, seed);
    rows.push_back({"grad_last", k.ledger.flops(Phase::kGradLast),
                    certified_flop_count(Phase::kGradLast, p), true});
  }
  {
    const GradPrevKernel k =
        grad_prev_microkernel(p.k_last, p.k_prev, p.k_prev2, p.s_last, p.s_prev, seed);
    rows.push_back({"grad_prev_without_activation",
                    k.ledger.flops(Phase::kGradPrev) - k.activation_flops,
                    certified_flop_count(Phase::kGradPrev, p), true});
  }
  {
    ConvLayer last;
    last.in_channels = p.k_prev;
    last.out_channels = p.k_last;
    last.radius = p.s_last;
    last.identity = true;
    last.kernel.assign(static_cast<std::size_t>(p.k_last) * p.k_prev * p.taps_last(), 0.5);
    last.bias.assign(static_cast<std::size_t>(p.k_last), 0.1);
    ConvHead head;
    head.layers.push_back(last);
    const FeatureMap phi = random_feature_map(p.k_prev, p.height, p.width, mix_seed(seed, 12));
    FlopLedger ledger;
    mc_dropout_sample(head, phi, 0.5, p.num_samples, seed, &ledger);
    const std::uint64_t measured = ledger.flops(Phase::kDropoutForward);
    const std::uint64_t bound = certified_flop_count(Phase::kDropoutForward, p);
    rows.push_back({"dropout_forward", measured, bound, true});
    rows.push_back({"dropout_forward_upper", measured, bound, false});
  }
  return rows;
}

}  // namespace gradunc
