#include "icps/objective.hpp"

#include <algorithm>
#include <cmath>

namespace icps {

void LossConfig::validate() const {
  require(weight_kernel >= 1 && weight_kernel % 2 == 1, "LossConfig: weight_kernel must be odd and >= 1");
  require(weight_gain >= 0.0, "LossConfig: weight_gain must be non-negative");
  require(weighted_bce || weighted_iou, "LossConfig: at least one loss term must be enabled");
}

double LossConfig::supervision_weight(const std::string& head) const {
  const auto it = supervision_weights.find(head);
  return it == supervision_weights.end() ? 1.0 : it->second;
}

namespace {

template <typename Scalar>
void require_binary(const Tensor<Scalar>& gt, const char* where) {
  for (Index i = 0; i < gt.size(); ++i) {
    const Scalar v = gt.data()[i];
    if (v != Scalar(0) && v != Scalar(1)) throw ContractViolation(std::string(where) + ": ground truth must be binary");
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> pixel_weights(const Tensor<Scalar>& gt, const LossConfig& cfg) {
  cfg.validate();
  require(gt.c() == 1, "pixel_weights: mask must have one channel, got " + gt.shape().str());
  require_binary(gt, "pixel_weights");
  const Index H = gt.h(), W = gt.w(), r = cfg.weight_kernel / 2;
  Tensor<Scalar> w(gt.shape());
  // integral image; integer-valued sums are exact in double
  std::vector<double> integral(static_cast<std::size_t>((H + 1) * (W + 1)));
  auto at = [&](Index y, Index x) -> double& { return integral[static_cast<std::size_t>(y * (W + 1) + x)]; };
  for (Index n = 0; n < gt.n(); ++n) {
    const Scalar* g = gt.data() + n * H * W;
    for (Index y = 0; y < H; ++y) {
      double row = 0.0;
      for (Index x = 0; x < W; ++x) {
        row += static_cast<double>(g[y * W + x]);
        at(y + 1, x + 1) = at(y, x + 1) + row;
      }
    }
    Scalar* out = w.data() + n * H * W;
    for (Index y = 0; y < H; ++y) {
      const Index y0 = std::max<Index>(0, y - r), y1 = std::min<Index>(H - 1, y + r);
      for (Index x = 0; x < W; ++x) {
        const Index x0 = std::max<Index>(0, x - r), x1 = std::min<Index>(W - 1, x + r);
        const double s = at(y1 + 1, x1 + 1) - at(y0, x1 + 1) - at(y1 + 1, x0) + at(y0, x0);
        const double mean = s / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
        out[y * W + x] = static_cast<Scalar>(1.0 + cfg.weight_gain * std::abs(mean - static_cast<double>(g[y * W + x])));
      }
    }
  }
  return w;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> LossResult<Scalar>::logit_grads() const {
  std::vector<Tensor<Scalar>> out;
  for (const auto& h : heads) out.push_back(h.d_logits);
  return out;
}

template <typename Scalar>
std::map<std::string, double> LossResult<Scalar>::breakdown() const {
  std::map<std::string, double> out;
  for (const auto& h : heads) out[h.name] = h.total;
  return out;
}

template <typename Scalar>
LossResult<Scalar> deep_supervised_loss(const PredictionSet<Scalar>& preds, const Tensor<Scalar>& gt,
                                        const LossConfig& cfg, bool with_grad) {
  cfg.validate();
  require(!preds.heads.empty(), "deep_supervised_loss: empty PredictionSet");
  const Tensor<Scalar> weights = pixel_weights(gt, cfg);
  const Index N = gt.n(), M = gt.shape().per_sample();
  LossResult<Scalar> result;
  for (const auto& head : preds.heads) {
    require(head.prob.shape() == gt.shape(), "deep_supervised_loss: head " + head.name + " has shape " +
                                                 head.prob.shape().str() + " but ground truth is " +
                                                 gt.shape().str());
    const double sw = cfg.supervision_weight(head.name);
    HeadLoss<Scalar> hl;
    hl.name = head.name;
    const bool logits = !head.logits.empty();
    if (with_grad) {
      hl.d_prob = Tensor<Scalar>(gt.shape());
      if (logits) hl.d_logits = Tensor<Scalar>(gt.shape());
    }
    for (Index n = 0; n < N; ++n) {
      const Scalar* p = head.prob.data() + n * M;
      const Scalar* y = gt.data() + n * M;
      const Scalar* w = weights.data() + n * M;
      double wsum = 0.0, bce = 0.0, inter = 0.0, uni = 0.0;
      for (Index i = 0; i < M; ++i) {
        const double pi = static_cast<double>(p[i]), yi = static_cast<double>(y[i]), wi = static_cast<double>(w[i]);
        const double pc = std::clamp(pi, kProbEps, 1.0 - kProbEps);
        wsum += wi;
        bce += -wi * (yi * std::log(pc) + (1.0 - yi) * std::log(1.0 - pc));
        inter += pi * yi * wi;
        uni += (pi + yi) * wi;
      }
      const double img_bce = bce / wsum;
      const double denom = uni - inter + 1.0;
      const double img_iou = 1.0 - (inter + 1.0) / denom;
      if (cfg.weighted_bce) hl.bce += img_bce / static_cast<double>(N);
      if (cfg.weighted_iou) hl.iou += img_iou / static_cast<double>(N);
      if (!with_grad) continue;
      Scalar* dp = hl.d_prob.data() + n * M;
      Scalar* dz = logits ? hl.d_logits.data() + n * M : nullptr;
      const double scale = sw / static_cast<double>(N);
      for (Index i = 0; i < M; ++i) {
        const double pi = static_cast<double>(p[i]), yi = static_cast<double>(y[i]), wi = static_cast<double>(w[i]);
        const double pc = std::clamp(pi, kProbEps, 1.0 - kProbEps);
        double g_prob = 0.0, g_logit = 0.0;
        if (cfg.weighted_bce) {
          g_prob += wi * (-yi / pc + (1.0 - yi) / (1.0 - pc)) / wsum;
          g_logit += wi * (pi - yi) / wsum;
        }
        if (cfg.weighted_iou) {
          // d/dp of -(I + 1)/(U - I + 1) with dI = y w, dU = w
          const double d_inter = yi * wi, d_uni = wi;
          const double g = -(d_inter * denom - (inter + 1.0) * (d_uni - d_inter)) / (denom * denom);
          g_prob += g;
          g_logit += g * pi * (1.0 - pi);
        }
        dp[i] = static_cast<Scalar>(scale * g_prob);
        if (dz) dz[i] = static_cast<Scalar>(scale * g_logit);
      }
    }
    hl.total = hl.bce + hl.iou;
    result.total += sw * hl.total;
    result.heads.push_back(std::move(hl));
  }
  return result;
}

#define ICPS_INSTANTIATE_OBJECTIVE(S)                                                                  \
  template Tensor<S> pixel_weights<S>(const Tensor<S>&, const LossConfig&);                            \
  template struct LossResult<S>;                                                                       \
  template LossResult<S> deep_supervised_loss<S>(const PredictionSet<S>&, const Tensor<S>&, const LossConfig&, \
                                                 bool);

ICPS_INSTANTIATE_OBJECTIVE(float)
ICPS_INSTANTIATE_OBJECTIVE(double)

}  // namespace icps
