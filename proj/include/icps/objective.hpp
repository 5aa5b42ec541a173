#pragma once

#include <map>
#include <string>
#include <vector>

#include "icps/network.hpp"

namespace icps {

struct LossConfig {
  Index weight_kernel = 31;
  double weight_gain = 5.0;
  bool weighted_bce = true;
  bool weighted_iou = true;
  std::map<std::string, double> supervision_weights{{"p5", 1.0}, {"p4", 1.0}, {"p3", 1.0}, {"p2", 1.0}, {"p1", 1.0}};

  void validate() const;
  double supervision_weight(const std::string& head) const;
};

/// Probabilities are clamped to [kProbEps, 1 - kProbEps] inside the log terms.
inline constexpr double kProbEps = 1e-7;

/// w = 1 + gain * |local_mean(gt) - gt|, local mean over a k x k window
/// that averages only in-bounds pixels.
template <typename Scalar>
Tensor<Scalar> pixel_weights(const Tensor<Scalar>& gt, const LossConfig& cfg);

template <typename Scalar>
struct HeadLoss {
  std::string name;
  double bce = 0.0;  // batch mean of per-image weighted BCE
  double iou = 0.0;  // batch mean of per-image weighted soft-IoU loss
  double total = 0.0;
  Tensor<Scalar> d_prob;    // d(total loss)/d(prob), supervision weight included
  Tensor<Scalar> d_logits;  // d(total loss)/d(logits); empty when the head carries no logits
};

template <typename Scalar>
struct LossResult {
  double total = 0.0;
  std::vector<HeadLoss<Scalar>> heads;

  /// Logit gradients in PredictionSet order, ready for Model::backward.
  std::vector<Tensor<Scalar>> logit_grads() const;
  std::map<std::string, double> breakdown() const;
};

/// Weighted BCE + weighted soft-IoU per head, summed with supervision weights.
template <typename Scalar>
LossResult<Scalar> deep_supervised_loss(const PredictionSet<Scalar>& preds, const Tensor<Scalar>& gt,
                                        const LossConfig& cfg, bool with_grad = true);

}  // namespace icps
