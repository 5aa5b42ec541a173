#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "icps/layers.hpp"

namespace icps {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with decoupled weight decay.
///
/// Per step t and parameter p with gradient g:
///   p <- p - lr * wd * p
///   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename Scalar>
class AdamW {
 public:
  AdamW(ParameterList<Scalar> params, const AdamWConfig& cfg);

  void step();
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParameterList<Scalar> params_;
  AdamWConfig cfg_;
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> m_, v_;
  std::int64_t steps_ = 0;
};

/// Global L2 norm of all gradients; rescales them to `max_norm` when larger.
template <typename Scalar>
double clip_grad_norm(const ParameterList<Scalar>& params, double max_norm);

/// Stops once the monitored value has failed to improve for `patience` consecutive epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records one epoch's value; returns true when training should stop.
  bool update(double value);

  bool improved() const { return improved_; }
  double best() const { return best_; }
  int epochs_without_improvement() const { return stale_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
  bool improved_ = false;
};

}  // namespace icps
