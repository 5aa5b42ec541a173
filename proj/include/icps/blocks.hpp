#pragma once

#include <string>
#include <vector>

#include "icps/layers.hpp"

namespace icps {

/// How the holistic correlation scalar is scaled before redistribution.
enum class ScaleMode {
  raw,      ///< plain inner product of flattened Q and K
  inv_chw,  ///< inner product divided by the number of flattened elements
};

std::string to_string(ScaleMode mode);
ScaleMode scale_mode_from_string(const std::string& name);

/// Receptive-field-expanding block: parallel separable-kernel branches
/// concatenated on channels and reduced to `out_channels` by a 1x1 conv.
struct RfeConfig {
  Index in_channels = 1;
  Index out_channels = 32;
  std::vector<Index> branch_kernels{1, 3, 5, 7};
  bool use_norm_act = true;

  void validate() const;
  std::int64_t parameter_count() const;
};

template <typename Scalar>
class Rfe : public Module<Scalar> {
 public:
  Rfe() = default;
  Rfe(const RfeConfig& cfg, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;
  void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) override;
  void set_training(bool training) override;

  const RfeConfig& config() const { return cfg_; }

  /// branches[b] is the 1x1 -> 1xk -> kx1 chain (a single 1x1 for kernel 1).
  std::vector<std::vector<ConvBnAct<Scalar>>> branches;
  ConvBnAct<Scalar> reduce;

 private:
  RfeConfig cfg_{};
};

/// Q/K/V projections plus the scalar-times-tensor redistribution shared by
/// the single-stage and cross-stage blocks.
template <typename Scalar>
class HolisticRedistribution : public Module<Scalar> {
 public:
  HolisticRedistribution() = default;
  HolisticRedistribution(Index channels, ScaleMode mode, Rng& rng);

  /// Returns F_H * V(x); F_H per batch element is dot(flatten(Q(x)), flatten(K(x))).
  Tensor<Scalar> forward(const Tensor<Scalar>& x, const char* block_name);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;

  ScaleMode scale_mode() const { return mode_; }
  /// F_H of the most recent forward, one entry per batch element.
  const std::vector<Scalar>& holistic() const { return holistic_; }

  Conv2d<Scalar> q;
  Conv2d<Scalar> k;
  Conv2d<Scalar> v;

 private:
  Index channels_ = 0;
  ScaleMode mode_ = ScaleMode::raw;
  Tensor<Scalar> q_out_, k_out_, v_out_;
  std::vector<Scalar> holistic_;
};

/// Pixel-wise feature redistribution over one stage.
template <typename Scalar>
class Pfr : public Module<Scalar> {
 public:
  Pfr() = default;
  Pfr(Index channels, ScaleMode mode, Rng& rng) : core(channels, mode, rng), channels_(channels) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) { return core.backward(dy); }

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override {
    core.collect_parameters(prefix, out);
  }

  Index channels() const { return channels_; }

  HolisticRedistribution<Scalar> core;

 private:
  Index channels_ = 0;
};

/// Cross-stage redistribution: concat(low, high) -> holistic redistribution
/// over 2C channels -> 1x1 reduction back to C.
template <typename Scalar>
class Cpfr : public Module<Scalar> {
 public:
  Cpfr() = default;
  Cpfr(Index channels, ScaleMode mode, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& low, const Tensor<Scalar>& high);
  /// Returns {d_low, d_high}.
  std::pair<Tensor<Scalar>, Tensor<Scalar>> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;

  HolisticRedistribution<Scalar> core;
  Conv2d<Scalar> out_proj;

 private:
  Index channels_ = 0;
};

/// Plain fusion used when cross-stage redistribution is ablated:
/// channel concat followed by a 1x1 conv 2C -> C.
template <typename Scalar>
class ConcatFuse : public Module<Scalar> {
 public:
  ConcatFuse() = default;
  ConcatFuse(Index channels, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& low, const Tensor<Scalar>& high);
  std::pair<Tensor<Scalar>, Tensor<Scalar>> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override {
    conv.collect_parameters(join_name(prefix, "conv"), out);
  }

  Conv2d<Scalar> conv;

 private:
  Index channels_ = 0;
};

}  // namespace icps
