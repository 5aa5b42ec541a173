#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icps/blocks.hpp"

namespace icps {

/// Five-stage pyramid encoder description. Each stage halves the resolution.
struct EncoderSpec {
  std::string name = "plain";
  std::array<Index, 5> stage_channels{16, 24, 32, 64, 96};
  static constexpr std::array<Index, 5> stage_strides{2, 2, 2, 2, 2};
};

/// Coarse-to-fine calibration settings. Stage count, width, kernel and pooling are fixed.
struct CfcConfig {
  static constexpr Index stages = 4;
  static constexpr Index stage_width = 32;
  static constexpr Index kernel = 3;
  static constexpr Index pool = 2;
  bool zero_init_residual_head = true;
};

struct ModelConfig {
  EncoderSpec encoder;
  Index decoder_width = 32;
  Index input_size = 352;
  bool use_pfr = true;
  bool use_cpfr = true;
  bool use_cfc = true;
  ScaleMode pfr_scale_mode = ScaleMode::raw;
  ScaleMode cpfr_scale_mode = ScaleMode::raw;
  CfcConfig cfc;

  void validate() const;
};

/// One supervised output: logits and sigmoid probabilities at full input resolution.
template <typename Scalar>
struct HeadOutput {
  std::string name;  // "p5" .. "p1"
  Tensor<Scalar> logits;
  Tensor<Scalar> prob;
};

/// Side outputs p5..p2 and, when the refinement module is enabled, p1.
template <typename Scalar>
struct PredictionSet {
  std::vector<HeadOutput<Scalar>> heads;

  bool has(const std::string& name) const;
  const HeadOutput<Scalar>& at(const std::string& name) const;
  /// p1 if present, else p2.
  const HeadOutput<Scalar>& final_output() const;
};

/// Intermediate features captured by the last Model::forward call.
template <typename Scalar>
struct ForwardTrace {
  std::array<Tensor<Scalar>, 5> encoder;  // F_enc^(1..5)
  std::array<Tensor<Scalar>, 4> rfe;      // stages 2..5
  std::array<Tensor<Scalar>, 4> decoder;  // stages 2..5
};

/// Plain conv pyramid: per stage a stride-2 3x3 conv and a stride-1 3x3 conv,
/// each followed by batch norm and ReLU.
template <typename Scalar>
class PlainEncoder : public Module<Scalar> {
 public:
  PlainEncoder() = default;
  PlainEncoder(const EncoderSpec& spec, Rng& rng);

  std::array<Tensor<Scalar>, 5> forward(const Tensor<Scalar>& x);
  /// Gradients per stage output; empty tensors are treated as zero.
  Tensor<Scalar> backward(const std::array<Tensor<Scalar>, 5>& grads);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;
  void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) override;
  void set_training(bool training) override;

  struct Stage {
    ConvBnAct<Scalar> down;
    ConvBnAct<Scalar> refine;
  };
  std::vector<Stage> stages;
};

/// Residual refinement of a coarse logit map: conv/pool encoder, then a
/// receptive-field / redistribution decoder that predicts residual logits.
template <typename Scalar>
class Cfc : public Module<Scalar> {
 public:
  Cfc() = default;
  Cfc(const CfcConfig& cfg, ScaleMode pfr_mode, ScaleMode cpfr_mode, Rng& rng);

  /// Returns refined logits coarse + residual. Probabilities are sigmoid of the result.
  Tensor<Scalar> forward(const Tensor<Scalar>& coarse_logits);
  /// Gradient w.r.t. the coarse logits given the gradient w.r.t. refined logits.
  Tensor<Scalar> backward(const Tensor<Scalar>& d_refined);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;
  void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) override;
  void set_training(bool training) override;

  /// Residual logits of the most recent forward at full resolution.
  const Tensor<Scalar>& residual() const { return residual_; }

  std::array<ConvBnAct<Scalar>, 4> enc;
  std::array<MaxPool2x2<Scalar>, 4> pool;
  std::array<Rfe<Scalar>, 4> rfe;
  Pfr<Scalar> pfr;
  std::array<Cpfr<Scalar>, 3> cpfr;  // cpfr[i] fuses stage i with the upsampled stage i+1
  Conv2d<Scalar> head;

 private:
  std::array<Shape, 4> decoder_shapes_{};
  Shape head_in_shape_{};
  Tensor<Scalar> residual_;
};

/// Probability map from coarse logits through the refinement module: sigmoid(coarse + residual).
template <typename Scalar>
Tensor<Scalar> cfc_forward(Cfc<Scalar>& cfc, const Tensor<Scalar>& coarse_logits);

template <typename Scalar>
class Model : public Module<Scalar> {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// Full forward at the configured input size.
  PredictionSet<Scalar> forward(const Tensor<Scalar>& images);
  /// Forward at any square size divisible by 32 (multi-scale training).
  PredictionSet<Scalar> forward_rescaled(const Tensor<Scalar>& images);
  /// Backpropagate gradients w.r.t. each head's logits, in PredictionSet order.
  /// Empty tensors are treated as zero. Parameter gradients accumulate.
  void backward(const std::vector<Tensor<Scalar>>& d_logits);

  const ForwardTrace<Scalar>& trace() const { return trace_; }

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;
  void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) override;
  void set_training(bool training) override;

  PlainEncoder<Scalar> encoder;
  std::array<Rfe<Scalar>, 4> rfe;  // rfe[i] serves stage i + 2
  std::optional<Pfr<Scalar>> pfr;
  std::array<Cpfr<Scalar>, 3> cpfr;        // cpfr[i] fuses stage i + 2; used when use_cpfr
  std::array<ConcatFuse<Scalar>, 3> fuse;  // used when !use_cpfr
  std::array<Conv2d<Scalar>, 4> heads;     // heads[i] predicts stage i + 2
  std::optional<Cfc<Scalar>> cfc;

 private:
  PredictionSet<Scalar> run(const Tensor<Scalar>& images);

  ModelConfig cfg_{};
  Index size_ = 0;
  ForwardTrace<Scalar> trace_;
};

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<Scalar>(cfg, seed);
}

/// All parameter values concatenated in enumeration order.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten_parameters(Module<Scalar>& module);

template <typename Scalar>
std::int64_t parameter_count(Module<Scalar>& module) {
  std::int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.param->value.size();
  return total;
}

}  // namespace icps
