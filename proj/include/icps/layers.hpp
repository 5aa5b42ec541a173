#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icps/rng.hpp"
#include "icps/tensor.hpp"

namespace icps {

/// A learnable array and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  std::vector<Index> dims;  // logical shape recorded in checkpoints

  void zero_grad() { grad.set_zero(); }
};

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Parameter<Scalar>* param;
};

/// Non-learnable persistent state (batch-norm running statistics).
template <typename Scalar>
struct NamedBuffer {
  std::string name;
  Tensor<Scalar>* tensor;
  std::vector<Index> dims;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;
template <typename Scalar>
using BufferList = std::vector<NamedBuffer<Scalar>>;

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// Anything that owns parameters.
template <typename Scalar>
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) = 0;
  virtual void collect_buffers(const std::string& /*prefix*/, BufferList<Scalar>& /*out*/) {}
  virtual void set_training(bool /*training*/) {}

  ParameterList<Scalar> parameters(const std::string& prefix = "") {
    ParameterList<Scalar> out;
    collect_parameters(prefix, out);
    return out;
  }
  BufferList<Scalar> buffers(const std::string& prefix = "") {
    BufferList<Scalar> out;
    collect_buffers(prefix, out);
    return out;
  }
  void zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
  }
};

/// Scoped multiply-accumulate counter. Layers report analytic MACs while one is active.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::int64_t total() const { return total_; }
  static void add(std::int64_t macs);

 private:
  std::int64_t total_ = 0;
  MacCounter* previous_ = nullptr;
};

struct Conv2dSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index pad_h = 0;
  Index pad_w = 0;

  /// Square kernel, unit stride, size-preserving padding.
  static Conv2dSpec same(Index in, Index out, Index k) { return {in, out, k, k, 1, (k - 1) / 2, (k - 1) / 2}; }
  /// kh x kw kernel with size-preserving zero padding on each axis.
  static Conv2dSpec separable(Index in, Index out, Index kh, Index kw) {
    return {in, out, kh, kw, 1, (kh - 1) / 2, (kw - 1) / 2};
  }

  Index out_h(Index h) const { return (h + 2 * pad_h - kernel_h) / stride + 1; }
  Index out_w(Index w) const { return (w + 2 * pad_w - kernel_w) / stride + 1; }
  std::int64_t parameter_count() const { return out_channels * in_channels * kernel_h * kernel_w + out_channels; }
};

/// 2-D convolution with bias, computed as im2col + GEMM.
template <typename Scalar>
class Conv2d : public Module<Scalar> {
 public:
  Conv2d() = default;
  Conv2d(const Conv2dSpec& spec, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;

  const Conv2dSpec& spec() const { return spec_; }
  /// Weight as a (out_channels x in_channels*kh*kw) row-major matrix.
  typename Tensor<Scalar>::MatrixMap weight_matrix() {
    return typename Tensor<Scalar>::MatrixMap(weight.value.data(), spec_.out_channels,
                                              spec_.in_channels * spec_.kernel_h * spec_.kernel_w);
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  bool pointwise() const {
    return spec_.kernel_h == 1 && spec_.kernel_w == 1 && spec_.stride == 1 && spec_.pad_h == 0 && spec_.pad_w == 0;
  }
  void im2col(const Tensor<Scalar>& x, Index n, typename Tensor<Scalar>::RowMatrix& col) const;
  void col2im(const typename Tensor<Scalar>::RowMatrix& col, Tensor<Scalar>& dx, Index n) const;

  Conv2dSpec spec_{};
  Tensor<Scalar> input_;
};

/// Per-channel batch normalization with running statistics for eval mode.
template <typename Scalar>
class BatchNorm2d : public Module<Scalar> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(Index channels);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;
  void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) override;
  void set_training(bool training) override { training_ = training; }

  Parameter<Scalar> gamma;
  Parameter<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;

 private:
  Index channels_ = 0;
  bool training_ = true;
  Tensor<Scalar> normalized_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std_;
};

template <typename Scalar>
class Relu {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const;

 private:
  Tensor<Scalar> output_;
};

/// Convolution, optionally followed by batch norm and ReLU.
template <typename Scalar>
class ConvBnAct : public Module<Scalar> {
 public:
  ConvBnAct() = default;
  ConvBnAct(const Conv2dSpec& spec, bool norm_act, Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy);

  void collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) override;
  void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) override;
  void set_training(bool training) override { bn.set_training(training); }

  bool norm_act() const { return norm_act_; }

  Conv2d<Scalar> conv;
  BatchNorm2d<Scalar> bn;

 private:
  bool norm_act_ = true;
  Relu<Scalar> relu_;
};

/// Non-overlapping 2x2 max pooling; H and W must be even.
template <typename Scalar>
class MaxPool2x2 {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x);
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const;

 private:
  Shape input_shape_{};
  std::vector<std::int32_t> argmax_;
};

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w);

/// Adjoint of resize_bilinear.
template <typename Scalar>
Tensor<Scalar> resize_bilinear_backward(const Tensor<Scalar>& dy, Index in_h, Index in_w);

/// Nearest-neighbour resize (source index floor(dst * in / out)).
template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, Index out_h, Index out_w);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

/// Fan-in scaled uniform initialization, bound 1/sqrt(fan_in).
template <typename Scalar>
void init_fan_in_uniform(Tensor<Scalar>& t, Index fan_in, Rng& rng);

}  // namespace icps
