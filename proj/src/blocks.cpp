#include "icps/blocks.hpp"

#include <cmath>

namespace icps {

std::string to_string(ScaleMode mode) { return mode == ScaleMode::raw ? "raw" : "inv_chw"; }

ScaleMode scale_mode_from_string(const std::string& name) {
  if (name == "raw") return ScaleMode::raw;
  if (name == "inv_chw") return ScaleMode::inv_chw;
  throw ContractViolation("unknown scale mode '" + name + "' (expected raw or inv_chw)");
}

void RfeConfig::validate() const {
  require(in_channels > 0 && out_channels > 0, "RfeConfig: channel counts must be positive");
  require(!branch_kernels.empty() && branch_kernels.front() == 1, "RfeConfig: first branch kernel must be 1");
  for (Index k : branch_kernels) require(k >= 1 && k % 2 == 1, "RfeConfig: branch kernels must be odd and >= 1");
}

std::int64_t RfeConfig::parameter_count() const {
  const std::int64_t bn = use_norm_act ? 2 * out_channels : 0;
  std::int64_t total = 0;
  for (Index k : branch_kernels) {
    total += Conv2dSpec{in_channels, out_channels, 1, 1}.parameter_count() + bn;
    if (k > 1) total += 2 * (Conv2dSpec{out_channels, out_channels, 1, k}.parameter_count() + bn);
  }
  const Index concat = out_channels * static_cast<Index>(branch_kernels.size());
  total += Conv2dSpec{concat, out_channels, 1, 1}.parameter_count() + bn;
  return total;
}

// ---------------------------------------------------------------- Rfe

template <typename Scalar>
Rfe<Scalar>::Rfe(const RfeConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const Index C = cfg.out_channels;
  for (Index k : cfg.branch_kernels) {
    std::vector<ConvBnAct<Scalar>> chain;
    chain.emplace_back(Conv2dSpec{cfg.in_channels, C, 1, 1}, cfg.use_norm_act, rng);
    if (k > 1) {
      chain.emplace_back(Conv2dSpec::separable(C, C, 1, k), cfg.use_norm_act, rng);
      chain.emplace_back(Conv2dSpec::separable(C, C, k, 1), cfg.use_norm_act, rng);
    }
    branches.push_back(std::move(chain));
  }
  reduce = ConvBnAct<Scalar>(Conv2dSpec{C * static_cast<Index>(cfg.branch_kernels.size()), C, 1, 1},
                             cfg.use_norm_act, rng);
}

template <typename Scalar>
Tensor<Scalar> Rfe<Scalar>::forward(const Tensor<Scalar>& x) {
  require(x.c() == cfg_.in_channels, "rfe_forward: expected " + std::to_string(cfg_.in_channels) +
                                         " input channels, got shape " + x.shape().str());
  require(x.all_finite(), "rfe_forward: input contains non-finite values");
  const Index C = cfg_.out_channels;
  Tensor<Scalar> cat(x.n(), C * static_cast<Index>(branches.size()), x.h(), x.w());
  for (std::size_t b = 0; b < branches.size(); ++b) {
    Tensor<Scalar> y = x;
    for (auto& layer : branches[b]) y = layer.forward(y);
    for (Index n = 0; n < x.n(); ++n) cat.sample(n).middleRows(static_cast<Index>(b) * C, C) = y.sample(n);
  }
  return reduce.forward(cat);
}

template <typename Scalar>
Tensor<Scalar> Rfe<Scalar>::backward(const Tensor<Scalar>& dy) {
  const Tensor<Scalar> dcat = reduce.backward(dy);
  const Index C = cfg_.out_channels;
  Tensor<Scalar> dx;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    Tensor<Scalar> g(dcat.n(), C, dcat.h(), dcat.w());
    for (Index n = 0; n < dcat.n(); ++n) g.sample(n) = dcat.sample(n).middleRows(static_cast<Index>(b) * C, C);
    for (auto it = branches[b].rbegin(); it != branches[b].rend(); ++it) g = it->backward(g);
    if (b == 0)
      dx = std::move(g);
    else
      dx += g;
  }
  return dx;
}

template <typename Scalar>
void Rfe<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const Index k = cfg_.branch_kernels[b];
    const std::string base = join_name(prefix, "branch" + std::to_string(k));
    branches[b][0].collect_parameters(join_name(base, "conv1x1"), out);
    if (k > 1) {
      branches[b][1].collect_parameters(join_name(base, "conv1x" + std::to_string(k)), out);
      branches[b][2].collect_parameters(join_name(base, "conv" + std::to_string(k) + "x1"), out);
    }
  }
  reduce.collect_parameters(join_name(prefix, "reduce"), out);
}

template <typename Scalar>
void Rfe<Scalar>::collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const Index k = cfg_.branch_kernels[b];
    const std::string base = join_name(prefix, "branch" + std::to_string(k));
    branches[b][0].collect_buffers(join_name(base, "conv1x1"), out);
    if (k > 1) {
      branches[b][1].collect_buffers(join_name(base, "conv1x" + std::to_string(k)), out);
      branches[b][2].collect_buffers(join_name(base, "conv" + std::to_string(k) + "x1"), out);
    }
  }
  reduce.collect_buffers(join_name(prefix, "reduce"), out);
}

template <typename Scalar>
void Rfe<Scalar>::set_training(bool training) {
  for (auto& chain : branches)
    for (auto& layer : chain) layer.set_training(training);
  reduce.set_training(training);
}

// ---------------------------------------------------------------- HolisticRedistribution

template <typename Scalar>
HolisticRedistribution<Scalar>::HolisticRedistribution(Index channels, ScaleMode mode, Rng& rng)
    : q(Conv2dSpec{channels, channels, 1, 1}, rng),
      k(Conv2dSpec{channels, channels, 1, 1}, rng),
      v(Conv2dSpec{channels, channels, 1, 1}, rng),
      channels_(channels),
      mode_(mode) {}

template <typename Scalar>
Tensor<Scalar> HolisticRedistribution<Scalar>::forward(const Tensor<Scalar>& x, const char* block_name) {
  require(x.c() == channels_, std::string(block_name) + ": expected " + std::to_string(channels_) +
                                  " channels, got shape " + x.shape().str());
  q_out_ = q.forward(x);
  k_out_ = k.forward(x);
  v_out_ = v.forward(x);
  const Index m = x.shape().per_sample();
  const Scalar scale = mode_ == ScaleMode::inv_chw ? Scalar(1) / Scalar(m) : Scalar(1);
  holistic_.assign(static_cast<std::size_t>(x.n()), Scalar(0));
  Tensor<Scalar> out(x.shape());
  using RowVec = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>;
  using ColVec = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  for (Index n = 0; n < x.n(); ++n) {
    // (1 x M) * (M x 1) batch product -> 1x1 holistic correlation
    const RowVec fq(q_out_.data() + n * m, m);
    const ColVec fk(k_out_.data() + n * m, m);
    const Scalar fh = (fq * fk).value() * scale;
    if (!std::isfinite(fh)) {
      throw NumericalError(std::string(block_name) + ": non-finite holistic correlation F_H at batch element " +
                           std::to_string(n));
    }
    holistic_[static_cast<std::size_t>(n)] = fh;
    out.flat_sample(n) = fh * v_out_.flat_sample(n);
  }
  MacCounter::add(2 * x.n() * m);
  return out;
}

template <typename Scalar>
Tensor<Scalar> HolisticRedistribution<Scalar>::backward(const Tensor<Scalar>& dy) {
  require(dy.shape() == v_out_.shape(), "holistic redistribution backward: gradient shape mismatch");
  const Index m = dy.shape().per_sample();
  const Scalar scale = mode_ == ScaleMode::inv_chw ? Scalar(1) / Scalar(m) : Scalar(1);
  Tensor<Scalar> dq(dy.shape()), dk(dy.shape()), dv(dy.shape());
  for (Index n = 0; n < dy.n(); ++n) {
    const Scalar fh = holistic_[static_cast<std::size_t>(n)];
    dv.flat_sample(n) = fh * dy.flat_sample(n);
    const Scalar dfh = dy.flat_sample(n).dot(v_out_.flat_sample(n)) * scale;
    dq.flat_sample(n) = dfh * k_out_.flat_sample(n);
    dk.flat_sample(n) = dfh * q_out_.flat_sample(n);
  }
  Tensor<Scalar> dx = q.backward(dq);
  dx += k.backward(dk);
  dx += v.backward(dv);
  return dx;
}

template <typename Scalar>
void HolisticRedistribution<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  q.collect_parameters(join_name(prefix, "q"), out);
  k.collect_parameters(join_name(prefix, "k"), out);
  v.collect_parameters(join_name(prefix, "v"), out);
}

// ---------------------------------------------------------------- Pfr / Cpfr / ConcatFuse

template <typename Scalar>
Tensor<Scalar> Pfr<Scalar>::forward(const Tensor<Scalar>& x) {
  return core.forward(x, "pfr_forward");
}

template <typename Scalar>
Cpfr<Scalar>::Cpfr(Index channels, ScaleMode mode, Rng& rng)
    : core(2 * channels, mode, rng), out_proj(Conv2dSpec{2 * channels, channels, 1, 1}, rng), channels_(channels) {}

template <typename Scalar>
Tensor<Scalar> Cpfr<Scalar>::forward(const Tensor<Scalar>& low, const Tensor<Scalar>& high) {
  require(low.shape() == high.shape(),
          "cpfr_forward: low " + low.shape().str() + " and high " + high.shape().str() + " must share a shape");
  require(low.c() == channels_, "cpfr_forward: expected " + std::to_string(channels_) + " channels, got " +
                                    low.shape().str());
  return out_proj.forward(core.forward(concat_channels(low, high), "cpfr_forward"));
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> Cpfr<Scalar>::backward(const Tensor<Scalar>& dy) {
  const Tensor<Scalar> dcat = core.backward(out_proj.backward(dy));
  std::pair<Tensor<Scalar>, Tensor<Scalar>> grads;
  split_channels(dcat, channels_, grads.first, grads.second);
  return grads;
}

template <typename Scalar>
void Cpfr<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  core.collect_parameters(prefix, out);
  out_proj.collect_parameters(join_name(prefix, "out"), out);
}

template <typename Scalar>
ConcatFuse<Scalar>::ConcatFuse(Index channels, Rng& rng)
    : conv(Conv2dSpec{2 * channels, channels, 1, 1}, rng), channels_(channels) {}

template <typename Scalar>
Tensor<Scalar> ConcatFuse<Scalar>::forward(const Tensor<Scalar>& low, const Tensor<Scalar>& high) {
  require(low.shape() == high.shape(),
          "concat fusion: low " + low.shape().str() + " and high " + high.shape().str() + " must share a shape");
  return conv.forward(concat_channels(low, high));
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> ConcatFuse<Scalar>::backward(const Tensor<Scalar>& dy) {
  std::pair<Tensor<Scalar>, Tensor<Scalar>> grads;
  split_channels(conv.backward(dy), channels_, grads.first, grads.second);
  return grads;
}

template class Rfe<float>;
template class Rfe<double>;
template class HolisticRedistribution<float>;
template class HolisticRedistribution<double>;
template class Pfr<float>;
template class Pfr<double>;
template class Cpfr<float>;
template class Cpfr<double>;
template class ConcatFuse<float>;
template class ConcatFuse<double>;

}  // namespace icps
