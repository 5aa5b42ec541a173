#include "icps/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace icps {

namespace {
thread_local MacCounter* active_counter = nullptr;
}  // namespace

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }
MacCounter::~MacCounter() { active_counter = previous_; }

void MacCounter::add(std::int64_t macs) {
  for (MacCounter* c = active_counter; c != nullptr; c = c->previous_) c->total_ += macs;
}

template <typename Scalar>
void init_fan_in_uniform(Tensor<Scalar>& t, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const Conv2dSpec& spec, Rng& rng) : spec_(spec) {
  require(spec.in_channels > 0 && spec.out_channels > 0 && spec.kernel_h > 0 && spec.kernel_w > 0 && spec.stride > 0,
          "Conv2d: extents must be positive");
  weight.value = Tensor<Scalar>(spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w);
  weight.grad = Tensor<Scalar>(weight.value.shape());
  weight.dims = {spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  bias.value = Tensor<Scalar>(spec.out_channels, 1, 1, 1);
  bias.grad = Tensor<Scalar>(bias.value.shape());
  bias.dims = {spec.out_channels};
  const Index fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
  init_fan_in_uniform(weight.value, fan_in, rng);
  init_fan_in_uniform(bias.value, fan_in, rng);
}

template <typename Scalar>
void Conv2d<Scalar>::im2col(const Tensor<Scalar>& x, Index n, typename Tensor<Scalar>::RowMatrix& col) const {
  const Index H = x.h(), W = x.w();
  const Index Ho = spec_.out_h(H), Wo = spec_.out_w(W);
  const Index kh = spec_.kernel_h, kw = spec_.kernel_w, s = spec_.stride;
  col.resize(spec_.in_channels * kh * kw, Ho * Wo);
  const Scalar* src = x.data() + n * x.shape().per_sample();
  for (Index ci = 0; ci < spec_.in_channels; ++ci) {
    const Scalar* plane = src + ci * H * W;
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        Scalar* dst = col.data() + ((ci * kh + ky) * kw + kx) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * s - spec_.pad_h + ky;
          Scalar* row = dst + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(row, row + Wo, Scalar(0));
            continue;
          }
          const Scalar* in_row = plane + iy * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * s - spec_.pad_w + kx;
            row[ox] = (ix >= 0 && ix < W) ? in_row[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void Conv2d<Scalar>::col2im(const typename Tensor<Scalar>::RowMatrix& col, Tensor<Scalar>& dx, Index n) const {
  const Index H = dx.h(), W = dx.w();
  const Index Ho = spec_.out_h(H), Wo = spec_.out_w(W);
  const Index kh = spec_.kernel_h, kw = spec_.kernel_w, s = spec_.stride;
  Scalar* dst = dx.data() + n * dx.shape().per_sample();
  for (Index ci = 0; ci < spec_.in_channels; ++ci) {
    Scalar* plane = dst + ci * H * W;
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Scalar* src = col.data() + ((ci * kh + ky) * kw + kx) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * s - spec_.pad_h + ky;
          if (iy < 0 || iy >= H) continue;
          const Scalar* row = src + oy * Wo;
          Scalar* out_row = plane + iy * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * s - spec_.pad_w + kx;
            if (ix >= 0 && ix < W) out_row[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x) {
  require(x.c() == spec_.in_channels, "Conv2d: expected " + std::to_string(spec_.in_channels) +
                                          " input channels, got shape " + x.shape().str());
  const Index Ho = spec_.out_h(x.h()), Wo = spec_.out_w(x.w());
  require(Ho > 0 && Wo > 0, "Conv2d: input " + x.shape().str() + " too small for kernel");
  input_ = x;
  Tensor<Scalar> y(x.n(), spec_.out_channels, Ho, Wo);
  const auto w = weight_matrix();
  const Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b(bias.value.data(), spec_.out_channels);
  typename Tensor<Scalar>::RowMatrix col;
  for (Index n = 0; n < x.n(); ++n) {
    auto out = y.sample(n);
    if (pointwise()) {
      out.noalias() = w * x.sample(n);
    } else {
      im2col(x, n, col);
      out.noalias() = w * col;
    }
    out.colwise() += b;
  }
  MacCounter::add(x.n() * spec_.kernel_h * spec_.kernel_w * spec_.in_channels * spec_.out_channels * Ho * Wo);
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& dy) {
  const Tensor<Scalar>& x = input_;
  require(dy.n() == x.n() && dy.c() == spec_.out_channels && dy.h() == spec_.out_h(x.h()) &&
              dy.w() == spec_.out_w(x.w()),
          "Conv2d::backward: gradient shape " + dy.shape().str() + " does not match forward output");
  Tensor<Scalar> dx(x.shape());
  auto w = weight_matrix();
  typename Tensor<Scalar>::MatrixMap dw(weight.grad.data(), w.rows(), w.cols());
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> db(bias.grad.data(), spec_.out_channels);
  typename Tensor<Scalar>::RowMatrix col;
  typename Tensor<Scalar>::RowMatrix dcol;
  for (Index n = 0; n < x.n(); ++n) {
    const auto g = dy.sample(n);
    db += g.rowwise().sum();
    if (pointwise()) {
      dw.noalias() += g * x.sample(n).transpose();
      dx.sample(n).noalias() = w.transpose() * g;
    } else {
      im2col(x, n, col);
      dw.noalias() += g * col.transpose();
      dcol.noalias() = w.transpose() * g;
      col2im(dcol, dx, n);
    }
  }
  return dx;
}

template <typename Scalar>
void Conv2d<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  out.push_back({join_name(prefix, "weight"), &weight});
  out.push_back({join_name(prefix, "bias"), &bias});
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(Index channels) : channels_(channels) {
  gamma.value = Tensor<Scalar>::constant({channels, 1, 1, 1}, Scalar(1));
  gamma.grad = Tensor<Scalar>(Shape{channels, 1, 1, 1});
  gamma.dims = {channels};
  beta.value = Tensor<Scalar>(Shape{channels, 1, 1, 1});
  beta.grad = Tensor<Scalar>(Shape{channels, 1, 1, 1});
  beta.dims = {channels};
  running_mean = Tensor<Scalar>(Shape{channels, 1, 1, 1});
  running_var = Tensor<Scalar>::constant({channels, 1, 1, 1}, Scalar(1));
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::forward(const Tensor<Scalar>& x) {
  require(x.c() == channels_, "BatchNorm2d: expected " + std::to_string(channels_) + " channels, got " +
                                  x.shape().str());
  const Index m = x.n() * x.h() * x.w();
  normalized_ = Tensor<Scalar>(x.shape());
  inv_std_.resize(channels_);
  Tensor<Scalar> y(x.shape());
  for (Index c = 0; c < channels_; ++c) {
    Scalar mean, var;
    if (training_) {
      Scalar sum(0);
      for (Index n = 0; n < x.n(); ++n) sum += x.sample(n).row(c).sum();
      mean = sum / Scalar(m);
      Scalar sq(0);
      for (Index n = 0; n < x.n(); ++n) sq += (x.sample(n).row(c).array() - mean).square().sum();
      var = sq / Scalar(m);
      const Scalar mom(kMomentum);
      running_mean.data()[c] = (Scalar(1) - mom) * running_mean.data()[c] + mom * mean;
      const Scalar unbiased = m > 1 ? sq / Scalar(m - 1) : var;
      running_var.data()[c] = (Scalar(1) - mom) * running_var.data()[c] + mom * unbiased;
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(kEps));
    inv_std_[c] = inv;
    const Scalar g = gamma.value.data()[c], b = beta.value.data()[c];
    for (Index n = 0; n < x.n(); ++n) {
      auto xh = normalized_.sample(n).row(c);
      xh = (x.sample(n).row(c).array() - mean) * inv;
      y.sample(n).row(c) = (xh.array() * g + b).matrix();
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm2d<Scalar>::backward(const Tensor<Scalar>& dy) {
  require(dy.shape() == normalized_.shape(), "BatchNorm2d::backward: gradient shape mismatch");
  const Index m = dy.n() * dy.h() * dy.w();
  Tensor<Scalar> dx(dy.shape());
  for (Index c = 0; c < channels_; ++c) {
    Scalar sum_dy(0), sum_dy_xhat(0);
    for (Index n = 0; n < dy.n(); ++n) {
      sum_dy += dy.sample(n).row(c).sum();
      sum_dy_xhat += dy.sample(n).row(c).dot(normalized_.sample(n).row(c));
    }
    gamma.grad.data()[c] += sum_dy_xhat;
    beta.grad.data()[c] += sum_dy;
    const Scalar g = gamma.value.data()[c];
    const Scalar inv = inv_std_[c];
    for (Index n = 0; n < dy.n(); ++n) {
      if (training_) {
        const Scalar k = g * inv / Scalar(m);
        dx.sample(n).row(c) = (k * (Scalar(m) * dy.sample(n).row(c).array() - sum_dy -
                                    normalized_.sample(n).row(c).array() * sum_dy_xhat))
                                  .matrix();
      } else {
        dx.sample(n).row(c) = dy.sample(n).row(c) * (g * inv);
      }
    }
  }
  return dx;
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  out.push_back({join_name(prefix, "weight"), &gamma});
  out.push_back({join_name(prefix, "bias"), &beta});
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
  out.push_back({join_name(prefix, "running_mean"), &running_mean, {channels_}});
  out.push_back({join_name(prefix, "running_var"), &running_var, {channels_}});
}

// ---------------------------------------------------------------- Relu / ConvBnAct

template <typename Scalar>
Tensor<Scalar> Relu<Scalar>::forward(const Tensor<Scalar>& x) {
  output_ = Tensor<Scalar>(x.shape());
  output_.vec() = x.vec().cwiseMax(Scalar(0));
  return output_;
}

template <typename Scalar>
Tensor<Scalar> Relu<Scalar>::backward(const Tensor<Scalar>& dy) const {
  Tensor<Scalar> dx(dy.shape());
  dx.vec() = (output_.vec().array() > Scalar(0)).select(dy.vec(), Scalar(0));
  return dx;
}

template <typename Scalar>
ConvBnAct<Scalar>::ConvBnAct(const Conv2dSpec& spec, bool norm_act, Rng& rng)
    : conv(spec, rng), bn(spec.out_channels), norm_act_(norm_act) {}

template <typename Scalar>
Tensor<Scalar> ConvBnAct<Scalar>::forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = conv.forward(x);
  if (!norm_act_) return y;
  return relu_.forward(bn.forward(y));
}

template <typename Scalar>
Tensor<Scalar> ConvBnAct<Scalar>::backward(const Tensor<Scalar>& dy) {
  if (!norm_act_) return conv.backward(dy);
  return conv.backward(bn.backward(relu_.backward(dy)));
}

template <typename Scalar>
void ConvBnAct<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  conv.collect_parameters(join_name(prefix, "conv"), out);
  if (norm_act_) bn.collect_parameters(join_name(prefix, "bn"), out);
}

template <typename Scalar>
void ConvBnAct<Scalar>::collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
  if (norm_act_) bn.collect_buffers(join_name(prefix, "bn"), out);
}

// ---------------------------------------------------------------- MaxPool2x2

template <typename Scalar>
Tensor<Scalar> MaxPool2x2<Scalar>::forward(const Tensor<Scalar>& x) {
  require(x.h() % 2 == 0 && x.w() % 2 == 0, "MaxPool2x2: spatial size must be even, got " + x.shape().str());
  input_shape_ = x.shape();
  const Index Ho = x.h() / 2, Wo = x.w() / 2;
  Tensor<Scalar> y(x.n(), x.c(), Ho, Wo);
  argmax_.assign(static_cast<std::size_t>(y.size()), 0);
  std::size_t k = 0;
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      for (Index oy = 0; oy < Ho; ++oy) {
        for (Index ox = 0; ox < Wo; ++ox, ++k) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          std::int32_t arg = 0;
          for (int d = 0; d < 4; ++d) {
            const Scalar v = x(n, c, 2 * oy + d / 2, 2 * ox + d % 2);
            if (v > best) {
              best = v;
              arg = d;
            }
          }
          y(n, c, oy, ox) = best;
          argmax_[k] = arg;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2x2<Scalar>::backward(const Tensor<Scalar>& dy) const {
  Tensor<Scalar> dx(input_shape_);
  std::size_t k = 0;
  for (Index n = 0; n < dy.n(); ++n)
    for (Index c = 0; c < dy.c(); ++c)
      for (Index oy = 0; oy < dy.h(); ++oy)
        for (Index ox = 0; ox < dy.w(); ++ox, ++k) {
          const int d = argmax_[k];
          dx(n, c, 2 * oy + d / 2, 2 * ox + d % 2) += dy(n, c, oy, ox);
        }
  return dx;
}

// ---------------------------------------------------------------- resizing

namespace {

struct LerpTable {
  std::vector<Index> lo, hi;
  std::vector<double> w_lo, w_hi;
};

LerpTable make_lerp_table(Index in, Index out) {
  LerpTable t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_lo.resize(out);
  t.w_hi.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min<Index>(i0 + 1, in - 1);
    const double l1 = src - static_cast<double>(i0);
    t.lo[o] = i0;
    t.hi[o] = i1;
    t.w_lo[o] = 1.0 - l1;
    t.w_hi[o] = l1;
  }
  return t;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  require(out_h > 0 && out_w > 0, "resize_bilinear: output size must be positive");
  if (x.h() == out_h && x.w() == out_w) return x;
  const LerpTable ty = make_lerp_table(x.h(), out_h);
  const LerpTable tx = make_lerp_table(x.w(), out_w);
  Tensor<Scalar> y(x.n(), x.c(), out_h, out_w);
  std::vector<Scalar> tmp(static_cast<std::size_t>(x.h() * out_w));
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      const Scalar* in = x.data() + (n * x.c() + c) * x.h() * x.w();
      Scalar* out = y.data() + (n * x.c() + c) * out_h * out_w;
      for (Index iy = 0; iy < x.h(); ++iy)
        for (Index ox = 0; ox < out_w; ++ox)
          tmp[iy * out_w + ox] = Scalar(tx.w_lo[ox]) * in[iy * x.w() + tx.lo[ox]] +
                                 Scalar(tx.w_hi[ox]) * in[iy * x.w() + tx.hi[ox]];
      for (Index oy = 0; oy < out_h; ++oy) {
        const Scalar a(ty.w_lo[oy]), b(ty.w_hi[oy]);
        const Scalar* r0 = tmp.data() + ty.lo[oy] * out_w;
        const Scalar* r1 = tmp.data() + ty.hi[oy] * out_w;
        for (Index ox = 0; ox < out_w; ++ox) out[oy * out_w + ox] = a * r0[ox] + b * r1[ox];
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear_backward(const Tensor<Scalar>& dy, Index in_h, Index in_w) {
  if (dy.h() == in_h && dy.w() == in_w) return dy;
  const Index out_h = dy.h(), out_w = dy.w();
  const LerpTable ty = make_lerp_table(in_h, out_h);
  const LerpTable tx = make_lerp_table(in_w, out_w);
  Tensor<Scalar> dx(dy.n(), dy.c(), in_h, in_w);
  std::vector<Scalar> tmp(static_cast<std::size_t>(in_h * out_w));
  for (Index n = 0; n < dy.n(); ++n) {
    for (Index c = 0; c < dy.c(); ++c) {
      const Scalar* g = dy.data() + (n * dy.c() + c) * out_h * out_w;
      Scalar* out = dx.data() + (n * dy.c() + c) * in_h * in_w;
      std::fill(tmp.begin(), tmp.end(), Scalar(0));
      for (Index oy = 0; oy < out_h; ++oy) {
        const Scalar a(ty.w_lo[oy]), b(ty.w_hi[oy]);
        Scalar* r0 = tmp.data() + ty.lo[oy] * out_w;
        Scalar* r1 = tmp.data() + ty.hi[oy] * out_w;
        for (Index ox = 0; ox < out_w; ++ox) {
          r0[ox] += a * g[oy * out_w + ox];
          r1[ox] += b * g[oy * out_w + ox];
        }
      }
      for (Index iy = 0; iy < in_h; ++iy)
        for (Index ox = 0; ox < out_w; ++ox) {
          const Scalar v = tmp[iy * out_w + ox];
          out[iy * in_w + tx.lo[ox]] += Scalar(tx.w_lo[ox]) * v;
          out[iy * in_w + tx.hi[ox]] += Scalar(tx.w_hi[ox]) * v;
        }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> resize_nearest(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  require(out_h > 0 && out_w > 0, "resize_nearest: output size must be positive");
  if (x.h() == out_h && x.w() == out_w) return x;
  Tensor<Scalar> y(x.n(), x.c(), out_h, out_w);
  for (Index n = 0; n < x.n(); ++n)
    for (Index c = 0; c < x.c(); ++c)
      for (Index oy = 0; oy < out_h; ++oy) {
        const Index iy = std::min<Index>(oy * x.h() / out_h, x.h() - 1);
        for (Index ox = 0; ox < out_w; ++ox) {
          const Index ix = std::min<Index>(ox * x.w() / out_w, x.w() - 1);
          y(n, c, oy, ox) = x(n, c, iy, ix);
        }
      }
  return y;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.vec() = (Scalar(1) + (-x.vec().array()).exp()).inverse().matrix();
  return y;
}

#define ICPS_INSTANTIATE_LAYERS(S)                                                     \
  template void init_fan_in_uniform<S>(Tensor<S>&, Index, Rng&);                      \
  template class Conv2d<S>;                                                           \
  template class BatchNorm2d<S>;                                                      \
  template class Relu<S>;                                                             \
  template class ConvBnAct<S>;                                                        \
  template class MaxPool2x2<S>;                                                       \
  template Tensor<S> resize_bilinear<S>(const Tensor<S>&, Index, Index);              \
  template Tensor<S> resize_bilinear_backward<S>(const Tensor<S>&, Index, Index);     \
  template Tensor<S> resize_nearest<S>(const Tensor<S>&, Index, Index);               \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);

ICPS_INSTANTIATE_LAYERS(float)
ICPS_INSTANTIATE_LAYERS(double)

}  // namespace icps
