#include "icps/optim.hpp"

#include <cmath>

namespace icps {

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterList<Scalar> params, const AdamWConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  require(cfg.lr >= 0.0, "AdamW: learning rate must be non-negative");
  for (const auto& p : params_) {
    m_.push_back(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(p.param->value.size()));
    v_.push_back(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(p.param->value.size()));
  }
}

template <typename Scalar>
void AdamW<Scalar>::step() {
  ++steps_;
  const Scalar lr(cfg_.lr), wd(cfg_.weight_decay), b1(cfg_.beta1), b2(cfg_.beta2), eps(cfg_.eps);
  const Scalar bc1 = Scalar(1) - Scalar(std::pow(cfg_.beta1, static_cast<double>(steps_)));
  const Scalar bc2 = Scalar(1) - Scalar(std::pow(cfg_.beta2, static_cast<double>(steps_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_[i].param->value.vec();
    const auto& grad = params_[i].param->grad.vec();
    value -= (lr * wd) * value;
    m_[i] = b1 * m_[i] + (Scalar(1) - b1) * grad;
    v_[i] = b2 * v_[i] + (Scalar(1) - b2) * grad.cwiseAbs2();
    value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
  }
}

template <typename Scalar>
void AdamW<Scalar>::zero_grad() {
  for (auto& p : params_) p.param->zero_grad();
}

template <typename Scalar>
double clip_grad_norm(const ParameterList<Scalar>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += static_cast<double>(p.param->grad.vec().squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Scalar s = static_cast<Scalar>(max_norm / (norm + 1e-12));
    for (const auto& p : params) p.param->grad.vec() *= s;
  }
  return norm;
}

bool EarlyStopping::update(double value) {
  improved_ = value < best_;
  if (improved_) {
    best_ = value;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(const ParameterList<float>&, double);
template double clip_grad_norm<double>(const ParameterList<double>&, double);

}  // namespace icps
