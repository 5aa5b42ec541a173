#include "icps/network.hpp"

namespace icps {

namespace {

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const std::string& where) {
  if (!t.all_finite()) throw NumericalError("forward: non-finite values in " + where);
}

template <typename Scalar>
Tensor<Scalar> upsample2(const Tensor<Scalar>& x) {
  return resize_bilinear(x, 2 * x.h(), 2 * x.w());
}

template <typename Scalar>
Tensor<Scalar> upsample2_backward(const Tensor<Scalar>& dy) {
  return resize_bilinear_backward(dy, dy.h() / 2, dy.w() / 2);
}

template <typename Scalar>
void add_into(Tensor<Scalar>& acc, const Tensor<Scalar>& g) {
  if (acc.empty())
    acc = g;
  else
    acc += g;
}

}  // namespace

void ModelConfig::validate() const {
  require(input_size >= 32 && input_size % 32 == 0,
          "ModelConfig: input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  require(decoder_width > 0, "ModelConfig: decoder_width must be positive");
  require(encoder.name == "plain", "ModelConfig: unknown encoder '" + encoder.name + "' (available: plain)");
  for (Index c : encoder.stage_channels) require(c > 0, "ModelConfig: encoder stage channels must be positive");
}

// ---------------------------------------------------------------- PredictionSet

template <typename Scalar>
bool PredictionSet<Scalar>::has(const std::string& name) const {
  for (const auto& h : heads)
    if (h.name == name) return true;
  return false;
}

template <typename Scalar>
const HeadOutput<Scalar>& PredictionSet<Scalar>::at(const std::string& name) const {
  for (const auto& h : heads)
    if (h.name == name) return h;
  throw ContractViolation("PredictionSet has no head named '" + name + "'");
}

template <typename Scalar>
const HeadOutput<Scalar>& PredictionSet<Scalar>::final_output() const {
  return has("p1") ? at("p1") : at("p2");
}

// ---------------------------------------------------------------- PlainEncoder

template <typename Scalar>
PlainEncoder<Scalar>::PlainEncoder(const EncoderSpec& spec, Rng& rng) {
  Index in = 3;
  for (Index out : spec.stage_channels) {
    Stage s{ConvBnAct<Scalar>(Conv2dSpec{in, out, 3, 3, 2, 1, 1}, true, rng),
            ConvBnAct<Scalar>(Conv2dSpec::same(out, out, 3), true, rng)};
    stages.push_back(std::move(s));
    in = out;
  }
}

template <typename Scalar>
std::array<Tensor<Scalar>, 5> PlainEncoder<Scalar>::forward(const Tensor<Scalar>& x) {
  std::array<Tensor<Scalar>, 5> feats;
  Tensor<Scalar> h = x;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    h = stages[i].refine.forward(stages[i].down.forward(h));
    feats[i] = h;
  }
  return feats;
}

template <typename Scalar>
Tensor<Scalar> PlainEncoder<Scalar>::backward(const std::array<Tensor<Scalar>, 5>& grads) {
  Tensor<Scalar> g;
  for (int i = static_cast<int>(stages.size()) - 1; i >= 0; --i) {
    if (!grads[i].empty()) add_into(g, grads[i]);
    if (g.empty()) continue;
    g = stages[i].down.backward(stages[i].refine.backward(g));
  }
  return g;
}

template <typename Scalar>
void PlainEncoder<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string base = join_name(prefix, "stage" + std::to_string(i + 1));
    stages[i].down.collect_parameters(join_name(base, "conv1"), out);
    stages[i].refine.collect_parameters(join_name(base, "conv2"), out);
  }
}

template <typename Scalar>
void PlainEncoder<Scalar>::collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string base = join_name(prefix, "stage" + std::to_string(i + 1));
    stages[i].down.collect_buffers(join_name(base, "conv1"), out);
    stages[i].refine.collect_buffers(join_name(base, "conv2"), out);
  }
}

template <typename Scalar>
void PlainEncoder<Scalar>::set_training(bool training) {
  for (auto& s : stages) {
    s.down.set_training(training);
    s.refine.set_training(training);
  }
}

// ---------------------------------------------------------------- Cfc

template <typename Scalar>
Cfc<Scalar>::Cfc(const CfcConfig& cfg, ScaleMode pfr_mode, ScaleMode cpfr_mode, Rng& rng) {
  constexpr Index W = CfcConfig::stage_width;
  Index in = 1;
  for (Index i = 0; i < CfcConfig::stages; ++i) {
    enc[i] = ConvBnAct<Scalar>(Conv2dSpec::same(in, W, CfcConfig::kernel), true, rng);
    in = W;
  }
  for (Index i = 0; i < CfcConfig::stages; ++i) rfe[i] = Rfe<Scalar>(RfeConfig{W, W, {1, 3, 5, 7}, true}, rng);
  pfr = Pfr<Scalar>(W, pfr_mode, rng);
  for (Index i = 0; i < CfcConfig::stages - 1; ++i) cpfr[i] = Cpfr<Scalar>(W, cpfr_mode, rng);
  head = Conv2d<Scalar>(Conv2dSpec{W, 1, 1, 1}, rng);
  if (cfg.zero_init_residual_head) {
    head.weight.value.set_zero();
    head.bias.value.set_zero();
  }
}

template <typename Scalar>
Tensor<Scalar> Cfc<Scalar>::forward(const Tensor<Scalar>& coarse) {
  require(coarse.c() == 1, "cfc_forward: coarse map must have one channel, got " + coarse.shape().str());
  require(coarse.h() % 16 == 0 && coarse.w() % 16 == 0 && coarse.h() > 0 && coarse.w() > 0,
          "cfc_forward: spatial size must be divisible by 16, got " + coarse.shape().str());
  std::array<Tensor<Scalar>, 4> r;
  Tensor<Scalar> e = coarse;
  for (std::size_t i = 0; i < 4; ++i) {
    e = pool[i].forward(enc[i].forward(e));
    r[i] = rfe[i].forward(e);
  }
  Tensor<Scalar> d = pfr.forward(r[3]);
  decoder_shapes_[3] = d.shape();
  for (int i = 2; i >= 0; --i) {
    d = cpfr[i].forward(r[i], upsample2(d));
    decoder_shapes_[i] = d.shape();
  }
  head_in_shape_ = d.shape();
  residual_ = resize_bilinear(head.forward(d), coarse.h(), coarse.w());
  Tensor<Scalar> refined = coarse;
  refined += residual_;
  check_finite(refined, "refinement module");
  return refined;
}

template <typename Scalar>
Tensor<Scalar> Cfc<Scalar>::backward(const Tensor<Scalar>& d_refined) {
  Tensor<Scalar> dd = head.backward(resize_bilinear_backward(d_refined, head_in_shape_.h, head_in_shape_.w));
  std::array<Tensor<Scalar>, 4> dr;
  for (std::size_t i = 0; i < 3; ++i) {
    auto [d_low, d_high] = cpfr[i].backward(dd);
    dr[i] = std::move(d_low);
    dd = upsample2_backward(d_high);
  }
  dr[3] = pfr.backward(dd);
  Tensor<Scalar> g;
  for (int i = 3; i >= 0; --i) {
    add_into(g, rfe[i].backward(dr[i]));
    g = enc[i].backward(pool[i].backward(g));
  }
  Tensor<Scalar> d_coarse = d_refined;
  d_coarse += g;
  return d_coarse;
}

template <typename Scalar>
void Cfc<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  for (std::size_t i = 0; i < 4; ++i) enc[i].collect_parameters(join_name(prefix, "enc" + std::to_string(i + 1)), out);
  for (std::size_t i = 0; i < 4; ++i) rfe[i].collect_parameters(join_name(prefix, "rfe" + std::to_string(i + 1)), out);
  pfr.collect_parameters(join_name(prefix, "pfr"), out);
  for (std::size_t i = 0; i < 3; ++i)
    cpfr[i].collect_parameters(join_name(prefix, "cpfr" + std::to_string(i + 1)), out);
  head.collect_parameters(join_name(prefix, "head"), out);
}

template <typename Scalar>
void Cfc<Scalar>::collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
  for (std::size_t i = 0; i < 4; ++i) enc[i].collect_buffers(join_name(prefix, "enc" + std::to_string(i + 1)), out);
  for (std::size_t i = 0; i < 4; ++i) rfe[i].collect_buffers(join_name(prefix, "rfe" + std::to_string(i + 1)), out);
}

template <typename Scalar>
void Cfc<Scalar>::set_training(bool training) {
  for (auto& e : enc) e.set_training(training);
  for (auto& r : rfe) r.set_training(training);
}

template <typename Scalar>
Tensor<Scalar> cfc_forward(Cfc<Scalar>& cfc, const Tensor<Scalar>& coarse_logits) {
  return sigmoid(cfc.forward(coarse_logits));
}

// ---------------------------------------------------------------- Model

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  const Index C = cfg.decoder_width;
  encoder = PlainEncoder<Scalar>(cfg.encoder, rng);
  for (std::size_t i = 0; i < 4; ++i)
    rfe[i] = Rfe<Scalar>(RfeConfig{cfg.encoder.stage_channels[i + 1], C, {1, 3, 5, 7}, true}, rng);
  if (cfg.use_pfr) pfr.emplace(C, cfg.pfr_scale_mode, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    if (cfg.use_cpfr)
      cpfr[i] = Cpfr<Scalar>(C, cfg.cpfr_scale_mode, rng);
    else
      fuse[i] = ConcatFuse<Scalar>(C, rng);
  }
  for (std::size_t i = 0; i < 4; ++i) heads[i] = Conv2d<Scalar>(Conv2dSpec{C, 1, 1, 1}, rng);
  if (cfg.use_cfc) cfc.emplace(cfg.cfc, cfg.pfr_scale_mode, cfg.cpfr_scale_mode, rng);
}

template <typename Scalar>
PredictionSet<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& images) {
  require(images.c() == 3 && images.h() == cfg_.input_size && images.w() == cfg_.input_size,
          "forward: expected images (N, 3, " + std::to_string(cfg_.input_size) + ", " +
              std::to_string(cfg_.input_size) + "), got " + images.shape().str());
  return run(images);
}

template <typename Scalar>
PredictionSet<Scalar> Model<Scalar>::forward_rescaled(const Tensor<Scalar>& images) {
  require(images.c() == 3 && images.h() == images.w() && images.h() >= 32 && images.h() % 32 == 0,
          "forward: expected square images with side a multiple of 32, got " + images.shape().str());
  return run(images);
}

template <typename Scalar>
PredictionSet<Scalar> Model<Scalar>::run(const Tensor<Scalar>& images) {
  require(images.n() > 0, "forward: empty batch");
  size_ = images.h();
  trace_.encoder = encoder.forward(images);
  for (std::size_t i = 0; i < 5; ++i) check_finite(trace_.encoder[i], "encoder stage " + std::to_string(i + 1));
  for (std::size_t i = 0; i < 4; ++i) {
    trace_.rfe[i] = rfe[i].forward(trace_.encoder[i + 1]);
    check_finite(trace_.rfe[i], "rfe stage " + std::to_string(i + 2));
  }
  trace_.decoder[3] = pfr ? pfr->forward(trace_.rfe[3]) : trace_.rfe[3];
  check_finite(trace_.decoder[3], "decoder stage 5");
  for (int i = 2; i >= 0; --i) {
    const Tensor<Scalar> up = upsample2(trace_.decoder[i + 1]);
    trace_.decoder[i] = cfg_.use_cpfr ? cpfr[i].forward(trace_.rfe[i], up) : fuse[i].forward(trace_.rfe[i], up);
    check_finite(trace_.decoder[i], "decoder stage " + std::to_string(i + 2));
  }

  PredictionSet<Scalar> preds;
  for (int i = 3; i >= 0; --i) {
    HeadOutput<Scalar> h;
    h.name = "p" + std::to_string(i + 2);
    h.logits = resize_bilinear(heads[i].forward(trace_.decoder[i]), size_, size_);
    h.prob = sigmoid(h.logits);
    preds.heads.push_back(std::move(h));
  }
  if (cfc) {
    HeadOutput<Scalar> h;
    h.name = "p1";
    h.logits = cfc->forward(preds.at("p2").logits);
    h.prob = sigmoid(h.logits);
    preds.heads.push_back(std::move(h));
  }
  return preds;
}

template <typename Scalar>
void Model<Scalar>::backward(const std::vector<Tensor<Scalar>>& d_logits) {
  // PredictionSet order: p5, p4, p3, p2, [p1]
  const std::size_t expected = cfc ? 5 : 4;
  require(d_logits.size() == expected, "backward: expected " + std::to_string(expected) + " head gradients");
  std::array<Tensor<Scalar>, 4> d_head;  // index i -> stage i + 2
  for (std::size_t k = 0; k < 4; ++k) d_head[3 - k] = d_logits[k];
  if (cfc && !d_logits[4].empty()) add_into(d_head[0], cfc->backward(d_logits[4]));

  std::array<Tensor<Scalar>, 4> d_dec;
  for (std::size_t i = 0; i < 4; ++i) {
    if (d_head[i].empty()) continue;
    const Tensor<Scalar>& feat = trace_.decoder[i];
    d_dec[i] = heads[i].backward(resize_bilinear_backward(d_head[i], feat.h(), feat.w()));
  }

  std::array<Tensor<Scalar>, 4> d_rfe;
  for (std::size_t i = 0; i < 3; ++i) {
    if (d_dec[i].empty()) continue;
    auto [d_low, d_high] = cfg_.use_cpfr ? cpfr[i].backward(d_dec[i]) : fuse[i].backward(d_dec[i]);
    add_into(d_rfe[i], d_low);
    add_into(d_dec[i + 1], upsample2_backward(d_high));
  }
  if (!d_dec[3].empty()) add_into(d_rfe[3], pfr ? pfr->backward(d_dec[3]) : d_dec[3]);

  std::array<Tensor<Scalar>, 5> d_enc;
  for (std::size_t i = 0; i < 4; ++i)
    if (!d_rfe[i].empty()) d_enc[i + 1] = rfe[i].backward(d_rfe[i]);
  encoder.backward(d_enc);
}

template <typename Scalar>
void Model<Scalar>::collect_parameters(const std::string& prefix, ParameterList<Scalar>& out) {
  encoder.collect_parameters(join_name(prefix, "encoder"), out);
  for (std::size_t i = 0; i < 4; ++i) rfe[i].collect_parameters(join_name(prefix, "rfe" + std::to_string(i + 2)), out);
  if (pfr) pfr->collect_parameters(join_name(prefix, "decoder.pfr"), out);
  for (int i = 2; i >= 0; --i) {
    if (cfg_.use_cpfr)
      cpfr[i].collect_parameters(join_name(prefix, "decoder.cpfr" + std::to_string(i + 2)), out);
    else
      fuse[i].collect_parameters(join_name(prefix, "decoder.fuse" + std::to_string(i + 2)), out);
  }
  for (int i = 3; i >= 0; --i) heads[i].collect_parameters(join_name(prefix, "head" + std::to_string(i + 2)), out);
  if (cfc) cfc->collect_parameters(join_name(prefix, "cfc"), out);
}

template <typename Scalar>
void Model<Scalar>::collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
  encoder.collect_buffers(join_name(prefix, "encoder"), out);
  for (std::size_t i = 0; i < 4; ++i) rfe[i].collect_buffers(join_name(prefix, "rfe" + std::to_string(i + 2)), out);
  if (cfc) cfc->collect_buffers(join_name(prefix, "cfc"), out);
}

template <typename Scalar>
void Model<Scalar>::set_training(bool training) {
  encoder.set_training(training);
  for (auto& r : rfe) r.set_training(training);
  if (cfc) cfc->set_training(training);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten_parameters(Module<Scalar>& module) {
  const auto params = module.parameters();
  Index total = 0;
  for (const auto& p : params) total += p.param->value.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(total);
  Index offset = 0;
  for (const auto& p : params) {
    out.segment(offset, p.param->value.size()) = p.param->value.vec();
    offset += p.param->value.size();
  }
  return out;
}

#define ICPS_INSTANTIATE_NETWORK(S)                                            \
  template struct PredictionSet<S>;                                           \
  template class PlainEncoder<S>;                                             \
  template class Cfc<S>;                                                      \
  template class Model<S>;                                                    \
  template Tensor<S> cfc_forward<S>(Cfc<S>&, const Tensor<S>&);               \
  template Eigen::Matrix<S, Eigen::Dynamic, 1> flatten_parameters<S>(Module<S>&);

ICPS_INSTANTIATE_NETWORK(float)
ICPS_INSTANTIATE_NETWORK(double)

}  // namespace icps
