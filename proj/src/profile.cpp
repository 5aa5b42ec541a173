#include "icps/profile.hpp"

#include <cstdio>
#include <fstream>
#include <thread>

namespace icps {

std::string hardware_stamp() {
  std::string model = "unknown CPU";
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return model + " (" + std::to_string(std::thread::hardware_concurrency()) + " logical cores, single-threaded run)";
}

namespace {

struct RescaledForward {
  Model<float>& model;
  std::vector<NamedParameter<float>> parameters() { return model.parameters(); }
  PredictionSet<float> forward(const Tensor<float>& x) { return model.forward_rescaled(x); }
};

std::int64_t parameter_count(RescaledForward& f) { return icps::parameter_count(f.model); }

}  // namespace

ProfileResult profile(Model<float>& model, Index input_size, const ProfileOptions& opt) {
  require(input_size >= 32 && input_size % 32 == 0, "profile: input size must be a positive multiple of 32");
  model.set_training(false);
  Rng rng(0);
  Tensor<float> input(Shape{1, 3, input_size, input_size});
  for (Index i = 0; i < input.size(); ++i) input.data()[i] = static_cast<float>(rng.uniform());
  RescaledForward f{model};
  return profile_module(f, input, opt);
}

std::string format_profile(const ProfileResult& r) {
  return format_fixed(static_cast<double>(r.param_count) / 1e6) + " M params, " +
         format_fixed(static_cast<double>(r.mac_count) / 1e9) + " G MACs, " + format_fixed(r.fps) + " frames/s";
}

}  // namespace icps
