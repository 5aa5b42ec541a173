#pragma once

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "icps/metrics.hpp"
#include "icps/network.hpp"

namespace icps {

/// CPU model name and logical core count, e.g. "Intel(R) Xeon(R) ... (8 logical cores)".
std::string hardware_stamp();

struct ProfileOptions {
  int warmup = 5;
  int runs = 30;
};

/// Parameters, analytic MACs of one forward, and median single-input FPS for
/// any module exposing parameters() and forward(input).
template <typename M>
ProfileResult profile_module(M& module, const Tensor<float>& input, const ProfileOptions& opt = {}) {
  require(opt.runs >= 1 && opt.warmup >= 0, "profile: runs must be positive");
  ProfileResult r;
  r.param_count = parameter_count(module);
  r.input_size = input.h();
  {
    MacCounter counter;
    (void)module.forward(input);
    r.mac_count = counter.total();
  }
  for (int i = 0; i < opt.warmup; ++i) (void)module.forward(input);
  std::vector<double> seconds;
  for (int i = 0; i < opt.runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)module.forward(input);
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(seconds.begin(), seconds.end());
  const std::size_t n = seconds.size();
  const double median = n % 2 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]);
  r.fps = median > 0.0 ? 1.0 / median : 0.0;
  r.timed_runs = opt.runs;
  r.hardware = hardware_stamp();
  return r;
}

/// Profiles a model on one (1, 3, S, S) input in eval mode; S must be a multiple of 32.
ProfileResult profile(Model<float>& model, Index input_size, const ProfileOptions& opt = {});

/// "0.1234 M params, 0.5678 G MACs, 12.3456 frames/s".
std::string format_profile(const ProfileResult& r);

}  // namespace icps
