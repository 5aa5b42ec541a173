#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "icps/data.hpp"
#include "icps/metrics.hpp"
#include "icps/network.hpp"
#include "icps/objective.hpp"

namespace icps {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int batch_size = 16;
  int max_epochs = 100;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  bool desk_preset = false;
  bool deterministic = true;
  double grad_clip = 0.0;  // 0 disables clipping
  std::vector<double> scale_ratios{0.75, 1.0, 1.25};
  double val_fraction = 0.1;
  int synth_canvas = 96;  // canvas used when the harness generates its own data
  ModelConfig model;
  LossConfig loss;

  void validate() const;
};

/// Small CPU configuration: batch 4, 96 px inputs, 30 epochs, narrow encoder.
TrainConfig desk_preset();

/// Overwrites the fields governed by the desk preset, leaving seed and toggles alone.
void apply_desk_preset(TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::map<std::string, double> per_head;  // validation loss per head
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training started

  nlohmann::json to_json() const;
};

struct TrainResult {
  Model<float> model;  // weights of the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

/// Thrown when a training step produces a non-finite loss. The last good
/// checkpoint on disk is left untouched.
class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Mean deep-supervised loss over `data` in eval mode.
double validation_loss(Model<float>& model, const Dataset& data, const LossConfig& loss, std::size_t batch_size,
                       std::map<std::string, double>* per_head = nullptr);

/// Trains from a fresh seeded model. Writes best.ckpt, last.ckpt, train_log.ndjson
/// and train_config.json under `out`.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const std::filesystem::path& out);

// ---------------------------------------------------------------- ablation

struct AblationSetting {
  std::string label;
  bool use_pfr = false;
  bool use_cpfr = false;
  bool use_cfc = false;
};

/// The four component settings in report order.
const std::array<AblationSetting, 4>& ablation_settings();

struct AblationRun {
  AblationSetting setting;
  Evaluation evaluation;
  std::int64_t param_count = 0;
  std::vector<std::string> added_parameters;    // names not present in the previous row
  std::vector<std::string> removed_parameters;  // names of the previous row that are gone
  int best_epoch = 0;
};

struct AblationResult {
  std::vector<AblationRun> runs;

  EvalReport report(const std::string& dataset_name) const;
  nlohmann::json to_json() const;
};

/// Parameter-name prefixes a row may add and remove relative to the previous row.
struct AblationDelta {
  std::string added_prefix;
  std::string removed_prefix;  // empty: nothing may be removed
};
AblationDelta expected_ablation_delta(std::size_t row);

/// Throws ContractViolation unless `current` differs from `previous` exactly by `delta`.
void verify_ablation_delta(const std::vector<std::string>& previous, const std::vector<std::string>& current,
                           const AblationDelta& delta, const std::string& label);

/// Trains and evaluates the four settings with identical seeds and data.
/// Throws ContractViolation if a row's parameter delta differs from its toggle.
AblationResult ablate(const TrainConfig& base, const Dataset& train_set, const Dataset& val_set,
                      const Dataset& test_set, const std::filesystem::path& out, double threshold = 0.5,
                      const std::string& dataset_name = "test");

}  // namespace icps
