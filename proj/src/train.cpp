#include "icps/train.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "icps/checkpoint.hpp"
#include "icps/config_json.hpp"
#include "icps/optim.hpp"

namespace fs = std::filesystem;

namespace icps {

void TrainConfig::validate() const {
  require(lr >= 0.0 && std::isfinite(lr), "train: lr must be finite and non-negative");
  require(weight_decay >= 0.0, "train: weight_decay must be non-negative");
  require(batch_size > 0, "train: batch_size must be positive");
  require(max_epochs > 0, "train: max_epochs must be positive");
  require(early_stop_patience > 0 && (early_stop_patience < max_epochs || max_epochs == 1),
          "train: early_stop_patience must be positive and below max_epochs");
  require(grad_clip >= 0.0, "train: grad_clip must be non-negative");
  require(!scale_ratios.empty(), "train: scale_ratios must not be empty");
  for (double r : scale_ratios) require(r > 0.0, "train: scale ratios must be positive");
  require(val_fraction > 0.0 && val_fraction < 1.0, "train: val_fraction must be in (0, 1)");
  require(synth_canvas >= 32, "train: synth_canvas must be at least 32");
  model.validate();
  loss.validate();
}

void apply_desk_preset(TrainConfig& cfg) {
  cfg.desk_preset = true;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 30;
  cfg.synth_canvas = 96;
  cfg.model.input_size = 96;
  cfg.model.encoder.stage_channels = {8, 16, 24, 32, 48};
  cfg.model.decoder_width = 16;
  cfg.model.pfr_scale_mode = ScaleMode::inv_chw;
  cfg.model.cpfr_scale_mode = ScaleMode::inv_chw;
}

TrainConfig desk_preset() {
  TrainConfig cfg;
  apply_desk_preset(cfg);
  return cfg;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},       {"train_loss", train_loss}, {"val_loss", val_loss},
          {"per_head", per_head}, {"lr", lr},                 {"wall_time", wall_time}};
}

double validation_loss(Model<float>& model, const Dataset& data, const LossConfig& loss, std::size_t batch_size,
                       std::map<std::string, double>* per_head) {
  require(!data.empty(), "validation_loss: dataset is empty");
  model.set_training(false);
  double total = 0.0;
  std::map<std::string, double> heads;
  for (const SampleBatch& b : data.batches(batch_size)) {
    const PredictionSet<float> preds = model.forward(b.images);
    const LossResult<float> res = deep_supervised_loss(preds, b.masks, loss, false);
    const double n = static_cast<double>(b.size());
    total += res.total * n;
    for (const auto& [name, v] : res.breakdown()) heads[name] += v * n;
  }
  const double count = static_cast<double>(data.size());
  if (per_head) {
    per_head->clear();
    for (const auto& [name, v] : heads) (*per_head)[name] = v / count;
  }
  return total / count;
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set, const fs::path& out) {
  cfg.validate();
  require(!train_set.empty(), "train: training set is empty");
  require(!val_set.empty(), "train: validation set is empty");
  const Index base = cfg.model.input_size;
  require(train_set[0].image.h() == base && val_set[0].image.h() == base,
          "train: samples must be loaded at the model input size " + std::to_string(base));
  fs::create_directories(out);
  write_json_file((out / "train_config.json").string(), to_json(cfg));

  TrainResult result;
  result.model = Model<float>(cfg.model, cfg.seed);
  result.best_checkpoint = out / "best.ckpt";
  result.last_checkpoint = out / "last.ckpt";
  Model<float>& model = result.model;

  AdamW<float> opt(model.parameters(), {cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8});
  EarlyStopping stopper(cfg.early_stop_patience);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<Index> sizes;
  for (double r : cfg.scale_ratios) sizes.push_back(multiscale_size(base, r));

  std::ofstream log(out / "train_log.ndjson", std::ios::trunc);
  if (!log) throw IoError("cannot write '" + (out / "train_log.ndjson").string() + "'");

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    model.set_training(true);
    double epoch_loss = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      SampleBatch batch = train_set.batch({order.begin() + static_cast<std::ptrdiff_t>(at),
                                           order.begin() + static_cast<std::ptrdiff_t>(end)});
      const Index size = sizes[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(sizes.size()) - 1))];
      if (size != base) batch = rescale_batch(batch, size);

      opt.zero_grad();
      PredictionSet<float> preds;
      LossResult<float> loss;
      try {
        preds = model.forward_rescaled(batch.images);
        loss = deep_supervised_loss(preds, batch.masks, cfg.loss);
      } catch (const NumericalError& e) {
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what() +
                               "; last good checkpoint kept at '" + result.last_checkpoint.string() + "'");
      }
      if (!std::isfinite(loss.total))
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) +
                               ": non-finite loss; last good checkpoint kept at '" +
                               result.last_checkpoint.string() + "'");
      model.backward(loss.logit_grads());
      if (cfg.grad_clip > 0.0) clip_grad_norm(model.parameters(), cfg.grad_clip);
      opt.step();
      epoch_loss += loss.total * static_cast<double>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train_set.size());
    try {
      rec.val_loss = validation_loss(model, val_set, cfg.loss, static_cast<std::size_t>(cfg.batch_size), &rec.per_head);
    } catch (const NumericalError& e) {
      throw TrainingDiverged("validation in epoch " + std::to_string(epoch) + " failed: " + e.what() +
                             "; last good checkpoint kept at '" + result.last_checkpoint.string() + "'");
    }
    rec.lr = cfg.lr;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.val_loss))
      throw TrainingDiverged("validation loss became non-finite in epoch " + std::to_string(epoch) +
                             "; last good checkpoint kept at '" + result.last_checkpoint.string() + "'");
    result.history.push_back(rec);
    log << rec.to_json().dump() << "\n" << std::flush;

    const nlohmann::json meta = {{"epoch", epoch}, {"val_loss", rec.val_loss}, {"seed", cfg.seed}};
    save_model(result.last_checkpoint, model, meta);
    const bool stop = stopper.update(rec.val_loss);
    if (stopper.improved()) {
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
      save_model(result.best_checkpoint, model, meta);
    }
    if (stop) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  load_state(model, read_checkpoint(result.best_checkpoint));
  model.set_training(false);
  return result;
}

// ---------------------------------------------------------------- ablation

const std::array<AblationSetting, 4>& ablation_settings() {
  static const std::array<AblationSetting, 4> settings{{{"Baseline", false, false, false},
                                                        {"+ PFR", true, false, false},
                                                        {"+ PFR + CPFR", true, true, false},
                                                        {"+ PFR + CPFR + CFC", true, true, true}}};
  return settings;
}

AblationDelta expected_ablation_delta(std::size_t row) {
  switch (row) {
    case 1:
      return {"decoder.pfr.", ""};
    case 2:
      return {"decoder.cpfr", "decoder.fuse"};
    case 3:
      return {"cfc.", ""};
    default:
      throw ContractViolation("ablation: row " + std::to_string(row) + " has no predecessor");
  }
}

void verify_ablation_delta(const std::vector<std::string>& previous, const std::vector<std::string>& current,
                           const AblationDelta& delta, const std::string& label) {
  const std::set<std::string> prev(previous.begin(), previous.end()), cur(current.begin(), current.end());
  std::vector<std::string> added, removed;
  std::set_difference(cur.begin(), cur.end(), prev.begin(), prev.end(), std::back_inserter(added));
  std::set_difference(prev.begin(), prev.end(), cur.begin(), cur.end(), std::back_inserter(removed));
  const auto starts = [](const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; };
  std::vector<std::string> problems;
  if (added.empty()) problems.push_back("no parameters added");
  for (const auto& n : added)
    if (!starts(n, delta.added_prefix)) problems.push_back("unexpected added '" + n + "'");
  for (const auto& n : removed)
    if (delta.removed_prefix.empty() || !starts(n, delta.removed_prefix))
      problems.push_back("unexpected removed '" + n + "'");
  for (const auto& n : cur)
    if (starts(n, delta.added_prefix) && prev.count(n)) problems.push_back("'" + n + "' already present before");
  if (!delta.removed_prefix.empty())
    for (const auto& n : prev)
      if (starts(n, delta.removed_prefix) && cur.count(n)) problems.push_back("'" + n + "' was not removed");
  if (!problems.empty()) {
    std::string msg = "ablation row '" + label + "' parameter delta mismatch:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ContractViolation(msg);
  }
}

namespace {

std::vector<std::string> parameter_names(Model<float>& model) {
  std::vector<std::string> names;
  for (const auto& p : model.parameters()) names.push_back(p.name);
  return names;
}

std::string slug(const std::string& label) {
  std::string s;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!s.empty() && s.back() != '_')
      s += '_';
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

}  // namespace

EvalReport AblationResult::report(const std::string& dataset_name) const {
  EvalReport r;
  for (const auto& run : runs) {
    MetricRow row = run.evaluation.row;
    row.dataset = dataset_name;
    row.model = run.setting.label;
    r.rows.push_back(row);
  }
  return r;
}

nlohmann::json AblationResult::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& run : runs) {
    j.push_back({{"setting", run.setting.label},
                 {"use_pfr", run.setting.use_pfr},
                 {"use_cpfr", run.setting.use_cpfr},
                 {"use_cfc", run.setting.use_cfc},
                 {"params", run.param_count},
                 {"added_parameters", run.added_parameters},
                 {"removed_parameters", run.removed_parameters},
                 {"best_epoch", run.best_epoch},
                 {"mDice", run.evaluation.row.mdice},
                 {"mIoU", run.evaluation.row.miou},
                 {"MAE", run.evaluation.row.mae},
                 {"FNR", run.evaluation.row.fnr}});
  }
  return j;
}

AblationResult ablate(const TrainConfig& base, const Dataset& train_set, const Dataset& val_set,
                      const Dataset& test_set, const fs::path& out, double threshold,
                      const std::string& dataset_name) {
  AblationResult result;
  std::vector<std::string> previous;
  const auto& settings = ablation_settings();
  for (std::size_t row = 0; row < settings.size(); ++row) {
    const AblationSetting& s = settings[row];
    TrainConfig cfg = base;
    cfg.model.use_pfr = s.use_pfr;
    cfg.model.use_cpfr = s.use_cpfr;
    cfg.model.use_cfc = s.use_cfc;

    // Check the parameter delta before spending time on training.
    Model<float> probe(cfg.model, cfg.seed);
    const std::vector<std::string> names = parameter_names(probe);
    AblationRun run;
    run.setting = s;
    run.param_count = parameter_count(probe);
    if (row > 0) {
      verify_ablation_delta(previous, names, expected_ablation_delta(row), s.label);
      const std::set<std::string> prev(previous.begin(), previous.end()), cur(names.begin(), names.end());
      std::set_difference(cur.begin(), cur.end(), prev.begin(), prev.end(), std::back_inserter(run.added_parameters));
      std::set_difference(prev.begin(), prev.end(), cur.begin(), cur.end(),
                          std::back_inserter(run.removed_parameters));
    }
    previous = names;

    TrainResult tr = train(cfg, train_set, val_set, out / slug(s.label));
    run.best_epoch = tr.best_epoch;
    run.evaluation = evaluate(tr.model, test_set, threshold, dataset_name, s.label);
    result.runs.push_back(std::move(run));
  }

  const EvalReport report = result.report(dataset_name);
  report.write(out / "ablation.json", out / "ablation.csv");
  write_json_file((out / "ablation_runs.json").string(), result.to_json());
  return result;
}

}  // namespace icps
