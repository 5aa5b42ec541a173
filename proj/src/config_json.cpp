#include "icps/config_json.hpp"

#include <fstream>
#include <set>

#include "icps/train.hpp"

namespace icps {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw ContractViolation(what + " config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ContractViolation("unknown " + what + " config key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const ModelConfig& cfg) {
  return {{"encoder", {{"name", cfg.encoder.name}, {"stage_channels", cfg.encoder.stage_channels}}},
          {"decoder_width", cfg.decoder_width},
          {"input_size", cfg.input_size},
          {"use_pfr", cfg.use_pfr},
          {"use_cpfr", cfg.use_cpfr},
          {"use_cfc", cfg.use_cfc},
          {"pfr_scale_mode", to_string(cfg.pfr_scale_mode)},
          {"cpfr_scale_mode", to_string(cfg.cpfr_scale_mode)},
          {"cfc", {{"zero_init_residual_head", cfg.cfc.zero_init_residual_head}}}};
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j, {"encoder", "decoder_width", "input_size", "use_pfr", "use_cpfr", "use_cfc", "pfr_scale_mode",
                 "cpfr_scale_mode", "cfc"},
             "model");
  ModelConfig cfg;
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    check_keys(e, {"name", "stage_channels"}, "model.encoder");
    read(e, "name", cfg.encoder.name);
    read(e, "stage_channels", cfg.encoder.stage_channels);
  }
  read(j, "decoder_width", cfg.decoder_width);
  read(j, "input_size", cfg.input_size);
  read(j, "use_pfr", cfg.use_pfr);
  read(j, "use_cpfr", cfg.use_cpfr);
  read(j, "use_cfc", cfg.use_cfc);
  if (j.contains("pfr_scale_mode")) cfg.pfr_scale_mode = scale_mode_from_string(j.at("pfr_scale_mode").get<std::string>());
  if (j.contains("cpfr_scale_mode"))
    cfg.cpfr_scale_mode = scale_mode_from_string(j.at("cpfr_scale_mode").get<std::string>());
  if (j.contains("cfc")) {
    check_keys(j.at("cfc"), {"zero_init_residual_head"}, "model.cfc");
    read(j.at("cfc"), "zero_init_residual_head", cfg.cfc.zero_init_residual_head);
  }
  cfg.validate();
  return cfg;
}

json to_json(const LossConfig& cfg) {
  return {{"weight_kernel", cfg.weight_kernel},         {"weight_gain", cfg.weight_gain},
          {"weighted_bce", cfg.weighted_bce},           {"weighted_iou", cfg.weighted_iou},
          {"supervision_weights", cfg.supervision_weights}};
}

LossConfig loss_config_from_json(const json& j) {
  check_keys(j, {"weight_kernel", "weight_gain", "weighted_bce", "weighted_iou", "supervision_weights"}, "loss");
  LossConfig cfg;
  read(j, "weight_kernel", cfg.weight_kernel);
  read(j, "weight_gain", cfg.weight_gain);
  read(j, "weighted_bce", cfg.weighted_bce);
  read(j, "weighted_iou", cfg.weighted_iou);
  if (j.contains("supervision_weights")) {
    for (const auto& [head, w] : j.at("supervision_weights").items()) {
      if (!cfg.supervision_weights.count(head)) throw ContractViolation("unknown supervision head '" + head + "'");
      cfg.supervision_weights[head] = w.get<double>();
    }
  }
  cfg.validate();
  return cfg;
}

json to_json(const SynthConfig& cfg) {
  return {{"count", cfg.count},
          {"canvas", cfg.canvas},
          {"blob_count_range", cfg.blob_count_range},
          {"blob_radius_range", cfg.blob_radius_range},
          {"boundary_jitter", cfg.boundary_jitter},
          {"texture_noise", cfg.texture_noise},
          {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  check_keys(j, {"count", "canvas", "blob_count_range", "blob_radius_range", "boundary_jitter", "texture_noise", "seed"},
             "synth");
  SynthConfig cfg;
  read(j, "count", cfg.count);
  read(j, "canvas", cfg.canvas);
  read(j, "blob_count_range", cfg.blob_count_range);
  read(j, "blob_radius_range", cfg.blob_radius_range);
  read(j, "boundary_jitter", cfg.boundary_jitter);
  read(j, "texture_noise", cfg.texture_noise);
  read(j, "seed", cfg.seed);
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"weight_decay", cfg.weight_decay},
          {"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"early_stop_patience", cfg.early_stop_patience},
          {"seed", cfg.seed},
          {"desk_preset", cfg.desk_preset},
          {"deterministic", cfg.deterministic},
          {"grad_clip", cfg.grad_clip},
          {"scale_ratios", cfg.scale_ratios},
          {"val_fraction", cfg.val_fraction},
          {"synth_canvas", cfg.synth_canvas},
          {"optimizer", "adamw"},
          {"model", to_json(cfg.model)},
          {"loss", to_json(cfg.loss)}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"lr", "weight_decay", "batch_size", "max_epochs", "early_stop_patience", "seed", "desk_preset",
                 "deterministic", "grad_clip", "scale_ratios", "val_fraction", "synth_canvas", "optimizer", "model",
                 "loss"},
             "train");
  TrainConfig cfg;
  // The preset fills its fields first so that explicit keys still win.
  if (j.value("desk_preset", false)) apply_desk_preset(cfg);
  read(j, "lr", cfg.lr);
  read(j, "weight_decay", cfg.weight_decay);
  read(j, "batch_size", cfg.batch_size);
  read(j, "max_epochs", cfg.max_epochs);
  read(j, "early_stop_patience", cfg.early_stop_patience);
  read(j, "seed", cfg.seed);
  read(j, "deterministic", cfg.deterministic);
  read(j, "grad_clip", cfg.grad_clip);
  read(j, "scale_ratios", cfg.scale_ratios);
  read(j, "val_fraction", cfg.val_fraction);
  read(j, "synth_canvas", cfg.synth_canvas);
  if (j.contains("optimizer") && j.at("optimizer") != "adamw")
    throw ContractViolation("unsupported optimizer '" + j.at("optimizer").dump() + "'");
  if (j.contains("model")) {
    json merged = to_json(cfg.model);
    merge_json(merged, j.at("model"));
    cfg.model = model_config_from_json(merged);
  }
  if (j.contains("loss")) {
    json merged = to_json(cfg.loss);
    merge_json(merged, j.at("loss"));
    cfg.loss = loss_config_from_json(merged);
  }
  cfg.validate();
  return cfg;
}

void merge_json(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      merge_json(base[key], value);
    else
      base[key] = value;
  }
}

void set_dotted(json& j, const std::string& dotted_key, const std::string& value) {
  require(!dotted_key.empty(), "set: empty key");
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), "set: malformed key '" + dotted_key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in '" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace icps
