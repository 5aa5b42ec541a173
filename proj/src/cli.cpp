#include "icps/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <Eigen/Core>

#include "CLI11.hpp"

#include "icps/checkpoint.hpp"
#include "icps/config_json.hpp"
#include "icps/image_io.hpp"
#include "icps/metrics.hpp"
#include "icps/profile.hpp"
#include "icps/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace icps {

std::uint16_t encode_probability(float p, double threshold) {
  const auto decoded = [](long q) { return static_cast<double>(static_cast<float>(static_cast<double>(q) / 65535.0)); };
  long first_positive = std::max(0L, static_cast<long>(std::ceil(threshold * 65535.0)) - 2);
  while (first_positive < 65535 && decoded(first_positive) < threshold) ++first_positive;
  long q = std::lround(std::clamp(static_cast<double>(p), 0.0, 1.0) * 65535.0);
  if (static_cast<double>(p) >= threshold)
    q = std::max(q, first_positive);
  else
    q = std::min(q, first_positive - 1);
  return static_cast<std::uint16_t>(std::clamp(q, 0L, 65535L));
}

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path.string() + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

json hash_artifacts(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = sha256_file(f);
  return out;
}

namespace {

// Files whose contents include wall-clock measurements.
const std::set<std::string> kVolatileArtifacts{"train_log.ndjson", "profile.json"};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string split;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_out) {
  c.out = default_out;
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  sub->add_option("--set", c.sets, "Override a config leaf, e.g. --set model.decoder_width=16");
}

void add_data(CLI::App* sub, Common& c) {
  sub->add_option("--data", c.data, std::string("Dataset root (default: $") + kDataRootEnv + ")");
  sub->add_option("--split", c.split, "Split directory under the data root");
}

fs::path data_root(const Common& c) {
  if (!c.data.empty()) return c.data;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw UsageError(std::string("no dataset given: pass --data or set ") + kDataRootEnv);
}

void apply_sets(json& j, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    set_dotted(j, s.substr(0, eq), s.substr(eq + 1));
  }
}

struct TrainFlags {
  bool desk = false;
  bool deterministic = false;
  std::optional<Index> input_size;
};

TrainConfig resolve_train_config(const Common& c, const TrainFlags& f) {
  try {
    TrainConfig cfg = c.config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(c.config));
    if (f.desk) apply_desk_preset(cfg);
    json j = to_json(cfg);
    if (c.seed) j["seed"] = *c.seed;
    if (f.deterministic) j["deterministic"] = true;
    if (f.input_size) j["model"]["input_size"] = *f.input_size;
    apply_sets(j, c.sets);
    return train_config_from_json(j);
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
}

void write_manifest(const fs::path& out, const std::string& command, const json& config, const json& paths,
                    std::uint64_t seed, const std::string& started) {
  json artifacts = hash_artifacts(out);
  json volatile_files = json::array();
  for (const auto& [rel, hash] : artifacts.items())
    if (kVolatileArtifacts.count(fs::path(rel).filename().string())) volatile_files.push_back(rel);
  const json manifest = {{"command", command},   {"config", config},         {"paths", paths},
                         {"seed", seed},         {"artifacts", artifacts},   {"volatile_artifacts", volatile_files},
                         {"started", started},   {"finished", timestamp()}};
  write_json_file((out / "manifest.json").string(), manifest);
}

/// train/ + val/ splits when present, else a seeded split of the root.
std::pair<Dataset, Dataset> training_data(const fs::path& root, const std::string& split, const TrainConfig& cfg) {
  const Index size = cfg.model.input_size;
  if (split.empty() && fs::is_directory(root / "train")) {
    Dataset tr = load_dataset(root, "train", size);
    if (fs::is_directory(root / "val")) return {std::move(tr), load_dataset(root, "val", size)};
    return split_dataset(tr, cfg.val_fraction, cfg.seed);
  }
  return split_dataset(load_dataset(root, split, size), cfg.val_fraction, cfg.seed);
}

void print_row(const MetricRow& r) {
  std::cout << r.model << " on " << r.dataset << " (" << r.images << " images): mDice " << format_fixed(r.mdice)
            << ", mIoU " << format_fixed(r.miou) << ", MAE " << format_fixed(r.mae) << ", FNR "
            << format_fixed(r.fnr) << "\n";
}

void set_threads(bool deterministic) {
  if (deterministic) Eigen::setNbThreads(1);
}

// ---------------------------------------------------------------- commands

int run_gen_data(const Common& c, std::optional<int> count, std::optional<int> canvas) {
  const std::string started = timestamp();
  SynthConfig cfg;
  try {
    json j = c.config.empty() ? to_json(cfg) : read_json_file(c.config);
    if (!c.config.empty()) {
      json base = to_json(cfg);
      merge_json(base, j);
      j = base;
    }
    if (c.seed) j["seed"] = *c.seed;
    if (count) j["count"] = *count;
    if (canvas) j["canvas"] = *canvas;
    apply_sets(j, c.sets);
    cfg = synth_config_from_json(j);
    cfg.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
  const fs::path out = c.out;
  synth_generate(cfg, out);
  std::cout << "wrote " << cfg.count << " image/mask pairs to " << out.string() << "\n";
  write_manifest(out, "gen-data", to_json(cfg), {{"out", fs::absolute(out).string()}}, cfg.seed, started);
  return kExitOk;
}

int run_train(const Common& c, const TrainFlags& f) {
  const std::string started = timestamp();
  const TrainConfig cfg = resolve_train_config(c, f);
  const fs::path root = data_root(c);
  set_threads(cfg.deterministic);
  const fs::path out = c.out;
  auto [train_set, val_set] = training_data(root, c.split, cfg);
  std::cout << "training on " << train_set.size() << " samples, validating on " << val_set.size() << "\n";
  const TrainResult res = train(cfg, train_set, val_set, out);
  for (const auto& r : res.history)
    std::cout << "epoch " << r.epoch << ": train " << format_fixed(r.train_loss) << ", val "
              << format_fixed(r.val_loss) << "\n";
  std::cout << "best epoch " << res.best_epoch << " (val " << format_fixed(res.best_val_loss) << "), checkpoint "
            << res.best_checkpoint.string() << "\n";
  write_manifest(out, "train", to_json(cfg),
                 {{"data", fs::absolute(root).string()}, {"out", fs::absolute(out).string()}}, cfg.seed, started);
  return kExitOk;
}

int run_eval(const Common& c, const std::string& checkpoint, const std::string& predictions, double threshold,
             const std::string& dataset_name, const std::string& model_name) {
  const std::string started = timestamp();
  if (checkpoint.empty() == predictions.empty())
    throw UsageError("eval needs exactly one of --checkpoint or --predictions");
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("--threshold must be in (0, 1)");
  const fs::path root = data_root(c);
  const fs::path out = c.out;
  fs::create_directories(out);
  const std::string name = dataset_name.empty() ? root.filename().string() : dataset_name;

  Evaluation ev;
  json config = {{"threshold", threshold}};
  if (!checkpoint.empty()) {
    Model<float> model = load_model<float>(checkpoint);
    const Dataset data = load_dataset(root, c.split, model.config().input_size);
    ev = evaluate(model, data, threshold, name, model_name.empty() ? "model" : model_name);
    config["model"] = to_json(model.config());
  } else {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(predictions))
      if (e.path().extension() == ".png") files.push_back(e.path());
    if (files.empty()) throw IoError("no prediction PNGs in '" + predictions + "'");
    int w = 0, h = 0;
    (void)read_png_gray_normalized(files.front(), w, h);
    if (w != h) throw ContractViolation("prediction maps must be square");
    const Dataset data = load_dataset(root, c.split, w);
    std::vector<std::vector<float>> maps;
    for (const auto& s : data.samples()) {
      const fs::path p = fs::path(predictions) / (s.id + ".png");
      if (!fs::exists(p)) throw IoError("no prediction '" + p.string() + "' for sample '" + s.id + "'");
      int pw = 0, ph = 0;
      const std::vector<double> v = read_png_gray_normalized(p, pw, ph);
      if (pw != w || ph != h) throw ContractViolation("prediction '" + p.string() + "' has a different size");
      maps.emplace_back(v.begin(), v.end());
    }
    ev = evaluate_maps(maps, data, threshold, name, model_name.empty() ? "predictions" : model_name);
  }

  EvalReport report;
  report.threshold = threshold;
  report.rows.push_back(ev.row);
  report.write(out / "eval.json", out / "eval.csv");
  std::ofstream(out / "integrity.csv") << integrity_csv({ev.integrity});
  print_row(ev.row);
  write_manifest(out, "eval", config,
                 {{"data", fs::absolute(root).string()},
                  {"checkpoint", checkpoint.empty() ? "" : fs::absolute(checkpoint).string()},
                  {"predictions", predictions.empty() ? "" : fs::absolute(predictions).string()},
                  {"out", fs::absolute(out).string()}},
                 0, started);
  return kExitOk;
}

int run_predict(const Common& c, const std::string& checkpoint, double threshold) {
  const std::string started = timestamp();
  if (checkpoint.empty()) throw UsageError("predict needs --checkpoint");
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("--threshold must be in (0, 1)");
  const fs::path root = data_root(c);
  const fs::path out = c.out;
  Model<float> model = load_model<float>(checkpoint);
  model.set_training(false);
  const Dataset data = load_dataset(root, c.split, model.config().input_size);
  fs::create_directories(out / "probabilities");
  fs::create_directories(out / "masks");
  const int S = static_cast<int>(model.config().input_size);
  for (const SampleBatch& b : data.batches(4)) {
    const PredictionSet<float> preds = model.forward(b.images);
    const Tensor<float>& prob = preds.final_output().prob;
    for (Index n = 0; n < prob.n(); ++n) {
      const auto flat = prob.flat_sample(n);
      std::vector<std::uint16_t> q(static_cast<std::size_t>(flat.size()));
      Image8 mask{S, S, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(flat.size()))};
      for (Index i = 0; i < flat.size(); ++i) {
        q[static_cast<std::size_t>(i)] = encode_probability(flat[i], threshold);
        mask.pixels[static_cast<std::size_t>(i)] = static_cast<double>(flat[i]) >= threshold ? 255 : 0;
      }
      const std::string& id = b.ids[static_cast<std::size_t>(n)];
      write_png16_gray(out / "probabilities" / (id + ".png"), S, S, q);
      write_png(out / "masks" / (id + ".png"), mask);
    }
  }
  std::cout << "wrote " << data.size() << " probability maps and masks to " << out.string() << "\n";
  write_manifest(out, "predict", {{"threshold", threshold}, {"model", to_json(model.config())}},
                 {{"data", fs::absolute(root).string()},
                  {"checkpoint", fs::absolute(checkpoint).string()},
                  {"out", fs::absolute(out).string()}},
                 0, started);
  return kExitOk;
}

int run_ablate(const Common& c, const TrainFlags& f, const std::string& test_data, double threshold) {
  const std::string started = timestamp();
  const TrainConfig cfg = resolve_train_config(c, f);
  const fs::path root = data_root(c);
  set_threads(cfg.deterministic);
  const fs::path out = c.out;
  auto [train_set, val_set] = training_data(root, c.split, cfg);
  fs::path test_root = test_data;
  std::string test_split;
  if (test_root.empty()) {
    if (!fs::is_directory(root / "test")) throw UsageError("ablate needs --test-data or a test/ split under --data");
    test_root = root;
    test_split = "test";
  }
  const Dataset test_set = load_dataset(test_root, test_split, cfg.model.input_size);
  const AblationResult res = ablate(cfg, train_set, val_set, test_set, out, threshold, "test");
  for (const auto& run : res.runs) print_row(run.evaluation.row);
  write_manifest(out, "ablate", to_json(cfg),
                 {{"data", fs::absolute(root).string()},
                  {"test_data", fs::absolute(test_root).string()},
                  {"out", fs::absolute(out).string()}},
                 cfg.seed, started);
  return kExitOk;
}

int run_profile(const Common& c, const TrainFlags& f, const std::string& checkpoint, int runs) {
  const std::string started = timestamp();
  Eigen::setNbThreads(1);
  const fs::path out = c.out;
  fs::create_directories(out);
  Model<float> model;
  json config;
  if (!checkpoint.empty()) {
    model = load_model<float>(checkpoint);
    config = to_json(model.config());
  } else {
    const TrainConfig cfg = resolve_train_config(c, f);
    model = Model<float>(cfg.model, cfg.seed);
    config = to_json(cfg.model);
  }
  const Index size = f.input_size.value_or(model.config().input_size);
  EvalReport report;
  try {
    report.profile = profile(model, size, {5, runs});
  } catch (const NumericalError& e) {
    const ModelConfig& mc = model.config();
    if (mc.pfr_scale_mode == ScaleMode::raw || mc.cpfr_scale_mode == ScaleMode::raw)
      throw NumericalError(std::string(e.what()) +
                           " (raw holistic scaling overflows float at this size; try --set model.pfr_scale_mode=inv_chw"
                           " --set model.cpfr_scale_mode=inv_chw, which leaves parameter and MAC counts unchanged)");
    throw;
  }
  write_json_file((out / "profile.json").string(), report.to_json());
  std::cout << format_profile(*report.profile) << " at " << size << "x" << size << " on " << report.profile->hardware
            << "\n";
  write_manifest(out, "profile", config,
                 {{"checkpoint", checkpoint.empty() ? "" : fs::absolute(checkpoint).string()},
                  {"out", fs::absolute(out).string()}},
                 0, started);
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Polyp segmentation training, evaluation and profiling"};
  app.require_subcommand(1);

  Common gen, tr, ev, pr, ab, pf;
  TrainFlags trf, abf, pff;
  std::optional<int> count, canvas;
  std::string ev_ckpt, ev_preds, ev_name, ev_model, pr_ckpt, ab_test, pf_ckpt;
  double ev_thr = 0.5, pr_thr = 0.5, ab_thr = 0.5;
  int pf_runs = 30;

  auto* g = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_common(g, gen, "synth_data");
  g->add_option("--count", count, "Number of samples");
  g->add_option("--canvas", canvas, "Image side in pixels");

  const auto add_train_flags = [](CLI::App* sub, TrainFlags& f) {
    sub->add_flag("--desk-preset", f.desk, "Small CPU configuration");
    sub->add_flag("--deterministic", f.deterministic, "Single-threaded, bit-reproducible compute");
    sub->add_option("--input-size", f.input_size, "Model input side (multiple of 32)");
  };

  auto* t = app.add_subcommand("train", "Train a model");
  add_common(t, tr, "run_train");
  add_data(t, tr);
  add_train_flags(t, trf);

  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or saved predictions");
  add_common(e, ev, "run_eval");
  add_data(e, ev);
  e->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  e->add_option("--predictions", ev_preds, "Directory of <id>.png probability maps or masks");
  e->add_option("--threshold", ev_thr, "Binarization threshold")->capture_default_str();
  e->add_option("--dataset-name", ev_name, "Dataset label in the report");
  e->add_option("--model-name", ev_model, "Model label in the report");

  auto* p = app.add_subcommand("predict", "Write probability maps and binary masks");
  add_common(p, pr, "run_predict");
  add_data(p, pr);
  p->add_option("--checkpoint", pr_ckpt, "Model checkpoint");
  p->add_option("--threshold", pr_thr, "Binarization threshold")->capture_default_str();

  auto* a = app.add_subcommand("ablate", "Train and evaluate the four component settings");
  add_common(a, ab, "run_ablate");
  add_data(a, ab);
  add_train_flags(a, abf);
  a->add_option("--test-data", ab_test, "Held-out dataset root (default: <data>/test)");
  a->add_option("--threshold", ab_thr, "Binarization threshold")->capture_default_str();

  auto* f = app.add_subcommand("profile", "Parameters, MACs and FPS");
  add_common(f, pf, "run_profile");
  add_train_flags(f, pff);
  f->add_option("--checkpoint", pf_ckpt, "Model checkpoint (default: fresh model from config)");
  f->add_option("--runs", pf_runs, "Timed forwards")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return run_gen_data(gen, count, canvas);
    if (t->parsed()) return run_train(tr, trf);
    if (e->parsed()) return run_eval(ev, ev_ckpt, ev_preds, ev_thr, ev_name, ev_model);
    if (p->parsed()) return run_predict(pr, pr_ckpt, pr_thr);
    if (a->parsed()) return run_ablate(ab, abf, ab_test, ab_thr);
    if (f->parsed()) return run_profile(pf, pff, pf_ckpt, pf_runs);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("icps");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace icps
