// Command-line front end: dataset generation, training, evaluation, and
// attention-map export. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "entstream/attmaps.hpp"
#include "entstream/baselines.hpp"
#include "entstream/checkpoint.hpp"
#include "entstream/dataset.hpp"
#include "entstream/model.hpp"
#include "entstream/sortofclevr.hpp"
#include "entstream/training.hpp"

namespace {

using namespace entstream;

constexpr int kQuestionsPerFamily = 10;  // 20 samples per scene

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " +
                      e.what());
  }
}

/// Fills `target` from config key `key` unless the flag was given explicitly.
template <class T>
void config_default(const nlohmann::json& cfg, const char* key,
                    const CLI::App* sub, const std::string& flag, T& target,
                    const std::string& path) {
  if (!cfg.contains(key) || sub->count(flag) > 0) return;
  try {
    target = cfg.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' key '" + key + "': " +
                      e.what());
  }
}

int run_gen(const std::string& out, int scenes, std::uint64_t seed) {
  Rng rng(seed);
  soc::DatasetWriter writer(out, static_cast<std::uint64_t>(scenes) * 2 *
                                     kQuestionsPerFamily);
  for (int s = 0; s < scenes; ++s) {
    soc::Scene scene = soc::generate_scene(rng);
    auto samples = soc::generate_questions(scene, rng, kQuestionsPerFamily);
    for (const auto& sample : samples) writer.write(sample);
  }
  writer.close();
  std::cout << "wrote " << scenes * 2 * kQuestionsPerFamily << " samples ("
            << scenes << " scenes) to " << out << "\n";
  return 0;
}

struct TrainFlags {
  std::string model, data, test_data, out, config_path;
  int epochs = 20;
  std::uint64_t seed = 0;
  int hidden_dim = 0;  // 0: per-model default (rfs 32, rfsh 64)
  int stream_len = 8;
  double temperature = 1.0;
  double lr = 1e-4;
  int batch = 64;
  double clip_norm = 0.0;
  int eval_every = 1;
};

int run_train(const CLI::App* sub, TrainFlags f) {
  if (!f.config_path.empty()) {
    const nlohmann::json cfg = load_config_file(f.config_path);
    config_default(cfg, "model", sub, "--model", f.model, f.config_path);
    config_default(cfg, "data", sub, "--data", f.data, f.config_path);
    config_default(cfg, "test_data", sub, "--test-data", f.test_data, f.config_path);
    config_default(cfg, "out", sub, "--out", f.out, f.config_path);
    config_default(cfg, "epochs", sub, "--epochs", f.epochs, f.config_path);
    config_default(cfg, "seed", sub, "--seed", f.seed, f.config_path);
    config_default(cfg, "hidden_dim", sub, "--hidden-dim", f.hidden_dim, f.config_path);
    config_default(cfg, "stream_len", sub, "--stream-len", f.stream_len, f.config_path);
    config_default(cfg, "temperature", sub, "--temperature", f.temperature, f.config_path);
    config_default(cfg, "lr", sub, "--lr", f.lr, f.config_path);
    config_default(cfg, "batch", sub, "--batch", f.batch, f.config_path);
    config_default(cfg, "clip_norm", sub, "--clip-norm", f.clip_norm, f.config_path);
    config_default(cfg, "eval_every", sub, "--eval-every", f.eval_every, f.config_path);
  }
  const bool is_stream = f.model == "rfs" || f.model == "rfsh";
  if (!is_stream) {
    for (const char* flag : {"--hidden-dim", "--stream-len", "--temperature"})
      if (sub->count(flag) > 0) {
        std::cerr << "usage error: " << flag << " only applies to rfs/rfsh\n";
        return 1;
      }
  }

  Rng init(Rng::derive(f.seed, detail::kStreamInit));
  nlohmann::json model_cfg;
  if (is_stream) {
    ModelConfig mc;
    mc.attention = f.model == "rfsh" ? AttentionMode::hard : AttentionMode::soft;
    mc.hidden_dim = f.hidden_dim > 0 ? f.hidden_dim
                    : (f.model == "rfsh" ? 64 : 32);
    mc.stream_len = f.stream_len;
    mc.gumbel_temperature = f.temperature;
    model_cfg = to_json(mc);
  } else if (f.model == "rn") {
    model_cfg = to_json(RnConfig{});
  } else {
    model_cfg = to_json(CnnConfig{});
  }
  ModelVariant model = make_model(f.model, model_cfg, init);

  TrainConfig tc;
  tc.model_kind = f.model;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch;
  tc.learning_rate = f.lr;
  tc.seed = f.seed;
  tc.train_data = f.data;
  tc.test_data = f.test_data;
  tc.out_dir = f.out;
  tc.eval_every = f.eval_every;
  tc.clip_norm = f.clip_norm;
  TrainResult result = train(model, tc);

  const MetricsRecord& last = result.metrics.back();
  nlohmann::json summary;
  summary["final_checkpoint"] = result.final_checkpoint;
  summary["metrics"] = result.metrics_path;
  summary["epochs"] = f.epochs;
  summary["train_loss"] = last.train_loss;
  if (last.evaluated) {
    summary["test_acc"] = last.test_acc;
    summary["nonrel_acc"] = last.nonrel_acc;
    summary["birel_acc"] = last.birel_acc;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data, int seeds,
             std::uint64_t seed, int batch) {
  ModelVariant model = load_checkpoint(checkpoint);
  const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  if (seeds == 0) seeds = meta.kind == "rfsh" ? 3 : 1;
  soc::DatasetReader reader(data);
  EvalResult r = evaluate_mean(model, reader, seed, seeds, batch);
  nlohmann::json out;
  out["checkpoint"] = checkpoint;
  out["kind"] = meta.kind;
  out["seeds"] = seeds;
  out["samples"] = r.total;
  out["overall_acc"] = r.overall;
  out["nonrel_acc"] = r.nonrel;
  out["birel_acc"] = r.birel;
  out["nonrel_count"] = r.nonrel_count;
  out["birel_count"] = r.birel_count;
  std::cout << out.dump() << "\n";
  return 0;
}

int run_attmaps(const std::string& checkpoint, const std::string& data,
                const std::string& out, int count, std::uint64_t seed) {
  AttmapsResult r = export_attention_maps(checkpoint, data, out, count, seed);
  std::cout << "wrote " << r.json_files.size() << " trace records and "
            << r.pgm_files.size() << " heatmaps to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Entity-stream relational reasoning on Sort-of-CLEVR scenes.\n"
      "Config-file values (--config, JSON) are overridden by explicit flags."};
  app.require_subcommand(1);

  // gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand(
      "gen", "Generate a Sort-of-CLEVR dataset (20 questions per scene)");
  std::string gen_out;
  int gen_scenes = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output dataset path")->required();
  gen->add_option("--scenes", gen_scenes, "Number of scenes")
      ->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generator seed")->required();

  // train -------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a model");
  TrainFlags tf;
  tr->add_option("--model", tf.model, "Model kind")
      ->required()
      ->check(CLI::IsMember({"rn", "cnn", "rfs", "rfsh"}));
  tr->add_option("--data", tf.data, "Training dataset")->required();
  tr->add_option("--test-data", tf.test_data,
                 "Held-out dataset evaluated at the cadence");
  tr->add_option("--epochs", tf.epochs, "Training epochs")
      ->required()
      ->check(CLI::PositiveNumber);
  tr->add_option("--seed", tf.seed, "Training seed")->required();
  tr->add_option("--out", tf.out, "Output directory")->required();
  tr->add_option("--hidden-dim", tf.hidden_dim,
                 "GRU hidden width (rfs default 32, rfsh default 64)")
      ->check(CLI::PositiveNumber);
  tr->add_option("--stream-len", tf.stream_len, "Entity-stream length")
      ->check(CLI::PositiveNumber);
  tr->add_option("--temperature", tf.temperature,
                 "Gumbel-softmax temperature (hard attention)")
      ->check(CLI::PositiveNumber);
  tr->add_option("--lr", tf.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber);
  tr->add_option("--batch", tf.batch, "Mini-batch size")
      ->check(CLI::PositiveNumber);
  tr->add_option("--clip-norm", tf.clip_norm,
                 "Global gradient-norm clip (0 disables)");
  tr->add_option("--eval-every", tf.eval_every,
                 "Epochs between evaluations/checkpoints")
      ->check(CLI::PositiveNumber);
  tr->add_option("--config", tf.config_path,
                 "JSON config file; explicit flags take precedence");

  // eval --------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data;
  int ev_seeds = 0;  // 0: default by kind (rfsh 3, else 1)
  std::uint64_t ev_seed = 0;
  int ev_batch = 64;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Dataset path")->required();
  ev->add_option("--seeds", ev_seeds,
                 "Evaluation seeds to average (default: 3 for rfsh, else 1)")
      ->check(CLI::PositiveNumber);
  ev->add_option("--seed", ev_seed, "Base evaluation seed");
  ev->add_option("--batch", ev_batch, "Evaluation batch size")
      ->check(CLI::PositiveNumber);

  // attmaps -----------------------------------------------------------
  auto* am = app.add_subcommand(
      "attmaps", "Export attention traces (JSON + PGM heatmaps)");
  std::string am_ckpt, am_data, am_out;
  int am_count = 0;
  std::uint64_t am_seed = 0;
  am->add_option("--checkpoint", am_ckpt, "Checkpoint path")->required();
  am->add_option("--data", am_data, "Dataset path")->required();
  am->add_option("--out", am_out, "Output directory")->required();
  am->add_option("--count", am_count, "Samples to trace")
      ->required()
      ->check(CLI::PositiveNumber);
  am->add_option("--seed", am_seed, "Evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(gen)) return run_gen(gen_out, gen_scenes, gen_seed);
    if (app.got_subcommand(tr)) return run_train(tr, tf);
    if (app.got_subcommand(ev))
      return run_eval(ev_ckpt, ev_data, ev_seeds, ev_seed, ev_batch);
    if (app.got_subcommand(am))
      return run_attmaps(am_ckpt, am_data, am_out, am_count, am_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
