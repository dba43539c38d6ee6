// Command-line driver: dataset generation, training, evaluation, probes and
// affinity inspection. Exit codes: 0 success, 1 runtime failure, 2 usage or
// configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <sys/stat.h>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdcl/config.hpp"
#include "rdcl/io.hpp"
#include "rdcl/train.hpp"

namespace {

bool file_exists(const std::string& path) {
  struct stat st{};
  return ::stat(path.c_str(), &st) == 0;
}

rdcl::ConfigMap load_config(const std::string& path) {
  if (!file_exists(path))
    throw rdcl::ConfigError("config file not found: " + path);
  auto m = rdcl::parse_config_file(path);
  rdcl::reject_unknown_keys(m);
  rdcl::apply_env_overrides(m, rdcl::train_config_keys());
  return m;
}

rdcl::GenerativeSpec spec_from_config(const rdcl::ConfigMap& m,
                                      const rdcl::TrainConfig& cfg) {
  rdcl::GenerativeSpec spec;
  spec.n_static_classes = static_cast<std::size_t>(
      rdcl::cfg_int(m, "data.n_static_classes", 4));
  spec.n_dynamic_classes = static_cast<std::size_t>(
      rdcl::cfg_int(m, "data.n_dynamic_classes", 4));
  spec.noise_std = rdcl::cfg_double(m, "data.noise_std", 0.05);
  spec.seed = cfg.seed;
  spec.T = cfg.dse.T;
  spec.d = cfg.dse.d;
  spec.validate();
  return spec;
}

// Reads data.path when it exists, otherwise generates; a generated dataset is
// persisted when a path is configured.
rdcl::Dataset load_dataset(const rdcl::ConfigMap& m,
                           const rdcl::TrainConfig& cfg) {
  const std::string path = rdcl::cfg_str(m, "data.path", "");
  if (!path.empty() && file_exists(path)) {
    rdcl::Dataset ds = rdcl::read_dataset(path);
    if (ds.spec.T != cfg.dse.T || ds.spec.d != cfg.dse.d)
      throw rdcl::ConfigError("dataset at " + path +
                              " disagrees with dse.T/dse.d");
    return ds;
  }
  const std::size_t n =
      static_cast<std::size_t>(rdcl::cfg_int(m, "data.n_episodes", 512));
  rdcl::Dataset ds = rdcl::generate_dataset(spec_from_config(m, cfg), n);
  if (!path.empty()) rdcl::write_dataset(path, ds);
  return ds;
}

std::size_t train_count(const rdcl::ConfigMap& m, const rdcl::Dataset& ds) {
  const double frac = rdcl::cfg_double(m, "data.train_fraction", 0.8);
  if (frac <= 0.0 || frac >= 1.0)
    throw rdcl::ConfigError("data.train_fraction must lie in (0, 1)");
  return static_cast<std::size_t>(
      static_cast<double>(ds.episodes.size()) * frac);
}

int cmd_gen_data(const std::string& config_path) {
  auto m = load_config(config_path);
  auto cfg = rdcl::train_config_from_map(m);
  const std::string path = rdcl::cfg_str(m, "data.path", "");
  if (path.empty())
    throw rdcl::ConfigError("gen-data requires data.path in the config");
  const std::size_t n =
      static_cast<std::size_t>(rdcl::cfg_int(m, "data.n_episodes", 512));
  rdcl::Dataset ds = rdcl::generate_dataset(spec_from_config(m, cfg), n);
  rdcl::write_dataset(path, ds);
  std::cout << "wrote " << ds.episodes.size() << " episodes to " << path
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  auto m = load_config(config_path);
  auto cfg = rdcl::train_config_from_map(m);
  rdcl::Dataset ds = load_dataset(m, cfg);
  const std::size_t n_train = train_count(m, ds);
  const std::size_t n_val = ds.episodes.size() - n_train;

  rdcl::Trainer trainer(cfg);
  const std::string metrics_path =
      rdcl::cfg_str(m, "out.metrics", "metrics.csv");
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics)
    throw rdcl::IoError("cannot write metrics file: " + metrics_path);
  metrics << rdcl::metrics_csv_header();

  rdcl::MetricsRecord last;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rdcl::LossComponents sums;
    double acc_sum = 0.0;
    std::size_t steps = 0;
    for (const auto& idx : trainer.epoch_batches(n_train, epoch)) {
      auto rec = trainer.train_step(ds, idx);
      for (const auto& [key, value] : rec.components) sums[key] += value;
      acc_sum += rec.accuracy;
      ++steps;
    }
    if (steps == 0)
      throw rdcl::ConfigError("no full batch fits the training split");
    rdcl::MetricsRecord rec;
    rec.epoch = epoch;
    for (auto& [key, value] : sums)
      rec.components[key] = value / static_cast<double>(steps);
    rec.train_accuracy = acc_sum / static_cast<double>(steps);
    rec.val_accuracy =
        rdcl::evaluate(trainer.model, ds, cfg, n_train, n_val).accuracy;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    metrics << rdcl::metrics_csv_row(rec);
    std::cout << "epoch " << epoch << " total "
              << rec.components.at("total") << " train_acc "
              << rec.train_accuracy << " val_acc " << rec.val_accuracy << "\n";
    last = rec;
  }

  const std::string ckpt = rdcl::cfg_str(m, "out.checkpoint", "");
  if (!ckpt.empty()) rdcl::write_checkpoint(ckpt, trainer.params);

  const std::string summary_path = rdcl::cfg_str(m, "out.summary", "");
  if (!summary_path.empty()) {
    auto probe = rdcl::probe_disentanglement(trainer.model, ds, cfg);
    nlohmann::json summary{
        {"mode", cfg.mode},
        {"seed", cfg.seed},
        {"epochs", cfg.epochs},
        {"train_accuracy", last.train_accuracy},
        {"val_accuracy", last.val_accuracy},
        {"final_loss", last.components["total"]},
        {"probe",
         {{"s_to_static", probe.s_to_static.accuracy},
          {"s_to_dynamic", probe.s_to_dynamic.accuracy},
          {"z_to_static", probe.z_to_static.accuracy},
          {"z_to_dynamic", probe.z_to_dynamic.accuracy}}}};
    std::ofstream out(summary_path, std::ios::trunc);
    if (!out) throw rdcl::IoError("cannot write summary: " + summary_path);
    out << summary.dump(2) << "\n";
  }
  return 0;
}

rdcl::Model load_model(const rdcl::TrainConfig& cfg,
                       const std::string& checkpoint) {
  rdcl::Rng init = rdcl::Rng(cfg.seed).substream(1);
  rdcl::Model model(cfg, init);
  if (!checkpoint.empty()) {
    auto params = model.params(cfg.mode == "rdcl");
    rdcl::read_checkpoint_into(checkpoint, params);
    model.iv_initialized = true;
  }
  return model;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint) {
  auto m = load_config(config_path);
  auto cfg = rdcl::train_config_from_map(m);
  rdcl::Dataset ds = load_dataset(m, cfg);
  const std::size_t n_train = train_count(m, ds);
  rdcl::Model model = load_model(cfg, checkpoint);
  auto res = rdcl::evaluate(model, ds, cfg, n_train,
                            ds.episodes.size() - n_train);
  std::cout << "episodes " << res.n << "\naccuracy " << res.accuracy
            << "\naccuracy_static_q " << res.accuracy_static_q
            << "\naccuracy_dynamic_q " << res.accuracy_dynamic_q << "\n";
  return 0;
}

int cmd_probe(const std::string& config_path, const std::string& checkpoint) {
  auto m = load_config(config_path);
  auto cfg = rdcl::train_config_from_map(m);
  rdcl::Dataset ds = load_dataset(m, cfg);
  rdcl::Model model = load_model(cfg, checkpoint);
  auto probe = rdcl::probe_disentanglement(model, ds, cfg);
  auto line = [](const char* name, const rdcl::ProbeFit& fit) {
    std::cout << name << " " << fit.accuracy
              << (fit.degenerate ? " (degenerate)" : "") << "\n";
  };
  line("s_to_static", probe.s_to_static);
  line("s_to_dynamic", probe.s_to_dynamic);
  line("z_to_static", probe.z_to_static);
  line("z_to_dynamic", probe.z_to_dynamic);
  return 0;
}

int cmd_dump_affinity(const std::string& config_path,
                      const std::string& checkpoint) {
  auto m = load_config(config_path);
  auto cfg = rdcl::train_config_from_map(m);
  rdcl::Dataset ds = load_dataset(m, cfg);
  if (ds.episodes.size() < cfg.batch_size)
    throw rdcl::ConfigError("dataset smaller than one batch");
  rdcl::Model model = load_model(cfg, checkpoint);

  std::vector<std::size_t> idx(cfg.batch_size);
  for (std::size_t i = 0; i < cfg.batch_size; ++i) idx[i] = i;
  const std::size_t n_obj = 2 * cfg.batch_size, d = ds.spec.d;
  std::vector<rdcl::Tensor> rows(n_obj);
  for (std::size_t i = 0; i < n_obj; ++i) {
    const auto& ep = ds.episodes[idx[i % cfg.batch_size]];
    rows[i] = rdcl::Tensor::from(
        {d}, i < cfg.batch_size ? ep.obj1.audio : ep.obj2.audio);
  }
  rdcl::Tensor a = rdcl::build_affinity(rdcl::from_rows(rows), cfg.clm);
  for (std::size_t i = 0; i < n_obj; ++i) {
    for (std::size_t j = 0; j < n_obj; ++j)
      std::printf("%s%.6f", j ? " " : "", a[i * n_obj + j]);
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangled counterfactual reasoning harness"};
  app.require_subcommand(1);

  std::string config_path, checkpoint;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "config file")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "config file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate the validation split");
  eval->add_option("--config", config_path, "config file")->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint to load");

  auto* probe = app.add_subcommand("probe", "linear probes of the factors");
  probe->add_option("--config", config_path, "config file")->required();
  probe->add_option("--checkpoint", checkpoint, "checkpoint to load");

  auto* dump = app.add_subcommand("dump-affinity",
                                  "print the audio affinity of one batch");
  dump->add_option("--config", config_path, "config file")->required();
  dump->add_option("--checkpoint", checkpoint, "checkpoint to load");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path);
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint);
    if (probe->parsed()) return cmd_probe(config_path, checkpoint);
    if (dump->parsed()) return cmd_dump_affinity(config_path, checkpoint);
  } catch (const rdcl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
