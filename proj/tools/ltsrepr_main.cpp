// Command-line driver. Talks to the library through the C API only.

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltsrepr/ltsrepr.h"

namespace {

struct Failure {
  int status;
  std::string message;
};

void check(int status) {
  if (status != LTSR_OK) throw Failure{status, ltsr_last_error()};
}

template <typename T, void (*Destroy)(T*)>
struct Deleter {
  void operator()(T* p) const { Destroy(p); }
};

using ConfigPtr = std::unique_ptr<ltsr_config, Deleter<ltsr_config, ltsr_config_destroy>>;
using DatasetPtr = std::unique_ptr<ltsr_dataset, Deleter<ltsr_dataset, ltsr_dataset_destroy>>;
using ModelPtr = std::unique_ptr<ltsr_model, Deleter<ltsr_model, ltsr_model_destroy>>;
using ArtifactsPtr =
    std::unique_ptr<ltsr_artifacts, Deleter<ltsr_artifacts, ltsr_artifacts_destroy>>;

struct Options {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> value
};

// Flag name, config key, help text.
struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<FlagSpec> kFlags = {
    {"--dataset-cache", "data.cache", "LTDATA01 cache file (read if present, else written)"},
    {"--num-classes", "data.num_classes", "number of classes K"},
    {"--input-dim", "data.input_dim", "input dimension D"},
    {"--max-count", "data.max_count", "largest class count"},
    {"--imbalance", "data.imbalance_factor", "imbalance factor in (0, 1]"},
    {"--data-seed", "data.seed", "dataset seed"},
    {"--hidden-sizes", "model.hidden", "comma-separated hidden layer sizes"},
    {"--repr-dim", "model.repr_dim", "representation dimension L"},
    {"--activation", "model.activation", "relu, tanh or softplus"},
    {"--lr", "optim.lr", "stage-1 base learning rate"},
    {"--momentum", "optim.momentum", "Nesterov momentum"},
    {"--weight-decay", "optim.weight_decay", "L2 coefficient"},
    {"--epochs", "optim.epochs", "stage-1 epochs"},
    {"--batch-size", "optim.batch_size", "stage-1 batch size"},
    {"--mixup-alpha", "optim.mixup_alpha", "mixup Beta parameter (0 disables)"},
    {"--swa", "swa.enabled", "on or off"},
    {"--swa-start-frac", "swa.start_fraction", "fraction of training before averaging"},
    {"--swa-lr", "swa.lr", "constant learning rate while averaging"},
    {"--swag-samples", "eval.analysis_m", "posterior samples used by analyze"},
    {"--retrain", "retrain.method", "none, crt, lws, disalign or srepr"},
    {"--retrain-epochs-frac", "retrain.epochs_frac", "re-training epochs as a fraction"},
    {"--retrain-lr", "retrain.lr", "re-training learning rate"},
    {"--balance", "balance.kind", "none, cbs, grw or la"},
    {"--balance-rho", "balance.rho", "balancing exponent"},
    {"--srepr-m", "srepr.num_samples", "stochastic representations per input"},
    {"--kd-temp", "srepr.kd_temperature", "distillation temperature"},
    {"--beta-floor", "srepr.beta_floor", "floor of the Dirichlet fit denominator"},
    {"--stochastic-source", "srepr.source", "posterior or jitter"},
    {"--jitter-std", "srepr.jitter_std", "input jitter std"},
    {"--ece-bins", "eval.ece_bins", "calibration bins"},
    {"--ensemble-m", "eval.ensemble_m", "posterior ensemble size for eval (0: point)"},
    {"--analysis-seed", "eval.analysis_seed", "seed for posterior sampling in eval/analyze"},
    {"--seed", "run.seed", "run seed"},
    {"--seeds", "run.seeds", "comma-separated sweep seeds"},
};

void add_common(CLI::App* cmd, Options& opts, bool needs_checkpoint) {
  cmd->add_option("--config", opts.config_path, "config file");
  cmd->add_option("--out", opts.out_dir, "output directory")->required();
  if (needs_checkpoint)
    cmd->add_option("--checkpoint", opts.checkpoint, "input checkpoint")
        ->required();
  cmd->add_option("--set", opts.sets, "override any config key: section.key=value");
  for (const auto& f : kFlags)
    cmd->add_option_function<std::string>(
        f.flag, [&opts, key = std::string(f.key)](const std::string& v) { opts.flags[key] = v; },
        f.help);
}

ConfigPtr resolve_config(const Options& opts, const ltsr_model* model) {
  ltsr_config* raw = nullptr;
  if (!opts.config_path.empty())
    check(ltsr_config_load(opts.config_path.c_str(), &raw));
  else if (model)
    check(ltsr_config_from_model(model, &raw));
  else
    check(ltsr_config_create(&raw));
  ConfigPtr cfg(raw);
  for (const auto& s : opts.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw Failure{LTSR_E_INVALID_ARGUMENT, "--set expects section.key=value, got '" + s + "'"};
    check(ltsr_config_set(cfg.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()));
  }
  for (const auto& [key, value] : opts.flags)
    check(ltsr_config_set(cfg.get(), key.c_str(), value.c_str()));
  check(ltsr_config_validate(cfg.get()));
  return cfg;
}

std::string out_path(const Options& opts, const std::string& name) {
  return (std::filesystem::path(opts.out_dir) / name).string();
}

void prepare_out(const Options& opts) {
  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec || !std::filesystem::is_directory(opts.out_dir))
    throw Failure{LTSR_E_IO, "cannot create output directory " + opts.out_dir};
}

void write_text(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Failure{LTSR_E_IO, "cannot open " + path + " for writing"};
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  if (std::fclose(f) != 0 || !ok) throw Failure{LTSR_E_IO, "write failed: " + path};
}

void write_config(const Options& opts, const ltsr_config* cfg) {
  char* text = nullptr;
  check(ltsr_config_serialize(cfg, &text));
  const std::string s(text);
  ltsr_string_free(text);
  const std::string path = out_path(opts, "resolved_config.ini");
  if (!opts.config_path.empty() && std::filesystem::exists(path) &&
      std::filesystem::equivalent(path, opts.config_path))
    throw Failure{LTSR_E_INVALID_ARGUMENT, "refusing to overwrite the input config " + path};
  write_text(path, s);
}

void guard_input(const Options& opts, const std::string& output) {
  if (!opts.checkpoint.empty() && std::filesystem::exists(output) &&
      std::filesystem::equivalent(output, opts.checkpoint))
    throw Failure{LTSR_E_INVALID_ARGUMENT, "refusing to overwrite the input checkpoint " + output};
}

DatasetPtr load_dataset(const ltsr_config* cfg) {
  ltsr_dataset* raw = nullptr;
  check(ltsr_dataset_prepare(cfg, &raw));
  return DatasetPtr(raw);
}

ModelPtr load_model(const std::string& path) {
  ltsr_model* raw = nullptr;
  check(ltsr_model_load(path.c_str(), &raw));
  return ModelPtr(raw);
}

void write_artifacts(const Options& opts, const ltsr_artifacts* a) {
  check(ltsr_artifacts_write(a, opts.out_dir.c_str()));
}

void evaluate_into(const Options& opts, const ltsr_config* cfg, const ltsr_model* model,
                   const ltsr_dataset* data, const char* prefix) {
  ltsr_artifacts* raw = nullptr;
  check(ltsr_evaluate(cfg, model, data, prefix, &raw));
  ArtifactsPtr a(raw);
  write_artifacts(opts, a.get());
}

void cmd_pretrain(const Options& opts) {
  ConfigPtr cfg = resolve_config(opts, nullptr);
  prepare_out(opts);
  DatasetPtr data = load_dataset(cfg.get());
  ltsr_model* raw = nullptr;
  check(ltsr_pretrain(cfg.get(), data.get(), &raw));
  ModelPtr model(raw);
  check(ltsr_model_save(model.get(), out_path(opts, "pretrain.ckpt").c_str()));
  evaluate_into(opts, cfg.get(), model.get(), data.get(), "pretrain_");
  write_config(opts, cfg.get());
}

void cmd_retrain(const Options& opts) {
  ModelPtr input = load_model(opts.checkpoint);
  ConfigPtr cfg = resolve_config(opts, input.get());
  prepare_out(opts);
  const std::string output = out_path(opts, "retrain.ckpt");
  guard_input(opts, output);
  DatasetPtr data = load_dataset(cfg.get());
  ltsr_model* raw = nullptr;
  check(ltsr_retrain(cfg.get(), input.get(), data.get(), &raw));
  ModelPtr model(raw);
  check(ltsr_model_save(model.get(), output.c_str()));
  evaluate_into(opts, cfg.get(), model.get(), data.get(), "retrain_");
  write_config(opts, cfg.get());
}

void cmd_eval(const Options& opts) {
  ModelPtr model = load_model(opts.checkpoint);
  ConfigPtr cfg = resolve_config(opts, model.get());
  prepare_out(opts);
  DatasetPtr data = load_dataset(cfg.get());
  evaluate_into(opts, cfg.get(), model.get(), data.get(), "");
}

void cmd_analyze(const Options& opts) {
  ModelPtr model = load_model(opts.checkpoint);
  ConfigPtr cfg = resolve_config(opts, model.get());
  prepare_out(opts);
  DatasetPtr data = load_dataset(cfg.get());
  ltsr_artifacts* raw = nullptr;
  check(ltsr_analyze(cfg.get(), model.get(), data.get(), &raw));
  ArtifactsPtr a(raw);
  write_artifacts(opts, a.get());
}

void cmd_sweep(const Options& opts) {
  ConfigPtr cfg = resolve_config(opts, nullptr);
  prepare_out(opts);
  ltsr_artifacts* raw = nullptr;
  const int status = ltsr_sweep(cfg.get(), &raw);
  ArtifactsPtr a(raw);
  const std::string message = status == LTSR_OK ? "" : ltsr_last_error();
  if (a) write_artifacts(opts, a.get());
  write_config(opts, cfg.get());
  if (status != LTSR_OK) throw Failure{status, message};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed classification with SWA/SWAG and stochastic representations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ltsr_version());

  Options opts;
  auto* pretrain = app.add_subcommand("pretrain", "stage-1 training (SGD or SWA)");
  auto* retrain = app.add_subcommand("retrain", "stage-2 classifier re-training");
  auto* eval = app.add_subcommand("eval", "ACC/NLL/ECE report for a checkpoint");
  auto* analyze = app.add_subcommand("analyze", "dispersion, quartile and per-class analysis");
  auto* sweep = app.add_subcommand("sweep", "full pipeline over several seeds");
  add_common(pretrain, opts, false);
  add_common(retrain, opts, true);
  add_common(eval, opts, true);
  add_common(analyze, opts, true);
  add_common(sweep, opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::fprintf(stderr, "error: %s: %s\n", ltsr_status_name(LTSR_E_INVALID_ARGUMENT), msg.c_str());
    return LTSR_E_INVALID_ARGUMENT;
  }

  try {
    if (pretrain->parsed()) cmd_pretrain(opts);
    else if (retrain->parsed()) cmd_retrain(opts);
    else if (eval->parsed()) cmd_eval(opts);
    else if (analyze->parsed()) cmd_analyze(opts);
    else if (sweep->parsed()) cmd_sweep(opts);
  } catch (const Failure& f) {
    std::string msg = f.message;
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::fprintf(stderr, "error: %s: %s\n", ltsr_status_name(f.status), msg.c_str());
    return f.status == LTSR_E_INTERNAL ? 99 : f.status;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 99;
  }
  return 0;
}
