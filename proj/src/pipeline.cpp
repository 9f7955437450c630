#include "ltsrepr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <optional>
#include <thread>

#include "ltsrepr/retrain.hpp"
#include "ltsrepr/swag.hpp"

namespace ltsrepr {
namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

void round_features(LongTailDataset& ds) {
  ds.features = ds.features.unaryExpr(
      [](double x) { return static_cast<double>(static_cast<float>(x)); });
}

void check_cache(const DatasetPair& pair, const DatasetConfig& cfg) {
  const auto expected =
      longtail_counts(cfg.num_classes, cfg.max_count, cfg.imbalance_factor);
  bool ok = pair.train.num_classes() == cfg.num_classes &&
            pair.train.input_dim() == cfg.input_dim &&
            pair.test.input_dim() == cfg.input_dim &&
            pair.train.class_counts == expected &&
            pair.test.num_classes() == cfg.num_classes;
  if (ok)
    for (int c : pair.test.class_counts) ok = ok && c == cfg.test_per_class;
  require(ok, ErrorCode::kPrecondition, "dataset cache does not match the data config");
}

nlohmann::json base_metadata(const ExperimentConfig& config, const ModelParams& params) {
  nlohmann::json meta = nlohmann::json::object();
  meta["activation"] = activation_name(params.activation);
  std::vector<int> hidden;
  for (std::size_t l = 0; l + 1 < params.theta.size(); ++l)
    hidden.push_back(static_cast<int>(params.theta[l].weight.rows()));
  meta["hidden"] = hidden;
  meta["input_dim"] = params.input_dim();
  meta["repr_dim"] = params.repr_dim();
  meta["num_classes"] = params.num_classes();
  meta["config"] = serialize_config(config);
  meta["config_hash"] = config_hash(config);
  meta["seed"] = config.run.seed;
  meta["data_seed"] = config.data.seed;
  return meta;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_compatible(const Checkpoint& ckpt, const LongTailDataset& ds) {
  require(ckpt.params.input_dim() == ds.input_dim() &&
              ckpt.params.num_classes() == ds.num_classes(),
          ErrorCode::kPrecondition, "checkpoint shape does not match the dataset");
}

}  // namespace

DatasetPair prepare_data(const ExperimentConfig& config) {
  config.data.validate();
  DatasetPair pair;
  const std::string& path = config.dataset_cache;
  if (!path.empty() && std::filesystem::exists(path)) {
    pair = load_dataset_pair(path);
    check_cache(pair, config.data);
  } else {
    pair = make_longtail_dataset(config.data);
    round_features(pair.train);
    round_features(pair.test);
    if (!path.empty()) save_dataset_pair(path, pair);
  }
  standardize(pair);
  return pair;
}

Checkpoint run_pretrain(const ExperimentConfig& config, const DatasetPair& data,
                        PretrainTrace* trace) {
  config.validate();
  const LongTailDataset& train = data.train;
  const ModelShape shape = config.model_shape();
  require(train.input_dim() == shape.input_dim && train.num_classes() == shape.num_classes,
          ErrorCode::kPrecondition, "dataset shape does not match the model config");

  const std::uint64_t seed = config.run.seed;
  Rng init = make_rng(seed, stream::kInit);
  ModelParams params = init_params(shape, init);
  Sampler sampler(train, Sampler::Mode::kInstanceBalanced, make_rng(seed, stream::kBatches));
  Rng mix_rng = make_rng(seed, stream::kMixup);

  const int bs = config.train.batch_size;
  const std::size_t per_epoch = sampler.batches_per_epoch(bs);
  const std::size_t total = per_epoch * static_cast<std::size_t>(config.train.epochs);
  OptimState state = OptimState::create(params, config.train.optim, total);
  const SwaSchedule schedule = config.swa_schedule(per_epoch);
  std::optional<SwagPosterior> posterior;
  if (config.swa.enabled) posterior.emplace(params);

  const LossFn ce = ce_loss();
  double epoch_loss = 0.0;
  for (std::size_t t = 0; t < total; ++t) {
    Batch b = sampler.next_batch(bs);
    LossAndGrad lg;
    if (config.train.mixup_alpha > 0.0) {
      b = mixup_batch(b, shape.num_classes, config.train.mixup_alpha, mix_rng);
      const Matrix& targets = b.targets;
      lg = loss_and_gradients(params, b.x, b.labels,
                              [&targets](const Matrix& logits, const std::vector<int>&) {
                                return soft_cross_entropy_batch(logits, targets);
                              });
    } else {
      lg = loss_and_gradients(params, b.x, b.labels, ce);
    }
    require(std::isfinite(lg.loss), ErrorCode::kNumeric,
            "non-finite training loss at step " + std::to_string(t));
    const double lr = config.swa.enabled
                          ? swa_lr(t, total, config.train.optim.lr, schedule)
                          : cosine_lr(t, total, config.train.optim.lr);
    sgd_step(params, lg.grads, state, lr);
    epoch_loss += lg.loss;
    if (posterior && should_capture(t + 1, total, schedule)) posterior->update_moments(params);
    if ((t + 1) % per_epoch == 0) {
      if (trace) trace->epoch_losses.push_back(epoch_loss / static_cast<double>(per_epoch));
      epoch_loss = 0.0;
    }
  }

  Checkpoint ckpt;
  if (posterior) {
    require(posterior->count() >= 2, ErrorCode::kPrecondition,
            "SWA captured fewer than two snapshots; lower swa.start_fraction or add epochs");
    posterior->freeze();
    ckpt.params = posterior->mean_params();
    ckpt.posterior = std::move(posterior);
  } else {
    ckpt.params = std::move(params);
  }
  ckpt.metadata = base_metadata(config, ckpt.params);
  ckpt.metadata["stage"] = "pretrain";
  ckpt.metadata["swa"] = config.swa.enabled;
  ckpt.metadata["method"] = "none";
  ckpt.metadata["balance"] = "none";
  ckpt.metadata["pretrain_steps"] = total;
  if (ckpt.posterior) ckpt.metadata["swa_captures"] = ckpt.posterior->count();
  quantize_to_f32(ckpt);
  return ckpt;
}

Checkpoint run_retrain(const ExperimentConfig& config, const Checkpoint& input,
                       const DatasetPair& data) {
  config.validate();
  const LongTailDataset& train = data.train;
  check_compatible(input, train);
  Checkpoint out = input;
  const auto& theta = input.params.theta;
  const Activation act = input.params.activation;
  const std::uint64_t seed = config.run.seed;

  BalancingSpec balancing{config.balance.kind, config.balance.rho, train.frequencies};
  RetrainOptions opts;
  opts.batch_size = config.retrain.batch_size;
  opts.optim = {config.retrain.lr, config.retrain.momentum, config.retrain.weight_decay, true};
  const std::size_t per_epoch =
      (train.size() + static_cast<std::size_t>(opts.batch_size) - 1) /
      static_cast<std::size_t>(opts.batch_size);
  opts.steps = per_epoch * static_cast<std::size_t>(config.retrain_epochs());

  nlohmann::json meta = input.metadata;
  meta.erase("disalign");
  meta.erase("lws_tau");
  std::string balance = balance_name(balancing.kind);

  switch (config.retrain.method) {
    case RetrainMethod::kNone:
      break;
    case RetrainMethod::kCrt:
      out.params.phi = crt(theta, act, train, balancing, opts, seed);
      break;
    case RetrainMethod::kLws: {
      const LwsResult r = lws(theta, act, input.params.phi, train, balancing, opts, seed);
      out.params.phi = r.phi;
      meta["lws_tau"] = r.tau;
      break;
    }
    case RetrainMethod::kDisalign: {
      const DisAlignParams d =
          disalign(theta, act, input.params.phi, train, config.balance.rho, opts, seed);
      meta["disalign"] = {{"scale", to_std(d.scale)},
                          {"shift", to_std(d.shift)},
                          {"gate_weight", to_std(d.gate_weight)},
                          {"gate_bias", d.gate_bias}};
      balance = "grw";
      break;
    }
    case RetrainMethod::kSrepr: {
      require(input.posterior.has_value(), ErrorCode::kPrecondition,
              "posterior required: srepr needs a checkpoint with a SWAG section");
      Classifier phi_init = input.params.phi;
      if (!config.retrain.srepr_init_swa) {
        Rng init = make_rng(seed, stream::kRetrainInit);
        phi_init = init_classifier(input.params.repr_dim(), input.params.num_classes(), init);
      }
      out.params.phi = srepr_retrain(theta, act, &*input.posterior, std::move(phi_init),
                                     train, balancing, config.srepr, opts, seed);
      break;
    }
  }
  require(out.params.all_finite(), ErrorCode::kNumeric, "non-finite classifier after retraining");

  const nlohmann::json fresh = base_metadata(config, out.params);
  for (auto it = fresh.begin(); it != fresh.end(); ++it) meta[it.key()] = it.value();
  meta["stage"] = "retrain";
  meta["method"] = retrain_name(config.retrain.method);
  meta["balance"] = config.retrain.method == RetrainMethod::kNone ? "none" : balance;
  meta["balance_rho"] = config.balance.rho;
  meta["retrain_steps"] = opts.steps;
  out.metadata = std::move(meta);
  quantize_to_f32(out);
  return out;
}

LogitTransform checkpoint_transform(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("disalign")) return {};
  const auto& j = ckpt.metadata["disalign"];
  DisAlignParams d;
  try {
    d.scale = from_json_vec(j.at("scale"));
    d.shift = from_json_vec(j.at("shift"));
    d.gate_weight = from_json_vec(j.at("gate_weight"));
    d.gate_bias = j.at("gate_bias").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad disalign metadata: ") + e.what());
  }
  require(d.num_classes() == ckpt.params.num_classes() &&
              d.shift.size() == d.scale.size() && d.gate_weight.size() == d.scale.size(),
          ErrorCode::kFormat, "disalign metadata does not match the classifier");
  return [d](const Matrix& z) { return disalign_logits(d, z); };
}

Matrix predict_probs(const Checkpoint& ckpt, const Matrix& x) {
  Matrix z = classifier_logits(ckpt.params.phi,
                               features(ckpt.params.theta, ckpt.params.activation, x));
  if (const auto t = checkpoint_transform(ckpt)) z = t(z);
  return softmax_rows(z);
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const LongTailDataset& test,
                                  int ensemble_m, int ece_bins, std::uint64_t seed) {
  check_compatible(ckpt, test);
  require(ensemble_m >= 0, ErrorCode::kInvalidArgument, "ensemble size must be >= 0");
  Matrix probs;
  if (ensemble_m == 0) {
    probs = predict_probs(ckpt, test.features);
  } else {
    require(ckpt.posterior.has_value(), ErrorCode::kPrecondition,
            "posterior required for ensemble evaluation");
    Rng rng = make_rng(seed, stream::kEnsemble);
    probs = ensemble_predict(test.features, *ckpt.posterior, ckpt.params.phi,
                             ckpt.params.activation, ensemble_m, rng,
                             checkpoint_transform(ckpt));
  }
  MetricsReport report = evaluate_probs(probs, test.labels, test.splits, ece_bins);
  report.ensemble_m = ensemble_m;
  return report;
}

Artifacts eval_artifacts(const MetricsReport& report, const std::string& prefix) {
  return {{prefix + "report.json", to_json(report).dump(2) + "\n"},
          {prefix + "report.csv", to_csv(report)},
          {prefix + "bins.csv", bins_to_csv(report.bins)}};
}

AnalysisResult analyze_checkpoint(const Checkpoint& ckpt, const LongTailDataset& test,
                                  int num_samples, int ece_bins, std::uint64_t seed) {
  check_compatible(ckpt, test);
  require(ckpt.posterior.has_value(), ErrorCode::kPrecondition,
          "posterior required: analysis needs a checkpoint with a SWAG section");
  require(num_samples >= 2, ErrorCode::kInvalidArgument, "analysis needs M >= 2");
  const auto transform = checkpoint_transform(ckpt);
  const Activation act = ckpt.params.activation;
  const Matrix& x = test.features;

  AnalysisResult res;
  const Matrix point = predict_probs(ckpt, x);
  res.nll = nll_per_instance(point, test.labels);

  Rng rng = make_rng(seed, stream::kAnalysis);
  std::vector<Matrix> reps;
  std::vector<Matrix> probs;
  for (int m = 0; m < num_samples; ++m) {
    const auto theta_m = ckpt.posterior->sample_theta(rng);
    reps.push_back(features(theta_m, act, x));
    Matrix z = classifier_logits(ckpt.params.phi, reps.back());
    if (transform) z = transform(z);
    probs.push_back(softmax_rows(z));
  }
  const auto n = static_cast<Eigen::Index>(test.size());
  res.dispersion_repr.resize(test.size());
  res.dispersion_prob.resize(test.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Vector> ri, pi;
    for (int m = 0; m < num_samples; ++m) {
      ri.push_back(reps[m].row(i).transpose());
      pi.push_back(probs[m].row(i).transpose());
    }
    res.dispersion_repr[i] = dispersion_repr(ri);
    res.dispersion_prob[i] = dispersion_prob(pi);
  }
  res.quartiles_repr = quartile_analysis(res.nll, res.dispersion_repr);
  res.quartiles_prob = quartile_analysis(res.nll, res.dispersion_prob);
  res.diagnostics = per_class_diagnostics(ckpt.params.phi, point, test.labels, ece_bins);
  return res;
}

Artifacts analysis_artifacts(const AnalysisResult& result, const LongTailDataset& test) {
  Artifacts out;
  std::string inst = "index,label,nll,dispersion_repr,dispersion_prob,nll_quartile\n";
  for (std::size_t i = 0; i < result.nll.size(); ++i)
    inst += std::to_string(i) + "," + std::to_string(test.labels[i]) + "," +
            fmt(result.nll[i]) + "," + fmt(result.dispersion_repr[i]) + "," +
            fmt(result.dispersion_prob[i]) + "," +
            std::to_string(result.quartiles_prob.group[i] + 1) + "\n";
  out["analysis_instances.csv"] = inst;

  std::string quart = "measure,quartile,count,min,q1,median,q3,max\n";
  auto add = [&quart](const std::string& name, const std::array<BoxStats, 4>& stats) {
    for (int g = 0; g < 4; ++g) {
      const BoxStats& b = stats[g];
      quart += name + ",Q" + std::to_string(g + 1) + "," + std::to_string(b.count) + "," +
               fmt(b.min) + "," + fmt(b.q1) + "," + fmt(b.median) + "," + fmt(b.q3) + "," +
               fmt(b.max) + "\n";
    }
  };
  add("nll", result.quartiles_prob.nll);
  add("dispersion_repr", result.quartiles_repr.dispersion);
  add("dispersion_prob", result.quartiles_prob.dispersion);
  out["analysis_quartiles.csv"] = quart;

  auto pcc_json = [](const Pcc& p) {
    nlohmann::json j = {{"defined", p.defined}};
    j["value"] = p.defined ? nlohmann::json(p.value) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json pcc = {{"nll_vs_dispersion_repr", pcc_json(result.quartiles_repr.pcc)},
                        {"nll_vs_dispersion_prob", pcc_json(result.quartiles_prob.pcc)},
                        {"num_examples", result.nll.size()}};
  out["analysis_pcc.json"] = pcc.dump(2) + "\n";

  std::string diag = "class,split,weight_norm,marginal\n";
  const auto& d = result.diagnostics;
  for (std::size_t k = 0; k < d.weight_norms.size(); ++k)
    diag += std::to_string(k) + "," + split_name(test.splits[k]) + "," +
            fmt(d.weight_norms[k]) + "," + fmt(d.marginal[k]) + "\n";
  out["class_diagnostics.csv"] = diag;
  out["reliability.csv"] = bins_to_csv(d.reliability);
  return out;
}

const std::vector<std::string>& sweep_methods() {
  static const std::vector<std::string> methods = {
      "sgd", "swa", "sgd+crt", "swa+crt", "swa+lws", "swa+disalign", "swa+srepr"};
  return methods;
}

bool SweepResult::all_ok() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedOutcome& s) { return s.ok; });
}

SeedOutcome run_seed(const ExperimentConfig& config, const DatasetPair& data,
                     std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  try {
    ExperimentConfig cfg = config;
    cfg.run.seed = seed;
    auto eval = [&](const Checkpoint& c) {
      return evaluate_checkpoint(c, data.test, 0, cfg.eval.ece_bins, cfg.eval.analysis_seed);
    };
    auto retrained = [&](const Checkpoint& base, RetrainMethod m) {
      ExperimentConfig rc = cfg;
      rc.retrain.method = m;
      return run_retrain(rc, base, data);
    };

    ExperimentConfig sgd_cfg = cfg;
    sgd_cfg.swa.enabled = false;
    const Checkpoint sgd = run_pretrain(sgd_cfg, data);
    ExperimentConfig swa_cfg = cfg;
    swa_cfg.swa.enabled = true;
    const Checkpoint swa = run_pretrain(swa_cfg, data);

    out.reports["sgd"] = eval(sgd);
    out.reports["swa"] = eval(swa);
    out.reports["sgd+crt"] = eval(retrained(sgd, RetrainMethod::kCrt));
    out.reports["swa+crt"] = eval(retrained(swa, RetrainMethod::kCrt));
    out.reports["swa+lws"] = eval(retrained(swa, RetrainMethod::kLws));
    out.reports["swa+disalign"] = eval(retrained(swa, RetrainMethod::kDisalign));
    out.reports["swa+srepr"] = eval(retrained(swa, RetrainMethod::kSrepr));
    out.ok = true;
  } catch (const Error& e) {
    out.error = std::string(error_code_name(e.code())) + ": " + e.what();
  } catch (const std::exception& e) {
    out.error = std::string("internal: ") + e.what();
  }
  return out;
}

int sweep_threads(std::size_t num_seeds) {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  n = std::min(n, std::max<std::size_t>(1, num_seeds));
  if (const char* env = std::getenv("LTSREPR_THREADS")) {
    int cap = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (ec == std::errc() && p == s.data() + s.size() && cap >= 1)
      n = std::min(n, static_cast<std::size_t>(cap));
  }
  return static_cast<int>(n);
}

SweepResult run_sweep(const ExperimentConfig& config) {
  config.validate();
  const DatasetPair data = prepare_data(config);
  const auto& seeds = config.run.seeds;
  SweepResult result;
  result.seeds.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++)
      result.seeds[i] = run_seed(config, data, seeds[i]);
  };
  const int n_threads = sweep_threads(seeds.size());
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return result;
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0));
}

namespace {

struct Column {
  const char* name;
  std::optional<double> (*get)(const MetricsReport&);
};

const std::vector<Column>& columns() {
  static const std::vector<Column> cols = {
      {"acc_all", [](const MetricsReport& r) -> std::optional<double> { return r.acc.all; }},
      {"acc_many", [](const MetricsReport& r) { return r.acc.many; }},
      {"acc_medium", [](const MetricsReport& r) { return r.acc.medium; }},
      {"acc_few", [](const MetricsReport& r) { return r.acc.few; }},
      {"nll", [](const MetricsReport& r) -> std::optional<double> { return r.nll; }},
      {"ece", [](const MetricsReport& r) -> std::optional<double> { return r.ece; }},
  };
  return cols;
}

}  // namespace

std::string sweep_table_csv(const SweepResult& result) {
  std::string out = "method,num_seeds";
  for (const auto& c : columns())
    out += std::string(",") + c.name + "_mean," + c.name + "_std";
  out += "\n";
  for (const auto& method : sweep_methods()) {
    std::size_t n = 0;
    for (const auto& s : result.seeds) n += s.ok ? 1 : 0;
    out += method + "," + std::to_string(n);
    for (const auto& c : columns()) {
      std::vector<double> vals;
      for (const auto& s : result.seeds) {
        if (!s.ok) continue;
        if (const auto v = c.get(s.reports.at(method))) vals.push_back(*v);
      }
      if (vals.empty()) {
        out += ",,";
        continue;
      }
      const double mean =
          std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      out += "," + fmt(mean) + "," + fmt(sample_std(vals));
    }
    out += "\n";
  }
  return out;
}

std::string sweep_seeds_csv(const SweepResult& result) {
  std::string out = "seed,method";
  for (const auto& c : columns()) out += std::string(",") + c.name;
  out += "\n";
  for (const auto& s : result.seeds) {
    if (!s.ok) continue;
    for (const auto& method : sweep_methods()) {
      out += std::to_string(s.seed) + "," + method;
      for (const auto& c : columns()) {
        const auto v = c.get(s.reports.at(method));
        out += "," + (v ? fmt(*v) : std::string());
      }
      out += "\n";
    }
  }
  return out;
}

Artifacts sweep_artifacts(const SweepResult& result) {
  Artifacts out = {{"sweep_table.csv", sweep_table_csv(result)},
                   {"sweep_seeds.csv", sweep_seeds_csv(result)}};
  std::string failures;
  for (const auto& s : result.seeds)
    if (!s.ok) failures += "seed " + std::to_string(s.seed) + ": " + s.error + "\n";
  if (!failures.empty()) out["sweep_failures.txt"] = failures;
  return out;
}

}  // namespace ltsrepr
