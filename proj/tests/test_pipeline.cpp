#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "ltsrepr/pipeline.hpp"
#include "oracles.hpp"

using namespace ltsrepr;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.data.num_classes = 4;
  c.data.input_dim = 5;
  c.data.max_count = 80;
  c.data.imbalance_factor = 0.1;
  c.data.test_per_class = 20;
  c.model.hidden = {16};
  c.model.repr_dim = 8;
  c.train.epochs = 8;
  c.eval.analysis_m = 4;
  c.srepr.num_samples = 3;
  c.run.seeds = {0};
  return c;
}

std::vector<std::string> theta_bytes(const Checkpoint& c) {
  std::vector<std::string> out;
  for (const auto& t : c.params.tensors()) {
    const auto* p = reinterpret_cast<const char*>(t.data());
    out.emplace_back(p, p + t.size_bytes());
  }
  out.resize(2 * c.params.theta.size());
  return out;
}

}  // namespace

TEST_CASE("pretraining loss decreases over the first epochs") {
  const ExperimentConfig cfg;
  const DatasetPair data = prepare_data(cfg);
  PretrainTrace trace;
  run_pretrain(cfg, data, &trace);
  REQUIRE(trace.epoch_losses.size() == static_cast<std::size_t>(cfg.train.epochs));
  std::vector<double> ma;
  for (int e = 0; e + 5 <= 10; ++e)
    ma.push_back(std::accumulate(trace.epoch_losses.begin() + e, trace.epoch_losses.begin() + e + 5, 0.0) / 5);
  for (std::size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] < ma[i - 1]);
}

TEST_CASE("pretraining is deterministic and records its setup") {
  ExperimentConfig cfg = tiny();
  const DatasetPair data = prepare_data(cfg);
  const Checkpoint a = run_pretrain(cfg, data);
  const Checkpoint b = run_pretrain(cfg, data);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  REQUIRE(a.posterior.has_value());
  CHECK(a.posterior->count() >= 2);
  CHECK(a.metadata["config_hash"] == config_hash(cfg));
  CHECK(a.metadata["swa"] == true);
  CHECK(a.params.flatten() == a.posterior->mean_params().flatten());

  cfg.swa.enabled = false;
  const Checkpoint sgd = run_pretrain(cfg, data);
  CHECK_FALSE(sgd.posterior.has_value());
  CHECK(serialize_checkpoint(sgd).find("SWAGDIAG") == std::string::npos);

  cfg.run.seed = 1;
  cfg.swa.enabled = true;
  CHECK_FALSE(serialize_checkpoint(run_pretrain(cfg, data)) == serialize_checkpoint(a));

  ExperimentConfig few = tiny();
  few.train.epochs = 2;
  few.swa.start_fraction = 0.9;
  try {
    run_pretrain(few, data);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kPrecondition);
  }
}

TEST_CASE("retraining keeps theta and records the method") {
  ExperimentConfig cfg = tiny();
  const DatasetPair data = prepare_data(cfg);
  const Checkpoint swa = run_pretrain(cfg, data);
  ExperimentConfig sgd_cfg = cfg;
  sgd_cfg.swa.enabled = false;
  const Checkpoint sgd = run_pretrain(sgd_cfg, data);

  for (auto m : {RetrainMethod::kCrt, RetrainMethod::kLws, RetrainMethod::kDisalign, RetrainMethod::kSrepr}) {
    for (auto k : {BalanceKind::kCbs, BalanceKind::kGrw, BalanceKind::kLa}) {
      ExperimentConfig rc = cfg;
      rc.retrain.method = m;
      rc.balance.kind = k;
      const Checkpoint out = run_retrain(rc, swa, data);
      CHECK(theta_bytes(out) == theta_bytes(swa));
      CHECK(out.metadata["method"] == retrain_name(m));
      CHECK(out.posterior->sigma() == swa.posterior->sigma());
      const Checkpoint again = run_retrain(rc, swa, data);
      CHECK(serialize_checkpoint(again) == serialize_checkpoint(out));
    }
  }
  ExperimentConfig rc = cfg;
  rc.retrain.method = RetrainMethod::kCrt;
  CHECK(theta_bytes(run_retrain(rc, sgd, data)) == theta_bytes(sgd));
  rc.retrain.method = RetrainMethod::kSrepr;
  try {
    run_retrain(rc, sgd, data);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kPrecondition);
    CHECK(std::string(e.what()).find("posterior required") != std::string::npos);
  }
  rc.retrain.method = RetrainMethod::kDisalign;
  const Checkpoint dis = run_retrain(rc, swa, data);
  CHECK(dis.metadata.contains("disalign"));
  CHECK(dis.metadata["balance"] == "grw");
  CHECK(checkpoint_transform(dis));
  CHECK_FALSE(checkpoint_transform(swa));
}

TEST_CASE("evaluation") {
  ExperimentConfig cfg = tiny();
  const DatasetPair data = prepare_data(cfg);
  const Checkpoint swa = run_pretrain(cfg, data);
  const MetricsReport a = evaluate_checkpoint(swa, data.test, 0, 15, 0);
  const MetricsReport b = evaluate_checkpoint(swa, data.test, 0, 15, 0);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.num_examples == data.test.size());

  const auto art = eval_artifacts(a, "");
  REQUIRE(art.count("report.json") == 1);
  REQUIRE(art.count("report.csv") == 1);
  REQUIRE(art.count("bins.csv") == 1);
  const auto j = nlohmann::json::parse(art.at("report.json"));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  const std::vector<std::string> allowed = {"acc_all", "acc_few",  "acc_many",   "acc_medium",  "ece",
                                            "ece_bins", "ensemble_m", "nll", "num_examples"};
  for (const auto& k : keys) CHECK(std::find(allowed.begin(), allowed.end(), k) != allowed.end());
  for (const char* k : {"acc_all", "nll", "ece", "ece_bins"}) CHECK(j.contains(k));

  // A posterior with zero variance makes the 1-member ensemble the point prediction.
  Checkpoint flat = swa;
  const Vector first = swa.posterior->first_moment();
  flat.posterior = SwagPosterior::from_parts(swa.params, 2, first, first.array().square().matrix(),
                                             Vector::Zero(first.size()));
  const MetricsReport point = evaluate_checkpoint(flat, data.test, 0, 15, 0);
  const MetricsReport ens1 = evaluate_checkpoint(flat, data.test, 1, 15, 0);
  CHECK(ens1.nll == doctest::Approx(point.nll).epsilon(1e-12));
  CHECK(ens1.acc.all == point.acc.all);
  CHECK(ens1.ensemble_m == 1);

  ExperimentConfig sgd_cfg = cfg;
  sgd_cfg.swa.enabled = false;
  CHECK_THROWS_AS(evaluate_checkpoint(run_pretrain(sgd_cfg, data), data.test, 4, 15, 0), Error);
}

TEST_CASE("analysis") {
  ExperimentConfig cfg = tiny();
  const DatasetPair data = prepare_data(cfg);
  const Checkpoint swa = run_pretrain(cfg, data);
  const AnalysisResult r = analyze_checkpoint(swa, data.test, 4, 15, 3);
  CHECK(r.nll.size() == data.test.size());
  CHECK(r.dispersion_prob.size() == data.test.size());
  const Artifacts art = analysis_artifacts(r, data.test);
  const std::string& rows = art.at("analysis_instances.csv");
  CHECK(static_cast<std::size_t>(std::count(rows.begin(), rows.end(), '\n')) == data.test.size() + 1);
  for (const char* name : {"analysis_quartiles.csv", "analysis_pcc.json", "class_diagnostics.csv",
                           "reliability.csv"})
    CHECK(art.count(name) == 1);
  const AnalysisResult again = analyze_checkpoint(swa, data.test, 4, 15, 3);
  CHECK(analysis_artifacts(again, data.test) == art);

  Checkpoint flat = swa;
  const Vector first = swa.posterior->first_moment();
  flat.posterior = SwagPosterior::from_parts(swa.params, 2, first, first.array().square().matrix(),
                                             Vector::Zero(first.size()));
  const AnalysisResult z = analyze_checkpoint(flat, data.test, 4, 15, 3);
  for (double d : z.dispersion_prob) CHECK(d == 0.0);
  for (double d : z.dispersion_repr) CHECK(d == 0.0);
  CHECK_FALSE(z.quartiles_prob.pcc.defined);
  CHECK_FALSE(z.quartiles_repr.pcc.defined);
  const auto pcc = nlohmann::json::parse(analysis_artifacts(z, data.test).at("analysis_pcc.json"));
  CHECK(pcc.dump().find("false") != std::string::npos);

  ExperimentConfig sgd_cfg = cfg;
  sgd_cfg.swa.enabled = false;
  CHECK_THROWS_AS(analyze_checkpoint(run_pretrain(sgd_cfg, data), data.test, 4, 15, 3), Error);
}

TEST_CASE("dataset cache") {
  const auto dir = std::filesystem::temp_directory_path() / "ltsrepr_pipeline_cache";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ExperimentConfig cfg = tiny();
  cfg.dataset_cache = (dir / "data.bin").string();
  const DatasetPair written = prepare_data(cfg);
  CHECK(std::filesystem::exists(cfg.dataset_cache));
  const DatasetPair read = prepare_data(cfg);
  CHECK(read.train.features == written.train.features);
  CHECK(read.test.labels == written.test.labels);
  ExperimentConfig plain = tiny();
  CHECK(prepare_data(plain).train.features == written.train.features);
  cfg.data.num_classes = 5;
  try {
    prepare_data(cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kPrecondition);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep aggregation") {
  CHECK(sample_std({3.0}) == 0.0);
  CHECK(sample_std({}) == 0.0);
  CHECK(sample_std({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)));

  ExperimentConfig cfg = tiny();
  cfg.train.epochs = 6;
  cfg.run.seeds = {5};
  const SweepResult one = run_sweep(cfg);
  REQUIRE(one.all_ok());
  const std::string table = sweep_table_csv(one);
  std::istringstream in(table);
  std::string header, line;
  std::getline(in, header);
  CHECK(header.rfind("method,num_seeds,acc_all_mean,acc_all_std", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    for (std::size_t i = 3; i < cells.size(); i += 2)
      if (!cells[i].empty()) CHECK(std::stod(cells[i]) == 0.0);
  }
  CHECK(rows == static_cast<int>(sweep_methods().size()));

  cfg.run.seeds = {5, 5};
  const SweepResult twice = run_sweep(cfg);
  REQUIRE(twice.seeds.size() == 2);
  for (const auto& m : sweep_methods())
    CHECK(to_json(twice.seeds[0].reports.at(m)).dump() == to_json(twice.seeds[1].reports.at(m)).dump());
  CHECK(to_json(twice.seeds[0].reports.at("swa+crt")).dump() == to_json(one.seeds[0].reports.at("swa+crt")).dump());

  cfg.run.seeds = {1, 2, 3, 4};
  const SweepResult four = run_sweep(cfg);
  REQUIRE(four.all_ok());
  double sum = 0.0;
  for (const auto& s : four.seeds) sum += s.reports.at("swa+srepr").nll;
  const std::string t4 = sweep_table_csv(four);
  const auto pos = t4.find("\nswa+srepr,");
  REQUIRE(pos != std::string::npos);
  std::stringstream row(t4.substr(pos + 1));
  std::string cell;
  std::vector<std::string> cells;
  std::getline(row, line);
  std::stringstream rs(line);
  while (std::getline(rs, cell, ',')) cells.push_back(cell);
  // columns: method,num_seeds,acc_all,acc_many,acc_medium,acc_few,nll
  CHECK(cells[1] == "4");
  CHECK(std::abs(std::stod(cells[10]) - sum / 4.0) < 1e-12);

  ExperimentConfig broken = tiny();
  broken.train.optim.lr = 1e6;
  broken.run.seeds = {0};
  const SweepResult failed = run_sweep(broken);
  CHECK_FALSE(failed.all_ok());
  const Artifacts art = sweep_artifacts(failed);
  CHECK(art.count("sweep_failures.txt") == 1);
}
