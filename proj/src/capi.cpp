#include "ltsrepr/ltsrepr.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "ltsrepr/checkpoint.hpp"
#include "ltsrepr/config.hpp"
#include "ltsrepr/pipeline.hpp"

struct ltsr_config {
  ltsrepr::ExperimentConfig value;
};

struct ltsr_dataset {
  ltsrepr::DatasetPair value;
};

struct ltsr_model {
  ltsrepr::Checkpoint value;
};

struct ltsr_artifacts {
  std::vector<std::pair<std::string, std::string>> files;
};

namespace {

thread_local std::string g_last_error;

int set_error(int status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

template <typename F>
int guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return LTSR_OK;
  } catch (const ltsrepr::Error& e) {
    return set_error(static_cast<int>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(LTSR_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(LTSR_E_INTERNAL, e.what());
  } catch (...) {
    return set_error(LTSR_E_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* what) {
  ltsrepr::require(p != nullptr, ltsrepr::ErrorCode::kInvalidArgument,
                   std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ltsr_artifacts* make_artifacts(const ltsrepr::Artifacts& a) {
  auto* out = new ltsr_artifacts;
  for (const auto& [name, content] : a) out->files.emplace_back(name, content);
  return out;
}

}  // namespace

extern "C" {

const char* ltsr_last_error(void) { return g_last_error.c_str(); }

const char* ltsr_status_name(int status) {
  switch (status) {
    case LTSR_OK: return "ok";
    case LTSR_E_INVALID_ARGUMENT: return "invalid_argument";
    case LTSR_E_IO: return "io";
    case LTSR_E_FORMAT: return "format";
    case LTSR_E_PRECONDITION: return "precondition";
    case LTSR_E_NUMERIC: return "numeric";
    case LTSR_E_PARTIAL: return "partial";
    default: return "internal";
  }
}

const char* ltsr_version(void) { return "0.1.0"; }

void ltsr_string_free(char* s) { std::free(s); }

int ltsr_config_create(ltsr_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new ltsr_config;
  });
}

int ltsr_config_load(const char* path, ltsr_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ltsr_config{ltsrepr::load_config(path)};
  });
}

int ltsr_config_parse(const char* text, ltsr_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new ltsr_config{ltsrepr::parse_config(text)};
  });
}

int ltsr_config_from_model(const ltsr_model* model, ltsr_config** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    const auto& meta = model->value.metadata;
    ltsrepr::require(meta.contains("config") && meta["config"].is_string(),
                     ltsrepr::ErrorCode::kFormat, "checkpoint carries no config");
    *out = new ltsr_config{ltsrepr::parse_config(meta["config"].get<std::string>())};
  });
}

int ltsr_config_set(ltsr_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    ltsrepr::set_config_value(config->value, key, value);
  });
}

int ltsr_config_get(const ltsr_config* config, const char* key, char** out) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(out, "out");
    *out = dup_string(ltsrepr::get_config_value(config->value, key));
  });
}

int ltsr_config_serialize(const ltsr_config* config, char** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = dup_string(ltsrepr::serialize_config(config->value));
  });
}

int ltsr_config_validate(const ltsr_config* config) {
  return guarded([&] {
    need(config, "config");
    config->value.validate();
  });
}

void ltsr_config_destroy(ltsr_config* config) { delete config; }

int ltsr_dataset_prepare(const ltsr_config* config, ltsr_dataset** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = new ltsr_dataset{ltsrepr::prepare_data(config->value)};
  });
}

int ltsr_dataset_info(const ltsr_dataset* dataset, size_t* train_size, size_t* test_size,
                      int* num_classes, int* input_dim) {
  return guarded([&] {
    need(dataset, "dataset");
    if (train_size) *train_size = dataset->value.train.size();
    if (test_size) *test_size = dataset->value.test.size();
    if (num_classes) *num_classes = dataset->value.train.num_classes();
    if (input_dim) *input_dim = dataset->value.train.input_dim();
  });
}

void ltsr_dataset_destroy(ltsr_dataset* dataset) { delete dataset; }

int ltsr_pretrain(const ltsr_config* config, const ltsr_dataset* dataset, ltsr_model** out) {
  return guarded([&] {
    need(config, "config");
    need(dataset, "dataset");
    need(out, "out");
    *out = new ltsr_model{ltsrepr::run_pretrain(config->value, dataset->value)};
  });
}

int ltsr_retrain(const ltsr_config* config, const ltsr_model* input,
                 const ltsr_dataset* dataset, ltsr_model** out) {
  return guarded([&] {
    need(config, "config");
    need(input, "input");
    need(dataset, "dataset");
    need(out, "out");
    *out = new ltsr_model{ltsrepr::run_retrain(config->value, input->value, dataset->value)};
  });
}

int ltsr_model_load(const char* path, ltsr_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ltsr_model{ltsrepr::load_checkpoint(path)};
  });
}

int ltsr_model_save(const ltsr_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    ltsrepr::save_checkpoint(path, model->value);
  });
}

int ltsr_model_has_posterior(const ltsr_model* model, int* out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = model->value.posterior.has_value() ? 1 : 0;
  });
}

int ltsr_model_metadata(const ltsr_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = dup_string(model->value.metadata.dump());
  });
}

void ltsr_model_destroy(ltsr_model* model) { delete model; }

int ltsr_evaluate(const ltsr_config* config, const ltsr_model* model,
                  const ltsr_dataset* dataset, const char* prefix, ltsr_artifacts** out) {
  return guarded([&] {
    need(config, "config");
    need(model, "model");
    need(dataset, "dataset");
    need(out, "out");
    const auto& ev = config->value.eval;
    const auto report = ltsrepr::evaluate_checkpoint(model->value, dataset->value.test,
                                                     ev.ensemble_m, ev.ece_bins,
                                                     ev.analysis_seed);
    *out = make_artifacts(ltsrepr::eval_artifacts(report, prefix ? prefix : ""));
  });
}

int ltsr_analyze(const ltsr_config* config, const ltsr_model* model,
                 const ltsr_dataset* dataset, ltsr_artifacts** out) {
  return guarded([&] {
    need(config, "config");
    need(model, "model");
    need(dataset, "dataset");
    need(out, "out");
    const auto& ev = config->value.eval;
    const auto result = ltsrepr::analyze_checkpoint(model->value, dataset->value.test,
                                                    ev.analysis_m, ev.ece_bins,
                                                    ev.analysis_seed);
    *out = make_artifacts(ltsrepr::analysis_artifacts(result, dataset->value.test));
  });
}

int ltsr_sweep(const ltsr_config* config, ltsr_artifacts** out) {
  bool partial = false;
  std::string failures;
  const int status = guarded([&] {
    need(config, "config");
    need(out, "out");
    const auto result = ltsrepr::run_sweep(config->value);
    const auto files = ltsrepr::sweep_artifacts(result);
    *out = make_artifacts(files);
    if (!result.all_ok()) {
      partial = true;
      failures = files.at("sweep_failures.txt");
    }
  });
  if (status != LTSR_OK) return status;
  if (partial) {
    while (!failures.empty() && failures.back() == '\n') failures.pop_back();
    for (auto& c : failures)
      if (c == '\n') c = ';';
    return set_error(LTSR_E_PARTIAL, "some seeds failed: " + failures);
  }
  return LTSR_OK;
}

size_t ltsr_artifacts_count(const ltsr_artifacts* artifacts) {
  return artifacts ? artifacts->files.size() : 0;
}

const char* ltsr_artifacts_name(const ltsr_artifacts* artifacts, size_t index) {
  if (!artifacts || index >= artifacts->files.size()) return nullptr;
  return artifacts->files[index].first.c_str();
}

const char* ltsr_artifacts_content(const ltsr_artifacts* artifacts, size_t index) {
  if (!artifacts || index >= artifacts->files.size()) return nullptr;
  return artifacts->files[index].second.c_str();
}

int ltsr_artifacts_write(const ltsr_artifacts* artifacts, const char* dir) {
  return guarded([&] {
    need(artifacts, "artifacts");
    need(dir, "dir");
    ltsrepr::require(std::filesystem::is_directory(dir), ltsrepr::ErrorCode::kIo,
                     std::string("not a directory: ") + dir);
    for (const auto& [name, content] : artifacts->files) {
      const auto path = (std::filesystem::path(dir) / name).string();
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      ltsrepr::require(static_cast<bool>(f), ltsrepr::ErrorCode::kIo,
                       "cannot open " + path + " for writing");
      f.write(content.data(), static_cast<std::streamsize>(content.size()));
      ltsrepr::require(static_cast<bool>(f), ltsrepr::ErrorCode::kIo, "write failed: " + path);
    }
  });
}

void ltsr_artifacts_destroy(ltsr_artifacts* artifacts) { delete artifacts; }

}  // extern "C"
