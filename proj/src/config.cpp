#include "ltsrepr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ltsrepr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  fail(ErrorCode::kInvalidArgument, "bad value for " + key + ": '" + value + "'");
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value);
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) bad_value(key, value);
  return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  bad_value(key, value);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<T>(key, trim(item)));
  return out;
}

std::string fmt_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

template <typename E, typename Parse>
E parse_enum(const std::string& key, const std::string& value, Parse parse) {
  try {
    return parse(value);
  } catch (const Error&) {
    bad_value(key, value);
  }
}

struct Field {
  std::string key;  // section.name
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

#define LTSR_INT(KEY, MEMBER, TYPE)                                                 \
  Field {                                                                           \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },        \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {       \
          c.MEMBER = parse_integer<TYPE>(k, v);                                     \
        }                                                                           \
  }
#define LTSR_REAL(KEY, MEMBER)                                                      \
  Field {                                                                           \
    KEY, [](const ExperimentConfig& c) { return fmt_real(c.MEMBER); },              \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {       \
          c.MEMBER = parse_real(k, v);                                              \
        }                                                                           \
  }
#define LTSR_FLAG(KEY, MEMBER)                                                      \
  Field {                                                                           \
    KEY, [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {       \
          c.MEMBER = parse_flag(k, v);                                              \
        }                                                                           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      LTSR_INT("data.num_classes", data.num_classes, int),
      LTSR_INT("data.input_dim", data.input_dim, int),
      LTSR_INT("data.max_count", data.max_count, int),
      LTSR_REAL("data.imbalance_factor", data.imbalance_factor),
      LTSR_REAL("data.class_separation", data.class_separation),
      LTSR_REAL("data.noise_std", data.noise_std),
      LTSR_INT("data.seed", data.seed, std::uint64_t),
      LTSR_INT("data.test_per_class", data.test_per_class, int),
      Field{"data.cache", [](const ExperimentConfig& c) { return c.dataset_cache; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.dataset_cache = v;
            }},

      Field{"model.hidden", [](const ExperimentConfig& c) { return fmt_list(c.model.hidden); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.model.hidden = v.empty() ? std::vector<int>{} : parse_list<int>(k, v);
            }},
      LTSR_INT("model.repr_dim", model.repr_dim, int),
      Field{"model.activation",
            [](const ExperimentConfig& c) { return std::string(activation_name(c.model.activation)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.model.activation = parse_enum<Activation>(k, v, parse_activation);
            }},

      LTSR_REAL("optim.lr", train.optim.lr),
      LTSR_REAL("optim.momentum", train.optim.momentum),
      LTSR_REAL("optim.weight_decay", train.optim.weight_decay),
      LTSR_FLAG("optim.nesterov", train.optim.nesterov),
      LTSR_INT("optim.epochs", train.epochs, int),
      LTSR_INT("optim.batch_size", train.batch_size, int),
      LTSR_REAL("optim.mixup_alpha", train.mixup_alpha),

      LTSR_FLAG("swa.enabled", swa.enabled),
      LTSR_REAL("swa.start_fraction", swa.start_fraction),
      LTSR_REAL("swa.lr", swa.swa_lr),
      LTSR_INT("swa.capture_every_epochs", swa.capture_every_epochs, int),

      Field{"retrain.method",
            [](const ExperimentConfig& c) { return std::string(retrain_name(c.retrain.method)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.retrain.method = parse_enum<RetrainMethod>(k, v, parse_retrain);
            }},
      LTSR_REAL("retrain.epochs_frac", retrain.epochs_frac),
      LTSR_REAL("retrain.lr", retrain.lr),
      LTSR_REAL("retrain.momentum", retrain.momentum),
      LTSR_REAL("retrain.weight_decay", retrain.weight_decay),
      LTSR_INT("retrain.batch_size", retrain.batch_size, int),
      LTSR_FLAG("retrain.srepr_init_swa", retrain.srepr_init_swa),

      LTSR_INT("srepr.num_samples", srepr.num_samples, int),
      LTSR_REAL("srepr.kd_temperature", srepr.kd_temperature),
      LTSR_REAL("srepr.ce_weight", srepr.ce_weight),
      LTSR_REAL("srepr.kd_weight", srepr.kd_weight),
      LTSR_REAL("srepr.beta_floor", srepr.beta_floor),
      Field{"srepr.source",
            [](const ExperimentConfig& c) { return std::string(source_name(c.srepr.source)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.srepr.source = parse_enum<StochasticSource>(k, v, parse_source);
            }},
      LTSR_REAL("srepr.jitter_std", srepr.jitter_std),

      Field{"balance.kind",
            [](const ExperimentConfig& c) { return std::string(balance_name(c.balance.kind)); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.balance.kind = parse_enum<BalanceKind>(k, v, parse_balance);
            }},
      LTSR_REAL("balance.rho", balance.rho),

      LTSR_INT("eval.ece_bins", eval.ece_bins, int),
      LTSR_INT("eval.ensemble_m", eval.ensemble_m, int),
      LTSR_INT("eval.analysis_seed", eval.analysis_seed, std::uint64_t),
      LTSR_INT("eval.analysis_m", eval.analysis_m, int),

      LTSR_INT("run.seed", run.seed, std::uint64_t),
      Field{"run.seeds", [](const ExperimentConfig& c) { return fmt_list(c.run.seeds); },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.run.seeds = parse_list<std::uint64_t>(k, v);
            }},
  };
  return table;
}

#undef LTSR_INT
#undef LTSR_REAL
#undef LTSR_FLAG

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  fail(ErrorCode::kInvalidArgument, "unknown config key: " + key);
}

}  // namespace

void ExperimentConfig::validate() const {
  data.validate();
  require(model.repr_dim >= 1, ErrorCode::kInvalidArgument, "model.repr_dim must be >= 1");
  for (int h : model.hidden)
    require(h >= 1, ErrorCode::kInvalidArgument, "model.hidden sizes must be >= 1");
  train.optim.validate();
  require(train.epochs >= 1, ErrorCode::kInvalidArgument, "optim.epochs must be >= 1");
  require(train.batch_size >= 1, ErrorCode::kInvalidArgument, "optim.batch_size must be >= 1");
  require(train.mixup_alpha >= 0.0, ErrorCode::kInvalidArgument,
          "optim.mixup_alpha must be >= 0");
  swa_schedule(1).validate();
  require(swa.capture_every_epochs >= 1, ErrorCode::kInvalidArgument,
          "swa.capture_every_epochs must be >= 1");
  require(retrain.epochs_frac >= 0.0, ErrorCode::kInvalidArgument,
          "retrain.epochs_frac must be >= 0");
  require(retrain.lr >= 0.0, ErrorCode::kInvalidArgument, "retrain.lr must be >= 0");
  require(retrain.batch_size >= 1, ErrorCode::kInvalidArgument,
          "retrain.batch_size must be >= 1");
  OptimConfig{retrain.lr, retrain.momentum, retrain.weight_decay, true}.validate();
  srepr.validate();
  require(balance.rho >= 0.0, ErrorCode::kInvalidArgument, "balance.rho must be >= 0");
  require(eval.ece_bins >= 1, ErrorCode::kInvalidArgument, "eval.ece_bins must be >= 1");
  require(eval.ensemble_m >= 0, ErrorCode::kInvalidArgument, "eval.ensemble_m must be >= 0");
  require(eval.analysis_m >= 2, ErrorCode::kInvalidArgument, "eval.analysis_m must be >= 2");
  require(!run.seeds.empty(), ErrorCode::kInvalidArgument, "run.seeds must not be empty");
}

ModelShape ExperimentConfig::model_shape() const {
  ModelShape s;
  s.input_dim = data.input_dim;
  s.hidden = model.hidden;
  s.repr_dim = model.repr_dim;
  s.num_classes = data.num_classes;
  s.activation = model.activation;
  return s;
}

SwaSchedule ExperimentConfig::swa_schedule(std::size_t steps_per_epoch) const {
  SwaSchedule s;
  s.start_fraction = swa.start_fraction;
  s.swa_lr = swa.swa_lr;
  s.capture_every_steps =
      steps_per_epoch * static_cast<std::size_t>(std::max(1, swa.capture_every_epochs));
  return s;
}

int ExperimentConfig::retrain_epochs() const {
  return static_cast<int>(std::ceil(retrain.epochs_frac * train.epochs - 1e-9));
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']' && line.size() > 2, ErrorCode::kInvalidArgument,
              "config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kInvalidArgument,
            "config line " + std::to_string(lineno) + ": expected key = value");
    require(!section.empty(), ErrorCode::kInvalidArgument,
            "config line " + std::to_string(lineno) + ": key outside a section");
    set_config_value(cfg, section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(config) + "\n";
  }
  return out;
}

void set_config_value(ExperimentConfig& config, const std::string& key,
                      const std::string& value) {
  find_field(key).set(config, key, value);
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  return find_field(key).get(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_config(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ltsrepr
