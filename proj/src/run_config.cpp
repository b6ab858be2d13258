#include "deepred/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace deepred {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

}  // namespace

const std::vector<KeySpec>& RunConfig::keys() {
  static const std::vector<KeySpec> specs = {
      {"mode", KeyType::kChoice, "temporal", {"temporal", "static"},
       "interaction network flavor: temporal replay or static link prediction"},
      {"data", KeyType::kString, "", {}, "input CSV (user_id,item_id,timestamp[,...])"},
      {"cache", KeyType::kString, "", {}, "binary log cache path (written by ingest)"},
      {"checkpoint_dir", KeyType::kString, "runs", {}, "directory for checkpoints"},
      {"results", KeyType::kString, "results.json", {},
       "results JSON (evaluate) or CSV (sweep) path"},
      {"metrics", KeyType::kString, "metrics.jsonl", {},
       "per-epoch metrics log, one JSON object per line"},
      {"rank_dump", KeyType::kString, "", {},
       "optional per-event rank CSV written by evaluate"},
      {"d", KeyType::kInt, "16", {}, "long-term embedding dimension"},
      {"hidden", KeyType::kInt, "0", {}, "encoder state dimension (0: same as d)"},
      {"k", KeyType::kInt, "5", {}, "history length"},
      {"delta_transform", KeyType::kChoice, "raw", {"raw", "log_decay"},
       "recency transform: raw (normalized by the mean training gap) or 1/log(e+delta)"},
      {"pooling", KeyType::kChoice, "max", {"max", "mean"},
       "attention pooling over the alignment grid"},
      {"use_theta", KeyType::kBool, "false", {},
       "trainable bilinear alignment parameter (identity when off)"},
      {"batch_size", KeyType::kInt, "128", {}, "samples per optimizer step"},
      {"learning_rate", KeyType::kDouble, "0.001", {}, "Adam learning rate"},
      {"epochs", KeyType::kInt, "5", {}, "training epochs"},
      {"gamma", KeyType::kDouble, "0.01", {}, "anti-collapse regularization coefficient"},
      {"beta1", KeyType::kDouble, "0.9", {}, "Adam first-moment decay"},
      {"beta2", KeyType::kDouble, "0.999", {}, "Adam second-moment decay"},
      {"epsilon", KeyType::kDouble, "1e-8", {}, "Adam denominator floor"},
      {"seed", KeyType::kUint64, "42", {},
       "root seed; every random stream derives from it (env DEEPRED_SEED overrides)"},
      {"shuffle", KeyType::kBool, "true", {}, "shuffle training samples each epoch"},
      {"checkpoint_every", KeyType::kInt, "1", {}, "epochs between checkpoints"},
      {"clip_norm", KeyType::kDouble, "5.0", {}, "global gradient norm clip"},
      {"train_fraction", KeyType::kDouble, "0.8", {}, "training share of events"},
      {"val_fraction", KeyType::kDouble, "0.1", {}, "validation share of events"},
      {"test_fraction", KeyType::kDouble, "0.1", {}, "test share of events"},
      {"eval_mode", KeyType::kChoice, "exact", {"exact", "cached"},
       "candidate representatives: recomputed per event or latest stored instance"},
      {"freeze_store", KeyType::kBool, "false", {},
       "skip short-term store refreshes during replay"},
  };
  return specs;
}

RunConfig::RunConfig() {
  for (const KeySpec& k : keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  RunConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 'key = value'");
    }
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = nullptr;
  for (const KeySpec& k : keys()) {
    if (k.name == key) {
      spec = &k;
      break;
    }
  }
  if (!spec) throw std::invalid_argument("unknown config key '" + key + "'");

  switch (spec->type) {
    case KeyType::kString:
      break;
    case KeyType::kInt:
      parse_number<int>(key, value);
      break;
    case KeyType::kDouble:
      parse_number<double>(key, value);
      break;
    case KeyType::kUint64:
      parse_number<uint64_t>(key, value);
      break;
    case KeyType::kBool:
      if (value != "true" && value != "false") {
        throw std::invalid_argument("config key '" + key + "': expected true or false");
      }
      break;
    case KeyType::kChoice: {
      bool ok = false;
      for (const auto& c : spec->choices) ok = ok || (c == value);
      if (!ok) {
        std::string opts;
        for (const auto& c : spec->choices) opts += (opts.empty() ? "" : ", ") + c;
        throw std::invalid_argument("config key '" + key + "': expected one of " + opts);
      }
      break;
    }
  }
  values_[key] = value;
}

void RunConfig::apply_env_seed() {
  if (const char* env = std::getenv("DEEPRED_SEED")) {
    set("seed", env);
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  return parse_number<int>(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

uint64_t RunConfig::get_uint64(const std::string& key) const {
  return parse_number<uint64_t>(key, get(key));
}

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.d = get_int("d");
  cfg.hidden = get_int("hidden");
  cfg.k = get_int("k");
  cfg.delta_transform =
      get("delta_transform") == "log_decay" ? DeltaTransform::kLogDecay : DeltaTransform::kRaw;
  cfg.pooling = get("pooling") == "mean" ? Pooling::kMean : Pooling::kMax;
  cfg.use_theta = get_bool("use_theta");
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.batch_size = get_int("batch_size");
  cfg.learning_rate = get_double("learning_rate");
  cfg.epochs = get_int("epochs");
  cfg.gamma = get_double("gamma");
  cfg.beta1 = get_double("beta1");
  cfg.beta2 = get_double("beta2");
  cfg.epsilon = get_double("epsilon");
  cfg.seed = get_uint64("seed");
  cfg.shuffle = get_bool("shuffle");
  cfg.checkpoint_every = get_int("checkpoint_every");
  cfg.clip_norm = get_double("clip_norm");
  cfg.checkpoint_dir = get("checkpoint_dir");
  cfg.metrics_path = get("metrics");
  return cfg;
}

std::array<double, 3> RunConfig::fractions() const {
  return {get_double("train_fraction"), get_double("val_fraction"),
          get_double("test_fraction")};
}

EvalMode RunConfig::eval_mode() const {
  return get("eval_mode") == "cached" ? EvalMode::kCached : EvalMode::kExact;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  for (const KeySpec& k : keys()) {
    out << k.name << " = " << values_.at(k.name) << "\n";
  }
  return out.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write resolved config '" + path + "'");
  out << resolved_text();
}

}  // namespace deepred
