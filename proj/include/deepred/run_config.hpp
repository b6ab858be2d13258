#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "deepred/evaluator.hpp"
#include "deepred/model.hpp"
#include "deepred/trainer.hpp"

namespace deepred {

enum class KeyType { kString, kInt, kDouble, kBool, kUint64, kChoice };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string default_value;
  std::vector<std::string> choices;  // kChoice only
  std::string help;
};

// Flat key-value run configuration. Every key has a documented default;
// unknown keys are rejected. Files use `key = value` lines with `#`
// comments. The DEEPRED_SEED environment variable overrides the seed (and
// nothing else); explicit command-line overrides win over the environment.
class RunConfig {
 public:
  static const std::vector<KeySpec>& keys();

  RunConfig();  // all defaults
  static RunConfig from_file(const std::string& path);

  // Throws on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void apply_env_seed();

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  uint64_t get_uint64(const std::string& key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  std::array<double, 3> fractions() const;
  bool is_static() const { return get("mode") == "static"; }
  EvalMode eval_mode() const;

  // All keys in declaration order, one `key = value` per line; parses back
  // to an identical configuration.
  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace deepred
