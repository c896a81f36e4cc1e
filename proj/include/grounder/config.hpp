#pragma once

// Run configuration: a flat set of typed keys with defaults, overridden by a
// JSON config file, overridden in turn by --key=value flags. Unknown keys and
// badly typed values are ConfigErrors.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "grounder/model.hpp"
#include "grounder/optim.hpp"
#include "grounder/synthetic.hpp"

namespace grounder {

using Json = nlohmann::ordered_json;

enum class KeyType { kInt, kDouble, kBool, kString, kOptDouble, kOptBool, kDoubleList };

struct ConfigKey {
  const char* name;
  KeyType type;
  Json default_value;
  const char* help;
};

const std::vector<ConfigKey>& config_schema();

class RunConfig {
 public:
  RunConfig();  // all defaults

  // Replaces values from a JSON object.
  void merge(const Json& object);
  void merge_file(const std::filesystem::path& path);
  // "key=value"; the value is parsed according to the key's type.
  void set(std::string_view key, std::string_view value);

  const Json& values() const { return values_; }
  std::string dump() const { return values_.dump(2) + "\n"; }

  std::int64_t get_int(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::string get_string(std::string_view key) const;
  std::optional<double> get_opt_double(std::string_view key) const;
  std::optional<bool> get_opt_bool(std::string_view key) const;
  std::vector<double> get_doubles(std::string_view key) const;

  // vocab_size and feature_width are taken from the data when the config leaves them at 0.
  ModelConfig model_config(std::size_t vocab_size, std::size_t feature_width) const;
  TrainConfig train_config() const;
  SyntheticConfig synthetic_config() const;

 private:
  const Json& at(std::string_view key) const;
  Json values_;
};

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

}  // namespace grounder
