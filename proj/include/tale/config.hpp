#pragma once

#include <map>
#include <string>

#include "tale/model.hpp"
#include "tale/train.hpp"

namespace tale {

// Flat "key = value" run configuration. Every key has a default; unknown keys
// are rejected up front so typos never silently fall back to defaults.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::string& path);
  // Applies "key=value" overrides (e.g. CLI flags); flag wins over file.
  void set(const std::string& key, const std::string& value);

  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::string get_string(const std::string& key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace tale
