#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lotnext/data.hpp"
#include "lotnext/train.hpp"

namespace lotnext {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Flat dotted-key run configuration (`loss.tau = 1.2`). Every key has a
/// documented default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<ConfigKey>& schema();
  static bool known(const std::string& key);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  /// `key = value` lines; blank lines and `#` comments ignored.
  void merge_text(std::istream& in, const std::string& origin = "<config>");
  void merge_file(const std::filesystem::path& path);
  void merge(const std::vector<std::pair<std::string, std::string>>& entries);

  std::vector<std::pair<std::string, std::string>> entries() const;
  void write(std::ostream& out) const;

  TrainConfig train_config() const;
  PreprocessOptions preprocess_options() const;
  CheckInFormat format() const;

  static RunConfig from_train_config(const TrainConfig& cfg);

 private:
  std::map<std::string, std::string> values_;
};

int parse_int(const std::string& key, const std::string& text);
double parse_double(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);

}  // namespace lotnext
