// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat `key = value` files with `#` comments, dotted keys
// for grouping. Every value remembers where it came from; a flag overrides a
// file, which overrides the built-in default.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdcnet/data.hpp"
#include "tdcnet/model.hpp"
#include "tdcnet/train.hpp"

namespace tdcnet {

enum class Source { Default = 0, File = 1, Flag = 2 };
const char* to_string(Source s);

class RunConfig {
 public:
  enum class Kind { Int, UInt, Double, String, IntList };

  /// All known keys at their defaults.
  RunConfig();

  /// Parses a config file. Unknown keys, malformed lines and values that do
  /// not parse as the key's type raise ConfigError naming the line.
  void load_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& origin = "<string>");
  /// Sets a value unless a higher-precedence source already set it.
  void set(const std::string& key, const std::string& value, Source src);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<std::int64_t> get_ints(const std::string& key) const;
  Source source(const std::string& key) const;
  std::vector<std::string> keys() const;

  data::SceneConfig scene() const;
  model::ModelConfig model() const;
  train::TrainConfig train() const;
  train::EvalOptions eval() const;

  /// {"values": {...typed...}, "provenance": {key: "default" | "file" | "flag"}}
  nlohmann::json to_json() const;

 private:
  struct Entry {
    Kind kind;
    std::string value;
    Source source = Source::Default;
    std::string help;
  };
  void define(const std::string& key, Kind kind, std::string value, std::string help);
  const Entry& entry(const std::string& key) const;
  std::map<std::string, Entry> entries_;
};

}  // namespace tdcnet
