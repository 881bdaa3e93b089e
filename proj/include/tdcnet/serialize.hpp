// SPDX-License-Identifier: Apache-2.0
//
// Tensor container file:
//   8 bytes   magic "TDCTENS1"
//   8 bytes   header length L, unsigned little-endian
//   L bytes   UTF-8 JSON header {"metadata": {...},
//             "tensors": [{"name", "dtype": "f64"|"f32", "shape": [...]}, ...]}
//   payload   raw little-endian arrays in header order
#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "tdcnet/tensor.hpp"

namespace tdcnet {

struct NamedTensor {
  std::string name;
  std::variant<Tensor, TensorF> value;
};

class TensorArchive {
 public:
  nlohmann::json metadata = nlohmann::json::object();

  void add(std::string name, Tensor t);
  void add(std::string name, TensorF t);
  bool contains(const std::string& name) const;
  /// f64 view; f32 entries are widened.
  Tensor get(const std::string& name) const;
  const std::vector<NamedTensor>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace tdcnet
