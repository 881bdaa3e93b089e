// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tdcnet {

namespace {

constexpr char kMagic[8] = {'T', 'D', 'C', 'T', 'E', 'N', 'S', '1'};

static_assert(std::endian::native == std::endian::little,
              "container payload is written in host order and requires a little-endian host");

template <typename T>
void write_raw(std::ofstream& os, const std::vector<T>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
BasicTensor<T> read_raw(std::ifstream& is, const Shape& shape) {
  std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!is) throw std::runtime_error("tensor container truncated");
  return BasicTensor<T>(shape, std::move(data));
}

}  // namespace

void TensorArchive::add(std::string name, Tensor t) {
  entries_.push_back({std::move(name), std::move(t)});
}

void TensorArchive::add(std::string name, TensorF t) {
  entries_.push_back({std::move(name), std::move(t)});
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

Tensor TensorArchive::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name != name) continue;
    if (const auto* d = std::get_if<Tensor>(&e.value)) return *d;
    return std::get<TensorF>(e.value).cast<double>();
  }
  throw std::out_of_range("tensor '" + name + "' not found in container");
}

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    const bool f64 = std::holds_alternative<Tensor>(e.value);
    const Shape& s = f64 ? std::get<Tensor>(e.value).shape() : std::get<TensorF>(e.value).shape();
    header["tensors"].push_back({{"name", e.name}, {"dtype", f64 ? "f64" : "f32"}, {"shape", s}});
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries_) {
    if (const auto* d = std::get_if<Tensor>(&e.value)) {
      write_raw(os, d->storage());
    } else {
      write_raw(os, std::get<TensorF>(e.value).storage());
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a tensor container");
  }
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("tensor container header truncated");
  const auto header = nlohmann::json::parse(text);
  TensorArchive ar;
  ar.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    const Shape shape = t.at("shape").get<Shape>();
    const std::string dtype = t.at("dtype").get<std::string>();
    if (dtype == "f64") {
      ar.add(t.at("name").get<std::string>(), read_raw<double>(is, shape));
    } else if (dtype == "f32") {
      ar.add(t.at("name").get<std::string>(), read_raw<float>(is, shape));
    } else {
      throw std::runtime_error("unknown dtype '" + dtype + "' in tensor container");
    }
  }
  return ar;
}

}  // namespace tdcnet
