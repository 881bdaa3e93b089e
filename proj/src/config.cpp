// SPDX-License-Identifier: Apache-2.0
#include "tdcnet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "tdcnet/errors.hpp"

namespace tdcnet {

const char* to_string(Source s) {
  switch (s) {
    case Source::Default: return "default";
    case Source::File: return "file";
    case Source::Flag: return "flag";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_ints(const std::string& s, std::vector<std::int64_t>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::int64_t v = 0;
    if (!parse_number(trim(item), v)) return false;
    out.push_back(v);
  }
  return !out.empty();
}

bool valid(RunConfig::Kind kind, const std::string& v) {
  switch (kind) {
    case RunConfig::Kind::Int: { std::int64_t x; return parse_number(v, x); }
    case RunConfig::Kind::UInt: { std::uint64_t x; return parse_number(v, x); }
    case RunConfig::Kind::Double: { double x; return parse_double(v, x); }
    case RunConfig::Kind::String: return true;
    case RunConfig::Kind::IntList: { std::vector<std::int64_t> x; return parse_ints(v, x); }
  }
  return false;
}

}  // namespace

void RunConfig::define(const std::string& key, Kind kind, std::string value, std::string help) {
  entries_[key] = Entry{kind, std::move(value), Source::Default, std::move(help)};
}

RunConfig::RunConfig() {
  using K = Kind;
  define("seed", K::UInt, "0", "generation and training seed");
  define("data.dir", K::String, "data", "dataset root");
  define("data.sequences", K::Int, "4", "sequences written by gen-data");
  define("data.frames", K::Int, "200", "frames per sequence");
  define("data.height", K::Int, "128", "frame height");
  define("data.width", K::Int, "128", "frame width");
  define("data.targets", K::Int, "2", "targets per sequence");
  define("data.size_min", K::Double, "3", "target half-extent, px");
  define("data.size_max", K::Double, "9", "target half-extent, px");
  define("data.scr_min", K::Double, "3", "signal-to-clutter ratio");
  define("data.scr_max", K::Double, "6", "signal-to-clutter ratio");
  define("data.speed_min", K::Double, "0.5", "px per frame");
  define("data.speed_max", K::Double, "1.5", "px per frame");
  define("data.velocity_jitter", K::Double, "0.1", "per-frame velocity noise");
  define("data.static_distractors", K::Int, "6", "static target-like spots");
  define("data.clutter_blobs", K::Int, "3", "drifting clutter blobs");
  define("data.clutter_drift", K::Double, "0.6", "blob speed scale");
  define("data.noise_sigma", K::Double, "0.01", "sensor noise");
  define("data.jitter", K::Int, "2", "camera jitter amplitude, px");
  define("data.clip_len", K::Int, "50", "segment length for the split");
  define("data.split", K::Double, "0.8", "train fraction of segments");
  define("data.split_seed", K::UInt, "0", "segment shuffle seed");
  define("data.max_shift", K::Int, "4", "alignment search radius");
  define("model.arch", K::String, "full", "full | tdcr | plain3d");
  define("model.frames", K::Int, "5", "input frames T");
  define("model.kt", K::Int, "5", "TDC temporal kernel");
  define("model.kt_3d", K::Int, "3", "3D backbone temporal kernel");
  define("model.widths", K::IntList, "16,32,64,128", "stage widths");
  define("model.heads", K::Int, "4", "attention heads");
  define("model.neck_width", K::Int, "32", "neck channels");
  define("attn.window_p", K::Int, "5", "temporal window P");
  define("attn.window_m", K::Int, "8", "spatial window M");
  define("attn.query", K::String, "tdcf", "cross-attention query stream");
  define("train.lr", K::Double, "0.001", "Adam learning rate");
  define("train.weight_decay", K::Double, "0.0001", "L2 weight decay");
  define("train.batch", K::Int, "4", "batch size");
  define("train.epochs", K::Int, "30", "main-stage epochs");
  define("train.epochs_aux", K::Int, "-1", "pretraining-stage epochs, <0 = train.epochs");
  define("train.max_steps", K::Int, "-1", "per-stage step cap, <0 = none");
  define("train.augment", K::Int, "0", "1 = random flips / transpose of training clips");
  define("eval.conf_threshold", K::Double, "0.01", "minimum confidence kept");
  define("eval.nms_iou", K::Double, "0.5", "NMS IoU");
  define("eval.batch", K::Int, "4", "eval batch size");
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value, Source src) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  const std::string v = trim(value);
  if (!valid(it->second.kind, v)) throw ConfigError("value '" + v + "' is not valid for '" + key + "'");
  if (static_cast<int>(src) < static_cast<int>(it->second.source)) return;
  it->second.value = v;
  it->second.source = src;
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1), Source::File);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const { return entry(key).value; }

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  parse_number(get(key), v);
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  parse_number(get(key), v);
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0;
  parse_double(get(key), v);
  return v;
}

std::vector<std::int64_t> RunConfig::get_ints(const std::string& key) const {
  std::vector<std::int64_t> v;
  parse_ints(get(key), v);
  return v;
}

Source RunConfig::source(const std::string& key) const { return entry(key).source; }

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

data::SceneConfig RunConfig::scene() const {
  data::SceneConfig c;
  c.height = get_int("data.height");
  c.width = get_int("data.width");
  c.frames = get_int("data.frames");
  c.targets = get_int("data.targets");
  c.size_min = get_double("data.size_min");
  c.size_max = get_double("data.size_max");
  c.scr_min = get_double("data.scr_min");
  c.scr_max = get_double("data.scr_max");
  c.speed_min = get_double("data.speed_min");
  c.speed_max = get_double("data.speed_max");
  c.velocity_jitter = get_double("data.velocity_jitter");
  c.static_distractors = get_int("data.static_distractors");
  c.clutter_blobs = get_int("data.clutter_blobs");
  c.clutter_drift = get_double("data.clutter_drift");
  c.noise_sigma = get_double("data.noise_sigma");
  c.jitter = get_int("data.jitter");
  c.seed = get_uint("seed");
  c.validate();
  return c;
}

model::ModelConfig RunConfig::model() const {
  model::ModelConfig c;
  c.arch = model::arch_from_string(get("model.arch"));
  c.frames = get_int("model.frames");
  c.height = get_int("data.height");
  c.width = get_int("data.width");
  c.widths = get_ints("model.widths");
  c.kt = get_int("model.kt");
  c.kt_3d = get_int("model.kt_3d");
  c.heads = get_int("model.heads");
  c.neck_width = get_int("model.neck_width");
  c.window_p = get_int("attn.window_p");
  c.window_m = get_int("attn.window_m");
  c.query = attn::query_stream_from_string(get("attn.query"));
  c.validate();
  return c;
}

train::TrainConfig RunConfig::train() const {
  train::TrainConfig c;
  c.lr = get_double("train.lr");
  c.weight_decay = get_double("train.weight_decay");
  c.batch = get_int("train.batch");
  c.epochs = get_int("train.epochs");
  c.epochs_aux = get_int("train.epochs_aux");
  c.max_steps = get_int("train.max_steps");
  c.augment = get_int("train.augment") != 0;
  c.seed = get_uint("seed");
  c.validate();
  return c;
}

train::EvalOptions RunConfig::eval() const {
  train::EvalOptions o;
  o.conf_threshold = get_double("eval.conf_threshold");
  o.nms_iou = get_double("eval.nms_iou");
  o.batch = get_int("eval.batch");
  if (o.batch < 1 || o.nms_iou <= 0 || o.nms_iou > 1) throw ConfigError("invalid eval settings");
  return o;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json values = nlohmann::json::object(), prov = nlohmann::json::object();
  for (const auto& [k, e] : entries_) {
    switch (e.kind) {
      case Kind::Int: values[k] = get_int(k); break;
      case Kind::UInt: values[k] = get_uint(k); break;
      case Kind::Double: values[k] = get_double(k); break;
      case Kind::String: values[k] = e.value; break;
      case Kind::IntList: values[k] = get_ints(k); break;
    }
    prov[k] = to_string(e.source);
  }
  return {{"values", values}, {"provenance", prov}};
}

}  // namespace tdcnet
