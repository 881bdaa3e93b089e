// SPDX-License-Identifier: Apache-2.0
//
// tdcnet command line: gen-data, train, eval, fuse, verify.
// Exit codes: 0 success, 1 verification / evaluation / training failure,
// 2 usage error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "tdcnet/config.hpp"
#include "tdcnet/data.hpp"
#include "tdcnet/errors.hpp"
#include "tdcnet/metrics.hpp"
#include "tdcnet/model.hpp"
#include "tdcnet/tdc.hpp"
#include "tdcnet/train.hpp"
#include "tdcnet/verify.hpp"

namespace fs = std::filesystem;
using namespace tdcnet;
using nlohmann::json;

namespace {

constexpr int kOk = 0, kFail = 1, kUsage = 2;

/// Failure that maps to exit code 1.
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::int64_t seed = -1;
  bool f32 = false;
  bool force = false;
  std::vector<std::string> sets;
};

RunConfig resolve(const Globals& g) {
  RunConfig c;
  if (!g.config.empty()) c.load_file(g.config);
  if (g.seed >= 0) c.set("seed", std::to_string(g.seed), Source::Flag);
  for (const auto& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1), Source::Flag);
  }
  return c;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// Appends one command record to <dir>/manifest.json.
void record_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                     const std::vector<std::string>& outputs, const json& extra = json::object()) {
  const fs::path p = dir / "manifest.json";
  json m = json::object();
  if (fs::exists(p)) {
    std::ifstream in(p);
    m = json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.is_object()) m = json::object();
  }
  json entry = {{"command", command}, {"config", cfg.to_json()}, {"outputs", outputs}};
  for (auto it = extra.begin(); it != extra.end(); ++it) entry[it.key()] = it.value();
  m["tool"] = "tdcnet";
  m["runs"].push_back(entry);
  write_json(p, m);
}

bool dir_nonempty(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

void prepare_out_dir(const fs::path& p, bool force) {
  if (fs::exists(p) && !fs::is_directory(p)) throw UsageError(p.string() + " exists and is not a directory");
  if (dir_nonempty(p)) {
    if (!force) throw UsageError(p.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(p);
  }
  fs::create_directories(p);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Globals& g, const std::string& out_opt) {
  const RunConfig cfg = resolve(g);
  const data::SceneConfig scene = cfg.scene();
  const fs::path out = out_opt.empty() ? fs::path(cfg.get("data.dir")) : fs::path(out_opt);
  const std::int64_t n = cfg.get_int("data.sequences");
  if (n < 1) throw ConfigError("data.sequences must be at least 1");
  prepare_out_dir(out, g.force);
  std::vector<data::Sequence> seqs;
  for (std::int64_t i = 0; i < n; ++i) seqs.push_back(data::generate_sequence(scene, i));
  const auto st = data::write_dataset(out, seqs, {{"scene", scene.to_json()}, {"config", cfg.to_json()}});

  std::printf("%-8s %7s %7s %10s %9s\n", "sequence", "frames", "boxes", "mean_size", "mean_scr");
  for (const auto& s : seqs) {
    double size = 0, scr = 0;
    std::size_t nb = 0;
    for (std::size_t f = 0; f < s.frames.size(); ++f)
      for (std::size_t i = 0; i < s.boxes[f].size(); ++i) {
        size += std::sqrt(s.boxes[f][i].w * s.boxes[f][i].h);
        scr += s.scr[f][i];
        ++nb;
      }
    std::printf("seq_%03lld %7zu %7zu %10.3f %9.3f\n", static_cast<long long>(s.id), s.frames.size(), nb,
                nb ? size / static_cast<double>(nb) : 0.0, nb ? scr / static_cast<double>(nb) : 0.0);
  }
  std::printf("total: %lld sequences, %lld frames, %lld boxes, mean box size %.3f\n",
              static_cast<long long>(st.sequences), static_cast<long long>(st.frames), static_cast<long long>(st.boxes),
              st.mean_box_size);
  return kOk;
}

// ---------------------------------------------------------------------------

struct Splits {
  std::vector<data::ClipSample> train, val;
};

Splits load_clips(const RunConfig& cfg, const fs::path& dir, std::int64_t frames, bool need_train) {
  const auto seqs = data::read_dataset(dir);
  auto [tr, va] = data::dataset_split(seqs, cfg.get_int("data.clip_len"), cfg.get_double("data.split"),
                                      cfg.get_uint("data.split_seed"));
  const int shift = static_cast<int>(cfg.get_int("data.max_shift"));
  Splits s;
  if (need_train) s.train = data::iterate_clips(tr, frames, shift);
  s.val = data::iterate_clips(va, frames, shift);
  return s;
}

void print_cost_table(const model::TdcNet& net) {
  const auto layers = net.describe(1);
  std::printf("%-40s %-14s %12s %14s\n", "layer", "type", "params", "flops");
  for (const auto& l : layers) {
    const auto c = metrics::count_params_flops(l);
    std::printf("%-40s %-14s %12lld %14lld\n", l.name.c_str(), l.type.c_str(), static_cast<long long>(c.params),
                static_cast<long long>(c.flops));
  }
  const auto t = metrics::count_params_flops(layers);
  std::printf("%-40s %-14s %12lld %14lld\n", "total", "", static_cast<long long>(t.params),
              static_cast<long long>(t.flops));
}

int cmd_train(const Globals& g, const std::string& data_opt, const std::string& run_opt, bool dry_run,
              const std::string& resume) {
  const RunConfig cfg = resolve(g);
  const model::ModelConfig mc = cfg.model();
  const train::TrainConfig tc = cfg.train();
  if (dry_run) {
    model::TdcNet net(mc, tc.seed);
    print_cost_table(net);
    return kOk;
  }
  const fs::path data_dir = data_opt.empty() ? fs::path(cfg.get("data.dir")) : fs::path(data_opt);
  if (!fs::is_directory(data_dir)) throw UsageError("dataset directory " + data_dir.string() + " does not exist");
  if (run_opt.empty()) throw UsageError("train needs --run DIR");
  const fs::path run = run_opt;

  std::unique_ptr<model::TdcNet> net;
  train::Stage first = train::Stage::Spatial2d;
  if (!resume.empty()) {
    auto ck = model::load_checkpoint(resume);
    if (ck.metadata.value("fused", false)) throw UsageError("cannot resume training from a fused checkpoint");
    if (ck.net->config().to_json() != mc.to_json()) throw UsageError("checkpoint model config differs from the run config");
    const int done = ck.metadata.value("stage_completed", 0);
    if (done >= 3) throw UsageError("checkpoint already completed training");
    first = static_cast<train::Stage>(done + 1);
    net = std::move(ck.net);
    fs::create_directories(run);
  } else {
    prepare_out_dir(run, g.force);
    net = std::make_unique<model::TdcNet>(mc, tc.seed);
  }

  const Splits clips = load_clips(cfg, data_dir, mc.frames, true);
  std::printf("train clips %zu, val clips %zu, arch %s\n", clips.train.size(), clips.val.size(), model::to_string(mc.arch));
  std::vector<std::string> outputs;
  std::ofstream hist(run / "history.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  outputs.push_back("history.jsonl");
  train::Hooks hooks;
  hooks.on_stage_end = [&](train::Stage s) {
    const std::string name = std::string("stage") + std::to_string(static_cast<int>(s)) + ".ckpt";
    model::save_checkpoint(run / name, *net,
                           {{"stage_completed", static_cast<int>(s)}, {"config", cfg.to_json()}});
    outputs.push_back(name);
  };
  std::vector<train::EpochRecord> history;
  for (train::Stage s : train::stages_for(mc.arch)) {
    if (static_cast<int>(s) < static_cast<int>(first)) continue;
    auto h = train::run_stage(*net, s, clips.train, tc, hooks);
    for (const auto& r : h) {
      hist << r.to_json().dump() << '\n';
      std::printf("stage %d epoch %3lld loss %.5f (reg %.4f obj %.4f cls %.4f)\n", r.stage,
                  static_cast<long long>(r.epoch), r.loss, r.l_reg, r.l_obj, r.l_cls);
    }
    hist.flush();
  }
  model::save_checkpoint(run / "final.ckpt", *net, {{"stage_completed", 3}, {"config", cfg.to_json()}});
  outputs.push_back("final.ckpt");
  record_manifest(run, "train", cfg, outputs, {{"dataset", data_dir.string()}});
  std::printf("wrote %s\n", (run / "final.ckpt").string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

std::vector<train::FrameResult> read_detections(const fs::path& p, const std::vector<data::ClipSample>& val) {
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<model::Detection>> by_key;
  std::ifstream in(p);
  if (!in) throw UsageError("cannot read detections file " + p.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    auto& dets = by_key[{j.at("sequence").get<std::int64_t>(), j.at("frame").get<std::int64_t>()}];
    for (const auto& d : j.at("detections")) {
      model::Detection det;
      const double x = d.at("x"), y = d.at("y"), w = d.at("w"), h = d.at("h");
      det.cx = x + w / 2;
      det.cy = y + h / 2;
      det.w = w;
      det.h = h;
      det.objectness = det.class_score = d.at("score");
      dets.push_back(det);
    }
  }
  std::vector<train::FrameResult> frames;
  for (const auto& c : val) {
    auto it = by_key.find({c.sequence, c.frame});
    frames.push_back({c.sequence, c.frame, it == by_key.end() ? std::vector<model::Detection>{} : it->second, c.boxes});
  }
  return frames;
}

void write_detections(const fs::path& p, const train::EvalResult& r) {
  std::ofstream out(p);
  for (const auto& f : r.frames) {
    json dets = json::array();
    for (const auto& d : f.detections) {
      const auto b = d.box();
      dets.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"score", d.objectness}});
    }
    out << json{{"sequence", f.sequence}, {"frame", f.frame}, {"detections", dets}}.dump() << '\n';
  }
}

void check_against_checkpoint(const RunConfig& cfg, const model::ModelConfig& ck) {
  const json have = ck.to_json();
  const json want = cfg.model().to_json();
  for (auto it = want.begin(); it != want.end(); ++it) {
    static const std::map<std::string, std::vector<std::string>> keys{
        {"arch", {"model.arch"}},          {"frames", {"model.frames"}},     {"height", {"data.height"}},
        {"width", {"data.width"}},         {"widths", {"model.widths"}},     {"kt", {"model.kt"}},
        {"kt_3d", {"model.kt_3d"}},        {"heads", {"model.heads"}},       {"window_p", {"attn.window_p"}},
        {"window_m", {"attn.window_m"}},   {"query", {"attn.query"}},        {"neck_width", {"model.neck_width"}}};
    auto k = keys.find(it.key());
    if (k == keys.end()) continue;
    const bool explicit_value = std::any_of(k->second.begin(), k->second.end(),
                                            [&](const std::string& key) { return cfg.source(key) != Source::Default; });
    if (explicit_value && have.at(it.key()) != it.value()) {
      throw UsageError("checkpoint " + it.key() + " = " + have.at(it.key()).dump() + " but config asks for " +
                       it.value().dump());
    }
  }
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& data_opt, const std::string& out_opt,
             const std::string& dets_in, const std::string& dets_out, const std::string& heatmaps) {
  RunConfig cfg = resolve(g);
  const fs::path data_dir = data_opt.empty() ? fs::path(cfg.get("data.dir")) : fs::path(data_opt);
  if (!fs::is_directory(data_dir)) throw UsageError("dataset directory " + data_dir.string() + " does not exist");
  if (ckpt.empty() && dets_in.empty()) throw UsageError("eval needs --checkpoint or --detections");
  const train::EvalOptions eo = cfg.eval();

  train::EvalResult res;
  json extra = json::object();
  if (!dets_in.empty()) {
    const Splits clips = load_clips(cfg, data_dir, 1, false);
    res = train::score(read_detections(dets_in, clips.val));
    extra["source"] = "detections";
  } else {
    auto ck = model::load_checkpoint(ckpt);
    check_against_checkpoint(cfg, ck.net->config());
    const Splits clips = load_clips(cfg, data_dir, ck.net->config().frames, false);
    std::function<void(std::size_t, const std::vector<Tensor>&)> on_feat;
    if (!heatmaps.empty()) {
      fs::create_directories(heatmaps);
      on_feat = [&](std::size_t at, const std::vector<Tensor>& feats) {
        for (std::size_t l = 0; l < feats.size(); ++l) {
          const Shape s = feats[l].shape();  // [N, C, H, W]
          for (std::int64_t n = 0; n < s[0]; ++n) {
            Tensor mag(Shape{s[2], s[3]});
            for (std::int64_t c = 0; c < s[1]; ++c)
              for (std::int64_t p = 0; p < s[2] * s[3]; ++p) mag[p] += std::abs(feats[l][(n * s[1] + c) * s[2] * s[3] + p]);
            const double mx = *std::max_element(mag.storage().begin(), mag.storage().end());
            if (mx > 0)
              for (auto& v : mag.storage()) v /= mx;
            const auto& clip = clips.val[at + static_cast<std::size_t>(n)];
            char name[96];
            std::snprintf(name, sizeof name, "seq_%03lld_%06lld_stage%zu.png", static_cast<long long>(clip.sequence),
                          static_cast<long long>(clip.frame), l + 1);
            data::write_png(fs::path(heatmaps) / name, mag);
          }
        }
      };
    }
    res = train::evaluate(*ck.net, clips.val, eo, on_feat);
    const auto cost = metrics::count_params_flops(ck.net->describe(1));
    extra["params"] = cost.params;
    extra["flops"] = cost.flops;
    extra["checkpoint"] = ckpt;
    extra["fused"] = ck.net->fused();
  }
  json out = res.to_json();
  for (auto it = extra.begin(); it != extra.end(); ++it) out[it.key()] = it.value();
  out["config"] = cfg.to_json();
  const fs::path out_path = !out_opt.empty() ? fs::path(out_opt)
                            : !ckpt.empty()  ? fs::path(ckpt).parent_path() / "metrics.json"
                                             : fs::path("metrics.json");
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  write_json(out_path, out);
  if (!dets_out.empty()) write_detections(dets_out, res);
  std::printf("P %.4f R %.4f F1 %.4f AP50 %.4f (threshold %.4f, %zu frames, %zu ground truths)\n", res.precision,
              res.recall, res.f1, res.ap50, res.threshold, res.frames.size(), res.ground_truths);
  std::printf("wrote %s\n", out_path.string().c_str());
  if (res.ground_truths == 0) throw Failure("validation split has no ground truths; AP50 is undefined");
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_fuse(const Globals& g, const std::string& in, const std::string& out) {
  const RunConfig cfg = resolve(g);
  auto ck = model::load_checkpoint(in);
  model::TdcNet& net = *ck.net;
  const auto before = metrics::count_params_flops(net.describe(1));
  if (net.fused()) {
    std::fprintf(stderr, "warning: %s is already fused; writing it unchanged\n", in.c_str());
    if (fs::absolute(in) != fs::absolute(out)) fs::copy_file(in, out, fs::copy_options::overwrite_existing);
    return kOk;
  }
  if (net.config().arch == model::Arch::Plain3d) {
    std::fprintf(stderr, "warning: plain3d model has no TDCR layers; writing it unchanged\n");
    if (fs::absolute(in) != fs::absolute(out)) fs::copy_file(in, out, fs::copy_options::overwrite_existing);
    return kOk;
  }
  const auto& mc = net.config();
  Rng rng(cfg.get_uint("seed") + 17);
  std::vector<Tensor> probes;
  std::vector<std::vector<Tensor>> ref;
  for (int i = 0; i < 5; ++i) {
    probes.push_back(Tensor::uniform({1, 1, mc.frames, mc.height, mc.width}, rng, 0.0, 1.0));
    Tape t;
    std::vector<Tensor> r;
    for (auto& v : net.forward(t.constant(probes.back()), ForwardCtx{BnMode::Infer, false})) r.push_back(v.value());
    ref.push_back(std::move(r));
  }
  // f32 probe per TDCR layer, on random inputs of the layer's shape. Trained
  // layers are wider than the unit-test configurations, so the error is
  // measured relative to the layer's output scale (floored at 1).
  double worst32 = 0;
  if (g.f32) {
    for (std::size_t s = 0; s < 4; ++s) {
      auto& m = net.tdc_backbone().tdcr(s);
      Tensor x = Tensor::randn({1, m.config().c_in, mc.frames, 16, 16}, rng);
      const auto fused = tdc::reparameterize(m);
      const TensorF a = tdc::tdcr_forward_infer<float>(x.cast<float>(), m);
      const TensorF b = tdc::fused_forward<float>(x.cast<float>(), fused, m.config());
      double diff = 0, scale = 1;
      for (std::int64_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, static_cast<double>(std::abs(a[i] - b[i])));
        scale = std::max(scale, static_cast<double>(std::abs(a[i])));
      }
      worst32 = std::max(worst32, diff / scale);
    }
  }
  const std::size_t n = net.fuse();
  double worst = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    Tape t;
    const auto got = net.forward(t.constant(probes[i]), ForwardCtx{BnMode::Infer, false});
    for (std::size_t l = 0; l < got.size(); ++l)
      for (std::int64_t k = 0; k < got[l].value().numel(); ++k)
        worst = std::max(worst, std::abs(got[l].value()[k] - ref[i][l][k]));
  }
  const auto after = metrics::count_params_flops(net.describe(1));
  std::printf("fused %zu TDCR layers\n", n);
  std::printf("params %lld -> %lld\nflops  %lld -> %lld\n", static_cast<long long>(before.params),
              static_cast<long long>(after.params), static_cast<long long>(before.flops),
              static_cast<long long>(after.flops));
  std::printf("probe max abs diff (64-bit, 5 probes): %.3e (tolerance 1e-9)\n", worst);
  if (g.f32) std::printf("TDCR max scaled diff (32-bit): %.3e (tolerance 1e-4)\n", worst32);
  if (!(worst < 1e-9) || (g.f32 && !(worst32 < 1e-4))) throw Failure("fusion verification failed; nothing written");
  json extra = ck.metadata;
  extra.erase("modules");
  extra.erase("fused");
  extra["fusion_probe_max_abs_diff"] = worst;
  model::save_checkpoint(out, net, extra);
  std::printf("wrote %s\n", out.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_verify(const Globals& g, const std::string& suite, const std::string& report, bool flip) {
  const RunConfig cfg = resolve(g);
  verify::Options o;
  o.seed = cfg.get_uint("seed");
  o.f32 = true;
  if (flip) tdc::testing::set_short_term_sign_flip(true);
  const verify::Report r = verify::run(suite, o);
  tdc::testing::set_short_term_sign_flip(false);
  for (const auto& c : r.checks) {
    std::printf("%-4s %-10s %-36s residual %-11.3e tolerance %-9.1e %s\n", c.passed ? "PASS" : "FAIL", c.suite.c_str(),
                c.name.c_str(), c.residual, c.tolerance, c.detail.c_str());
  }
  std::printf("%s: %zu checks\n", r.passed() ? "PASS" : "FAIL", r.checks.size());
  if (!report.empty()) {
    json j = r.to_json();
    j["config"] = cfg.to_json();
    write_json(report, j);
  }
  return r.passed() ? kOk : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tdcnet: temporal difference convolution toolkit and toy detector"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "seed for generation, initialisation and shuffling")->check(CLI::NonNegativeNumber);
  app.add_flag("--f32", g.f32, "also run 32-bit probes");
  app.add_flag("--force", g.force, "overwrite non-empty output directories");
  app.add_option("--set", g.sets, "override a config key: --set key=value");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory (default data.dir)");

  auto* tr = app.add_subcommand("train", "run the training stages");
  std::string tr_data, tr_run, tr_resume;
  bool dry = false;
  tr->add_option("--data", tr_data, "dataset directory (default data.dir)");
  tr->add_option("--run", tr_run, "run directory for checkpoints and history");
  tr->add_option("--resume", tr_resume, "continue after the stage stored in this checkpoint")->check(CLI::ExistingFile);
  tr->add_flag("--dry-run", dry, "print the parameter / FLOP table and exit");

  auto* ev = app.add_subcommand("eval", "score a checkpoint or a detections file on the validation split");
  std::string ev_ckpt, ev_data, ev_out, ev_dets, ev_dump, ev_heat;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint, branched or fused")->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "dataset directory (default data.dir)");
  ev->add_option("--out", ev_out, "metrics JSON (default next to the checkpoint)");
  ev->add_option("--detections", ev_dets, "score this detections JSONL instead of running a model")
      ->check(CLI::ExistingFile);
  ev->add_option("--dump-detections", ev_dump, "write per-frame detections JSONL");
  ev->add_option("--heatmap-dir", ev_heat, "write per-stage activation magnitude PNGs");

  auto* fu = app.add_subcommand("fuse", "re-parameterise every TDCR layer");
  std::string fu_in, fu_out;
  fu->add_option("--in", fu_in, "input checkpoint")->required()->check(CLI::ExistingFile);
  fu->add_option("--out", fu_out, "output checkpoint")->required();

  auto* ve = app.add_subcommand("verify", "run property suites");
  std::string suite = "all", report;
  bool flip = false;
  ve->add_option("suite", suite, "tdc | attention | grads | metrics | all");
  ve->add_option("--report", report, "machine-readable JSON report");
  ve->add_flag("--inject-sign-flip", flip, "test hook: flip the sign of one short-term TDC tap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    if (*gen) return cmd_gen_data(g, gen_out);
    if (*tr) return cmd_train(g, tr_data, tr_run, dry, tr_resume);
    if (*ev) return cmd_eval(g, ev_ckpt, ev_data, ev_out, ev_dets, ev_dump, ev_heat);
    if (*fu) return cmd_fuse(g, fu_in, fu_out);
    if (*ve) return cmd_verify(g, suite, report, flip);
  } catch (const Failure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFail;
  } catch (const train::DivergenceError& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return kFail;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFail;
  }
  return kUsage;
}
