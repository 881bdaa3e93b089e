// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is non-zero when any criterion fails.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tdcnet/config.hpp"
#include "tdcnet/data.hpp"
#include "tdcnet/train.hpp"
#include "tdcnet/verify.hpp"

using namespace tdcnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int g_failed = 0;

void report(bool ok, const std::string& name, const std::string& detail);

// Runs one criterion; an exception counts as a failure.
void criterion(const std::string& name, const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("threw: ") + e.what();
  }
  report(ok, name, detail);
}

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-34s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  g_failed += !ok;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct SuiteRun {
  verify::Report report;
  double seconds = 0;
};

SuiteRun run_suite(const std::string& name) {
  const auto t0 = Clock::now();
  SuiteRun r{verify::run(name), 0};
  r.seconds = seconds_since(t0);
  return r;
}

// Worst residual/tolerance over the named checks; all must be present and pass.
bool checks_pass(const verify::Report& r, const std::vector<std::string>& names, std::string& detail) {
  bool ok = true;
  std::ostringstream os;
  for (const auto& n : names) {
    auto it = std::find_if(r.checks.begin(), r.checks.end(), [&](const verify::Check& c) { return c.name == n; });
    if (it == r.checks.end()) {
      ok = false;
      os << n << " missing; ";
      continue;
    }
    ok = ok && it->passed;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %.2e/%.0e; ", n.c_str(), it->residual, it->tolerance);
    os << buf;
  }
  detail = os.str();
  return ok;
}

bool all_pass(const verify::Report& r, std::string& detail) {
  std::vector<std::string> names;
  for (const auto& c : r.checks) names.push_back(c.name);
  return checks_pass(r, names, detail);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- ablations -------------------------------------------------------------

struct Variant {
  std::string label;
  model::Arch arch;
  std::int64_t kt;
};

std::vector<std::vector<double>> run_ablation(const RunConfig& cfg, const std::vector<Variant>& variants,
                                              const std::vector<std::uint64_t>& seeds) {
  std::vector<std::vector<double>> ap(variants.size());
  for (const auto seed : seeds) {
    RunConfig c = cfg;
    c.set("seed", std::to_string(seed), Source::Flag);
    const data::SceneConfig scene = c.scene();
    std::vector<std::shared_ptr<const data::Sequence>> seqs;
    for (std::int64_t i = 0; i < c.get_int("data.sequences"); ++i)
      seqs.push_back(std::make_shared<data::Sequence>(data::generate_sequence(scene, i)));
    const auto [tr, va] = data::dataset_split(seqs, c.get_int("data.clip_len"), c.get_double("data.split"),
                                              c.get_uint("data.split_seed"));
    const int shift = static_cast<int>(c.get_int("data.max_shift"));
    const auto train_clips = data::iterate_clips(tr, c.get_int("model.frames"), shift);
    const auto val_clips = data::iterate_clips(va, c.get_int("model.frames"), shift);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const auto t0 = Clock::now();
      model::ModelConfig mc = c.model();
      mc.arch = variants[v].arch;
      mc.kt = variants[v].kt;
      model::TdcNet net(mc, seed);
      train::train(net, train_clips, c.train());
      const auto ev = train::evaluate(net, val_clips, c.eval());
      ap[v].push_back(ev.ap50);
      std::fprintf(stderr, "  seed %llu %-10s AP50 %.4f F1 %.3f  %.0f s\n", static_cast<unsigned long long>(seed),
                   variants[v].label.c_str(), ev.ap50, ev.f1, seconds_since(t0));
    }
  }
  return ap;
}

// --- alignment -------------------------------------------------------------

bool alignment_recovery(std::string& detail) {
  data::SceneConfig sc;
  sc.height = sc.width = 64;
  sc.frames = 1;
  sc.targets = 0;
  sc.clutter_blobs = 0;
  sc.noise_sigma = 0;
  sc.jitter = 0;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> d(-8, 8);
  int recovered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    sc.seed = static_cast<std::uint64_t>(trial);
    const Tensor ref = data::generate_sequence(sc).frames[0];
    const data::Shift s{d(rng), d(rng)};
    // moved(y, x) = ref(y + dy, x + dx); aligning it back needs (-dy, -dx).
    const Tensor moved = data::shift_frame(ref, s);
    const auto a = data::align_background({moved, ref}, 8);
    recovered += a.shifts[0].dy == -s.dy && a.shifts[0].dx == -s.dx;
  }
  detail = std::to_string(recovered) + "/100 shifts recovered";
  return recovered == 100;
}

// --- determinism -----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int sh(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool end_to_end_determinism(std::string& detail) {
  const fs::path root = fs::temp_directory_path() / "tdcnet_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "run.cfg");
    cfg << "data.sequences = 2\ndata.frames = 20\ndata.height = 48\ndata.width = 48\n"
           "data.targets = 1\ndata.size_min = 2\ndata.size_max = 4\ndata.clip_len = 10\n"
           "data.split = 0.5\nmodel.widths = 4,8,16,32\nmodel.neck_width = 8\nmodel.heads = 2\n"
           "attn.window_m = 4\ntrain.batch = 2\ntrain.epochs = 1\ntrain.max_steps = 3\nseed = 5\n";
  }
  const std::string cli = TDCNET_CLI;
  // Both replicas use identical relative paths so recorded paths match too.
  for (const char* rep : {"a", "b"}) {
    const fs::path dir = root / rep;
    fs::create_directories(dir);
    const std::string pre = "cd " + dir.string() + " && " + cli + " --config ../run.cfg ";
    const std::string quiet = " > log.txt 2>&1";
    if (sh(pre + "gen-data --out data" + quiet) != 0 || sh(pre + "train --data data --run run" + quiet) != 0 ||
        sh(pre + "eval --data data --checkpoint run/final.ckpt --out metrics.json" + quiet) != 0) {
      detail = std::string("replica ") + rep + " failed, see " + (dir / "log.txt").string();
      return false;
    }
  }
  std::size_t compared = 0, equal = 0;
  for (const char* f : {"run/stage1.ckpt", "run/stage2.ckpt", "run/stage3.ckpt", "run/final.ckpt",
                        "run/history.jsonl", "metrics.json"}) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    ++compared;
    equal += !a.empty() && a == b;
  }
  detail = std::to_string(equal) + "/" + std::to_string(compared) + " checkpoint and metrics files bit-identical";
  return equal == compared;
}

}  // namespace

int main(int argc, char** argv) {
  std::string cfg_path = TDCNET_BENCHMARK_CFG;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--quick") quick = true;
    else cfg_path = a;
  }
  std::string detail;

  const SuiteRun tdc = run_suite("tdc");
  bool ok = checks_pass(tdc.report, {"reparam_equivalence_f64", "reparam_equivalence_f32"}, detail);
  report(ok && tdc.seconds < 30, "reparameterisation_equivalence", detail + fmt("%.1f s (< 30 s)", tdc.seconds));
  ok = checks_pass(tdc.report, {"unified_equals_explicit", "constant_input_zero_response"}, detail);
  report(ok, "unified_vs_explicit_tdc", detail);
  ok = checks_pass(tdc.report, {"fused_tap_sum_zero", "fused_params_ratio", "fused_flops_ratio"}, detail);
  report(ok, "fused_kernel_structure", detail);

  const SuiteRun grads = run_suite("grads");
  ok = all_pass(grads.report, detail);
  report(ok && grads.seconds < 120, "gradient_correctness",
         fmt("%.0f checks, %.0f s (< 120 s)", static_cast<double>(grads.report.checks.size()), grads.seconds));

  const SuiteRun attn = run_suite("attention");
  ok = all_pass(attn.report, detail);
  report(ok, "attention_invariants", detail);

  const SuiteRun met = run_suite("metrics");
  ok = all_pass(met.report, detail);
  report(ok, "metrics_oracle", detail);

  criterion("alignment_recovery", alignment_recovery);
  criterion("end_to_end_determinism", end_to_end_determinism);

  if (quick) {
    std::printf("ablations skipped (--quick)\n");
  } else {
    try {
      RunConfig cfg;
      cfg.load_file(cfg_path);
      std::fprintf(stderr, "ablations with %s\n", cfg_path.c_str());
      const std::vector<Variant> variants = {{"plain3d", model::Arch::Plain3d, cfg.get_int("model.kt")},
                                             {"tdcr", model::Arch::Tdcr, 5},
                                             {"full", model::Arch::Full, 5},
                                             {"tdcr_kt3", model::Arch::Tdcr, 3}};
      const auto t0 = Clock::now();
      const auto ap = run_ablation(cfg, variants, {0, 1, 2});
      const double minutes = seconds_since(t0) / 60;
      const double plain = median(ap[0]), tdcr = median(ap[1]), full = median(ap[2]), kt3 = median(ap[3]);
      report(full > tdcr && tdcr > plain && tdcr - plain >= 0.05 && minutes < 60, "architecture_ablation",
             fmt("median AP50 full %.4f > tdcr %.4f > plain3d %.4f, margin >= 0.05; ", full, tdcr, plain) +
                 fmt("%.1f min (< 60)", minutes));
      report(tdcr >= kt3, "temporal_kernel_ablation", fmt("median AP50 Kt=5 %.4f >= Kt=3 %.4f", tdcr, kt3));
    } catch (const std::exception& e) {
      report(false, "architecture_ablation", std::string("threw: ") + e.what());
      report(false, "temporal_kernel_ablation", "not run");
    }
  }
  std::printf("%s: %d failed\n", g_failed ? "FAIL" : "PASS", g_failed);
  return g_failed ? 1 : 0;
}
