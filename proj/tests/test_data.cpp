// SPDX-License-Identifier: Apache-2.0
#include <openssl/sha.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "tdcnet/data.hpp"
#include "tdcnet/errors.hpp"

using namespace tdcnet;
using namespace tdcnet::data;
namespace fs = std::filesystem;

namespace {

// Local SCR straight from the definition: peak at the nearest pixel to the box
// centre, statistics over the 3x box window minus all box interiors.
double scr_oracle(const Tensor& img, const Box& b, const std::vector<Box>& all) {
  const std::int64_t H = img.dim(0), W = img.dim(1);
  const double cx = b.x + b.w / 2, cy = b.y + b.h / 2;
  std::vector<double> vals;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      if (std::abs(x - cx) > 1.5 * b.w || std::abs(y - cy) > 1.5 * b.h) continue;
      bool covered = false;
      for (const auto& o : all) covered |= x >= o.x && x <= o.x + o.w && y >= o.y && y <= o.y + o.h;
      if (!covered) vals.push_back(img.at({y, x}));
    }
  double mean = 0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double var = 0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= static_cast<double>(vals.size());
  const double peak = img.at({static_cast<std::int64_t>(std::lround(cy)), static_cast<std::int64_t>(std::lround(cx))});
  return std::abs(peak - mean) / std::sqrt(var);
}

// Smooth random canvas: a sum of broad Gaussian bumps and a ramp.
Tensor smooth_canvas(std::int64_t h, std::int64_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(Shape{h, w});
  for (int k = 0; k < 30; ++k) {
    const double cy = u(rng) * h, cx = u(rng) * w, s = 3 + 10 * u(rng), a = u(rng) - 0.3;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        t[y * w + x] += a * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * s * s));
  }
  return t;
}

Tensor crop(const Tensor& c, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  Tensor out(Shape{h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) out[y * w + x] = c.at({y0 + y, x0 + x});
  return out;
}

std::string sha256_tree(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  SHA256_CTX ctx;
  SHA256_Init(&ctx);
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, root).string();
    SHA256_Update(&ctx, rel.data(), rel.size());
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string body = ss.str();
    SHA256_Update(&ctx, body.data(), body.size());
  }
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256_Final(md, &ctx);
  std::string hex;
  char buf[3];
  for (unsigned char c : md) {
    std::snprintf(buf, sizeof buf, "%02x", c);
    hex += buf;
  }
  return hex;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tdcnet_test_data_" + name);
  fs::remove_all(p);
  return p;
}

SceneConfig small_scene() {
  SceneConfig c;
  c.height = c.width = 64;
  c.frames = 12;
  c.size_min = 2;
  c.size_max = 4;
  c.jitter = 2;
  return c;
}

}  // namespace

TEST_CASE("scene config validation rejects out-of-range values") {
  SceneConfig c;
  CHECK_NOTHROW(c.validate());
  c.size_min = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SceneConfig{};
  c.scr_min = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SceneConfig{};
  c.jitter = 16;  // 16 * 8 == 128
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.jitter = 15;
  CHECK_NOTHROW(c.validate());
  CHECK(SceneConfig::from_json(SceneConfig{}.to_json()).to_json() == SceneConfig{}.to_json());
}

TEST_CASE("generation is deterministic per seed and id") {
  const SceneConfig c = small_scene();
  const Sequence a = generate_sequence(c, 3), b = generate_sequence(c, 3);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    CHECK(a.frames[f].storage() == b.frames[f].storage());
    REQUIRE(a.boxes[f].size() == b.boxes[f].size());
    for (std::size_t i = 0; i < a.boxes[f].size(); ++i) CHECK(a.boxes[f][i].x == b.boxes[f][i].x);
  }
  const Sequence other = generate_sequence(c, 4);
  CHECK(other.frames[0].storage() != a.frames[0].storage());
  SceneConfig c2 = c;
  c2.seed = 1;
  CHECK(generate_sequence(c2, 3).frames[0].storage() != a.frames[0].storage());
}

TEST_CASE("zero targets yields empty annotations") {
  SceneConfig c = small_scene();
  c.targets = 0;
  const Sequence s = generate_sequence(c);
  CHECK(s.frames.size() == 12);
  for (const auto& b : s.boxes) CHECK(b.empty());
}

TEST_CASE("every rendered target meets its SCR range and stays inside the image") {
  SceneConfig c;
  c.frames = 40;
  c.targets = 3;
  for (std::int64_t id = 0; id < 4; ++id) {
    const Sequence s = generate_sequence(c, id);
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      const auto& boxes = s.boxes[f];
      REQUIRE(boxes.size() == 3);
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        const Box& b = boxes[i];
        CHECK(b.x >= 0);
        CHECK(b.y >= 0);
        CHECK(b.x + b.w <= c.width - 1);
        CHECK(b.y + b.h <= c.height - 1);
        CHECK(b.w >= 2 * c.size_min);
        CHECK(b.w <= 2 * c.size_max);
        const double m = scr_oracle(s.frames[f], b, boxes);
        CHECK(m >= c.scr_min - 1e-9);
        CHECK(m <= c.scr_max + 1e-9);
        CHECK(m == doctest::Approx(s.scr[f][i]).epsilon(1e-9));
        std::vector<Box> others = boxes;
        others.erase(others.begin() + static_cast<std::ptrdiff_t>(i));
        CHECK(measure_scr(s.frames[f], b, others) == doctest::Approx(m).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("unplaceable targets raise GenerationError") {
  SceneConfig c;
  c.height = c.width = 32;
  c.jitter = 1;
  c.size_min = c.size_max = 6;
  c.targets = 6;
  CHECK_THROWS_AS(generate_sequence(c), GenerationError);
}

TEST_CASE("alignment recovers 100 injected shifts within 8 px exactly") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> d(-8, 8);
  const std::int64_t H = 64, W = 64, J = 8;
  int recovered = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor canvas = smooth_canvas(H + 2 * J, W + 2 * J, rng);
    const int dy = d(rng), dx = d(rng);
    const Tensor ref = crop(canvas, J, J, H, W);
    const Tensor moved = crop(canvas, J + dy, J + dx, H, W);
    const AlignResult a = align_background({moved, ref}, 8);
    // moved(y, x) = ref(y - dy, x - dx), so aligning it needs (-dy, -dx).
    recovered += a.shifts[0].dy == -dy && a.shifts[0].dx == -dx;
    CHECK(a.shifts[1].dy == 0);
    CHECK(a.shifts[1].dx == 0);
  }
  CHECK(recovered == 100);
}

TEST_CASE("alignment leaves unjittered frames unchanged") {
  SceneConfig c = small_scene();
  c.jitter = 0;
  c.clutter_blobs = 0;
  c.noise_sigma = 0;
  c.targets = 0;
  const Sequence s = generate_sequence(c);
  const AlignResult a = align_background({s.frames[0], s.frames[1], s.frames[2]}, 4);
  for (std::size_t f = 0; f < 3; ++f) {
    CHECK(a.shifts[f].dy == 0);
    CHECK(a.shifts[f].dx == 0);
    CHECK(a.frames[f].storage() == s.frames[f].storage());
    CHECK_FALSE(a.at_boundary[f]);
  }
}

TEST_CASE("shifts beyond the search window clamp to the boundary and are flagged") {
  std::mt19937_64 rng(11);
  const Tensor canvas = smooth_canvas(96, 96, rng);
  const Tensor ref = crop(canvas, 16, 16, 64, 64);
  const Tensor moved = crop(canvas, 16 + 12, 16, 64, 64);
  const AlignResult a = align_background({moved, ref}, 4);
  CHECK(a.shifts[0].dy == -4);
  CHECK(a.at_boundary[0]);
  CHECK_FALSE(a.at_boundary[1]);
}

TEST_CASE("constant frames keep a zero shift and are flagged degenerate") {
  std::mt19937_64 rng(3);
  const Tensor ref = smooth_canvas(32, 32, rng);
  const Tensor flat(Shape{32, 32}, 0.5);
  const AlignResult a = align_background({flat, ref}, 3);
  CHECK(a.shifts[0].dy == 0);
  CHECK(a.shifts[0].dx == 0);
  CHECK(a.degenerate[0]);
  CHECK_FALSE(a.degenerate[1]);
  CHECK_THROWS_AS(align_background({}, 3), UsageError);
}

TEST_CASE("shift_frame replicates borders") {
  Tensor f(Shape{3, 3});
  for (int i = 0; i < 9; ++i) f[i] = i;
  const Tensor s = shift_frame(f, {1, -1});
  // out(y, x) = f(clamp(y + 1), clamp(x - 1))
  const std::vector<double> expect{3, 3, 4, 6, 6, 7, 6, 6, 7};
  CHECK(s.storage() == expect);
}

TEST_CASE("dataset split is a deterministic 8:2 partition of whole segments") {
  SceneConfig c = small_scene();
  c.frames = 23;
  std::vector<std::shared_ptr<const Sequence>> seqs;
  for (int i = 0; i < 5; ++i) seqs.push_back(std::make_shared<Sequence>(generate_sequence(c, i)));
  const auto [train, val] = dataset_split(seqs, 10, 0.8, 5);
  CHECK(train.size() == 8);  // 5 sequences x 2 full segments, tail of 3 dropped
  CHECK(val.size() == 2);
  std::set<std::int64_t> ids;
  for (const auto& s : train) ids.insert(s.id);
  for (const auto& s : val) {
    CHECK(ids.count(s.id) == 0);
    ids.insert(s.id);
  }
  CHECK(ids.size() == 10);
  const auto again = dataset_split(seqs, 10, 0.8, 5);
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(again.first[i].id == train[i].id);
  CHECK_THROWS_AS(dataset_split(seqs, 50, 0.8, 0), UsageError);
  CHECK_THROWS_AS(dataset_split({}, 10, 0.8, 0), UsageError);
}

TEST_CASE("clips replicate the first segment frame and end at the current frame") {
  SceneConfig c = small_scene();
  c.frames = 20;
  auto seq = std::make_shared<Sequence>(generate_sequence(c, 1));
  const Segment seg{seq, 10, 10, 0};
  const ClipSample first = make_clip(seg, 0, 5, -1);
  CHECK(first.frames.shape() == Shape{5, 1, 64, 64});
  CHECK(first.source_frames == std::vector<std::int64_t>{10, 10, 10, 10, 10});
  const ClipSample mid = make_clip(seg, 2, 5, -1);
  CHECK(mid.source_frames == std::vector<std::int64_t>{10, 10, 10, 11, 12});
  CHECK(mid.frame == 12);
  CHECK(mid.boxes.size() == seq->boxes[12].size());
  for (std::int64_t p = 0; p < 64 * 64; ++p) CHECK(mid.frames[4 * 64 * 64 + p] == seq->frames[12][p]);
  const ClipSample aligned = make_clip(seg, 6, 5, 4);
  CHECK(aligned.shifts.back().dy == 0);
  for (std::int64_t p = 0; p < 64 * 64; ++p) CHECK(aligned.frames[4 * 64 * 64 + p] == seq->frames[16][p]);
  CHECK(iterate_clips({seg}, 5).size() == 10);
  CHECK_THROWS_AS(make_clip(seg, 10, 5, -1), UsageError);
}

TEST_CASE("alignment undoes camera jitter of the generator") {
  SceneConfig c = small_scene();
  c.clutter_blobs = 0;
  c.noise_sigma = 0;
  c.targets = 0;
  const Sequence s = generate_sequence(c);
  const AlignResult a = align_background(s.frames, 2 * static_cast<int>(c.jitter));
  const Shift last = s.camera.back();
  for (std::size_t f = 0; f < s.frames.size(); ++f) {
    CHECK(a.shifts[f].dy == last.dy - s.camera[f].dy);
    CHECK(a.shifts[f].dx == last.dx - s.camera[f].dx);
  }
}

TEST_CASE("PNG roundtrip at 8 and 16 bits") {
  const fs::path dir = temp_dir("png");
  fs::create_directories(dir);
  std::mt19937_64 rng(1);
  const Tensor img = Tensor::uniform(Shape{7, 9}, rng, 0.0, 1.0);
  write_png(dir / "a8.png", img, 8);
  write_png(dir / "a16.png", img, 16);
  const Tensor r8 = read_png(dir / "a8.png"), r16 = read_png(dir / "a16.png");
  CHECK(r8.shape() == Shape{7, 9});
  CHECK(r8.storage() == quantize8(img).storage());
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    CHECK(std::abs(r8[i] - img[i]) <= 0.5 / 255 + 1e-12);
    CHECK(std::abs(r16[i] - img[i]) <= 0.5 / 65535 + 1e-12);
  }
  CHECK_THROWS(read_png(dir / "missing.png"));
  fs::remove_all(dir);
}

TEST_CASE("dataset write/read roundtrip and byte-identical regeneration") {
  SceneConfig c = small_scene();
  c.frames = 6;
  std::vector<Sequence> seqs{generate_sequence(c, 0), generate_sequence(c, 1)};
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  const DatasetStats st = write_dataset(a, seqs, {{"scene", c.to_json()}});
  CHECK(st.sequences == 2);
  CHECK(st.frames == 12);
  CHECK(st.boxes == 24);
  CHECK(fs::exists(a / "seq_001" / "frames" / "000005.png"));
  CHECK(fs::exists(a / "seq_000" / "annotations.jsonl"));
  CHECK(fs::exists(a / "dataset.json"));

  std::vector<Sequence> again{generate_sequence(c, 0), generate_sequence(c, 1)};
  write_dataset(b, again, {{"scene", c.to_json()}});
  CHECK(sha256_tree(a) == sha256_tree(b));

  const auto loaded = read_dataset(a);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1]->id == 1);
  REQUIRE(loaded[0]->frames.size() == 6);
  for (std::size_t f = 0; f < 6; ++f) {
    CHECK(loaded[0]->frames[f].storage() == quantize8(seqs[0].frames[f]).storage());
    REQUIRE(loaded[0]->boxes[f].size() == seqs[0].boxes[f].size());
    for (std::size_t i = 0; i < seqs[0].boxes[f].size(); ++i) {
      CHECK(loaded[0]->boxes[f][i].x == seqs[0].boxes[f][i].x);
      CHECK(loaded[0]->boxes[f][i].h == seqs[0].boxes[f][i].h);
    }
  }
  CHECK_THROWS_AS(read_dataset(a / "nowhere"), UsageError);
  fs::remove_all(a);
  fs::remove_all(b);
}
