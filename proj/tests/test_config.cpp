// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "tdcnet/config.hpp"
#include "tdcnet/errors.hpp"

using namespace tdcnet;

namespace {

std::string error_of(const std::string& text) {
  RunConfig c;
  try {
    c.parse(text, "run.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("file values parse with comments and whitespace") {
  RunConfig c;
  c.parse(
      "# comment line\n"
      "\n"
      "model.arch = tdcr   # trailing comment\n"
      "  model.kt=3\n"
      "model.widths = 8, 16,32 ,64\n"
      "train.lr = 2.5e-4\n"
      "seed = 7\n");
  CHECK(c.get("model.arch") == "tdcr");
  CHECK(c.get_int("model.kt") == 3);
  CHECK(c.get_ints("model.widths") == std::vector<std::int64_t>{8, 16, 32, 64});
  CHECK(c.get_double("train.lr") == doctest::Approx(2.5e-4));
  CHECK(c.get_uint("seed") == 7);
  CHECK(c.source("model.kt") == Source::File);
  CHECK(c.source("model.heads") == Source::Default);

  const auto m = c.model();
  CHECK(m.arch == model::Arch::Tdcr);
  CHECK(m.kt == 3);
  CHECK(c.train().seed == 7);
  CHECK(c.scene().seed == 7);
}

TEST_CASE("flag beats file beats default regardless of order") {
  RunConfig c;
  c.set("model.kt", "7", Source::Flag);
  c.parse("model.kt = 3\ntrain.batch = 2\n");
  CHECK(c.get_int("model.kt") == 7);
  CHECK(c.source("model.kt") == Source::Flag);
  CHECK(c.get_int("train.batch") == 2);

  c.set("train.batch", "8", Source::Default);
  CHECK(c.get_int("train.batch") == 2);
  c.set("train.batch", "8", Source::Flag);
  CHECK(c.get_int("train.batch") == 8);
}

TEST_CASE("errors name the line") {
  CHECK(error_of("model.kt = 5\nbogus.key = 1\n").find("run.cfg:2") != std::string::npos);
  CHECK(error_of("model.kt = 5\nmodel.kt = five\n").find("run.cfg:2") != std::string::npos);
  CHECK(error_of("# c\n\nmodel.kt 5\n").find("run.cfg:3") != std::string::npos);
  CHECK(error_of("model.widths = 8,,16\n").find("run.cfg:1") != std::string::npos);
  CHECK(error_of("seed = -1\n").find("run.cfg:1") != std::string::npos);
  CHECK(error_of("model.kt = 5\n").empty());

  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1", Source::Flag), ConfigError);
  CHECK_THROWS_AS(c.get("nope"), ConfigError);
  CHECK_THROWS_AS(c.load_file("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("semantic validation happens when building typed configs") {
  RunConfig c;
  c.parse("model.kt = 4\n");
  CHECK_THROWS_AS(c.model(), ConfigError);

  RunConfig d;
  d.parse("model.arch = resnet\n");
  CHECK_THROWS(d.model());

  RunConfig e;
  e.parse("eval.nms_iou = 1.5\n");
  CHECK_THROWS_AS(e.eval(), ConfigError);
}

TEST_CASE("load_file and provenance in to_json") {
  const auto dir = std::filesystem::temp_directory_path() / "tdcnet_test_config";
  std::filesystem::create_directories(dir);
  const auto path = dir / "run.cfg";
  {
    std::ofstream out(path);
    out << "model.heads = 2\ndata.noise_sigma = 0.02\n";
  }
  RunConfig c;
  c.set("train.epochs", "3", Source::Flag);
  c.load_file(path);

  const auto j = c.to_json();
  CHECK(j["values"]["model.heads"] == 2);
  CHECK(j["values"]["data.noise_sigma"].get<double>() == doctest::Approx(0.02));
  CHECK(j["values"]["model.widths"] == nlohmann::json({16, 32, 64, 128}));
  CHECK(j["values"]["model.arch"] == "full");
  CHECK(j["provenance"]["model.heads"] == "file");
  CHECK(j["provenance"]["train.epochs"] == "flag");
  CHECK(j["provenance"]["train.lr"] == "default");
  CHECK(j["values"].size() == c.keys().size());
  std::filesystem::remove_all(dir);
}
