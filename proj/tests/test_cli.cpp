#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "t2i/checkpoint.hpp"
#include "t2i/cli.hpp"

using namespace t2i;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("t2i_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTinyConfig = R"({
  "seed": 3,
  "dataset": {"count": 64},
  "pretrain": {"epochs": 1},
  "train": {"steps": 4, "checkpoint_interval": 2, "timesteps": 10},
  "sample": {"max_items": 4},
  "ablate": {"axis": "struct_weight", "values": [0, 1], "step_fraction": 0.5, "eval_items": 2}
})";

}  // namespace

TEST_CASE("help and usage errors") {
  const Run top = run({"--help"});
  CHECK(top.code == kExitOk);
  CHECK(top.out.find("gradcheck") != std::string::npos);

  for (const char* sub : {"dataset", "pretrain", "train", "sample", "eval", "ablate", "gradcheck"}) {
    const Run r = run({sub, "--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("--config") != std::string::npos);
  }
  CHECK(run({"train", "--help"}).out.find("--steps") != std::string::npos);

  CHECK(run({"paint"}).code == kExitUsage);
  CHECK(run({}).code == kExitUsage);
  const Run bad_flag = run({"train", "--bogus"});
  CHECK(bad_flag.code == kExitUsage);
  CHECK(bad_flag.err.find("Usage") != std::string::npos);
}

TEST_CASE("configuration and runtime failures map to exit codes") {
  const fs::path dir = fresh_dir("errors");
  write_text_file(dir / "bad.json", R"({"train": {"stepz": 1}})");
  CHECK(run({"dataset", "--workdir", dir.string(), "--config", (dir / "bad.json").string()}).code == kExitUsage);
  CHECK(run({"dataset", "--workdir", dir.string(), "--config", (dir / "none.json").string()}).code == kExitUsage);
  const Run missing = run({"train", "--workdir", dir.string()});
  CHECK(missing.code == kExitRuntime);
  CHECK_FALSE(missing.err.empty());
  fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand") {
  const Run r = run({"gradcheck", "--component", "identity", "--json"});
  CHECK(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["components"].size() == 1);
  CHECK(j["components"][0]["passed"].get<bool>());
  const Run zero = run({"gradcheck", "--component", "identity", "--tolerance", "0", "--json"});
  CHECK(zero.code == kExitOk);
  CHECK_FALSE(nlohmann::json::parse(zero.out)["components"][0]["passed"].get<bool>());
}

TEST_CASE("full pipeline on a tiny configuration") {
  const fs::path dir = fresh_dir("pipeline");
  write_text_file(dir / "cfg.json", kTinyConfig);
  const std::vector<std::string> common{"--workdir", dir.string(), "--config", (dir / "cfg.json").string()};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return run(a);
  };

  REQUIRE(with({"dataset"}).code == kExitOk);
  CHECK(fs::exists(dir / "corpus" / "manifest.json"));
  CHECK(with({"dataset"}).code == kExitRuntime);
  CHECK(with({"dataset", "--overwrite"}).code == kExitOk);

  REQUIRE(with({"pretrain"}).code == kExitOk);
  CHECK(fs::exists(dir / "semantic" / "encoder.bin"));

  REQUIRE(with({"train"}).code == kExitOk);
  CHECK(fs::exists(dir / "train" / "final.bin"));
  CHECK(fs::exists(dir / "train" / "ckpt_000002.bin"));
  CHECK(fs::exists(dir / "train" / "ckpt_000002.json"));
  const std::string csv = read_text_file(dir / "train" / "loss.csv");
  CHECK(csv.rfind("step,l_clip,l_struct,l_sem,l_denoise,l_total\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  REQUIRE(with({"sample"}).code == kExitOk);
  REQUIRE(with({"sample", "--blank-prior"}).code == kExitOk);
  CHECK(fs::exists(dir / "samples" / "000009.ppm"));
  CHECK(fs::exists(dir / "samples" / "000009.json"));
  CHECK(fs::exists(dir / "samples_blank" / "000009.ppm"));

  const Run ev = with({"eval", "--json"});
  REQUIRE(ev.code == kExitOk);
  const auto report = nlohmann::json::parse(ev.out);
  CHECK(report["n_items"] == 4);
  CHECK(report.contains("clip_score"));
  CHECK(report["fid_label"] == "FID (internal feature space)");
  CHECK(fs::exists(dir / "eval" / "report.json"));
  CHECK(fs::exists(dir / "eval" / "items.csv"));

  const Run abl = with({"ablate"});
  REQUIRE(abl.code == kExitOk);
  const std::string rows = read_text_file(dir / "ablate" / "struct_weight.csv");
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 3);
  fs::remove_all(dir);
}
