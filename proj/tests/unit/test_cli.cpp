#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ccmt/evaluation.hpp"
#include "ccmt_tools/cli.hpp"
#include "synthetic.hpp"

using namespace ccmt;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome ccmt_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

const std::filesystem::path& mnist_dir() {
  static const auto dir = testing::synthetic_mnist_dir("cli_mnist", 96, 40);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("count-params") {
  auto r = ccmt_run({"count-params", "--variant", "ccmt", "--filters", "6,5,3"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out == "611\n");
  r = ccmt_run({"count-params", "--variant", "stc", "--filters", "4,4,3"});
  CHECK(r.out == "598\n");
  r = ccmt_run({"count-params", "--variant", "stc", "--filters", "4,4"});
  CHECK(r.code == cli::kExitValidation);
  r = ccmt_run({"count-params", "--variant", "cnn", "--filters", "4,4,3"});
  CHECK(r.code == cli::kExitValidation);
}

TEST_CASE("usage errors and help") {
  auto r = ccmt_run({});
  CHECK(r.code == cli::kExitValidation);
  r = ccmt_run({"train", "--frobnicate"});
  CHECK(r.code == cli::kExitValidation);
  CHECK(contains(r.err, "Usage"));
  r = ccmt_run({"--help"});
  CHECK(r.code == cli::kExitOk);
  CHECK(contains(r.out, "count-params"));
  r = ccmt_run({"train", "--config", "/nonexistent/run.json", "--out", "x.bundle"});
  CHECK(r.code == cli::kExitIo);
  CHECK(contains(r.err, "/nonexistent/run.json"));
  r = ccmt_run({"inspect", "--bundle", "/nonexistent/b.bundle"});
  CHECK(r.code == cli::kExitIo);
}

TEST_CASE("data directory resolution") {
  const auto dir = testing::scratch_dir("cli_nodata");
  testing::write_file(dir / "run.json", R"({"train": {"epochs": 1}})");
  const char* saved = std::getenv("CCMT_DATA_DIR");
  const std::string keep = saved ? saved : "";
  ::unsetenv("CCMT_DATA_DIR");
  auto r = ccmt_run({"train", "--config", (dir / "run.json").string(), "--out",
                     (dir / "b.bundle").string()});
  CHECK(r.code == cli::kExitValidation);
  CHECK(contains(r.err, "CCMT_DATA_DIR"));
  // an empty directory is an IO problem
  r = ccmt_run({"train", "--config", (dir / "run.json").string(), "--out",
                (dir / "b.bundle").string(), "--data-dir", dir.string()});
  CHECK(r.code == cli::kExitIo);
  ::setenv("CCMT_DATA_DIR", mnist_dir().c_str(), 1);
  r = ccmt_run({"train", "--config", (dir / "run.json").string(), "--out",
                (dir / "b.bundle").string(), "--quiet"});
  CHECK(r.code == cli::kExitOk);
  if (saved) {
    ::setenv("CCMT_DATA_DIR", keep.c_str(), 1);
  } else {
    ::unsetenv("CCMT_DATA_DIR");
  }
}

TEST_CASE("train, inspect and eval on synthetic IDX files") {
  const auto dir = testing::scratch_dir("cli_train");
  testing::write_file(dir / "run.json",
                      R"({"train": {"epochs": 2, "batch_size": 32, "seed": 5, "eval_limit": 20}})");
  const auto bundle = (dir / "model.bundle").string();
  auto r = ccmt_run({"train", "--config", (dir / "run.json").string(), "--out", bundle, "--log",
                     (dir / "log.csv").string(), "--data-dir", mnist_dir().string()});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(contains(r.out, "epoch 2 loss"));
  CHECK(std::filesystem::exists(bundle));
  CHECK(slurp(dir / "log.csv").rfind("epoch,loss,err_task1,err_task2,lr,snr_lo,snr_hi", 0) == 0);

  r = ccmt_run({"inspect", "--bundle", bundle});
  CHECK(r.code == cli::kExitOk);
  CHECK(contains(r.out, "arch ccmt(6,5,3)"));
  CHECK(contains(r.out, "cnn_params_per_node 611"));
  CHECK(contains(r.out, "seed 5"));
  CHECK(contains(r.out, "epochs 2"));

  r = ccmt_run({"eval", "--bundle", bundle, "--snr", "10", "--data-dir", mnist_dir().string()});
  CHECK(r.code == cli::kExitOk);
  CHECK(contains(r.out, "task1 error_rate "));
  CHECK(contains(r.out, "task2 error_rate "));
  const auto again =
      ccmt_run({"eval", "--bundle", bundle, "--snr", "10", "--data-dir", mnist_dir().string()});
  CHECK(again.out == r.out);
  r = ccmt_run({"eval", "--bundle", bundle, "--snr", "10", "--rotation", "--limit", "10",
                "--data-dir", mnist_dir().string()});
  CHECK(r.code == cli::kExitOk);

  std::ofstream(dir / "broken.bundle", std::ios::binary) << "not a bundle";
  r = ccmt_run({"inspect", "--bundle", (dir / "broken.bundle").string()});
  CHECK(r.code == cli::kExitIo);
}

TEST_CASE("multi-model training writes one bundle per band") {
  const auto dir = testing::scratch_dir("cli_bands");
  testing::write_file(dir / "run.json", R"({"train": {"epochs": 1, "batch_size": 48,
      "scenario": "multi_model", "bands": [[-6, -4], [9, 11]], "cu_pretrain_epochs": 1,
      "eval_every": 0}})");
  const auto r = ccmt_run({"train", "--config", (dir / "run.json").string(), "--out",
                           (dir / "m.bundle").string(), "--data-dir", mnist_dir().string(),
                           "--quiet"});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(std::filesystem::exists(dir / "m.band0.bundle"));
  CHECK(std::filesystem::exists(dir / "m.band1.bundle"));
  CHECK(contains(ccmt_run({"inspect", "--bundle", (dir / "m.band1.bundle").string()}).out,
                 "snr_band 9 11"));
}

TEST_CASE("sweep writes a parseable CSV") {
  const auto dir = testing::scratch_dir("cli_sweep");
  testing::write_file(dir / "sweep.json", R"({"kind": "over_params", "seeds": [1, 2],
      "architectures": ["ccmt:4,2,2", "stc:2,2,3"],
      "train": {"epochs": 1, "batch_size": 48, "cu_pretrain_epochs": 1}})");
  auto r = ccmt_run({"sweep", "--spec", (dir / "sweep.json").string(), "--out",
                     (dir / "out.csv").string(), "--data-dir", mnist_dir().string()});
  REQUIRE(r.code == cli::kExitOk);
  const auto records = parse_csv(slurp(dir / "out.csv"));
  // 2 archs x 2 seeds x 2 tasks, plus 4 means
  CHECK(records.size() == 12);
  r = ccmt_run({"sweep", "--spec", (dir / "sweep.json").string(), "--out",
                (dir / "no" / "out.csv").string(), "--data-dir", mnist_dir().string()});
  CHECK(r.code == cli::kExitIo);
  testing::write_file(dir / "bad.json", R"({"kind": "over_snr", "architectures": []})");
  r = ccmt_run({"sweep", "--spec", (dir / "bad.json").string(), "--out",
                (dir / "out.csv").string(), "--data-dir", mnist_dir().string()});
  CHECK(r.code == cli::kExitValidation);
}
