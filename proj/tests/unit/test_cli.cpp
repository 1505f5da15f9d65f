#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "platerec/cli.hpp"
#include "platerec/dataset.hpp"

using namespace platerec;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, '\t');) cells.push_back(cell);
  return cells;
}

// One shared small corpus and checkpoint for the whole file.
const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "platerec_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    const Run gen = cli({"generate", "--out", (d / "data").string(), "--count", "10", "--val", "2",
                         "--height", "30", "--width", "60", "--seed", "4"});
    REQUIRE(gen.code == 0);
    const Run tr = cli({"train", "--data", (d / "data").string(), "--out", (d / "m.ckpt").string(),
                        "--epochs", "1", "--batch-size", "4", "--quiet"});
    REQUIRE_MESSAGE(tr.code == 0, tr.err);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("generate reports the split counts") {
  const fs::path dir = workdir() / "gen";
  const Run r = cli({"generate", "--out", dir.string(), "--count", "10", "--val", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.find("train 8") != std::string::npos);
  CHECK(r.out.find("val 2") != std::string::npos);
  CHECK(read_manifest(dir).rows.size() == 10);
}

TEST_CASE("usage errors exit with status 1") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"generate"}).code == kExitUsage);
  CHECK(cli({"generate", "--out", (workdir() / "x").string(), "--count", "ten"}).code == kExitUsage);
  CHECK(cli({"train", "--data", (workdir() / "data").string(), "--out", "a.ckpt", "--variant",
             "lstm"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("unknown config keys are rejected") {
  const fs::path cfg = workdir() / "bad.cfg";
  std::ofstream(cfg) << "epochs = 1\nlearning_rate = 0.5\n";
  const Run r = cli({"train", "--config", cfg.string(), "--data", (workdir() / "data").string(),
                     "--out", (workdir() / "bad.ckpt").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("learning_rate") != std::string::npos);
}

TEST_CASE("train writes a log with the exact schedule") {
  const fs::path log = workdir() / "m.ckpt.log.tsv";
  REQUIRE(fs::exists(log));
  std::ifstream in(log);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(split_tabs(header)[1] == "lr");
  CHECK(std::stod(split_tabs(row)[1]) == 0.1 / 10.0);
}

TEST_CASE("eval writes the report files") {
  const fs::path out = workdir() / "report";
  const Run r = cli({"eval", "--data", (workdir() / "data").string(), "--ckpt",
                     (workdir() / "m.ckpt").string(), "--out", out.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("percentage_perfect") != std::string::npos);
  for (const char* name : {"metrics.tsv", "confusion.tsv", "confusion.pgm"}) CHECK(fs::exists(out / name));
}

TEST_CASE("missing checkpoint is named in the error") {
  const Run r = cli({"eval", "--data", (workdir() / "data").string(), "--ckpt",
                     (workdir() / "nowhere.ckpt").string(), "--out", (workdir() / "r2").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("nowhere.ckpt") != std::string::npos);
}

TEST_CASE("predict") {
  const Manifest m = read_manifest(workdir() / "data");
  const std::string image = (workdir() / "data" / m.rows[0].file).string();
  const std::string ckpt = (workdir() / "m.ckpt").string();

  const Run plain = cli({"predict", "--ckpt", ckpt, "--image", image});
  CHECK(plain.code == 0);
  const auto cells = split_tabs(plain.out.substr(0, plain.out.find('\n')));
  REQUIRE(cells.size() == 2);
  CHECK((cells[1] == "valid" || cells[1] == "invalid"));
  CHECK(cli({"predict", "--ckpt", ckpt, "--image", image}).out == plain.out);

  const Run dist = cli({"predict", "--ckpt", ckpt, "--image", image, "--show-dist"});
  CHECK(dist.code == 0);
  std::istringstream lines(dist.out);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto probs = split_tabs(line);
    REQUIRE(probs.size() == 36);
    double sum = 0;
    for (const auto& p : probs) sum += std::stod(p);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    ++rows;
  }
  CHECK(rows == 10);

  const fs::path wrong = workdir() / "wrong.pgm";
  write_pgm(wrong, Tensor<double>({1, 24, 48}, 0.5));
  const Run bad = cli({"predict", "--ckpt", ckpt, "--image", wrong.string()});
  CHECK(bad.code == kExitData);
  CHECK(bad.err.find("30x60") != std::string::npos);
}
