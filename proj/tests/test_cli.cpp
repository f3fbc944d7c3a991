#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hgn/cli.hpp"
#include "hgn/eval.hpp"
#include "hgn/io.hpp"
#include "hgn/rng.hpp"

namespace fs = std::filesystem;
using namespace hgn;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result hgn_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hgn_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

// 100 users x 200 items, each user 10 items, each item exactly 5 users.
void write_cyclic(const fs::path& p) {
  std::ofstream o(p);
  for (int u = 0; u < 100; ++u) {
    for (int j = 0; j < 10; ++j) o << "u" << u << ",i" << (2 * u + j) % 200 << ",5," << j << "\n";
  }
}

// A small sequential dataset shared by the train/ablate/sweep cases.
std::string prepared_bundle(const TempDir& dir) {
  REQUIRE(hgn_run({"generate", "--output", dir / "r.csv", "--users", "60", "--items", "50",
                   "--min-len", "15", "--max-len", "30", "--topics", "5"})
              .code == 0);
  REQUIRE(hgn_run({"prepare", "--input", dir / "r.csv", "--out", dir / "prep"}).code == 0);
  return dir / "prep/bundle.hgnb";
}

}  // namespace

TEST_CASE("paramcount prints the gating total") {
  const auto r = hgn_run({"paramcount"});
  CHECK(r.code == 0);
  CHECK(r.out.find("gating total: 5,350") != std::string::npos);
  const auto b = hgn_run({"paramcount", "--variant", "BPR"});
  CHECK(b.out.find("gating total: 0") != std::string::npos);
}

TEST_CASE("gradcheck passes and a corrupted tensor fails by name") {
  const auto ok = hgn_run({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  CHECK(ok.out.find("PASS HGN+max") != std::string::npos);
  const auto bad = hgn_run({"gradcheck", "--variant", "HGN", "--corrupt", "w_g3"});
  CHECK(bad.code == cli::kExitRuntime);
  CHECK(bad.out.find("w_g3  FAIL") != std::string::npos);
}

TEST_CASE("usage errors exit with the validation code") {
  CHECK(hgn_run({}).code == cli::kExitValidation);
  CHECK(hgn_run({"train", "--bogus", "1"}).code == cli::kExitValidation);
  CHECK(hgn_run({"train", "--lr", "abc", "--out", "x"}).code == cli::kExitValidation);
  CHECK(hgn_run({"paramcount", "--variant", "HGN+Z"}).code == cli::kExitValidation);
  TempDir dir("usage");
  std::ofstream(dir / "c.txt") << "d=8\nnot_a_key=3\n";
  const auto r = hgn_run({"train", "--config", dir / "c.txt"});
  CHECK(r.code == cli::kExitValidation);
  CHECK(r.err.find("not_a_key") != std::string::npos);
  CHECK(hgn_run({"prepare", "--input", dir / "missing.csv", "--out", dir / "p"}).code == cli::kExitRuntime);
}

TEST_CASE("prepare is deterministic and reports density") {
  TempDir dir("prepare");
  write_cyclic(dir.path / "r.csv");
  const auto a = hgn_run({"prepare", "--input", dir / "r.csv", "--out", dir / "a"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("5.000%") != std::string::npos);
  CHECK(a.out.find("1000") != std::string::npos);
  REQUIRE(hgn_run({"prepare", "--input", dir / "r.csv", "--out", dir / "b"}).code == 0);
  CHECK(slurp(dir.path / "a/bundle.hgnb") == slurp(dir.path / "b/bundle.hgnb"));
  CHECK(slurp(dir.path / "a/stats.json").find("\"users\": 100") != std::string::npos);
}

TEST_CASE("train, evaluate and re-run from the written config") {
  TempDir dir("train");
  const auto bundle = prepared_bundle(dir);

  const auto zero = hgn_run({"train", "--bundle", bundle, "--out", dir / "t0", "--epochs", "0",
                             "--d", "8", "--seed", "4"});
  REQUIRE(zero.code == 0);
  const auto init = load_checkpoint(dir / "t0/checkpoint.hgnc");
  CHECK(init.epochs == 0);
  CHECK(init.params == ModelParams::random(init.params.dims(), derive_seed(4, 0x1000)));

  const auto r = hgn_run({"train", "--bundle", bundle, "--out", dir / "t1", "--epochs", "3", "--d",
                          "8", "--checkpoint_every", "2", "--validate_every", "3", "--ks", "5,10"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("config: d=8 L=5 T=3", 0) == 0);
  CHECK(count_lines(slurp(dir.path / "t1/train_log.txt")) == 4);
  CHECK(fs::exists(dir.path / "t1/checkpoint_epoch2.hgnc"));
  CHECK(r.out.find("val_recall@10=") != std::string::npos);

  // The saved config reproduces the run byte for byte.
  const auto again = hgn_run({"train", "--config", dir / "t1/config.txt", "--out", dir / "t2"});
  REQUIRE(again.code == 0);
  CHECK(slurp(dir.path / "t1/checkpoint.hgnc") == slurp(dir.path / "t2/checkpoint.hgnc"));

  const auto e = hgn_run({"evaluate", "--bundle", bundle, "--checkpoint", dir / "t1/checkpoint.hgnc",
                          "--out", dir / "ev", "--ks", "5,10"});
  REQUIRE(e.code == 0);
  const auto rep = MetricReport::from_json(slurp(dir.path / "ev/metrics.json"));
  CHECK(rep.ks == std::vector<std::size_t>{5, 10});
  CHECK(rep.users_evaluated > 0);
  CHECK(e.out.find("variant: HGN") != std::string::npos);

  CHECK(hgn_run({"evaluate", "--bundle", bundle}).code == cli::kExitValidation);
}

TEST_CASE("ablate writes the eight table rows; sweep writes its grid") {
  TempDir dir("ablate");
  const auto bundle = prepared_bundle(dir);
  const auto a = hgn_run({"ablate", "--bundle", bundle, "--out", dir / "ab", "--epochs", "1", "--d", "4",
                          "--ks", "10"});
  REQUIRE(a.code == 0);
  const auto tsv = slurp(dir.path / "ab/ablation.tsv");
  CHECK(count_lines(tsv) == 9);
  CHECK(tsv.find("(10)\tHGN\t1\t") != std::string::npos);
  CHECK(a.out.find("(6)") != std::string::npos);

  const auto s = hgn_run({"sweep", "--axis", "LT", "--bundle", bundle, "--out", dir / "sw", "--epochs",
                          "1", "--d", "4", "--ks", "10"});
  REQUIRE(s.code == 0);
  const auto grid = slurp(dir.path / "sw/sweep_LT.tsv");
  CHECK(count_lines(grid) == 10);
  CHECK(grid.find("\n8\t3\t1\t") != std::string::npos);
  CHECK(hgn_run({"sweep", "--axis", "x", "--bundle", bundle, "--out", dir / "sw"}).code ==
        cli::kExitValidation);
}
