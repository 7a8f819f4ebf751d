#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "tgd/cli.hpp"
#include "tgd/mrc_io.hpp"
#include "tgd/score_model.hpp"
#include "tgd/target_bank.hpp"

using namespace tgd;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run tgd_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++n;
  return n;
}

const char* kSmallSpec =
    "canvas_height = 96\ncanvas_width = 96\nn_particles = 3\nmin_separation = 32\nparticle_size = 32\n"
    "volume_size = 32\nblob = 12 15 16 3 1\nblob = 20 17 15 2.5 0.6\n";

const char* kTinyConfig =
    "epochs = 3\nbatch_size = 2\nlr = 1e-3\nsigma_a_levels = 0.5\nwarmup_epochs = 1\nramp_end_epochs = 2\n"
    "patches_per_micrograph = 2\npatch_size = 16\nencoder_refresh_epochs = 2\nbase_width = 4\n";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(tgd_run({}).code == cli::kUsage);
  CHECK(tgd_run({"frobnicate"}).code == cli::kUsage);
  CHECK(tgd_run({"denoise", "--checkpoint", "a", "--in", "b", "--out", "c", "--iters", "0"}).code == cli::kUsage);
  CHECK(tgd_run({"--help"}).code == cli::kOk);
}

TEST_CASE("simulate") {
  test::TempDir dir("cli");
  write(dir / "spec.txt", kSmallSpec);
  SUBCASE("files and determinism") {
    REQUIRE(tgd_run({"simulate", "--spec", (dir / "spec.txt").string(), "--out", (dir / "a").string()}).code == 0);
    REQUIRE(tgd_run({"simulate", "--spec", (dir / "spec.txt").string(), "--out", (dir / "b").string()}).code == 0);
    for (const char* f : {"clean.mrc", "noisy.mrc", "coords.txt", "spec.txt", "volume.mrc"}) {
      CHECK(fs::exists(dir / "a" / f));
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    CHECK(count_lines(dir / "a" / "coords.txt") == 3);
  }
  SUBCASE("no particles gives a blank clean image") {
    write(dir / "empty.txt", std::string(kSmallSpec) + "n_particles = 0\n");
    REQUIRE(tgd_run({"simulate", "--spec", (dir / "empty.txt").string(), "--out", (dir / "e").string()}).code == 0);
    const Micrograph blank = read_micrograph(dir / "e" / "clean.mrc");
    for (double v : blank.data.values()) CHECK(v == 0.0);
    CHECK(count_lines(dir / "e" / "coords.txt") == 0);
  }
  SUBCASE("fifty particles give fifty coordinate lines") {
    write(dir / "fifty.txt", std::string(kSmallSpec) +
                                 "canvas_height = 1024\ncanvas_width = 1024\nn_particles = 50\nmin_separation = 40\n");
    REQUIRE(tgd_run({"simulate", "--spec", (dir / "fifty.txt").string(), "--out", (dir / "f").string()}).code == 0);
    CHECK(count_lines(dir / "f" / "coords.txt") == 50);
  }
  SUBCASE("several micrographs go to numbered folders") {
    REQUIRE(tgd_run({"simulate", "--spec", (dir / "spec.txt").string(), "--out", (dir / "m").string(), "--count",
                     "2"})
                .code == 0);
    CHECK(fs::exists(dir / "m" / "mg_000" / "noisy.mrc"));
    CHECK(fs::exists(dir / "m" / "mg_001" / "noisy.mrc"));
    CHECK(cli::discover_dataset(dir / "m").size() == 2);
  }
  SUBCASE("bad spec is a data error") {
    write(dir / "bad.txt", "blob = 1 2\n");
    CHECK(tgd_run({"simulate", "--spec", (dir / "bad.txt").string(), "--out", (dir / "x").string()}).code == cli::kData);
  }
}

TEST_CASE("build-targets") {
  test::TempDir dir("cli");
  write(dir / "spec.txt", kSmallSpec);
  REQUIRE(tgd_run({"simulate", "--spec", (dir / "spec.txt").string(), "--out", dir.path.string()}).code == 0);
  const auto vol = (dir / "volume.mrc").string();
  REQUIRE(tgd_run({"build-targets", vol, "--out", (dir / "a.bank").string(), "--views", "64", "--cutoff", "0.2"}).code ==
          0);
  REQUIRE(tgd_run({"build-targets", vol, "--out", (dir / "b.bank").string(), "--views", "64", "--cutoff", "0.2"}).code ==
          0);
  CHECK(load_bank(dir / "a.bank").size() == 64);
  CHECK(slurp(dir / "a.bank") == slurp(dir / "b.bank"));

  Volume sphere(32, 32, 32);
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        sphere.at(z, y, x) =
            std::exp(-((x - 16.0) * (x - 16) + (y - 16.0) * (y - 16) + (z - 16.0) * (z - 16)) / 18.0);
  write_mrc(sphere, dir / "sphere.mrc");
  const auto r = tgd_run({"build-targets", (dir / "sphere.mrc").string(), "--out", (dir / "s.bank").string(), "--views",
                          "24", "--cutoff", "0.2"});
  CHECK(r.code == cli::kData);
  CHECK(r.err.find("degenerate") != std::string::npos);
}

TEST_CASE("train, denoise, pick, evaluate") {
  test::TempDir dir("cli");
  write(dir / "spec.txt", kSmallSpec);
  write(dir / "tiny.cfg", kTinyConfig);
  const auto data = (dir / "data").string();
  REQUIRE(tgd_run({"simulate", "--spec", (dir / "spec.txt").string(), "--out", data, "--count", "2"}).code == 0);
  REQUIRE(tgd_run({"build-targets", (dir / "data" / "volume.mrc").string(), "--out", (dir / "t.bank").string(),
                   "--views", "16", "--cutoff", "0.2", "--size", "16"})
              .code == 0);
  const auto cfg = (dir / "tiny.cfg").string(), bank = (dir / "t.bank").string();

  SUBCASE("default schedule follows the three phases") {
    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--config", cfg, "--out", (dir / "r").string()}).code == 0);
    const auto rows = read_csv(dir / "r" / "metrics.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0][7] == "lambda");
    CHECK(std::stod(rows[1][7]) == 0.0);
    CHECK(std::stod(rows[2][7]) == 0.0);
    CHECK(std::stod(rows[3][7]) == 1.0);
    CHECK(fs::exists(dir / "r" / "final.tgdckpt"));
    CHECK(fs::exists(dir / "r" / "training.svg"));
    CHECK(fs::exists(dir / "r" / "config.txt"));
  }
  SUBCASE("dsm-only logs a zero TSM column") {
    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--config", cfg, "--out", (dir / "d").string(),
                     "--dsm-only"})
                .code == 0);
    const auto rows = read_csv(dir / "d" / "metrics.csv");
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][4]) == 0.0);
  }
  SUBCASE("no-anneal holds lambda at 1") {
    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--config", cfg, "--out", (dir / "n").string(),
                     "--no-anneal"})
                .code == 0);
    const auto rows = read_csv(dir / "n" / "metrics.csv");
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][7]) == 1.0);
  }
  SUBCASE("guided training without a bank is a usage error") {
    CHECK(tgd_run({"train", "--data", data, "--config", cfg, "--out", (dir / "x").string()}).code == cli::kUsage);
  }
  SUBCASE("training is reproducible through the CLI") {
    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--config", cfg, "--out", (dir / "p").string()}).code == 0);
    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--config", cfg, "--out", (dir / "q").string()}).code == 0);
    CHECK(slurp(dir / "p" / "metrics.csv") == slurp(dir / "q" / "metrics.csv"));
    CHECK(slurp(dir / "p" / "final.tgdckpt") == slurp(dir / "q" / "final.tgdckpt"));
  }
  SUBCASE("config from the environment") {
    ::setenv("TGD_CONFIG", cfg.c_str(), 1);
    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--out", (dir / "env").string(), "--dsm-only"}).code == 0);
    ::unsetenv("TGD_CONFIG");
    CHECK(read_csv(dir / "env" / "metrics.csv").size() == 4);
  }
  SUBCASE("denoise records its settings; a zero checkpoint returns the input") {
    ScoreModelConfig mc;
    mc.base_width = 4;
    mc.patch_size = 32;
    save_zero_checkpoint(dir / "zero.tgdckpt", mc);
    const auto in = (dir / "data" / "mg_000" / "noisy.mrc").string();
    REQUIRE(tgd_run({"denoise", "--checkpoint", (dir / "zero.tgdckpt").string(), "--in", in, "--out",
                     (dir / "dn.mrc").string()})
                .code == 0);
    CHECK(max_abs_diff(read_micrograph(dir / "dn.mrc").data, read_micrograph(in).data) < 1e-5);
    const auto h = read_mrc_header(dir / "dn.mrc");
    REQUIRE(!h.labels.empty());
    CHECK(h.labels.front().find("iters=5 a=0.5 b=0.01") != std::string::npos);

    REQUIRE(tgd_run({"train", "--data", data, "--bank", bank, "--config", cfg, "--out", (dir / "m").string()}).code == 0);
    CHECK(tgd_run({"denoise", "--checkpoint", (dir / "m" / "final.tgdckpt").string(), "--in", in, "--out",
                   (dir / "dm.mrc").string(), "--iters", "2"})
              .code == 0);
    CHECK(read_mrc_header(dir / "dm.mrc").labels.front().find("iters=2") != std::string::npos);
    CHECK(tgd_run({"denoise", "--checkpoint", (dir / "missing").string(), "--in", in, "--out",
                   (dir / "z.mrc").string()})
              .code == cli::kData);
  }
  SUBCASE("evaluate") {
    const auto gt = (dir / "data" / "mg_000" / "coords.txt").string();
    auto r = tgd_run({"evaluate", "--pred", gt, "--gt", gt, "--out", (dir / "m.csv").string(), "--plot",
                      (dir / "m.svg").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("F1=1") != std::string::npos);
    CHECK(fs::exists(dir / "m.svg"));
    const auto rows = read_csv(dir / "m.csv");
    REQUIRE(rows.size() == 2);
    write(dir / "empty.txt", "");
    r = tgd_run({"evaluate", "--pred", (dir / "empty.txt").string(), "--gt", gt});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("F1=0 ") != std::string::npos);
  }
  SUBCASE("pick writes coordinates") {
    const auto clean = (dir / "data" / "mg_000" / "clean.mrc").string();
    REQUIRE(tgd_run({"pick", "--in", clean, "--out", (dir / "p.txt").string(), "--radius", "8"}).code == 0);
    CHECK(count_lines(dir / "p.txt") >= 1);
  }
}

TEST_CASE("fsc") {
  test::TempDir dir("cli");
  Volume v = Volume(16, 16, 16);
  const Image noise = test::random_image(16, 256, 3);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(noise[i]);
  Volume neg = v;
  for (auto& x : neg.data) x = -x;
  write_mrc(v, dir / "v.mrc");
  write_mrc(neg, dir / "n.mrc");
  auto r = tgd_run({"fsc", (dir / "v.mrc").string(), (dir / "v.mrc").string(), "--out", (dir / "f.csv").string(),
                    "--plot", (dir / "f.svg").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Nyquist") != std::string::npos);
  for (std::size_t i = 1; const auto& row : read_csv(dir / "f.csv")) {
    if (i++ == 1) continue;
    CHECK(std::stod(row[1]) == doctest::Approx(1.0));
  }
  CHECK(slurp(dir / "f.svg").find("0.143") != std::string::npos);
  REQUIRE(tgd_run({"fsc", (dir / "v.mrc").string(), (dir / "n.mrc").string(), "--out", (dir / "g.csv").string()}).code ==
          0);
  const auto rows = read_csv(dir / "g.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][1]) == doctest::Approx(-1.0));
}

TEST_CASE("the installed binary maps errors to exit codes") {
  const std::string bin = TGD_CLI_PATH;
  CHECK(WEXITSTATUS(std::system((bin + " > /dev/null 2>&1").c_str())) == 1);
  CHECK(WEXITSTATUS(std::system((bin + " pick --in /nonexistent.mrc --out /tmp/x.txt > /dev/null 2>&1").c_str())) == 2);
  CHECK(WEXITSTATUS(std::system((bin + " --help > /dev/null 2>&1").c_str())) == 0);
}
