#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "tgd/errors.hpp"
#include "tgd/trainer.hpp"

using namespace tgd;

namespace {

std::vector<Micrograph> toy_data(int n, int size, std::uint64_t seed) {
  std::vector<Micrograph> out;
  for (int k = 0; k < n; ++k) out.push_back(Micrograph{test::random_image(size, size, seed + k), 1.0, {0, 0}, ""});
  return out;
}

TargetBank toy_bank(int size) {
  std::vector<Patch> raw;
  for (int k = 0; k < 6; ++k) raw.push_back(test::random_image(size, size, 100 + k));
  return assemble_bank(std::move(raw), block_average_feature_map(8), BankConfig{});
}

TrainingSchedule toy_schedule() {
  TrainingSchedule s;
  s.epochs = 4;
  s.batch_size = 2;
  s.lr = 1e-3;
  s.sigma_a_levels = {0.5, 0.2};
  s.warmup_epochs = 1;
  s.ramp_end_epochs = 2;
  s.patches_per_micrograph = 2;
  s.patch_size = 16;
  s.encoder_refresh_epochs = 2;
  s.seed = 3;
  return s;
}

ScoreModelConfig toy_model() {
  ScoreModelConfig c;
  c.base_width = 4;
  c.channel_multipliers = {1, 2};
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("lambda schedule") {
  TrainingSchedule s;
  CHECK(lambda_schedule(0, s) == 0.0);
  CHECK(lambda_schedule(19, s) == 0.0);
  CHECK(lambda_schedule(40, s) == 0.5);
  CHECK(lambda_schedule(60, s) == 1.0);
  CHECK(lambda_schedule(99, s) == 1.0);
  double prev = 0.0;
  for (int e = 0; e < s.epochs; ++e) {
    CHECK(lambda_schedule(e, s) >= prev);
    prev = lambda_schedule(e, s);
  }
  s.warmup_epochs = s.ramp_end_epochs = 30;
  CHECK(lambda_schedule(29, s) == 0.0);
  CHECK(lambda_schedule(30, s) == 1.0);
  s.disable_annealing();
  CHECK(lambda_schedule(0, s) == 1.0);
  s.dsm_only = true;
  CHECK(lambda_schedule(50, s) == 0.0);
}

TEST_CASE("sigma_a schedule") {
  TrainingSchedule s;
  CHECK(sigma_a_schedule(0, s) == 0.2);
  CHECK(sigma_a_schedule(99, s) == 1e-6);
  for (int level = 0; level < 5; ++level)
    for (int e = 20 * level; e < 20 * level + 20; ++e) CHECK(sigma_a_schedule(e, s) == s.sigma_a_levels[level]);
}

TEST_CASE("learning rate decays once") {
  TrainingSchedule s;
  CHECK(learning_rate(0, s) == 5e-5);
  CHECK(learning_rate(3999, s) == 5e-5);
  CHECK(learning_rate(4000, s) == doctest::Approx(5e-6));
}

TEST_CASE("schedule validation and config parsing") {
  TrainingSchedule s;
  s.warmup_epochs = 70;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.sigma_a_levels = {0.1, 0.2};
  CHECK_THROWS_AS(s.validate(), ParameterError);

  const auto p = parse_schedule("# toy\nepochs = 12\nlr = 1e-3\nsigma_a_levels = 0.4, 0.1\nno_anneal = true\n");
  CHECK(p.epochs == 12);
  CHECK(p.lr == 1e-3);
  CHECK(p.sigma_a_levels == std::vector<double>{0.4, 0.1});
  CHECK(p.warmup_epochs == 0);
  CHECK(p.ramp_end_epochs == 0);
  CHECK_THROWS_AS(parse_schedule("bogus = 1\n"), ParameterError);
  CHECK_THROWS_AS(parse_schedule("epochs = ten\n"), ParameterError);
  CHECK_THROWS_AS(parse_schedule("epochs\n"), ParameterError);
}

TEST_CASE("sample_patches") {
  const auto data = toy_data(1, 64, 1);
  const auto a = sample_patches_with_stats(data, 32, 16, 9);
  CHECK(a.size() == 32);
  const auto b = sample_patches_with_stats(data, 32, 16, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].y0 == b[i].y0);
    CHECK(a[i].x0 == b[i].x0);
    CHECK(a[i].y0 + 16 <= 64);
    CHECK(std::abs(mean(a[i].patch.values())) < 1e-12);
    CHECK(stddev(a[i].patch.values()) == doctest::Approx(1.0));
    const Patch back = unstandardize(a[i].patch, a[i].mean, a[i].std);
    CHECK(max_abs_diff(back, data[0].data.crop(a[i].y0, a[i].x0, 16, 16)) < 1e-12);
  }
  const std::vector<Micrograph> flat{Micrograph{Image(32, 32, 5.0), 1.0, {0, 0}, ""}};
  for (const auto& p : sample_patches(flat, 4, 16, 2))
    for (double v : p.values()) CHECK(v == 0.0);
  std::vector<Micrograph> small{Micrograph{Image(8, 8), 1.0, {0, 0}, "tiny.mrc"}};
  try {
    sample_patches(small, 1, 16, 0);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("tiny.mrc") != std::string::npos);
  }
}

TEST_CASE("training is deterministic and logs every epoch") {
  const auto data = toy_data(2, 48, 5);
  const auto bank = toy_bank(16);
  test::TempDir a("train"), b("train");
  TrainOptions oa, ob;
  oa.out_dir = a.path;
  ob.out_dir = b.path;
  const auto ra = train(data, &bank, toy_schedule(), toy_model(), oa);
  const auto rb = train(data, &bank, toy_schedule(), toy_model(), ob);
  CHECK(ra.log.size() == 4);
  CHECK(ra.model.net().params() == rb.model.net().params());
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(std::filesystem::exists(a / "final.tgdckpt"));
  CHECK(std::filesystem::exists(a / "checkpoint_epoch0000.tgdckpt"));
  CHECK(std::filesystem::exists(a / "checkpoint_epoch0002.tgdckpt"));
  CHECK(ra.refresh_epochs == std::vector<int>{0, 2});
  CHECK(ra.log[0].lambda == 0.0);
  CHECK(ra.log[3].lambda == 1.0);
  CHECK(ra.log[0].sigma_a == 0.5);
  CHECK(ra.log[3].sigma_a == 0.2);
  CHECK(ra.model.config().sigma_data == doctest::Approx(bank.sigma()));
  // Projections are untouched by the refresh.
  for (int j = 0; j < bank.size(); ++j) CHECK(ra.bank->projections[j] == bank.projections[j]);
}

TEST_CASE("a zero lambda schedule is plain DSM training") {
  const auto data = toy_data(2, 48, 6);
  const auto bank = toy_bank(16);
  auto s = toy_schedule();
  s.warmup_epochs = s.ramp_end_epochs = s.epochs;
  TrainOptions opts;
  opts.keep_step_records = true;
  const auto r = train(data, &bank, s, toy_model(), opts);
  for (const auto& row : r.log) CHECK(row.loss_tsm == 0.0);
  for (const auto& st : r.steps) {
    CHECK(st.loss.breakdown.total == st.loss.breakdown.dsm_term);
    for (const auto& t : st.loss.tsm) CHECK_FALSE(t.has_value());
  }

  auto d = toy_schedule();
  d.dsm_only = true;
  const auto rd = train(data, &bank, d, toy_model(), opts);
  for (const auto& row : rd.log) CHECK(row.loss_tsm == 0.0);
}

TEST_CASE("step records satisfy the recombination identity") {
  const auto data = toy_data(2, 48, 7);
  const auto bank = toy_bank(16);
  TrainOptions opts;
  opts.keep_step_records = true;
  const auto r = train(data, &bank, toy_schedule(), toy_model(), opts);
  for (const auto& st : r.steps) {
    const auto& b = st.loss.breakdown;
    double acc = 0.0;
    for (std::size_t i = 0; i < st.loss.dsm.size(); ++i) {
      const double w = b.effective_weights[i];
      acc += w * st.loss.tsm[i].value_or(0.0) + (1.0 - w) * st.loss.dsm[i];
    }
    CHECK(b.total == doctest::Approx(acc / static_cast<double>(st.loss.dsm.size())).epsilon(1e-6));
  }
}

TEST_CASE("post-refresh confidence statistic") {
  TrainResult r{ScoreModel(toy_model()), std::nullopt, {}, {}, {}, {}, {}};
  r.refresh_epochs = {0, 3};
  r.probe_trace = {{0, 0.1}, {1, 0.3}, {2, 0.2}, {3, 0.5}, {4, 0.5}};
  // Window 2: std{0.1, 0.3} and std{0.5, 0.5}.
  CHECK(post_refresh_confidence_std(r, 2) == doctest::Approx(0.5 * stddev(std::vector<double>{0.1, 0.3})));
}

TEST_CASE("missing bank in guided mode still trains as DSM, max_steps caps the run") {
  auto s = toy_schedule();
  s.max_steps = 3;
  const auto r = train(toy_data(2, 48, 8), nullptr, s, toy_model());
  CHECK(r.log.back().step == 3);
}
