#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tgd/image.hpp"
#include "tgd/noise_model.hpp"
#include "tgd/objectives.hpp"
#include "tgd/score_model.hpp"
#include "tgd/target_bank.hpp"

namespace tgd {

struct TrainingSchedule {
  int epochs = 100;
  int batch_size = 8;
  double lr = 5e-5;
  double lr_decay_factor = 0.1;
  int lr_decay_steps = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<double> sigma_a_levels{0.2, 0.1, 0.05, 0.01, 1e-6};
  int warmup_epochs = 20;
  int ramp_end_epochs = 60;
  int patches_per_micrograph = 32;
  int patch_size = 256;
  int encoder_refresh_epochs = 10;
  std::uint64_t seed = 0;

  // Ablations and run-size controls.
  bool dsm_only = false;
  std::optional<double> fixed_wt;
  bool poisson_augment = false;
  PoissonGaussianParams poisson;
  bool encoder_features = true;  // refresh bank features with the network encoder
  long max_steps = 0;            // 0: no cap
  int steps_per_epoch = 0;       // used by the generic patch-source overload

  void validate() const;
  /// --no-anneal: lambda(t) = 1 from the first epoch.
  void disable_annealing() { warmup_epochs = ramp_end_epochs = 0; }
};

/// Parses flat `key = value` lines (# comments allowed) over `base`. Unknown keys raise ParameterError.
TrainingSchedule parse_schedule(const std::string& text, TrainingSchedule base = {});
TrainingSchedule load_schedule(const std::filesystem::path& path, TrainingSchedule base = {});
std::map<std::string, std::string> parse_key_values(const std::string& text);

double lambda_schedule(int epoch, const TrainingSchedule& sched);
double sigma_a_schedule(int epoch, const TrainingSchedule& sched);
double learning_rate(long step, const TrainingSchedule& sched);

struct StandardizedPatch {
  Patch patch;
  double mean = 0.0;
  double std = 1.0;  // floored at 1e-6
  int source = 0;
  int y0 = 0, x0 = 0;
};

StandardizedPatch standardize(const Patch& p);
Patch unstandardize(const Patch& z, double mean, double std);

std::vector<StandardizedPatch> sample_patches_with_stats(const std::vector<Micrograph>& micrographs, int n_per,
                                                         int size, std::uint64_t seed);
std::vector<Patch> sample_patches(const std::vector<Micrograph>& micrographs, int n_per, int size,
                                  std::uint64_t seed);

/// Per-sample terms of one optimisation step.
struct StepLoss {
  LossBreakdown breakdown;
  std::vector<double> dsm;
  std::vector<std::optional<double>> tsm;
};

/// Adaptive loss on a batch and, when `grad` is non-null, its gradient with respect to the
/// network parameters (accumulated into *grad). One forward pass serves both branches since
/// DSM and TSM evaluate the network at the same corrupted input. Without a bank, or with
/// lambda_t == 0, the TSM branch is skipped entirely.
template <typename T>
StepLoss loss_and_gradient(const ScoreNet<T>& model, const std::vector<Patch>& y, const std::vector<Patch>& u,
                           double sigma_a, double lambda_t, const TargetBank* bank, const FeatureMap* psi,
                           const AdaptiveOptions& opts, std::vector<T>* grad);

class Adam {
public:
  Adam(std::size_t n, double beta1, double beta2, double eps);
  void step(std::vector<float>& params, const std::vector<float>& grad, double lr);
  long steps() const { return t_; }

private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<float> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;
  long step = 0;
  double loss_total = 0.0, loss_dsm = 0.0, loss_tsm = 0.0;
  double mean_confidence = 0.0;
  double sigma_a = 0.0, lambda = 0.0, lr = 0.0;
};

struct StepRecord {
  int epoch = 0;
  double lambda = 0.0, sigma_a = 0.0;
  StepLoss loss;
};

struct ProbeSample {
  int epoch = 0;
  double confidence = 0.0;
};

struct TrainResult {
  ScoreModel model;
  std::optional<TargetBank> bank;  // with the features of the last refresh
  std::vector<EpochMetrics> log;
  std::vector<StepRecord> steps;
  std::vector<ProbeSample> probe_trace;
  std::vector<int> refresh_epochs;
  std::filesystem::path last_checkpoint;
};

struct TrainOptions {
  std::filesystem::path out_dir;   // empty: no files written
  bool keep_step_records = false;
  std::optional<Patch> probe;      // fixed noisy probe patch for the confidence trace
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Draws a batch of clean (already standardised) patches for the given epoch and step.
using PatchSource = std::function<std::vector<Patch>(int epoch, int step_in_epoch, Rng& rng)>;

TrainResult train(const PatchSource& source, const TargetBank* bank, const TrainingSchedule& sched,
                  ScoreModelConfig config, const TrainOptions& opts = {});

/// Micrograph overload: each epoch samples patches_per_micrograph patches per micrograph.
TrainResult train(const std::vector<Micrograph>& data, const TargetBank* bank, const TrainingSchedule& sched,
                  ScoreModelConfig config, const TrainOptions& opts = {});

/// Mean over refreshes of the confidence-trace std across the `window` epochs starting at each refresh.
double post_refresh_confidence_std(const TrainResult& r, int window = 10);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log);

}  // namespace tgd
