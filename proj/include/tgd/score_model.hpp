#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tgd/image.hpp"
#include "tgd/nn.hpp"

namespace tgd {

/// s(x; sigma_a): a score field evaluated on one patch at one noise level.
using ScoreFn = std::function<Patch(const Patch& x, double sigma_a)>;
/// F(c_in * x; sigma_a): the raw network inside the preconditioned score.
using NetworkFn = std::function<Patch(const Patch& scaled_x, double sigma_a)>;

struct PrecondCoeffs {
  double c_in = 1.0;
  double c_skip = -1.0;
  double c_out = 0.0;
  double loss_weight = 1.0;
};

/// c_in = 1/sqrt(s^2+a^2), c_skip = -1/(s^2+a^2), c_out = -a/(s sqrt(s^2+a^2)),
/// loss weight = (s^2 a^2 + s^4)/s^2 for data scale s = sigma and noise a = sigma_a.
PrecondCoeffs precondition_coeffs(double sigma, double sigma_a);

struct ScoreModelConfig {
  int base_width = 32;
  std::vector<int> channel_multipliers{1, 2};
  int in_channels = 1;
  int patch_size = 64;
  double sigma_data = 1.0;     // the sigma used by precondition_coeffs
  double feature_sigma = 0.05; // noise level at which encode() conditions the network

  static ScoreModelConfig paper_scale();
};

/// Conditioning value fed to the network as a constant channel.
double noise_embedding(double sigma_a);

/// Preconditioned score network s(x; sigma_a) = c_out * F(c_in * x, sigma_a) + c_skip * x.
template <typename T>
class ScoreNet {
public:
  explicit ScoreNet(ScoreModelConfig cfg, std::uint64_t seed = 0);

  const ScoreModelConfig& config() const { return cfg_; }
  ScoreModelConfig& config() { return cfg_; }
  nn::UNet<T>& net() { return net_; }
  const nn::UNet<T>& net() const { return net_; }
  int feature_dim() const { return net_.feature_dim(); }

  PrecondCoeffs coeffs(double sigma_a) const { return precondition_coeffs(cfg_.sigma_data, sigma_a); }

  /// Stacks patches into a network input: channel 0 = scale_i * x_i, channel 1 = embedding(sigma_i).
  nn::Tensor<T> make_input(const std::vector<Patch>& x, const std::vector<double>& sigma_a,
                           const std::vector<double>& scale) const;
  static Patch unpack(const nn::Tensor<T>& t, int index);

  std::vector<Patch> network(const std::vector<Patch>& scaled_x, const std::vector<double>& sigma_a) const;
  std::vector<Patch> score(const std::vector<Patch>& x, const std::vector<double>& sigma_a) const;
  Patch score(const Patch& x, double sigma_a) const;

  /// Deepest encoder activation, spatially averaged and L2-normalised.
  std::vector<double> encode(const Patch& x) const;
  std::vector<std::vector<double>> encode(const std::vector<Patch>& x) const;

  ScoreFn score_fn() const;
  NetworkFn network_fn() const;

  template <typename U>
  ScoreNet<U> cast() const {
    ScoreNet<U> out(cfg_);
    auto& dst = out.net().params();
    const auto& src = net_.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
    return out;
  }

private:
  ScoreModelConfig cfg_;
  nn::UNet<T> net_;
};

using ScoreModel = ScoreNet<float>;

struct Checkpoint {
  std::string kind = "network";  // "network" or "zero" (identically-zero score)
  ScoreModelConfig config;
  std::vector<float> params;
  std::int64_t step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ScoreModel& model, std::int64_t step);
void save_zero_checkpoint(const std::filesystem::path& path, const ScoreModelConfig& cfg);
Checkpoint load_checkpoint(const std::filesystem::path& path);
ScoreModel model_from_checkpoint(const Checkpoint& ckpt);
ScoreFn score_fn_from_checkpoint(const Checkpoint& ckpt);

}  // namespace tgd
