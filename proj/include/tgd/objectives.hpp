#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tgd/image.hpp"
#include "tgd/score_model.hpp"
#include "tgd/target_bank.hpp"

namespace tgd {

struct LossBreakdown {
  double total = 0.0;
  double dsm_term = 0.0;
  double tsm_term = 0.0;
  std::vector<double> per_sample_confidence;
  std::vector<double> effective_weights;  // lambda(t) * w_t(x) per sample
  double sigma_a_used = 0.0;
};

/// ||sigma_a * s(y + sigma_a u) + u||^2 summed over pixels (AR-DAE residual form).
double dsm_loss(const ScoreFn& score, const Patch& y, const Patch& u, double sigma_a);
/// Batch mean of dsm_loss.
double dsm_loss(const ScoreFn& score, const std::vector<Patch>& y, const std::vector<Patch>& u,
                double sigma_a);
/// ||s(y + sigma_a u) + u / sigma_a||^2, the score-form equivalent (= dsm_loss / sigma_a^2).
double dsm_loss_score_form(const ScoreFn& score, const Patch& y, const Patch& u, double sigma_a);

/// Rescaled target-score loss
///   lambda * || -c_out * F(c_in x; sigma_a) - c_skip * x - target / sigma^2 ||^2
/// with (c_in, c_skip, c_out, lambda) = precondition_coeffs(sigma, sigma_a), i.e.
///   (s^2 a^2 + s^4)/s^2 * || a/(s sqrt(a^2+s^2)) F(x/sqrt(s^2+a^2)) + x/(s^2+a^2) - target/s^2 ||^2.
double tsm_loss(const NetworkFn& network, const Patch& x, const Patch& target, double sigma, double sigma_a);

/// Residuals on the raw network output F (shared by the losses and the trainer's backward pass).
/// dsm: r = sigma_a * (c_out F + c_skip x_noisy) + u,      dr/dF = sigma_a * c_out
/// tsm: r = -c_out F - c_skip x - target / sigma^2,        dr/dF = -c_out
Patch dsm_residual(const Patch& f, const Patch& x_noisy, const Patch& u, const PrecondCoeffs& c, double sigma_a);
Patch tsm_residual(const Patch& f, const Patch& x, const Patch& target, const PrecondCoeffs& c, double sigma);
double squared_norm(const Patch& r);

/// lambda * clip(confidence, 1/m, 1), or lambda * fixed_wt when overriding; 0 for degenerate matches.
double effective_weight(double lambda_t, double confidence, int bank_size, bool degenerate,
                        std::optional<double> fixed_wt = std::nullopt);

/// total = mean_i [w_i * tsm_i + (1 - w_i) * dsm_i]. tsm_i may be absent where w_i == 0;
/// tsm_term is the mean over evaluated samples (0 if none were evaluated).
LossBreakdown combine_losses(const std::vector<double>& dsm, const std::vector<std::optional<double>>& tsm,
                             const std::vector<double>& weights);

struct AdaptiveOptions {
  std::optional<double> fixed_wt;  // ablation: replace w_t(x) by a constant
};

/// Evaluates the adaptive objective on a batch of (patch, draw) pairs without gradients.
/// The patch is corrupted to x = y + sigma_a u, matched against the bank with psi, and the
/// confidence is used as a constant per-sample weight.
LossBreakdown adaptive_loss(const ScoreFn& score, const NetworkFn& network, const std::vector<Patch>& y,
                            const std::vector<Patch>& u, const TargetBank& bank, const FeatureMap& psi,
                            double lambda_t, double sigma_a, double sigma, const AdaptiveOptions& opts = {});

struct MixtureComponent {
  double weight = 1.0;
  double mean = 0.0;
  double std = 1.0;
};

/// Closed-form score of p_X = p_Y * N(0, sigma_a^2) for a 1-D Gaussian mixture p_Y.
double mixture_marginal_score(const std::vector<MixtureComponent>& mix, double sigma_a, double x);

/// Posterior expectation of the conditional score, int p(y|x) * (-(x-y)/sigma_a^2) dy, by
/// adaptive Gauss-Kronrod quadrature over +-8 posterior standard deviations.
double posterior_expected_score(const std::vector<MixtureComponent>& mix, double sigma_a, double x,
                                double tolerance = 1e-10);

struct PosteriorIdentityReport {
  double max_abs_error = 0.0;
  double worst_x = 0.0;
};

PosteriorIdentityReport verify_posterior_identity(const std::vector<MixtureComponent>& mix, double sigma_a,
                                                  const std::vector<double>& grid, double tolerance = 1e-10);

struct ConsistencyReport {
  double dsm_derivative = 0.0, dsm_standard_error = 0.0;
  double tsm_derivative = 0.0, tsm_standard_error = 0.0;
  double dsm_at_optimum = 0.0, dsm_perturbed = 0.0;
  double tsm_at_optimum = 0.0, tsm_perturbed = 0.0;
  bool stationary = false;       // both |derivative| <= 3 standard errors
  bool strict_minimum = false;   // both losses increase under s -> 1.1 s
};

/// Monte-Carlo check that DSM and TSM share the minimiser s*(x) = -x/(sigma^2+sigma_a^2) on
/// surrogate data Y ~ N(0, sigma^2), with TSM targets set to E[Y|X]. The derivative is taken
/// along s*(1+eps) by central differences.
ConsistencyReport dsm_tsm_consistency_check(double sigma, double sigma_a, int n_samples,
                                            std::uint64_t seed = 7);

/// Empirical total variance sum_i Var(-u_i / sigma_a) of the DSM target over n draws of d-dim u.
double dsm_target_total_variance(double sigma_a, int dim, int n_samples, std::uint64_t seed);

}  // namespace tgd
