#include "tgd/objectives.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "tgd/errors.hpp"
#include "tgd/noise_model.hpp"

namespace tgd {

double squared_norm(const Patch& r) { return dot(r.values(), r.values()); }

double dsm_loss(const ScoreFn& score, const Patch& y, const Patch& u, double sigma_a) {
  if (!(sigma_a > 0.0)) throw ParameterError("dsm_loss requires sigma_a > 0");
  if (!y.same_shape(u)) throw ShapeError("dsm_loss: patch and draw differ in shape");
  Patch x = y + u * sigma_a;
  Patch r = score(x, sigma_a) * sigma_a;
  r += u;
  return squared_norm(r);
}

double dsm_loss(const ScoreFn& score, const std::vector<Patch>& y, const std::vector<Patch>& u,
                double sigma_a) {
  if (y.size() != u.size() || y.empty()) throw ShapeError("dsm_loss: batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += dsm_loss(score, y[i], u[i], sigma_a);
  return acc / static_cast<double>(y.size());
}

double dsm_loss_score_form(const ScoreFn& score, const Patch& y, const Patch& u, double sigma_a) {
  if (!(sigma_a > 0.0)) throw ParameterError("dsm_loss requires sigma_a > 0");
  Patch r = score(y + u * sigma_a, sigma_a);
  r += u * (1.0 / sigma_a);
  return squared_norm(r);
}

Patch dsm_residual(const Patch& f, const Patch& x_noisy, const Patch& u, const PrecondCoeffs& c,
                   double sigma_a) {
  Patch r(f.height(), f.width());
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = sigma_a * (c.c_out * f[i] + c.c_skip * x_noisy[i]) + u[i];
  return r;
}

Patch tsm_residual(const Patch& f, const Patch& x, const Patch& target, const PrecondCoeffs& c,
                   double sigma) {
  const double inv_s2 = 1.0 / (sigma * sigma);
  Patch r(f.height(), f.width());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = -c.c_out * f[i] - c.c_skip * x[i] - target[i] * inv_s2;
  return r;
}

double tsm_loss(const NetworkFn& network, const Patch& x, const Patch& target, double sigma, double sigma_a) {
  if (!(sigma > 0.0) || !(sigma_a > 0.0)) throw ParameterError("tsm_loss requires sigma, sigma_a > 0");
  if (!x.same_shape(target)) throw ShapeError("tsm_loss: target shape does not match patch");
  const auto c = precondition_coeffs(sigma, sigma_a);
  const Patch f = network(x * c.c_in, sigma_a);
  if (!f.same_shape(x)) throw ShapeError("tsm_loss: network output shape mismatch");
  return c.loss_weight * squared_norm(tsm_residual(f, x, target, c, sigma));
}

double effective_weight(double lambda_t, double confidence, int bank_size, bool degenerate,
                        std::optional<double> fixed_wt) {
  if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ParameterError("lambda(t) must lie in [0, 1]");
  if (degenerate) return 0.0;
  if (fixed_wt) {
    if (!(*fixed_wt >= 0.0 && *fixed_wt <= 1.0)) throw ParameterError("fixed w_t must lie in [0, 1]");
    return lambda_t * *fixed_wt;
  }
  const double lo = bank_size > 0 ? 1.0 / bank_size : 0.0;
  return lambda_t * std::clamp(confidence, lo, 1.0);
}

LossBreakdown combine_losses(const std::vector<double>& dsm, const std::vector<std::optional<double>>& tsm,
                             const std::vector<double>& weights) {
  const std::size_t n = dsm.size();
  if (tsm.size() != n || weights.size() != n || n == 0) throw ShapeError("combine_losses: size mismatch");
  LossBreakdown out;
  out.effective_weights = weights;
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[i];
    if (w > 0.0 && !tsm[i]) throw ParameterError("combine_losses: TSM term missing for a weighted sample");
    const double t = tsm[i].value_or(0.0);
    out.total += w * t + (1.0 - w) * dsm[i];
    out.dsm_term += dsm[i];
    if (tsm[i]) {
      out.tsm_term += *tsm[i];
      ++evaluated;
    }
  }
  out.total /= static_cast<double>(n);
  out.dsm_term /= static_cast<double>(n);
  out.tsm_term = evaluated ? out.tsm_term / static_cast<double>(evaluated) : 0.0;
  return out;
}

LossBreakdown adaptive_loss(const ScoreFn& score, const NetworkFn& network, const std::vector<Patch>& y,
                            const std::vector<Patch>& u, const TargetBank& bank, const FeatureMap& psi,
                            double lambda_t, double sigma_a, double sigma, const AdaptiveOptions& opts) {
  if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ParameterError("lambda(t) must lie in [0, 1]");
  if (y.size() != u.size() || y.empty()) throw ShapeError("adaptive_loss: batch size mismatch");
  std::vector<double> dsm(y.size()), weights(y.size()), conf(y.size());
  std::vector<std::optional<double>> tsm(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Patch x = y[i] + u[i] * sigma_a;
    dsm[i] = dsm_loss(score, y[i], u[i], sigma_a);
    if (lambda_t > 0.0) {
      const MatchResult mr = match(x, bank, psi);
      conf[i] = mr.confidence;
      weights[i] = effective_weight(lambda_t, mr.confidence, bank.size(), mr.degenerate, opts.fixed_wt);
      if (weights[i] > 0.0) tsm[i] = tsm_loss(network, x, mr.target, sigma, sigma_a);
    }
  }
  LossBreakdown out = combine_losses(dsm, tsm, weights);
  out.per_sample_confidence = std::move(conf);
  out.sigma_a_used = sigma_a;
  return out;
}

namespace {

double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace

double mixture_marginal_score(const std::vector<MixtureComponent>& mix, double sigma_a, double x) {
  double p = 0.0, dp = 0.0;
  for (const auto& c : mix) {
    const double var = c.std * c.std + sigma_a * sigma_a;
    const double n = c.weight * normal_pdf(x, c.mean, var);
    p += n;
    dp += n * (-(x - c.mean) / var);
  }
  return dp / p;
}

double posterior_expected_score(const std::vector<MixtureComponent>& mix, double sigma_a, double x,
                                double tolerance) {
  if (!(sigma_a > 0.0)) throw SingularNoiseError("posterior identity requires sigma_a > 0");
  if (mix.empty()) throw ParameterError("mixture must have at least one component");
  const double va = sigma_a * sigma_a;

  // Integration breakpoints: each component's posterior mean +- 8 posterior std.
  std::vector<double> breaks;
  for (const auto& c : mix) {
    if (!(c.std > 0.0) || !(c.weight > 0.0)) throw ParameterError("mixture weights and stds must be positive");
    const double s2 = c.std * c.std;
    const double m = (s2 * x + va * c.mean) / (s2 + va);
    const double sd = std::sqrt(s2 * va / (s2 + va));
    constexpr int kPieces = 16;
    for (int k = 0; k <= kPieces; ++k) breaks.push_back(m - 8.0 * sd + 16.0 * sd * k / kPieces);
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  auto prior = [&](double y) {
    double p = 0.0;
    for (const auto& c : mix) p += c.weight * normal_pdf(y, c.mean, c.std * c.std);
    return p;
  };
  auto joint = [&](double y) { return normal_pdf(x, y, va) * prior(y); };
  auto weighted = [&](double y) { return joint(y) * (-(x - y) / va); };

  using Quad = boost::math::quadrature::gauss_kronrod<double, 15>;
  double num = 0.0, den = 0.0, num_err = 0.0, den_err = 0.0;
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    double e1 = 0.0, e2 = 0.0;
    den += Quad::integrate(joint, breaks[k], breaks[k + 1], 10, 1e-12, &e1);
    num += Quad::integrate(weighted, breaks[k], breaks[k + 1], 10, 1e-12, &e2);
    den_err += e1;
    num_err += e2;
  }
  if (!(den > 0.0)) throw IntegrationError("posterior normaliser underflowed at x = " + std::to_string(x));
  const double value = num / den;
  const double err = num_err / den + std::abs(value) * den_err / den;
  if (!(err <= tolerance * std::max(1.0, std::abs(value))))
    throw IntegrationError("quadrature error estimate " + std::to_string(err) + " exceeds tolerance at x = " +
                           std::to_string(x));
  return value;
}

PosteriorIdentityReport verify_posterior_identity(const std::vector<MixtureComponent>& mix, double sigma_a,
                                                  const std::vector<double>& grid, double tolerance) {
  PosteriorIdentityReport r;
  for (double x : grid) {
    const double err = std::abs(mixture_marginal_score(mix, sigma_a, x) -
                                posterior_expected_score(mix, sigma_a, x, tolerance));
    if (err > r.max_abs_error) {
      r.max_abs_error = err;
      r.worst_x = x;
    }
  }
  return r;
}

ConsistencyReport dsm_tsm_consistency_check(double sigma, double sigma_a, int n_samples, std::uint64_t seed) {
  if (!(sigma > 0.0) || !(sigma_a > 0.0)) throw ParameterError("consistency check needs sigma, sigma_a > 0");
  if (n_samples < 2) throw ParameterError("consistency check needs at least two samples");
  const double total = sigma * sigma + sigma_a * sigma_a;
  const auto c = precondition_coeffs(sigma, sigma_a);
  constexpr double kStep = 1e-3;

  auto scaled_score = [&](double factor) -> ScoreFn {
    return [=](const Patch& x, double) { return x * (-factor / total); };
  };
  // The raw network reproducing a given full score under this preconditioning:
  // F(z) = (s(x) - c_skip x) / c_out with x = z / c_in.
  auto scaled_network = [&](double factor) -> NetworkFn {
    return [=](const Patch& z, double) {
      Patch x = z * (1.0 / c.c_in);
      Patch f = x * ((-factor / total - c.c_skip) / c.c_out);
      return f;
    };
  };

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> d_dsm(n_samples), d_tsm(n_samples);
  ConsistencyReport rep;
  const auto s_plus = scaled_score(1.0 + kStep), s_minus = scaled_score(1.0 - kStep);
  const auto s_opt = scaled_score(1.0), s_pert = scaled_score(1.1);
  const auto f_plus = scaled_network(1.0 + kStep), f_minus = scaled_network(1.0 - kStep);
  const auto f_opt = scaled_network(1.0), f_pert = scaled_network(1.1);
  for (int i = 0; i < n_samples; ++i) {
    const Patch y(1, 1, sigma * normal(rng));
    const Patch u(1, 1, normal(rng));
    const Patch x = y + u * sigma_a;
    const Patch target = x * (sigma * sigma / total);  // E[Y | X = x]
    d_dsm[i] = (dsm_loss(s_plus, y, u, sigma_a) - dsm_loss(s_minus, y, u, sigma_a)) / (2.0 * kStep);
    d_tsm[i] = (tsm_loss(f_plus, x, target, sigma, sigma_a) - tsm_loss(f_minus, x, target, sigma, sigma_a)) /
               (2.0 * kStep);
    rep.dsm_at_optimum += dsm_loss(s_opt, y, u, sigma_a);
    rep.dsm_perturbed += dsm_loss(s_pert, y, u, sigma_a);
    rep.tsm_at_optimum += tsm_loss(f_opt, x, target, sigma, sigma_a);
    rep.tsm_perturbed += tsm_loss(f_pert, x, target, sigma, sigma_a);
  }
  const double n = n_samples;
  rep.dsm_at_optimum /= n;
  rep.dsm_perturbed /= n;
  rep.tsm_at_optimum /= n;
  rep.tsm_perturbed /= n;
  rep.dsm_derivative = mean(d_dsm);
  rep.tsm_derivative = mean(d_tsm);
  rep.dsm_standard_error = stddev(d_dsm) * std::sqrt(n / (n - 1.0)) / std::sqrt(n);
  rep.tsm_standard_error = stddev(d_tsm) * std::sqrt(n / (n - 1.0)) / std::sqrt(n);
  // A derivative that is identically zero per sample has zero standard error; the
  // absolute floor only absorbs floating-point rounding of the central difference.
  auto within = [](double d, double se) { return std::abs(d) <= 3.0 * se + 1e-9; };
  rep.stationary = within(rep.dsm_derivative, rep.dsm_standard_error) &&
                   within(rep.tsm_derivative, rep.tsm_standard_error);
  rep.strict_minimum = rep.dsm_perturbed > rep.dsm_at_optimum && rep.tsm_perturbed > rep.tsm_at_optimum;
  return rep;
}

double dsm_target_total_variance(double sigma_a, int dim, int n_samples, std::uint64_t seed) {
  if (!(sigma_a > 0.0)) throw SingularNoiseError("DSM target undefined at sigma_a = 0");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> sum(dim, 0.0), sum_sq(dim, 0.0);
  for (int k = 0; k < n_samples; ++k)
    for (int i = 0; i < dim; ++i) {
      const double t = -normal(rng) / sigma_a;
      sum[i] += t;
      sum_sq[i] += t * t;
    }
  double total = 0.0;
  const double n = n_samples;
  for (int i = 0; i < dim; ++i) total += (sum_sq[i] - sum[i] * sum[i] / n) / (n - 1.0);
  return total;
}

}  // namespace tgd
