#include "tgd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>

#include "tgd/errors.hpp"

namespace tgd {

void TrainingSchedule::validate() const {
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ParameterError("lr must be positive");
  if (!(warmup_epochs >= 0 && warmup_epochs <= ramp_end_epochs && ramp_end_epochs <= epochs))
    throw ParameterError("schedule requires 0 <= warmup_epochs <= ramp_end_epochs <= epochs (got " +
                         std::to_string(warmup_epochs) + ", " + std::to_string(ramp_end_epochs) + ", " +
                         std::to_string(epochs) + ")");
  if (sigma_a_levels.empty()) throw ParameterError("sigma_a_levels must be non-empty");
  for (std::size_t i = 0; i < sigma_a_levels.size(); ++i) {
    if (!(sigma_a_levels[i] > 0.0)) throw ParameterError("sigma_a_levels must be strictly positive");
    if (i > 0 && sigma_a_levels[i] > sigma_a_levels[i - 1])
      throw ParameterError("sigma_a_levels must be non-increasing");
  }
  if (encoder_refresh_epochs < 1) throw ParameterError("encoder_refresh_epochs must be >= 1");
  if (patch_size < 1 || patches_per_micrograph < 1) throw ParameterError("patch sampling sizes must be >= 1");
  if (fixed_wt && !(*fixed_wt >= 0.0 && *fixed_wt <= 1.0)) throw ParameterError("fixed_wt must lie in [0, 1]");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    boost::algorithm::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    boost::algorithm::trim(key);
    boost::algorithm::trim(value);
    kv[key] = value;
  }
  return kv;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParameterError("config key '" + key + "': not a number: " + v);
  }
}

long to_long(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ParameterError("config key '" + key + "': not an integer: " + v);
  return static_cast<long>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError("config key '" + key + "': not a boolean: " + v);
}

std::vector<double> to_list(const std::string& key, std::string v) {
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream in(v);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(to_double(key, tok));
  return out;
}

}  // namespace

TrainingSchedule parse_schedule(const std::string& text, TrainingSchedule s) {
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "epochs") s.epochs = static_cast<int>(to_long(k, v));
    else if (k == "batch_size") s.batch_size = static_cast<int>(to_long(k, v));
    else if (k == "lr") s.lr = to_double(k, v);
    else if (k == "lr_decay_factor") s.lr_decay_factor = to_double(k, v);
    else if (k == "lr_decay_steps") s.lr_decay_steps = static_cast<int>(to_long(k, v));
    else if (k == "adam_beta1") s.adam_beta1 = to_double(k, v);
    else if (k == "adam_beta2") s.adam_beta2 = to_double(k, v);
    else if (k == "sigma_a_levels") s.sigma_a_levels = to_list(k, v);
    else if (k == "warmup_epochs") s.warmup_epochs = static_cast<int>(to_long(k, v));
    else if (k == "ramp_end_epochs") s.ramp_end_epochs = static_cast<int>(to_long(k, v));
    else if (k == "patches_per_micrograph") s.patches_per_micrograph = static_cast<int>(to_long(k, v));
    else if (k == "patch_size") s.patch_size = static_cast<int>(to_long(k, v));
    else if (k == "encoder_refresh_epochs") s.encoder_refresh_epochs = static_cast<int>(to_long(k, v));
    else if (k == "seed") s.seed = static_cast<std::uint64_t>(to_long(k, v));
    else if (k == "dsm_only") s.dsm_only = to_bool(k, v);
    else if (k == "fixed_wt") s.fixed_wt = to_double(k, v);
    else if (k == "no_anneal") { if (to_bool(k, v)) s.disable_annealing(); }
    else if (k == "poisson_augment") s.poisson_augment = to_bool(k, v);
    else if (k == "poisson_alpha") s.poisson.alpha = to_double(k, v);
    else if (k == "poisson_sigma") s.poisson.sigma_det = to_double(k, v);
    else if (k == "encoder_features") s.encoder_features = to_bool(k, v);
    else if (k == "max_steps") s.max_steps = to_long(k, v);
    else throw ParameterError("unknown config key '" + k + "'");
  }
  return s;
}

TrainingSchedule load_schedule(const std::filesystem::path& path, TrainingSchedule base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schedule(ss.str(), std::move(base));
}

double lambda_schedule(int epoch, const TrainingSchedule& s) {
  if (s.dsm_only) return 0.0;
  if (epoch >= s.ramp_end_epochs) return 1.0;
  if (epoch < s.warmup_epochs) return 0.0;
  return static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(s.ramp_end_epochs - s.warmup_epochs);
}

double sigma_a_schedule(int epoch, const TrainingSchedule& s) {
  if (s.sigma_a_levels.empty()) throw ParameterError("sigma_a_levels must be non-empty");
  const long levels = static_cast<long>(s.sigma_a_levels.size());
  const long idx = std::clamp<long>(static_cast<long>(epoch) * levels / s.epochs, 0, levels - 1);
  return s.sigma_a_levels[static_cast<std::size_t>(idx)];
}

double learning_rate(long step, const TrainingSchedule& s) {
  return step >= s.lr_decay_steps ? s.lr * s.lr_decay_factor : s.lr;
}

StandardizedPatch standardize(const Patch& p) {
  StandardizedPatch out;
  out.mean = mean(p.values());
  out.std = std::max(stddev(p.values()), 1e-6);
  out.patch = Patch(p.height(), p.width());
  for (std::size_t i = 0; i < p.size(); ++i) out.patch[i] = (p[i] - out.mean) / out.std;
  return out;
}

Patch unstandardize(const Patch& z, double m, double s) {
  Patch out(z.height(), z.width());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * s + m;
  return out;
}

std::vector<StandardizedPatch> sample_patches_with_stats(const std::vector<Micrograph>& micrographs, int n_per,
                                                         int size, std::uint64_t seed) {
  if (n_per < 0 || size < 1) throw ParameterError("sample_patches: invalid count or size");
  Rng rng(seed);
  std::vector<StandardizedPatch> out;
  out.reserve(micrographs.size() * static_cast<std::size_t>(n_per));
  for (std::size_t k = 0; k < micrographs.size(); ++k) {
    const Image& img = micrographs[k].data;
    if (img.height() < size || img.width() < size)
      throw DimensionError("micrograph " +
                           (micrographs[k].provenance.empty() ? "#" + std::to_string(k) : micrographs[k].provenance) +
                           " is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                           ", smaller than patch size " + std::to_string(size));
    std::uniform_int_distribution<int> ry(0, img.height() - size), rx(0, img.width() - size);
    for (int i = 0; i < n_per; ++i) {
      const int y0 = ry(rng), x0 = rx(rng);
      auto sp = standardize(img.crop(y0, x0, size, size));
      sp.source = static_cast<int>(k);
      sp.y0 = y0;
      sp.x0 = x0;
      out.push_back(std::move(sp));
    }
  }
  return out;
}

std::vector<Patch> sample_patches(const std::vector<Micrograph>& micrographs, int n_per, int size,
                                  std::uint64_t seed) {
  std::vector<Patch> out;
  for (auto& sp : sample_patches_with_stats(micrographs, n_per, size, seed)) out.push_back(std::move(sp.patch));
  return out;
}

template <typename T>
StepLoss loss_and_gradient(const ScoreNet<T>& model, const std::vector<Patch>& y, const std::vector<Patch>& u,
                           double sigma_a, double lambda_t, const TargetBank* bank, const FeatureMap* psi,
                           const AdaptiveOptions& opts, std::vector<T>* grad) {
  if (y.empty() || y.size() != u.size()) throw ShapeError("loss_and_gradient: batch size mismatch");
  if (!(sigma_a > 0.0)) throw ParameterError("sigma_a must be positive");
  if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ParameterError("lambda(t) must lie in [0, 1]");
  const std::size_t n = y.size();
  const auto c = model.coeffs(sigma_a);

  std::vector<Patch> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = y[i] + u[i] * sigma_a;

  typename nn::UNet<T>::Cache cache;
  const auto input = model.make_input(x, std::vector<double>(n, sigma_a), std::vector<double>(n, c.c_in));
  const auto f = model.net().forward(input, grad ? &cache : nullptr);

  StepLoss out;
  out.dsm.resize(n);
  out.tsm.resize(n);
  std::vector<double> weights(n, 0.0), conf(n, 0.0);
  std::vector<Patch> r_dsm(n), r_tsm(n);
  const bool guided = bank != nullptr && lambda_t > 0.0;
  if (guided && psi == nullptr) throw ParameterError("target guidance requires a feature map");
  for (std::size_t i = 0; i < n; ++i) {
    const Patch fi = ScoreNet<T>::unpack(f, static_cast<int>(i));
    r_dsm[i] = dsm_residual(fi, x[i], u[i], c, sigma_a);
    out.dsm[i] = squared_norm(r_dsm[i]);
    if (guided) {
      const MatchResult mr = match(x[i], *bank, *psi);
      conf[i] = mr.confidence;
      weights[i] = effective_weight(lambda_t, mr.confidence, bank->size(), mr.degenerate, opts.fixed_wt);
      if (weights[i] > 0.0) {
        r_tsm[i] = tsm_residual(fi, x[i], mr.target, c, bank->sigma());
        out.tsm[i] = c.loss_weight * squared_norm(r_tsm[i]);
      }
    }
  }
  out.breakdown = combine_losses(out.dsm, out.tsm, weights);
  out.breakdown.per_sample_confidence = std::move(conf);
  out.breakdown.sigma_a_used = sigma_a;

  if (grad) {
    nn::Tensor<T> g;
    g.batch = f.batch;
    g.height = f.height;
    g.width = f.width;
    g.m.resize(1, f.m.cols());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights[i];
      const double a_dsm = (1.0 - w) * 2.0 * sigma_a * c.c_out * inv_n;
      const double a_tsm = w > 0.0 ? -w * c.loss_weight * 2.0 * c.c_out * inv_n : 0.0;
      const Eigen::Index base = static_cast<Eigen::Index>(i) * f.plane();
      for (std::size_t p = 0; p < r_dsm[i].size(); ++p) {
        double v = a_dsm * r_dsm[i][p];
        if (w > 0.0) v += a_tsm * r_tsm[i][p];
        g.m(0, base + static_cast<Eigen::Index>(p)) = static_cast<T>(v);
      }
    }
    model.net().backward(cache, g, *grad);
  }
  return out;
}

template StepLoss loss_and_gradient<float>(const ScoreNet<float>&, const std::vector<Patch>&,
                                           const std::vector<Patch>&, double, double, const TargetBank*,
                                           const FeatureMap*, const AdaptiveOptions&, std::vector<float>*);
template StepLoss loss_and_gradient<double>(const ScoreNet<double>&, const std::vector<Patch>&,
                                            const std::vector<Patch>&, double, double, const TargetBank*,
                                            const FeatureMap*, const AdaptiveOptions&, std::vector<double>*);

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0f), v_(n, 0.0f) {}

void Adam::step(std::vector<float>& params, const std::vector<float>& grad, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float step = static_cast<float>(lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0f - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0f - b2) * grad[i] * grad[i];
    params[i] -= step * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps);
  }
}

namespace {

FeatureMap encoder_map(const ScoreModel& model) {
  return [&model](const Patch& p) { return model.encode(p); };
}

std::string checkpoint_name(int epoch) {
  std::ostringstream s;
  s << "checkpoint_epoch" << std::setw(4) << std::setfill('0') << epoch << ".tgdckpt";
  return s.str();
}

}  // namespace

TrainResult train(const PatchSource& source, const TargetBank* bank_in, const TrainingSchedule& sched,
                  ScoreModelConfig config, const TrainOptions& opts) {
  sched.validate();
  if (sched.steps_per_epoch < 1) throw ParameterError("steps_per_epoch must be >= 1");
  const bool guided = bank_in != nullptr && !sched.dsm_only;
  if (bank_in) config.sigma_data = bank_in->sigma();

  TrainResult res{ScoreModel(config, sched.seed), std::nullopt, {}, {}, {}, {}, {}};
  ScoreModel& model = res.model;
  if (bank_in) res.bank = *bank_in;
  Adam adam(model.net().num_params(), sched.adam_beta1, sched.adam_beta2, sched.adam_eps);
  Rng rng(sched.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const FeatureMap block_psi = block_average_feature_map(8);
  const FeatureMap enc_psi = encoder_map(model);
  const bool use_encoder = sched.encoder_features && res.bank.has_value();
  const FeatureMap& psi = use_encoder ? enc_psi : block_psi;

  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);
  std::vector<float> grad(model.net().num_params());
  long step = 0;

  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    if (sched.max_steps > 0 && step >= sched.max_steps) break;
    const double sigma_a = sigma_a_schedule(epoch, sched);
    const double lambda_t = lambda_schedule(epoch, sched);
    if (guided && lambda_t > 0.0 && res.bank->size() > 0 && !(res.bank->sigma2_surrogate > 0.0))
      throw DegenerateBankError("target bank is degenerate (zero surrogate variance) while lambda(t) = " +
                                std::to_string(lambda_t));

    if (epoch % sched.encoder_refresh_epochs == 0) {
      if (use_encoder) res.bank = refresh_features(*res.bank, psi);
      res.refresh_epochs.push_back(epoch);
      if (!opts.out_dir.empty()) {
        const auto path = opts.out_dir / checkpoint_name(epoch);
        save_checkpoint(path, model, step);
        res.last_checkpoint = path;
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.sigma_a = sigma_a;
    em.lambda = lambda_t;
    int n_steps = 0;
    double conf_sum = 0.0;
    long conf_count = 0;
    for (int s = 0; s < sched.steps_per_epoch; ++s) {
      if (sched.max_steps > 0 && step >= sched.max_steps) break;
      std::vector<Patch> y = source(epoch, s, rng);
      if (y.empty()) break;
      if (sched.poisson_augment)
        for (auto& p : y) p = standardize(corrupt_poisson_gaussian(percentile_normalize(p), sched.poisson, rng)).patch;
      std::vector<Patch> u;
      u.reserve(y.size());
      for (const auto& p : y) {
        Patch d(p.height(), p.width());
        for (auto& v : d.values()) v = normal(rng);
        u.push_back(std::move(d));
      }
      std::fill(grad.begin(), grad.end(), 0.0f);
      AdaptiveOptions aopts{sched.fixed_wt};
      StepLoss sl = loss_and_gradient(model, y, u, sigma_a, lambda_t, guided ? &*res.bank : nullptr, &psi, aopts,
                                      &grad);
      if (!std::isfinite(sl.breakdown.total) ||
          !std::all_of(grad.begin(), grad.end(), [](float g) { return std::isfinite(g); }))
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step),
                                 res.last_checkpoint.string());
      const double lr = learning_rate(step, sched);
      adam.step(model.net().params(), grad, lr);
      ++step;
      ++n_steps;
      em.loss_total += sl.breakdown.total;
      em.loss_dsm += sl.breakdown.dsm_term;
      em.loss_tsm += sl.breakdown.tsm_term;
      em.lr = lr;
      if (guided && lambda_t > 0.0) {
        for (double c : sl.breakdown.per_sample_confidence) conf_sum += c;
        conf_count += static_cast<long>(sl.breakdown.per_sample_confidence.size());
      }
      if (opts.keep_step_records) res.steps.push_back({epoch, lambda_t, sigma_a, std::move(sl)});
    }
    if (n_steps == 0) break;
    em.step = step;
    em.loss_total /= n_steps;
    em.loss_dsm /= n_steps;
    em.loss_tsm /= n_steps;
    em.mean_confidence = conf_count ? conf_sum / static_cast<double>(conf_count) : 0.0;
    res.log.push_back(em);
    if (opts.probe && res.bank) res.probe_trace.push_back({epoch, match(*opts.probe, *res.bank, psi).confidence});
    if (opts.on_epoch) opts.on_epoch(em);
  }

  if (!opts.out_dir.empty()) {
    const auto path = opts.out_dir / "final.tgdckpt";
    save_checkpoint(path, model, step);
    res.last_checkpoint = path;
    write_metrics_csv(opts.out_dir / "metrics.csv", res.log);
  }
  return res;
}

TrainResult train(const std::vector<Micrograph>& data, const TargetBank* bank, const TrainingSchedule& sched_in,
                  ScoreModelConfig config, const TrainOptions& opts) {
  if (data.empty()) throw ParameterError("no training micrographs");
  TrainingSchedule sched = sched_in;
  const int per_epoch = sched.patches_per_micrograph * static_cast<int>(data.size());
  sched.steps_per_epoch = (per_epoch + sched.batch_size - 1) / sched.batch_size;
  config.patch_size = sched.patch_size;
  for (const auto& m : data) validate(m);

  auto cache = std::make_shared<std::pair<int, std::vector<Patch>>>(-1, std::vector<Patch>{});
  PatchSource source = [&data, sched, cache](int epoch, int s, Rng&) {
    if (cache->first != epoch) {
      cache->second = sample_patches(data, sched.patches_per_micrograph, sched.patch_size,
                                     sched.seed + 1000003ULL * static_cast<std::uint64_t>(epoch + 1));
      cache->first = epoch;
    }
    const auto& all = cache->second;
    const std::size_t lo = static_cast<std::size_t>(s) * sched.batch_size;
    const std::size_t hi = std::min(all.size(), lo + static_cast<std::size_t>(sched.batch_size));
    return lo < hi ? std::vector<Patch>(all.begin() + lo, all.begin() + hi) : std::vector<Patch>{};
  };
  return train(source, bank, sched, std::move(config), opts);
}

double post_refresh_confidence_std(const TrainResult& r, int window) {
  double acc = 0.0;
  int count = 0;
  for (int e0 : r.refresh_epochs) {
    std::vector<double> vals;
    for (const auto& p : r.probe_trace)
      if (p.epoch >= e0 && p.epoch < e0 + window) vals.push_back(p.confidence);
    if (vals.size() < 2) continue;
    acc += stddev(vals);
    ++count;
  }
  return count ? acc / count : 0.0;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics log " + path.string());
  out << "epoch,step,loss_total,loss_dsm,loss_tsm,mean_confidence,sigma_a,lambda,lr\n";
  out << std::setprecision(10);
  for (const auto& m : log)
    out << m.epoch << ',' << m.step << ',' << m.loss_total << ',' << m.loss_dsm << ',' << m.loss_tsm << ','
        << m.mean_confidence << ',' << m.sigma_a << ',' << m.lambda << ',' << m.lr << '\n';
}

}  // namespace tgd
