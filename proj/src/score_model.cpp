#include "tgd/score_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>

#include "tgd/errors.hpp"
#include "tgd/mrc_io.hpp"

namespace tgd {

PrecondCoeffs precondition_coeffs(double sigma, double sigma_a) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("precondition: sigma must be positive");
  if (!(sigma_a >= 0.0) || !std::isfinite(sigma_a))
    throw ParameterError("precondition: sigma_a must be non-negative");
  const double s2 = sigma * sigma;
  const double total = s2 + sigma_a * sigma_a;
  PrecondCoeffs c;
  c.c_in = 1.0 / std::sqrt(total);
  c.c_skip = -1.0 / total;
  c.c_out = -sigma_a / (sigma * std::sqrt(total));
  c.loss_weight = (s2 * sigma_a * sigma_a + s2 * s2) / s2;
  return c;
}

ScoreModelConfig ScoreModelConfig::paper_scale() {
  ScoreModelConfig c;
  c.base_width = 128;
  c.channel_multipliers = {1, 2, 2, 4};
  c.patch_size = 256;
  return c;
}

double noise_embedding(double sigma_a) { return std::log(std::max(sigma_a, 1e-8)) / 4.0; }

namespace {

nn::UNetShape shape_of(const ScoreModelConfig& cfg) {
  if (cfg.in_channels != 1) throw ParameterError("only single-channel micrographs are supported");
  if (cfg.base_width < 4) throw ParameterError("base_width must be >= 4");
  if (cfg.channel_multipliers.empty()) throw ParameterError("channel multipliers must be non-empty");
  return {cfg.in_channels + 1, cfg.base_width, cfg.channel_multipliers};
}

}  // namespace

template <typename T>
ScoreNet<T>::ScoreNet(ScoreModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), net_(shape_of(cfg_)) {
  if (!(cfg_.sigma_data > 0.0)) throw ParameterError("sigma_data must be positive");
  net_.init(seed);
}

template <typename T>
nn::Tensor<T> ScoreNet<T>::make_input(const std::vector<Patch>& x, const std::vector<double>& sigma_a,
                                      const std::vector<double>& scale) const {
  if (x.empty()) throw ShapeError("empty batch");
  if (sigma_a.size() != x.size() || scale.size() != x.size())
    throw ShapeError("batch metadata length mismatch");
  nn::Tensor<T> t;
  t.batch = static_cast<int>(x.size());
  t.height = x.front().height();
  t.width = x.front().width();
  t.m.resize(2, static_cast<Eigen::Index>(t.batch) * t.plane());
  for (int b = 0; b < t.batch; ++b) {
    if (!x[b].same_shape(x.front())) throw ShapeError("batch patches differ in shape");
    const T emb = static_cast<T>(noise_embedding(sigma_a[b]));
    for (Eigen::Index i = 0; i < t.plane(); ++i) {
      t.m(0, b * t.plane() + i) = static_cast<T>(scale[b] * x[b][static_cast<std::size_t>(i)]);
      t.m(1, b * t.plane() + i) = emb;
    }
  }
  return t;
}

template <typename T>
Patch ScoreNet<T>::unpack(const nn::Tensor<T>& t, int index) {
  Patch p(t.height, t.width);
  for (Eigen::Index i = 0; i < t.plane(); ++i)
    p[static_cast<std::size_t>(i)] = static_cast<double>(t.m(0, index * t.plane() + i));
  return p;
}

template <typename T>
std::vector<Patch> ScoreNet<T>::network(const std::vector<Patch>& scaled_x,
                                        const std::vector<double>& sigma_a) const {
  const auto out = net_.forward(make_input(scaled_x, sigma_a, std::vector<double>(scaled_x.size(), 1.0)),
                                nullptr);
  std::vector<Patch> f;
  for (int b = 0; b < out.batch; ++b) f.push_back(unpack(out, b));
  return f;
}

template <typename T>
std::vector<Patch> ScoreNet<T>::score(const std::vector<Patch>& x, const std::vector<double>& sigma_a) const {
  if (sigma_a.size() != x.size()) throw ShapeError("score: one noise level per patch required");
  std::vector<Patch> out(x.size());
  std::vector<Patch> active;
  std::vector<double> active_sigma, active_scale;
  std::vector<std::size_t> active_index;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto c = coeffs(sigma_a[i]);
    out[i] = x[i] * c.c_skip;
    if (c.c_out != 0.0) {
      active.push_back(x[i]);
      active_sigma.push_back(sigma_a[i]);
      active_scale.push_back(c.c_in);
      active_index.push_back(i);
    }
  }
  if (!active.empty()) {
    const auto f = net_.forward(make_input(active, active_sigma, active_scale), nullptr);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const double c_out = coeffs(active_sigma[k]).c_out;
      Patch& s = out[active_index[k]];
      const Eigen::Index base = static_cast<Eigen::Index>(k) * f.plane();
      for (std::size_t i = 0; i < s.size(); ++i)
        s[i] += c_out * static_cast<double>(f.m(0, base + static_cast<Eigen::Index>(i)));
    }
  }
  return out;
}

template <typename T>
Patch ScoreNet<T>::score(const Patch& x, double sigma_a) const {
  return score(std::vector<Patch>{x}, std::vector<double>{sigma_a}).front();
}

template <typename T>
std::vector<std::vector<double>> ScoreNet<T>::encode(const std::vector<Patch>& x) const {
  const double c_in = coeffs(cfg_.feature_sigma).c_in;
  const auto e = net_.encode(make_input(x, std::vector<double>(x.size(), cfg_.feature_sigma),
                                        std::vector<double>(x.size(), c_in)));
  std::vector<std::vector<double>> feats(x.size(), std::vector<double>(e.channels()));
  for (int b = 0; b < e.batch; ++b) {
    auto& f = feats[b];
    for (int c = 0; c < e.channels(); ++c)
      f[c] = static_cast<double>(e.m.row(c).segment(b * e.plane(), e.plane()).template cast<double>().mean());
    const double n = norm2(f);
    if (n > 0.0)
      for (auto& v : f) v /= n;
  }
  return feats;
}

template <typename T>
std::vector<double> ScoreNet<T>::encode(const Patch& x) const {
  return encode(std::vector<Patch>{x}).front();
}

template <typename T>
ScoreFn ScoreNet<T>::score_fn() const {
  return [this](const Patch& x, double sigma_a) { return score(x, sigma_a); };
}

template <typename T>
NetworkFn ScoreNet<T>::network_fn() const {
  return [this](const Patch& x, double sigma_a) {
    return network(std::vector<Patch>{x}, std::vector<double>{sigma_a}).front();
  };
}

template class ScoreNet<float>;
template class ScoreNet<double>;

// Checkpoint layout (little-endian):
//   8 bytes magic "TGDCKPT1" | u32 format version | u64 header length | JSON header
//   | n_params x f32 parameters
namespace {

constexpr char kCkptMagic[8] = {'T', 'G', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCkptVersion = 1;

nlohmann::json config_json(const ScoreModelConfig& c) {
  return {{"base_width", c.base_width},     {"channel_multipliers", c.channel_multipliers},
          {"in_channels", c.in_channels},   {"patch_size", c.patch_size},
          {"sigma_data", c.sigma_data},     {"feature_sigma", c.feature_sigma}};
}

ScoreModelConfig config_from_json(const nlohmann::json& j) {
  ScoreModelConfig c;
  c.base_width = j.at("base_width");
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.in_channels = j.at("in_channels");
  c.patch_size = j.at("patch_size");
  c.sigma_data = j.at("sigma_data");
  c.feature_sigma = j.at("feature_sigma");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const std::string& kind,
                      const ScoreModelConfig& cfg, const std::vector<float>& params, std::int64_t step) {
  nlohmann::json header{{"kind", kind},
                        {"step", step},
                        {"n_params", params.size()},
                        {"config", config_json(cfg)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 8);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(kCkptVersion >> (8 * i)));
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (float v : params) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  write_file_bytes(path, out);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ScoreModel& model, std::int64_t step) {
  write_checkpoint(path, "network", model.config(), model.net().params(), step);
}

void save_zero_checkpoint(const std::filesystem::path& path, const ScoreModelConfig& cfg) {
  write_checkpoint(path, "zero", cfg, {}, 0);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string name = path.string();
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
    throw FormatError(name + ": not a checkpoint file (bad magic)");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
  if (version != kCkptVersion)
    throw FormatError(name + ": unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[12 + i]) << (8 * i);
  if (20 + len > bytes.size()) throw TruncationError(name + ": checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(name + ": checkpoint header is not valid JSON: " + e.what());
  }
  Checkpoint c;
  c.kind = header.at("kind");
  c.step = header.at("step");
  c.config = config_from_json(header.at("config"));
  const std::size_t n = header.at("n_params");
  const std::size_t offset = 20 + len;
  if (offset + 4 * n > bytes.size())
    throw TruncationError(name + ": checkpoint parameters truncated, expected " +
                          std::to_string(offset + 4 * n) + " bytes, found " + std::to_string(bytes.size()));
  c.params.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[offset + 4 * k + i]) << (8 * i);
    c.params[k] = std::bit_cast<float>(bits);
  }
  if (c.kind != "network" && c.kind != "zero") throw FormatError(name + ": unknown model kind " + c.kind);
  return c;
}

ScoreModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "network") throw ParameterError("checkpoint does not hold network parameters");
  ScoreModel m(ckpt.config);
  if (m.net().num_params() != ckpt.params.size())
    throw ShapeError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, architecture needs " +
                     std::to_string(m.net().num_params()));
  m.net().params() = ckpt.params;
  return m;
}

ScoreFn score_fn_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind == "zero")
    return [](const Patch& x, double) { return Patch(x.height(), x.width()); };
  auto model = std::make_shared<ScoreModel>(model_from_checkpoint(ckpt));
  return [model](const Patch& x, double sigma_a) { return model->score(x, sigma_a); };
}

}  // namespace tgd
