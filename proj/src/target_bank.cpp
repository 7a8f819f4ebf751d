#include "tgd/target_bank.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>

#include "tgd/errors.hpp"
#include "tgd/mrc_io.hpp"

namespace tgd {

std::vector<double> block_average_features(const Patch& x, int factor) {
  if (factor < 1) throw ParameterError("block factor must be positive");
  const int h = std::max(1, x.height() / factor);
  const int w = std::max(1, x.width() / factor);
  const int fy = x.height() / h, fx = x.width() / w;
  std::vector<double> f(static_cast<std::size_t>(h) * w, 0.0);
  for (int r = 0; r < h * fy; ++r)
    for (int c = 0; c < w * fx; ++c) f[static_cast<std::size_t>(r / fy) * w + c / fx] += x(r, c);
  const double n = norm2(f);
  if (n > 0.0)
    for (auto& v : f) v /= n;
  return f;
}

FeatureMap block_average_feature_map(int factor) {
  return [factor](const Patch& x) { return block_average_features(x, factor); };
}

double TargetBank::sigma() const { return std::sqrt(sigma2_surrogate); }

namespace {

Eigen::MatrixXd feature_basis(const std::vector<std::vector<double>>& features, double tol) {
  const auto m = static_cast<Eigen::Index>(features.size());
  const auto q = static_cast<Eigen::Index>(features.front().size());
  Eigen::MatrixXd z(q, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (static_cast<Eigen::Index>(features[j].size()) != q)
      throw ShapeError("bank features have inconsistent dimensions");
    z.col(j) = Eigen::Map<const Eigen::VectorXd>(features[j].data(), q);
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(0) > 0.0)) throw DegenerateBankError("bank features span a rank-0 subspace");
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > tol * s(0)) ++rank;
  Eigen::MatrixXd basis = svd.matrixU().leftCols(rank);
  // Fix the sign of each column so archives are reproducible across SVD backends.
  for (Eigen::Index k = 0; k < rank; ++k) {
    Eigen::Index arg;
    basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, k) < 0) basis.col(k) *= -1.0;
  }
  return basis;
}

std::vector<std::vector<double>> compute_features(const std::vector<Patch>& projections,
                                                  const FeatureMap& psi) {
  std::vector<std::vector<double>> features;
  features.reserve(projections.size());
  for (const auto& p : projections) {
    auto z = psi(p);
    if (!(norm2(z) > 0.0)) throw DegenerateBankError("a bank target has a zero feature vector");
    features.push_back(std::move(z));
  }
  return features;
}

}  // namespace

TargetBank assemble_bank(std::vector<Patch> raw, const FeatureMap& psi, const BankConfig& cfg) {
  if (raw.empty()) throw ParameterError("target bank needs at least one projection");
  if (!(cfg.temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
  for (const auto& p : raw)
    if (!p.same_shape(raw.front())) throw ShapeError("bank projections differ in shape");

  const auto m = raw.size();
  const auto d = raw.front().size();
  Patch center(raw.front().height(), raw.front().width());
  double raw_power = 0.0;
  for (const auto& p : raw) {
    center += p;
    for (double v : p.values()) raw_power += v * v;
  }
  center *= 1.0 / static_cast<double>(m);
  raw_power /= static_cast<double>(m * d);

  double ss = 0.0;
  for (auto& p : raw) {
    p -= center;
    for (double v : p.values()) ss += v * v;
  }
  const double sigma2 = ss / static_cast<double>(m * d);
  if (!(sigma2 > cfg.min_relative_variance * raw_power) || !(sigma2 > 0.0))
    throw DegenerateBankError("target bank is degenerate: centred variance " + std::to_string(sigma2) +
                              " vs mean power " + std::to_string(raw_power) +
                              " (views are indistinguishable; use an asymmetric reference)");

  TargetBank bank;
  bank.features = compute_features(raw, psi);
  bank.basis = feature_basis(bank.features, cfg.rank_tolerance);
  bank.projections = std::move(raw);
  bank.center = std::move(center);
  bank.sigma2_surrogate = sigma2;
  bank.temperature = cfg.temperature;
  bank.lowpass_cutoff = cfg.cutoff;
  bank.n_views = static_cast<int>(m);
  bank.feature_map_name = cfg.feature_map_name;
  return bank;
}

TargetBank build_bank(const Volume& v, const BankConfig& cfg, const FeatureMap& psi) {
  if (cfg.n_views < 1) throw ParameterError("n_views must be >= 1");
  const int inplane = std::max(1, cfg.inplane);
  const int directions = std::max(1, cfg.n_views / inplane);
  const Volume filtered = lowpass_filter(v, cfg.cutoff, cfg.rolloff_fraction);
  auto views = fibonacci_views(directions, inplane);
  views.resize(std::min<std::size_t>(views.size(), cfg.n_views));
  const int out = cfg.out_size > 0 ? cfg.out_size : v.nx;

  std::vector<Patch> raw;
  raw.reserve(views.size());
  for (const auto& e : views) {
    Patch p = project_volume(filtered, e, out);
    p *= cfg.target_scale;
    raw.push_back(std::move(p));
  }
  TargetBank bank = assemble_bank(std::move(raw), psi, cfg);
  bank.views = std::move(views);
  return bank;
}

TargetBank refresh_features(const TargetBank& bank, const FeatureMap& psi, double rank_tolerance) {
  TargetBank next = bank;
  next.features = compute_features(bank.projections, psi);
  next.basis = feature_basis(next.features, rank_tolerance);
  return next;
}

std::vector<double> project_to_subspace(const std::vector<double>& x_feat, const TargetBank& bank) {
  if (static_cast<Eigen::Index>(x_feat.size()) != bank.basis.rows())
    throw ShapeError("feature dimension " + std::to_string(x_feat.size()) + " does not match bank (" +
                     std::to_string(bank.basis.rows()) + ")");
  const Eigen::Map<const Eigen::VectorXd> x(x_feat.data(), static_cast<Eigen::Index>(x_feat.size()));
  const Eigen::VectorXd p = bank.basis * (bank.basis.transpose() * x);
  return {p.data(), p.data() + p.size()};
}

std::vector<double> softmax(const std::vector<double>& a, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax temperature must be positive");
  const double top = *std::max_element(a.begin(), a.end());
  std::vector<double> w(a.size());
  double z = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) z += (w[j] = std::exp((a[j] - top) / tau));
  for (auto& v : w) v /= z;
  return w;
}

MatchResult match_features(const std::vector<double>& x_feat, const TargetBank& bank) {
  const int m = bank.size();
  if (m == 0) throw DegenerateBankError("empty target bank");
  MatchResult r;
  r.temperature = bank.temperature;
  const auto xp = project_to_subspace(x_feat, bank);
  const double xn = norm2(xp);
  const double scale = norm2(x_feat);

  if (!(xn > 1e-12 * std::max(scale, 1e-300))) {
    r.degenerate = true;
    r.similarities.assign(m, 0.0);
    r.weights.assign(m, 1.0 / m);
  } else {
    r.similarities.resize(m);
    for (int j = 0; j < m; ++j)
      r.similarities[j] = dot(xp, bank.features[j]) / (xn * norm2(bank.features[j]));
    r.weights = softmax(r.similarities, bank.temperature);
  }
  r.confidence = *std::max_element(r.weights.begin(), r.weights.end());
  r.target = Patch(bank.projections.front().height(), bank.projections.front().width());
  for (int j = 0; j < m; ++j) {
    const double w = r.weights[j];
    const auto& p = bank.projections[j];
    for (std::size_t i = 0; i < p.size(); ++i) r.target[i] += w * p[i];
  }
  return r;
}

MatchResult match(const Patch& x, const TargetBank& bank, const FeatureMap& psi) {
  return match_features(psi(x), bank);
}

// Archive layout (little-endian):
//   8 bytes magic "TGDBANK1" | u64 header length | JSON header
//   | MRC stack of the m centred projections | center (d x f64)
//   | features (m x q f64, row per target) | basis (q x r f64, column-major)
namespace {

constexpr char kBankMagic[8] = {'T', 'G', 'D', 'B', 'A', 'N', 'K', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  std::string name;

  void need(std::size_t n) {
    if (pos + n > bytes.size())
      throw TruncationError(name + ": bank archive truncated at byte " + std::to_string(pos) +
                            ", need " + std::to_string(n) + " more");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void save_bank(const TargetBank& bank, const std::filesystem::path& path) {
  const int m = bank.size();
  if (m == 0) throw ParameterError("cannot save an empty bank");
  const int h = bank.projections.front().height();
  const int w = bank.projections.front().width();
  Volume stack(m, h, w);
  for (int j = 0; j < m; ++j)
    std::copy(bank.projections[j].values().begin(), bank.projections[j].values().end(),
              stack.data.begin() + static_cast<std::ptrdiff_t>(j) * h * w);
  const auto mrc = encode_mrc(stack, "target bank projections (centred)", true);

  nlohmann::json header;
  header["version"] = 1;
  header["m"] = m;
  header["q"] = bank.feature_dim();
  header["r"] = bank.rank();
  header["height"] = h;
  header["width"] = w;
  header["sigma2"] = bank.sigma2_surrogate;
  header["tau"] = bank.temperature;
  header["cutoff"] = bank.lowpass_cutoff;
  header["n_views"] = bank.n_views;
  header["feature_map"] = bank.feature_map_name;
  header["mrc_bytes"] = mrc.size();
  auto views = nlohmann::json::array();
  for (const auto& e : bank.views) views.push_back({e.rot, e.tilt, e.psi});
  header["views"] = views;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kBankMagic, kBankMagic + 8);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), mrc.begin(), mrc.end());
  for (double v : bank.center.values()) put_f64(out, v);
  for (const auto& f : bank.features)
    for (double v : f) put_f64(out, v);
  for (Eigen::Index c = 0; c < bank.basis.cols(); ++c)
    for (Eigen::Index r = 0; r < bank.basis.rows(); ++r) put_f64(out, bank.basis(r, c));
  write_file_bytes(path, out);
}

TargetBank load_bank(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Reader in{bytes, 0, path.string()};
  in.need(8);
  if (std::memcmp(bytes.data(), kBankMagic, 8) != 0)
    throw FormatError(path.string() + ": not a target bank archive (bad magic)");
  in.pos = 8;
  const auto header_len = in.u64();
  in.need(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(in.pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(in.pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bank header is not valid JSON: " + e.what());
  }
  in.pos += header_len;

  TargetBank bank;
  const int m = header.at("m"), q = header.at("q"), r = header.at("r");
  const int h = header.at("height"), w = header.at("width");
  const std::size_t mrc_bytes = header.at("mrc_bytes");
  in.need(mrc_bytes);
  const auto stack = parse_mrc(std::span(bytes).subspan(in.pos, mrc_bytes), path.string());
  in.pos += mrc_bytes;
  const auto* vol = std::get_if<Volume>(&stack);
  std::vector<double> flat;
  if (vol) {
    flat = vol->data;
  } else {
    flat = std::get<Micrograph>(stack).data.vector();
  }
  if (flat.size() != static_cast<std::size_t>(m) * h * w)
    throw FormatError(path.string() + ": projection stack size does not match header");
  for (int j = 0; j < m; ++j)
    bank.projections.emplace_back(
        h, w,
        std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(j) * h * w,
                            flat.begin() + static_cast<std::ptrdiff_t>(j + 1) * h * w));
  bank.center = Patch(h, w);
  for (std::size_t i = 0; i < bank.center.size(); ++i) bank.center[i] = in.f64();
  bank.features.assign(m, std::vector<double>(q));
  for (auto& f : bank.features)
    for (auto& v : f) v = in.f64();
  bank.basis.resize(q, r);
  for (int c = 0; c < r; ++c)
    for (int row = 0; row < q; ++row) bank.basis(row, c) = in.f64();
  bank.sigma2_surrogate = header.at("sigma2");
  bank.temperature = header.at("tau");
  bank.lowpass_cutoff = header.at("cutoff");
  bank.n_views = header.at("n_views");
  bank.feature_map_name = header.value("feature_map", std::string("block8"));
  for (const auto& e : header.at("views")) bank.views.push_back({e[0], e[1], e[2]});
  return bank;
}

}  // namespace tgd
