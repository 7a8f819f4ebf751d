#include "tgd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

#include "tgd/errors.hpp"
#include "tgd/fft.hpp"

namespace tgd {

MatchOutcome match_particles(const ParticleSet& pred, const ParticleSet& gt, double threshold) {
  if (!(threshold > 0.0)) throw ParameterError("matching threshold must be positive");
  std::vector<MatchPair> cand;
  for (std::size_t i = 0; i < pred.coordinates.size(); ++i)
    for (std::size_t j = 0; j < gt.coordinates.size(); ++j) {
      const double d = std::hypot(pred.coordinates[i][0] - gt.coordinates[j][0],
                                  pred.coordinates[i][1] - gt.coordinates[j][1]);
      if (d <= threshold) cand.push_back({static_cast<int>(i), static_cast<int>(j), d});
    }
  std::sort(cand.begin(), cand.end(), [](const MatchPair& a, const MatchPair& b) {
    return std::tie(a.distance, a.pred, a.gt) < std::tie(b.distance, b.pred, b.gt);
  });
  std::vector<char> used_p(pred.coordinates.size(), 0), used_g(gt.coordinates.size(), 0);
  MatchOutcome out;
  for (const auto& c : cand) {
    if (used_p[c.pred] || used_g[c.gt]) continue;
    used_p[c.pred] = used_g[c.gt] = 1;
    out.tp.push_back(c);
  }
  for (std::size_t i = 0; i < used_p.size(); ++i)
    if (!used_p[i]) out.fp.push_back(static_cast<int>(i));
  for (std::size_t j = 0; j < used_g.size(); ++j)
    if (!used_g[j]) out.fn.push_back(static_cast<int>(j));
  return out;
}

PRF prf_from_counts(long tp, long fp, long fn) {
  PRF r;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

PickingMetrics picking_metrics(const std::vector<MatchOutcome>& per) {
  PickingMetrics m;
  m.n_micrographs = static_cast<int>(per.size());
  if (per.empty()) return m;
  long tp = 0, fp = 0, fn = 0;
  std::vector<double> p, r, f;
  for (const auto& o : per) {
    tp += o.n_tp();
    fp += o.n_fp();
    fn += o.n_fn();
    const PRF x = prf_from_counts(o.n_tp(), o.n_fp(), o.n_fn());
    p.push_back(x.precision);
    r.push_back(x.recall);
    f.push_back(x.f1);
  }
  m.micro = prf_from_counts(tp, fp, fn);
  m.macro_mean = {mean(p), mean(r), mean(f)};
  m.macro_std = {stddev(p), stddev(r), stddev(f)};
  return m;
}

FSCCurve fsc(const Volume& v1, const Volume& v2) {
  if (!v1.same_shape(v2))
    throw ShapeError("fsc: volume shapes differ (" + std::to_string(v1.nz) + "x" + std::to_string(v1.ny) + "x" +
                     std::to_string(v1.nx) + " vs " + std::to_string(v2.nz) + "x" + std::to_string(v2.ny) + "x" +
                     std::to_string(v2.nx) + ")");
  if (std::abs(v1.voxel_size_angstrom - v2.voxel_size_angstrom) > 1e-9 * v1.voxel_size_angstrom)
    throw ShapeError("fsc: voxel sizes differ");
  const Spectrum3 a = rfft3(v1), b = rfft3(v2);
  const int n = std::min({v1.nz, v1.ny, v1.nx});
  const int shells = n / 2;
  std::vector<double> num(shells + 1, 0.0), pa(shells + 1, 0.0), pb(shells + 1, 0.0);
  std::vector<long> count(shells + 1, 0);
  for (int z = 0; z < a.nz; ++z) {
    const double fz = static_cast<double>(signed_freq(z, a.nz)) / a.nz;
    for (int y = 0; y < a.ny; ++y) {
      const double fy = static_cast<double>(signed_freq(y, a.ny)) / a.ny;
      for (int x = 0; x < a.nx_half(); ++x) {
        const double fx = static_cast<double>(x) / a.nx;
        const int shell = static_cast<int>(std::lround(std::sqrt(fz * fz + fy * fy + fx * fx) * n));
        if (shell < 1 || shell > shells) continue;
        // Bins 1 .. (nx-1)/2 stand for themselves and their Hermitian mirror.
        const int weight = (x == 0 || (a.nx % 2 == 0 && x == a.nx / 2)) ? 1 : 2;
        const auto& fa = a.at(z, y, x);
        const auto& fb = b.at(z, y, x);
        num[shell] += weight * (fa * std::conj(fb)).real();
        pa[shell] += weight * std::norm(fa);
        pb[shell] += weight * std::norm(fb);
        count[shell] += weight;
      }
    }
  }
  FSCCurve c;
  c.voxel_size = v1.voxel_size_angstrom;
  for (int s = 1; s <= shells; ++s) {
    c.shell_centers.push_back(static_cast<double>(s) / (n * v1.voxel_size_angstrom));
    const double den = std::sqrt(pa[s] * pb[s]);
    c.correlations.push_back(den > 0.0 ? num[s] / den : 0.0);
    c.shell_voxels.push_back(count[s]);
  }
  return c;
}

Resolution resolution_at(const FSCCurve& c, double threshold) {
  if (c.correlations.empty() || c.correlations.size() != c.shell_centers.size())
    throw ParameterError("resolution_at: empty or inconsistent curve");
  Resolution r;
  for (std::size_t i = 0; i < c.correlations.size(); ++i) {
    if (c.correlations[i] >= threshold) continue;
    if (i == 0) {
      r.frequency = c.shell_centers[0];
    } else {
      const double f0 = c.shell_centers[i - 1], f1 = c.shell_centers[i];
      const double c0 = c.correlations[i - 1], c1 = c.correlations[i];
      r.frequency = f0 + (c0 - threshold) / (c0 - c1) * (f1 - f0);
    }
    r.angstrom = 1.0 / r.frequency;
    return r;
  }
  r.nyquist_limited = true;
  r.angstrom = 2.0 * c.voxel_size;
  r.frequency = 1.0 / r.angstrom;
  return r;
}

double psnr(const Image& estimate, const Image& reference) {
  if (!estimate.same_shape(reference) || reference.empty()) throw ShapeError("psnr: image shapes differ");
  const auto [lo, hi] = std::minmax_element(reference.values().begin(), reference.values().end());
  const double peak = *hi - *lo;
  double mse = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) mse += (estimate[i] - reference[i]) * (estimate[i] - reference[i]);
  mse /= static_cast<double>(reference.size());
  if (!(peak > 0.0)) throw ParameterError("psnr: reference image is constant");
  return 10.0 * std::log10(peak * peak / mse);
}

ParticleSet pick_particles(const Image& img, const PickerConfig& cfg) {
  if (!(cfg.particle_radius > 0.0)) throw ParameterError("picker radius must be positive");
  const double r_in = cfg.particle_radius, r_out = 1.5 * cfg.particle_radius;
  const int reach = static_cast<int>(std::ceil(r_out));
  struct Tap {
    int dy, dx;
    double w;
  };
  std::vector<Tap> taps;
  int n_in = 0, n_out = 0;
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx) {
      const double d = std::hypot(dy, dx);
      if (d <= r_in) ++n_in;
      else if (d <= r_out) ++n_out;
    }
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx) {
      const double d = std::hypot(dy, dx);
      if (d <= r_in) taps.push_back({dy, dx, 1.0 / n_in});
      else if (d <= r_out && n_out > 0) taps.push_back({dy, dx, -1.0 / n_out});
    }

  const int h = img.height(), w = img.width();
  const double sign = cfg.dark_particles ? -1.0 : 1.0;
  Image score(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (const auto& t : taps) {
        const int yy = std::clamp(y + t.dy, 0, h - 1), xx = std::clamp(x + t.dx, 0, w - 1);
        acc += t.w * img(yy, xx);
      }
      score(y, x) = sign * acc;
    }

  std::vector<double> vals(score.values().begin(), score.values().end());
  auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  const double med = *mid;
  for (auto& v : vals) v = std::abs(v - med);
  std::nth_element(vals.begin(), mid, vals.end());
  const double scale = std::max(1.4826 * *mid, 1e-12);

  const int border = cfg.border >= 0 ? cfg.border : static_cast<int>(std::lround(cfg.particle_radius));
  struct Cand {
    double z;
    int y, x;
  };
  std::vector<Cand> cands;
  for (int y = border; y < h - border; ++y)
    for (int x = border; x < w - border; ++x) {
      const double z = (score(y, x) - med) / scale;
      if (z >= cfg.threshold_z) cands.push_back({z, y, x});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return std::tie(b.z, a.y, a.x) < std::tie(a.z, b.y, b.x);
  });
  const double nms = cfg.min_distance > 0.0 ? cfg.min_distance : 2.0 * cfg.particle_radius;
  ParticleSet out;
  for (const auto& c : cands) {
    if (cfg.max_picks > 0 && static_cast<int>(out.coordinates.size()) >= cfg.max_picks) break;
    bool clear = true;
    for (const auto& p : out.coordinates)
      if (std::hypot(p[0] - c.x, p[1] - c.y) < nms) {
        clear = false;
        break;
      }
    if (clear) out.coordinates.push_back({static_cast<double>(c.x), static_cast<double>(c.y)});
  }
  return out;
}

ParticleSet read_coordinates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open coordinate file " + path.string());
  ParticleSet s;
  s.micrograph_id = path.stem().string();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double x = 0.0, y = 0.0;
    if (!(ls >> x)) continue;
    if (!(ls >> y) || !std::isfinite(x) || !std::isfinite(y))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected \"x y\"");
    s.coordinates.push_back({x, y});
  }
  return s;
}

void write_coordinates(const std::filesystem::path& path, const ParticleSet& set) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write coordinate file " + path.string());
  out << std::setprecision(10);
  for (const auto& p : set.coordinates) out << p[0] << ' ' << p[1] << '\n';
}

void write_fsc_csv(const std::filesystem::path& path, const FSCCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "freq_per_angstrom,fsc\n" << std::setprecision(10);
  for (std::size_t i = 0; i < curve.correlations.size(); ++i)
    out << curve.shell_centers[i] << ',' << curve.correlations[i] << '\n';
}

void write_picking_csv(const std::filesystem::path& path, const std::vector<MethodMetrics>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "method,micro_P,micro_R,micro_F1,macro_P_mean,macro_P_std,macro_R_mean,macro_R_std,macro_F1_mean,"
         "macro_F1_std\n"
      << std::setprecision(6);
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.method << ',' << m.micro.precision << ',' << m.micro.recall << ',' << m.micro.f1 << ','
        << m.macro_mean.precision << ',' << m.macro_std.precision << ',' << m.macro_mean.recall << ','
        << m.macro_std.recall << ',' << m.macro_mean.f1 << ',' << m.macro_std.f1 << '\n';
  }
}

}  // namespace tgd
