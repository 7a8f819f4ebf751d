#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "tgd/image.hpp"

namespace tgd {

/// (x, y) in pixels: x is the column, y the row.
using Point = std::array<double, 2>;

struct ParticleSet {
  std::vector<Point> coordinates;
  std::string micrograph_id;
};

struct MatchPair {
  int pred = 0;
  int gt = 0;
  double distance = 0.0;
};

struct MatchOutcome {
  std::vector<MatchPair> tp;
  std::vector<int> fp;  // unmatched prediction indices
  std::vector<int> fn;  // unmatched ground-truth indices

  int n_tp() const { return static_cast<int>(tp.size()); }
  int n_fp() const { return static_cast<int>(fp.size()); }
  int n_fn() const { return static_cast<int>(fn.size()); }
};

/// Greedy nearest-first one-to-one matching; a pair qualifies when distance <= threshold.
/// Ties in distance are broken by (pred, gt) index so the result is deterministic.
MatchOutcome match_particles(const ParticleSet& pred, const ParticleSet& gt, double threshold);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero denominators give 0.
PRF prf_from_counts(long tp, long fp, long fn);

struct PickingMetrics {
  PRF micro;
  PRF macro_mean;
  PRF macro_std;  // population standard deviation across micrographs
  int n_micrographs = 0;
};

PickingMetrics picking_metrics(const std::vector<MatchOutcome>& per_micrograph);

struct FSCCurve {
  std::vector<double> shell_centers;  // 1/Angstrom
  std::vector<double> correlations;
  std::vector<long> shell_voxels;     // full-spectrum voxel count per shell
  double voxel_size = 1.0;
};

/// Fourier shell correlation over integer-radius shells 1..N/2 (N = smallest edge); DC excluded.
FSCCurve fsc(const Volume& v1, const Volume& v2);

struct Resolution {
  double angstrom = 0.0;
  double frequency = 0.0;  // 1/Angstrom
  bool nyquist_limited = false;
};

/// First downward crossing of `threshold`, linearly interpolated between shells. A curve that never
/// drops below the threshold reports the Nyquist resolution (2 * voxel size) and sets the flag.
Resolution resolution_at(const FSCCurve& curve, double threshold = 0.143);

/// Peak signal-to-noise ratio in dB, peak = dynamic range of the reference.
double psnr(const Image& estimate, const Image& reference);

struct PickerConfig {
  double particle_radius = 16.0;  // pixels; template is a disc of this radius
  double threshold_z = 3.0;       // peak threshold in robust z-units of the correlation map
  double min_distance = 0.0;      // non-maximum suppression radius; 0: 2 * radius
  int max_picks = 0;              // 0: unlimited
  int border = -1;                // ignore peaks this close to the edge; -1: radius
  bool dark_particles = false;    // particles darker than background
};

/// Template-correlation picker: correlate with a zero-mean disc template, standardise the score
/// map by its median and MAD, then greedily accept peaks above threshold with non-maximum suppression.
ParticleSet pick_particles(const Image& img, const PickerConfig& cfg);

/// Text file, one "x y" pair per line; blank lines and '#' comments ignored.
ParticleSet read_coordinates(const std::filesystem::path& path);
void write_coordinates(const std::filesystem::path& path, const ParticleSet& set);

void write_fsc_csv(const std::filesystem::path& path, const FSCCurve& curve);

struct MethodMetrics {
  std::string method;
  PickingMetrics metrics;
};
void write_picking_csv(const std::filesystem::path& path, const std::vector<MethodMetrics>& rows);

}  // namespace tgd
