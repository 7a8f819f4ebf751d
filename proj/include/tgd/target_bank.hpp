#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tgd/image.hpp"
#include "tgd/projection.hpp"

namespace tgd {

/// psi: maps a patch to a q-dimensional feature vector.
using FeatureMap = std::function<std::vector<double>(const Patch&)>;

/// Deterministic feature map usable without a trained network: block-average by
/// `factor` (low-pass + downsample), flatten, L2-normalise. A zero input maps to zeros.
std::vector<double> block_average_features(const Patch& x, int factor = 8);
FeatureMap block_average_feature_map(int factor = 8);

struct BankConfig {
  int n_views = 64;
  int inplane = 1;                  // in-plane rotations per viewing direction
  double cutoff = 1.0 / 20.0;       // 1/Angstrom
  double rolloff_fraction = 0.1;
  double temperature = 0.1;
  int out_size = 0;                 // 0: use the volume's x extent
  double target_scale = 1.0;        // multiplies projections before centring
  double rank_tolerance = 1e-8;     // relative to the largest singular value
  double min_relative_variance = 1e-3;
  std::string feature_map_name = "block8";
};

struct TargetBank {
  std::vector<Patch> projections;          // centred targets
  Patch center;                            // bank mean removed from every target
  std::vector<std::vector<double>> features;
  Eigen::MatrixXd basis;                   // q x r, orthonormal columns
  double sigma2_surrogate = 0.0;
  double temperature = 0.1;
  double lowpass_cutoff = 0.0;
  int n_views = 0;
  std::vector<EulerAngles> views;
  std::string feature_map_name;

  int size() const { return static_cast<int>(projections.size()); }
  int feature_dim() const { return static_cast<int>(basis.rows()); }
  int rank() const { return static_cast<int>(basis.cols()); }
  double sigma() const;
};

/// Centres raw projections, estimates the surrogate variance and extracts the feature subspace.
/// Throws DegenerateBankError when the centred bank has (relatively) zero variance or the
/// feature span has rank zero.
TargetBank assemble_bank(std::vector<Patch> raw_projections, const FeatureMap& psi,
                         const BankConfig& cfg);

/// Low-pass, quasi-uniform views, projection, then assemble_bank.
TargetBank build_bank(const Volume& v, const BankConfig& cfg, const FeatureMap& psi);

/// Recomputes features and basis with a new psi. Projections are untouched.
TargetBank refresh_features(const TargetBank& bank, const FeatureMap& psi, double rank_tolerance = 1e-8);

/// basis * (basis^T * x)
std::vector<double> project_to_subspace(const std::vector<double>& x_feat, const TargetBank& bank);

struct MatchResult {
  std::vector<double> weights;
  std::vector<double> similarities;
  Patch target;
  double confidence = 0.0;
  double temperature = 0.0;
  bool degenerate = false;
};

/// Numerically stable softmax of a / tau.
std::vector<double> softmax(const std::vector<double>& a, double tau);

MatchResult match_features(const std::vector<double>& x_feat, const TargetBank& bank);
MatchResult match(const Patch& x, const TargetBank& bank, const FeatureMap& psi);

void save_bank(const TargetBank& bank, const std::filesystem::path& path);
TargetBank load_bank(const std::filesystem::path& path);

}  // namespace tgd
