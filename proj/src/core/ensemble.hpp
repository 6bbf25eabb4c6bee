#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "profile.hpp"

namespace uniprofile::ensemble {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PcaModel {
  Eigen::VectorXd mean;                 // d
  DenseMatrix components;               // k x d, orthonormal rows
  Eigen::VectorXd explained_variance;   // k, non-increasing
};

// Top-k eigenvectors of the sample covariance (n - 1 denominator). Each
// direction is signed so its largest-magnitude coordinate is positive.
PcaModel pca_fit(const DenseMatrix& x, int k);
DenseMatrix pca_transform(const PcaModel& model, const DenseMatrix& x);

// v / |v|, or the zero vector when |v| <= 1e-12.
void l2_normalize(std::span<double> v);

struct QuantileMap {
  std::vector<double> knots;   // non-decreasing
  std::vector<double> levels;  // evenly spaced in [0, 1], parallel to knots
};

inline constexpr int kDefaultQuantiles = 1000;

QuantileMap quantile_fit(std::span<const double> column, int max_knots = kDefaultQuantiles);
// Interpolated empirical CDF; clamps outside the fitted range. A value equal
// to a run of tied knots maps to the middle of their levels. Constant fit
// columns map everything to 0.5.
double quantile_transform(const QuantileMap& map, double value);

struct SourceSpec {
  std::string name;
  ProfileMatrix matrix;
  Normalization normalization = Normalization::kUnitLength;
  std::optional<int> pca_k;
};

// Per source: PCA (fit on present clients), then normalization, then
// concatenation in declared order. Clients absent from a source get that
// source's column means over present clients, computed after normalization
// (accumulated in double in source row order, rounded to float). Fitting
// always uses source row order, so the output does not depend on the order of
// `master`.
ProfileMatrix combine(const std::vector<SourceSpec>& sources,
                      const std::vector<std::uint64_t>& master);

// Config-driven entry point used by the CLI:
//   {"sources": [{"path": "...", "name": "...", "normalization": "unit_length",
//                 "pca_k": 64}, ...],
//    "master": "<uemb path>" | "master_ids": [ ... ]}
// Without a master, the sorted union of source clients is used.
ProfileMatrix combine_from_config(const nlohmann::json& spec, const std::string& base_dir = "");

}  // namespace uniprofile::ensemble
