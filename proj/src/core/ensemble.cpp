#include "ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <unordered_map>

#include "errors.hpp"

namespace uniprofile::ensemble {

PcaModel pca_fit(const DenseMatrix& x, int k) {
  const auto n = x.rows(), d = x.cols();
  if (n < 2) throw ParameterError("pca_fit needs at least two rows");
  if (k < 1 || k > std::min(n, d))
    throw ParameterError("pca_fit: k=" + std::to_string(k) + " must lie in [1, min(n, d)=" +
                         std::to_string(std::min(n, d)) + "]");
  PcaModel m;
  m.mean = x.colwise().mean().transpose();
  const DenseMatrix centered = x.rowwise() - m.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_fit: eigensolver failed");
  m.components.resize(k, d);
  m.explained_variance.resize(k);
  for (int j = 0; j < k; ++j) {
    const Eigen::Index src = d - 1 - j;  // eigenvalues come ascending
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.row(j) = v.transpose();
    m.explained_variance(j) = std::max(0.0, eig.eigenvalues()(src));
  }
  return m;
}

DenseMatrix pca_transform(const PcaModel& model, const DenseMatrix& x) {
  if (x.cols() != model.mean.size()) throw ShapeError("pca_transform: width mismatch");
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

void l2_normalize(std::span<double> v) {
  double sq = 0.0;
  for (double a : v) sq += a * a;
  const double norm = std::sqrt(sq);
  if (norm > 1e-12) {
    for (double& a : v) a /= norm;
  } else {
    std::fill(v.begin(), v.end(), 0.0);
  }
}

QuantileMap quantile_fit(std::span<const double> column, int max_knots) {
  if (column.empty()) throw ParameterError("quantile_fit: empty column");
  if (max_knots < 2) throw ParameterError("quantile_fit: need at least two knots");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t q = std::min(static_cast<std::size_t>(max_knots), sorted.size());
  QuantileMap m;
  if (q == 1) {
    m.knots = {sorted[0]};
    m.levels = {0.5};
    return m;
  }
  m.knots.resize(q);
  m.levels.resize(q);
  const double last = static_cast<double>(sorted.size() - 1);
  for (std::size_t j = 0; j < q; ++j) {
    const double level = static_cast<double>(j) / static_cast<double>(q - 1);
    const double pos = level * last;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    m.levels[j] = level;
    m.knots[j] = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  }
  // Interpolation can break monotonicity by one ulp; restore it.
  for (std::size_t j = 1; j < q; ++j) m.knots[j] = std::max(m.knots[j], m.knots[j - 1]);
  return m;
}

double quantile_transform(const QuantileMap& m, double value) {
  const auto& k = m.knots;
  if (k.size() == 1 || k.front() == k.back()) return 0.5;
  if (value < k.front()) return 0.0;
  if (value > k.back()) return 1.0;
  const auto lo = std::lower_bound(k.begin(), k.end(), value);
  if (*lo == value) {
    const auto hi = std::upper_bound(lo, k.end(), value) - 1;
    return 0.5 * (m.levels[static_cast<std::size_t>(lo - k.begin())] +
                  m.levels[static_cast<std::size_t>(hi - k.begin())]);
  }
  const auto j = static_cast<std::size_t>(lo - k.begin());  // k[j-1] < value < k[j]
  const double t = (value - k[j - 1]) / (k[j] - k[j - 1]);
  return m.levels[j - 1] + t * (m.levels[j] - m.levels[j - 1]);
}

namespace {

// Normalized block for the present rows of one source, in source row order.
struct FittedBlock {
  std::vector<std::size_t> source_rows;  // rows of spec.matrix that are in master
  std::vector<float> values;             // source_rows.size() x width
  std::uint32_t width = 0;
  std::vector<float> column_means;
};

FittedBlock fit_block(const SourceSpec& spec, const std::set<std::uint64_t>& master) {
  FittedBlock blk;
  const ProfileMatrix& m = spec.matrix;
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (master.count(m.client_ids()[i])) blk.source_rows.push_back(i);
  if (blk.source_rows.empty())
    throw ConfigError("combine: source '" + spec.name + "' has no clients in the master list");

  const auto n = static_cast<Eigen::Index>(blk.source_rows.size());
  DenseMatrix x(n, m.dim());
  for (Eigen::Index r = 0; r < n; ++r) {
    auto row = m.row(blk.source_rows[static_cast<std::size_t>(r)]);
    for (std::uint32_t j = 0; j < m.dim(); ++j) x(r, j) = row[j];
  }
  if (!x.allFinite())
    throw ValidationError("combine: source '" + spec.name + "' contains non-finite values");
  if (spec.pca_k) x = pca_transform(pca_fit(x, *spec.pca_k), x);

  switch (spec.normalization) {
    case Normalization::kUnitLength:
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        l2_normalize(std::span<double>(x.row(r).data(), static_cast<std::size_t>(x.cols())));
      break;
    case Normalization::kQuantile:
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        std::vector<double> col(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index r = 0; r < x.rows(); ++r) col[static_cast<std::size_t>(r)] = x(r, j);
        const QuantileMap qm = quantile_fit(col);
        for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, j) = quantile_transform(qm, x(r, j));
      }
      break;
    case Normalization::kNone:
      break;
  }

  blk.width = static_cast<std::uint32_t>(x.cols());
  blk.values.resize(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    blk.values[static_cast<std::size_t>(i)] = static_cast<float>(x.data()[i]);
  blk.column_means.resize(blk.width);
  for (std::uint32_t j = 0; j < blk.width; ++j) {
    double acc = 0.0;
    for (std::size_t r = 0; r < blk.source_rows.size(); ++r)
      acc += static_cast<double>(blk.values[r * blk.width + j]);
    blk.column_means[j] = static_cast<float>(acc / static_cast<double>(blk.source_rows.size()));
  }
  return blk;
}

}  // namespace

ProfileMatrix combine(const std::vector<SourceSpec>& sources,
                      const std::vector<std::uint64_t>& master) {
  if (sources.empty()) throw ConfigError("combine: no sources");
  const std::set<std::uint64_t> master_set(master.begin(), master.end());
  if (master_set.size() != master.size()) throw ConfigError("combine: duplicate master client ids");

  std::vector<FittedBlock> blocks;
  std::uint32_t width = 0;
  for (const auto& s : sources) {
    blocks.push_back(fit_block(s, master_set));
    width += blocks.back().width;
  }

  std::vector<float> values(master.size() * width);
  std::vector<SourceBlock> layout;
  std::uint32_t offset = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const FittedBlock& blk = blocks[s];
    std::unordered_map<std::uint64_t, std::size_t> pos_of;
    for (std::size_t r = 0; r < blk.source_rows.size(); ++r)
      pos_of.emplace(sources[s].matrix.client_ids()[blk.source_rows[r]], r);
    for (std::size_t i = 0; i < master.size(); ++i) {
      float* dst = values.data() + i * width + offset;
      auto it = pos_of.find(master[i]);
      const float* src = it == pos_of.end() ? blk.column_means.data()
                                            : blk.values.data() + it->second * blk.width;
      std::copy(src, src + blk.width, dst);
    }
    layout.push_back({sources[s].name, offset, blk.width, sources[s].normalization});
    offset += blk.width;
  }

  for (float v : values)
    if (!std::isfinite(v)) throw NumericError("combine: non-finite output");
  ProfileMatrix out(master, width, std::move(values));
  out.source = "ensemble";
  out.blocks = std::move(layout);
  return out;
}

ProfileMatrix combine_from_config(const nlohmann::json& spec, const std::string& base_dir) {
  namespace fs = std::filesystem;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    if (path.is_relative() && !base_dir.empty()) path = fs::path(base_dir) / path;
    return path.string();
  };
  if (!spec.contains("sources") || !spec["sources"].is_array())
    throw ConfigError("combine spec: 'sources' array required");
  std::vector<SourceSpec> sources;
  try {
    for (const auto& s : spec["sources"]) {
      SourceSpec src;
      src.matrix = read_uemb_file(resolve(s.at("path").get<std::string>()));
      src.name = s.value("name", src.matrix.source.empty() ? s.at("path").get<std::string>()
                                                           : src.matrix.source);
      src.normalization = normalization_from_string(s.value("normalization", std::string("unit_length")));
      if (s.contains("pca_k") && !s["pca_k"].is_null()) src.pca_k = s["pca_k"].get<int>();
      sources.push_back(std::move(src));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("combine spec: ") + ex.what());
  }
  std::vector<std::uint64_t> master;
  if (spec.contains("master_ids")) {
    master = spec["master_ids"].get<std::vector<std::uint64_t>>();
  } else if (spec.contains("master")) {
    master = read_uemb_file(resolve(spec["master"].get<std::string>())).client_ids();
  } else {
    std::set<std::uint64_t> all;
    for (const auto& s : sources) all.insert(s.matrix.client_ids().begin(), s.matrix.client_ids().end());
    master.assign(all.begin(), all.end());
  }
  return combine(sources, master);
}

}  // namespace uniprofile::ensemble
