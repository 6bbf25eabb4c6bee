#include "ials.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>

#include "errors.hpp"
#include "random.hpp"

namespace uniprofile::ials {

std::string to_string(Target t) { return t == Target::kCategory ? "category" : "url"; }

Target target_from_string(const std::string& s) {
  if (s == "category") return Target::kCategory;
  if (s == "url") return Target::kUrl;
  throw SchemaError("unknown iALS target '" + s + "'");
}

InteractionMatrix::InteractionMatrix(
    std::vector<std::uint64_t> user_ids, std::vector<std::int64_t> item_ids,
    const std::vector<std::tuple<std::uint32_t, std::uint32_t, double>>& triplets)
    : user_ids_(std::move(user_ids)),
      item_ids_(std::move(item_ids)),
      rows_(user_ids_.size()),
      cols_(item_ids_.size()) {
  std::vector<std::map<std::uint32_t, double>> acc(user_ids_.size());
  for (const auto& [u, i, w] : triplets) {
    if (u >= user_ids_.size() || i >= item_ids_.size())
      throw IndexError("interaction triplet outside matrix bounds");
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ValidationError("interaction weights must be finite and non-negative");
    acc[u][i] += w;
  }
  for (std::uint32_t u = 0; u < acc.size(); ++u)
    for (const auto& [i, w] : acc[u]) {
      if (w == 0.0) continue;
      rows_[u].push_back({i, w});
      cols_[i].push_back({u, w});
    }
}

std::size_t InteractionMatrix::nnz() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

double InteractionMatrix::weight(std::size_t u, std::size_t i) const {
  for (const auto& c : rows_[u])
    if (c.index == i) return c.weight;
  return 0.0;
}

DenseMatrix InteractionMatrix::to_dense() const {
  DenseMatrix d = DenseMatrix::Zero(static_cast<Eigen::Index>(num_users()),
                                    static_cast<Eigen::Index>(num_items()));
  for (std::size_t u = 0; u < rows_.size(); ++u)
    for (const auto& c : rows_[u]) d(static_cast<Eigen::Index>(u), c.index) = c.weight;
  return d;
}

WeightMap default_weights(Target t) {
  if (t == Target::kCategory)
    return {{EventType::kProductBuy, 3.0}, {EventType::kAddToCart, 1.0}};
  return {{EventType::kPageVisit, 1.0}};
}

InteractionMatrix build_interaction_matrix(const EventLog& log, Target target,
                                           const WeightMap& weights,
                                           const std::vector<std::uint64_t>& clients) {
  std::map<std::int64_t, std::uint32_t> item_index;
  std::vector<std::tuple<std::uint32_t, std::int64_t, double>> raw;
  for (std::uint32_t u = 0; u < clients.size(); ++u) {
    const ClientHistory* h = log.find(clients[u]);
    if (!h) continue;
    for (const auto& e : h->events) {
      auto w = weights.find(e.type);
      if (w == weights.end()) continue;
      const auto& item = target == Target::kCategory ? e.category : e.url;
      if (!item) continue;
      item_index.emplace(*item, 0);
      raw.emplace_back(u, *item, w->second);
    }
  }
  std::vector<std::int64_t> item_ids;
  for (auto& [id, idx] : item_index) {
    idx = static_cast<std::uint32_t>(item_ids.size());
    item_ids.push_back(id);
  }
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> triplets;
  triplets.reserve(raw.size());
  for (const auto& [u, item, w] : raw) triplets.emplace_back(u, item_index.at(item), w);
  return InteractionMatrix(clients, std::move(item_ids), triplets);
}

IalsModel init_model(const InteractionMatrix& m, const IalsParams& p, std::uint64_t seed) {
  if (p.factors <= 0) throw ParameterError("iALS factors must be positive");
  if (p.regularization < 0.0 || p.alpha < 0.0)
    throw ParameterError("iALS regularization and alpha must be non-negative");
  Rng rng(seed);
  IalsModel model;
  model.regularization = p.regularization;
  model.alpha = p.alpha;
  model.user_factors.resize(static_cast<Eigen::Index>(m.num_users()), p.factors);
  model.item_factors.resize(static_cast<Eigen::Index>(m.num_items()), p.factors);
  for (auto* f : {&model.user_factors, &model.item_factors})
    for (Eigen::Index i = 0; i < f->size(); ++i)
      f->data()[i] = rng.uniform(-p.init_scale, p.init_scale);
  return model;
}

namespace {

// Solves every row of `target` against the fixed factors `other`, using the
// precomputed Gram matrix plus a per-row correction for observed cells.
void half_sweep(const std::function<const std::vector<Cell>&(std::size_t)>& cells,
                DenseMatrix& target, const DenseMatrix& other, double lambda, double alpha,
                const char* what) {
  const Eigen::Index k = target.cols();
  const Eigen::MatrixXd gram = other.transpose() * other;
  Eigen::MatrixXd a(k, k);
  Eigen::VectorXd b(k);
  for (Eigen::Index row = 0; row < target.rows(); ++row) {
    a = gram;
    a.diagonal().array() += lambda;
    b.setZero();
    for (const auto& c : cells(static_cast<std::size_t>(row))) {
      const double conf = 1.0 + alpha * c.weight;
      const auto y = other.row(c.index).transpose();
      a.noalias() += (conf - 1.0) * (y * y.transpose());
      b.noalias() += conf * y;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
      throw NumericError(std::string("iALS: singular regularized system in ") + what + " solve");
    target.row(row) = llt.solve(b).transpose();
  }
  if (!target.allFinite()) throw NumericError(std::string("iALS: non-finite ") + what + " factors");
}

}  // namespace

void solve_users(const InteractionMatrix& m, IalsModel& model) {
  half_sweep([&m](std::size_t u) -> const std::vector<Cell>& { return m.user_row(u); },
             model.user_factors, model.item_factors, model.regularization, model.alpha, "user");
}

void solve_items(const InteractionMatrix& m, IalsModel& model) {
  half_sweep([&m](std::size_t i) -> const std::vector<Cell>& { return m.item_column(i); },
             model.item_factors, model.user_factors, model.regularization, model.alpha, "item");
}

IalsModel ials_fit(const InteractionMatrix& m, const IalsParams& p, std::uint64_t seed,
                   const std::function<void(const IalsModel&)>& after_half_sweep) {
  if (p.iterations < 1) throw ParameterError("iALS iterations must be >= 1");
  IalsModel model = init_model(m, p, seed);
  for (int it = 0; it < p.iterations; ++it) {
    solve_users(m, model);
    if (after_half_sweep) after_half_sweep(model);
    solve_items(m, model);
    if (after_half_sweep) after_half_sweep(model);
  }
  return model;
}

double objective(const InteractionMatrix& m, const IalsModel& model) {
  const auto& x = model.user_factors;
  const auto& y = model.item_factors;
  // All cells as if unobserved (c = 1, p = 0): sum (x_u . y_i)^2 = <XtX, YtY>.
  const Eigen::MatrixXd gx = x.transpose() * x;
  const Eigen::MatrixXd gy = y.transpose() * y;
  double total = gx.cwiseProduct(gy).sum();
  for (std::size_t u = 0; u < m.num_users(); ++u)
    for (const auto& c : m.user_row(u)) {
      const double s = x.row(static_cast<Eigen::Index>(u)).dot(y.row(c.index));
      const double conf = 1.0 + model.alpha * c.weight;
      total += conf * (1.0 - s) * (1.0 - s) - s * s;
    }
  return total + model.regularization * (x.squaredNorm() + y.squaredNorm());
}

ProfileMatrix user_embeddings(const InteractionMatrix& m, const IalsModel& model,
                              const std::string& source) {
  const auto k = static_cast<std::uint32_t>(model.user_factors.cols());
  std::vector<float> values(m.num_users() * k);
  for (std::size_t u = 0; u < m.num_users(); ++u)
    for (std::uint32_t j = 0; j < k; ++j)
      values[u * k + j] = static_cast<float>(model.user_factors(static_cast<Eigen::Index>(u), j));
  ProfileMatrix out(m.user_ids(), k, std::move(values));
  out.source = source;
  return out;
}

}  // namespace uniprofile::ials
