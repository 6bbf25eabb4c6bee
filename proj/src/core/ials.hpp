#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "event_log.hpp"
#include "profile.hpp"

namespace uniprofile::ials {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Target { kCategory, kUrl };

std::string to_string(Target t);
Target target_from_string(const std::string& s);

struct Cell {
  std::uint32_t index;  // item index in a user row, user index in an item column
  double weight;
};

// Sparse non-negative user x item weights, stored both row- and column-wise.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  // Triplets (user, item, weight); duplicates are summed.
  InteractionMatrix(std::vector<std::uint64_t> user_ids, std::vector<std::int64_t> item_ids,
                    const std::vector<std::tuple<std::uint32_t, std::uint32_t, double>>& triplets);

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return item_ids_.size(); }
  std::size_t nnz() const;
  const std::vector<std::uint64_t>& user_ids() const { return user_ids_; }
  const std::vector<std::int64_t>& item_ids() const { return item_ids_; }
  const std::vector<Cell>& user_row(std::size_t u) const { return rows_[u]; }
  const std::vector<Cell>& item_column(std::size_t i) const { return cols_[i]; }
  double weight(std::size_t u, std::size_t i) const;

  DenseMatrix to_dense() const;

 private:
  std::vector<std::uint64_t> user_ids_;
  std::vector<std::int64_t> item_ids_;
  std::vector<std::vector<Cell>> rows_;
  std::vector<std::vector<Cell>> cols_;
};

// Event-type weights for one target. For category the defaults are
// product_buy 3, add_to_cart 1; for url, page_visit 1.
using WeightMap = std::map<EventType, double>;
WeightMap default_weights(Target t);

// One row per client in `clients` (all-zero rows included); item index order
// is ascending raw id.
InteractionMatrix build_interaction_matrix(const EventLog& log, Target target,
                                           const WeightMap& weights,
                                           const std::vector<std::uint64_t>& clients);

struct IalsParams {
  int factors = 64;
  double regularization = 0.1;  // lambda
  double alpha = 40.0;          // confidence c = 1 + alpha * r
  int iterations = 15;
  double init_scale = 0.01;     // factors ~ U(-s, s)
};

struct IalsModel {
  DenseMatrix user_factors;  // n_users x k
  DenseMatrix item_factors;  // n_items x k
  double regularization = 0.1;
  double alpha = 40.0;
};

IalsModel init_model(const InteractionMatrix& m, const IalsParams& p, std::uint64_t seed);

// Exact ridge solve for every user given the item factors (and vice versa).
void solve_users(const InteractionMatrix& m, IalsModel& model);
void solve_items(const InteractionMatrix& m, IalsModel& model);

// `after_half_sweep`, when set, is called after every half-sweep (users then items).
IalsModel ials_fit(const InteractionMatrix& m, const IalsParams& p, std::uint64_t seed,
                   const std::function<void(const IalsModel&)>& after_half_sweep = {});

// sum_ui c_ui (p_ui - u.v)^2 + lambda (|U|^2 + |V|^2), via the Gram identity.
double objective(const InteractionMatrix& m, const IalsModel& model);

ProfileMatrix user_embeddings(const InteractionMatrix& m, const IalsModel& model,
                              const std::string& source);

}  // namespace uniprofile::ials
