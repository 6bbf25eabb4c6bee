#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "event_log.hpp"
#include "nn.hpp"
#include "profile.hpp"

namespace uniprofile::eval {

enum class Task { kChurn, kCategoryPropensity, kProductPropensity, kConversion };

std::string to_string(Task t);
// Accepts the full names and the short forms churn, category, product, conversion.
Task task_from_string(const std::string& s);
std::vector<Task> parse_task_list(const std::string& csv);
bool is_propensity(Task t);

inline constexpr int kPropensityTargets = 100;

struct TaskLabels {
  Task task = Task::kChurn;
  std::vector<std::uint64_t> client_ids;
  int targets = 1;                     // T
  std::vector<float> labels;           // n x T, row-major, values 0/1
  std::vector<std::int64_t> target_ids;  // propensity: raw category / sku per column
  std::vector<double> popularity;        // per column; history buy counts for propensity

  float at(std::size_t i, int j) const { return labels[i * static_cast<std::size_t>(targets) + j]; }
};

// Clients are those of `history`. Propensity columns are the most-bought
// categories / SKUs of the history window (ties by smaller id), most popular
// first.
TaskLabels make_labels(const EventLog& history, const EventLog& holdout, Task task,
                       int max_targets = kPropensityTargets);

// Average-rank AUROC; 0.5 when either class is absent.
double auroc(std::span<const double> scores, std::span<const float> labels);

struct NoveltyDiversity {
  double novelty = 0.0;
  double diversity = 0.0;
};

// Every row selects its top_k columns by score (ties to the smaller column).
// novelty: mean popularity rank / (T - 1) over selections, rank 0 being the
// most popular column. diversity: entropy of how often each column is
// selected, divided by ln T.
NoveltyDiversity novelty_diversity(std::span<const double> scores, std::size_t rows, int targets,
                                   std::span<const double> popularity, int top_k = 10);

double composite_score(double auroc, double novelty, double diversity, Task task);

struct BordaEntry {
  std::string team;
  int points = 0;
};

// Each inner list ranks the same teams, best first. Result is ordered by
// points descending, then team name.
std::vector<BordaEntry> borda(const std::vector<std::vector<std::string>>& rankings);

struct ProbeConfig {
  int hidden = 128;
  double lr = 1e-3;
  int batch_size = 128;
  int max_epochs = 50;
  int patience = 5;
  int validation_mod = 5;  // a client is in validation when hash(id) % mod == 0
};

bool in_validation(std::uint64_t client_id, const ProbeConfig& cfg);

struct ProbeModel {
  nn::Parameter<float> w1, b1, w2, b2;
  int best_epoch = 0;
  double best_validation_auroc = 0.0;
  int epochs_run = 0;

  // n x T logits for inputs n x d.
  nn::Matrix<float> logits(const nn::Matrix<float>& x) const;
};

// Rows of `x` are aligned with labels.client_ids.
ProbeModel train_probe(const nn::Matrix<float>& x, const TaskLabels& labels, std::uint64_t seed,
                       const ProbeConfig& cfg = {});

struct TaskResult {
  Task task = Task::kChurn;
  double auroc = 0.5;
  std::optional<double> novelty;
  std::optional<double> diversity;
  double score = 0.5;
  int validation_clients = 0;
  int best_epoch = 0;
};

struct ProfileReport {
  std::string name;
  std::uint32_t dim = 0;
  std::vector<TaskResult> tasks;
  double total() const;
};

// Trains one probe per task and scores it on the validation clients. Tasks run
// in parallel when threads > 1; results do not depend on the thread count.
ProfileReport evaluate_profile(const std::string& name, const ProfileMatrix& profiles,
                               const std::vector<TaskLabels>& labels, std::uint64_t seed,
                               const ProbeConfig& cfg = {}, unsigned threads = 1);

nlohmann::json report_json(const std::vector<ProfileReport>& reports);

}  // namespace uniprofile::eval
