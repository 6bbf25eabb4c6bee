#include "eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "errors.hpp"
#include "random.hpp"

namespace uniprofile::eval {

using nn::Var;

std::string to_string(Task t) {
  switch (t) {
    case Task::kChurn: return "churn";
    case Task::kCategoryPropensity: return "category_propensity";
    case Task::kProductPropensity: return "product_propensity";
    case Task::kConversion: return "conversion";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "churn") return Task::kChurn;
  if (s == "category_propensity" || s == "category") return Task::kCategoryPropensity;
  if (s == "product_propensity" || s == "product" || s == "sku") return Task::kProductPropensity;
  if (s == "conversion") return Task::kConversion;
  throw SchemaError("unknown task '" + s + "'");
}

std::vector<Task> parse_task_list(const std::string& csv) {
  std::vector<Task> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Task t = task_from_string(item);
    if (std::find(out.begin(), out.end(), t) != out.end())
      throw SchemaError("task '" + item + "' listed twice");
    out.push_back(t);
  }
  if (out.empty()) throw SchemaError("empty task list");
  return out;
}

bool is_propensity(Task t) {
  return t == Task::kCategoryPropensity || t == Task::kProductPropensity;
}

TaskLabels make_labels(const EventLog& history, const EventLog& holdout, Task task,
                       int max_targets) {
  TaskLabels out;
  out.task = task;
  out.client_ids = history.client_ids();
  const std::size_t n = out.client_ids.size();

  if (!is_propensity(task)) {
    out.targets = 1;
    out.labels.assign(n, 0.0f);
    out.popularity = {0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const ClientHistory* h = holdout.find(out.client_ids[i]);
      const bool active = h != nullptr && !h->events.empty();
      if (task == Task::kChurn) {
        out.labels[i] = active ? 0.0f : 1.0f;
      } else if (active) {
        for (const auto& e : h->events)
          if (e.type == EventType::kProductBuy) {
            out.labels[i] = 1.0f;
            break;
          }
      }
    }
    return out;
  }

  if (max_targets < 2) throw ParameterError("propensity tasks need at least two targets");
  auto item_of = [task](const Event& e) {
    return task == Task::kCategoryPropensity ? *e.category : *e.sku;
  };
  std::map<std::int64_t, double> counts;
  for (const auto& c : history.clients())
    for (const auto& e : c.events)
      if (e.type == EventType::kProductBuy) counts[item_of(e)] += 1.0;
  std::vector<std::pair<std::int64_t, double>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > static_cast<std::size_t>(max_targets)) ranked.resize(max_targets);
  if (ranked.size() < 2)
    throw ContractError("propensity task " + to_string(task) +
                        " has fewer than two bought targets in the history window");

  out.targets = static_cast<int>(ranked.size());
  std::map<std::int64_t, int> column;
  for (const auto& [id, cnt] : ranked) {
    column.emplace(id, static_cast<int>(out.target_ids.size()));
    out.target_ids.push_back(id);
    out.popularity.push_back(cnt);
  }
  out.labels.assign(n * ranked.size(), 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const ClientHistory* h = holdout.find(out.client_ids[i]);
    if (h == nullptr) continue;
    for (const auto& e : h->events) {
      if (e.type != EventType::kProductBuy) continue;
      auto it = column.find(item_of(e));
      if (it != column.end()) out.labels[i * ranked.size() + it->second] = 1.0f;
    }
  }
  return out;
}

double auroc(std::span<const double> scores, std::span<const float> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] > 0.5f) {
        pos += 1.0;
        rank_sum += avg_rank;
      }
    i = j + 1;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return 0.5;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

NoveltyDiversity novelty_diversity(std::span<const double> scores, std::size_t rows, int targets,
                                   std::span<const double> popularity, int top_k) {
  if (targets < 2) throw ParameterError("novelty_diversity needs at least two targets");
  const auto t = static_cast<std::size_t>(targets);
  if (scores.size() != rows * t || popularity.size() != t)
    throw ShapeError("novelty_diversity: shape mismatch");
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(top_k, 1)), t);

  std::vector<std::size_t> by_pop(t);
  std::iota(by_pop.begin(), by_pop.end(), 0);
  std::stable_sort(by_pop.begin(), by_pop.end(),
                   [&](std::size_t a, std::size_t b) { return popularity[a] > popularity[b]; });
  std::vector<double> pop_rank(t);
  for (std::size_t r = 0; r < t; ++r) pop_rank[by_pop[r]] = static_cast<double>(r);

  NoveltyDiversity out;
  if (rows == 0) return out;
  std::vector<double> picked(t, 0.0);
  std::vector<std::size_t> cols(t);
  double novelty_sum = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* s = scores.data() + i * t;
    std::iota(cols.begin(), cols.end(), 0);
    std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(k), cols.end(),
                      [s](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    for (std::size_t j = 0; j < k; ++j) {
      picked[cols[j]] += 1.0;
      novelty_sum += pop_rank[cols[j]] / static_cast<double>(t - 1);
    }
  }
  const double total = static_cast<double>(rows * k);
  out.novelty = novelty_sum / total;
  double h = 0.0;
  for (double c : picked)
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  out.diversity = std::clamp(h / std::log(static_cast<double>(t)), 0.0, 1.0);
  return out;
}

double composite_score(double a, double n, double d, Task task) {
  return is_propensity(task) ? 0.8 * a + 0.1 * n + 0.1 * d : a;
}

std::vector<BordaEntry> borda(const std::vector<std::vector<std::string>>& rankings) {
  if (rankings.empty()) return {};
  std::vector<std::string> teams = rankings.front();
  std::sort(teams.begin(), teams.end());
  if (std::adjacent_find(teams.begin(), teams.end()) != teams.end())
    throw ContractError("borda: a team appears twice in one ranking");
  const int n = static_cast<int>(teams.size());
  std::map<std::string, int> points;
  for (const auto& t : teams) points[t] = 0;
  for (const auto& r : rankings) {
    std::vector<std::string> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != teams) throw ContractError("borda: rankings cover different teams");
    for (int k = 0; k < n; ++k) points[r[static_cast<std::size_t>(k)]] += n - (k + 1);
  }
  std::vector<BordaEntry> out;
  for (const auto& [team, p] : points) out.push_back({team, p});
  std::stable_sort(out.begin(), out.end(),
                   [](const BordaEntry& a, const BordaEntry& b) { return a.points > b.points; });
  return out;
}

bool in_validation(std::uint64_t client_id, const ProbeConfig& cfg) {
  return mix64(client_id) % static_cast<std::uint64_t>(cfg.validation_mod) == 0;
}

nn::Matrix<float> ProbeModel::logits(const nn::Matrix<float>& x) const {
  nn::Matrix<float> h = (x * w1.value).rowwise() + b1.value.row(0);
  h = h.cwiseMax(0.0f);
  nn::Matrix<float> o = h * w2.value;
  o.rowwise() += b2.value.row(0);
  return o;
}

namespace {

nn::Matrix<float> gather_rows(const nn::Matrix<float>& x, std::span<const std::size_t> idx) {
  nn::Matrix<float> out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

nn::Matrix<float> gather_labels(const TaskLabels& l, std::span<const std::size_t> idx) {
  nn::Matrix<float> out(static_cast<Eigen::Index>(idx.size()), l.targets);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < l.targets; ++j) out(static_cast<Eigen::Index>(i), j) = l.at(idx[i], j);
  return out;
}

double mean_column_auroc(const nn::Matrix<float>& logits, const nn::Matrix<float>& y) {
  const auto n = static_cast<std::size_t>(logits.rows());
  std::vector<double> s(n);
  std::vector<float> lab(n);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = logits(static_cast<Eigen::Index>(i), j);
      lab[i] = y(static_cast<Eigen::Index>(i), j);
    }
    acc += auroc(s, lab);
  }
  return acc / static_cast<double>(logits.cols());
}

struct Split {
  std::vector<std::size_t> train, validation;
};

Split split_rows(const TaskLabels& labels, const ProbeConfig& cfg) {
  Split s;
  for (std::size_t i = 0; i < labels.client_ids.size(); ++i)
    (in_validation(labels.client_ids[i], cfg) ? s.validation : s.train).push_back(i);
  if (s.train.empty() || s.validation.empty())
    throw ContractError("probe split left an empty train or validation set");
  return s;
}

}  // namespace

ProbeModel train_probe(const nn::Matrix<float>& x, const TaskLabels& labels, std::uint64_t seed,
                       const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(x.rows()) != labels.client_ids.size())
    throw ShapeError("train_probe: profile rows do not match labels");
  if (cfg.hidden < 1 || cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1 ||
      cfg.validation_mod < 2)
    throw ParameterError("train_probe: invalid probe configuration");
  const Split split = split_rows(labels, cfg);
  const auto d = x.cols();
  const int t = labels.targets;

  Rng rng(seed);
  ProbeModel m;
  m.w1 = nn::Parameter<float>("probe.w1", d, cfg.hidden);
  m.b1 = nn::Parameter<float>("probe.b1", 1, cfg.hidden);
  m.w2 = nn::Parameter<float>("probe.w2", cfg.hidden, t);
  m.b2 = nn::Parameter<float>("probe.b2", 1, t);
  nn::init_uniform(m.w1, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(d, 1))), rng);
  nn::init_uniform(m.w2, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng);

  const nn::ParamList<float> params = {&m.w1, &m.b1, &m.w2, &m.b2};
  nn::Adam<float> adam(params, nn::AdamHyper{cfg.lr, 0.9, 0.999, 1e-8});

  const nn::Matrix<float> xv = gather_rows(x, split.validation);
  const nn::Matrix<float> yv = gather_labels(labels, split.validation);
  std::vector<std::size_t> order = split.train;
  std::array<nn::Matrix<float>, 4> best = {m.w1.value, m.b1.value, m.w2.value, m.b2.value};
  m.best_validation_auroc = mean_column_auroc(m.logits(xv), yv);
  m.best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      nn::Tape<float> tape;
      Var in = tape.constant(gather_rows(x, idx));
      Var h = nn::relu(tape, nn::affine(tape, in, tape.param(m.w1), tape.param(m.b1)));
      Var o = nn::affine(tape, h, tape.param(m.w2), tape.param(m.b2));
      const float scale = 1.0f / static_cast<float>(idx.size() * static_cast<std::size_t>(t));
      Var loss = nn::binary_cross_entropy_with_logits(tape, o, gather_labels(labels, idx), scale);
      if (!std::isfinite(tape.value(loss)(0, 0)))
        throw TrainingError("probe loss became non-finite in epoch " + std::to_string(epoch));
      nn::zero_grads(params);
      tape.backward(loss);
      adam.step();
    }
    m.epochs_run = epoch;
    const double val = mean_column_auroc(m.logits(xv), yv);
    if (val > m.best_validation_auroc) {
      m.best_validation_auroc = val;
      m.best_epoch = epoch;
      best = {m.w1.value, m.b1.value, m.w2.value, m.b2.value};
    } else if (epoch - m.best_epoch >= cfg.patience) {
      break;
    }
  }
  m.w1.value = best[0];
  m.b1.value = best[1];
  m.w2.value = best[2];
  m.b2.value = best[3];
  return m;
}

double ProfileReport::total() const {
  double s = 0.0;
  for (const auto& t : tasks) s += t.score;
  return s;
}

namespace {

TaskResult run_task(const nn::Matrix<float>& x, const TaskLabels& labels, std::uint64_t seed,
                    const ProbeConfig& cfg) {
  const ProbeModel probe = train_probe(x, labels, seed, cfg);
  const Split split = split_rows(labels, cfg);
  const nn::Matrix<float> xv = gather_rows(x, split.validation);
  const nn::Matrix<float> yv = gather_labels(labels, split.validation);
  const nn::Matrix<float> lv = probe.logits(xv);

  TaskResult r;
  r.task = labels.task;
  r.auroc = mean_column_auroc(lv, yv);
  r.validation_clients = static_cast<int>(split.validation.size());
  r.best_epoch = probe.best_epoch;
  if (is_propensity(labels.task)) {
    std::vector<double> scores(static_cast<std::size_t>(lv.size()));
    for (Eigen::Index i = 0; i < lv.size(); ++i) scores[static_cast<std::size_t>(i)] = lv.data()[i];
    const auto nd = novelty_diversity(scores, static_cast<std::size_t>(lv.rows()), labels.targets,
                                      labels.popularity);
    r.novelty = nd.novelty;
    r.diversity = nd.diversity;
    r.score = composite_score(r.auroc, nd.novelty, nd.diversity, labels.task);
  } else {
    r.score = composite_score(r.auroc, 0.0, 0.0, labels.task);
  }
  return r;
}

}  // namespace

ProfileReport evaluate_profile(const std::string& name, const ProfileMatrix& profiles,
                               const std::vector<TaskLabels>& labels, std::uint64_t seed,
                               const ProbeConfig& cfg, unsigned threads) {
  if (labels.empty()) throw ContractError("evaluate_profile: no tasks");
  const auto& ids = labels.front().client_ids;
  for (const auto& l : labels)
    if (l.client_ids != ids) throw ContractError("evaluate_profile: tasks cover different clients");

  nn::Matrix<float> x(static_cast<Eigen::Index>(ids.size()), profiles.dim());
  std::size_t missing = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = profiles.find(ids[i]);
    if (!r) {
      ++missing;
      continue;
    }
    const auto row = profiles.row(*r);
    for (std::uint32_t j = 0; j < profiles.dim(); ++j) x(static_cast<Eigen::Index>(i), j) = row[j];
  }
  if (missing > 0)
    throw ContractError("profiles '" + name + "' lack " + std::to_string(missing) +
                        " of the evaluated clients");
  if (!x.allFinite()) throw NumericError("profiles '" + name + "' contain non-finite values");

  ProfileReport rep;
  rep.name = name;
  rep.dim = profiles.dim();
  rep.tasks.resize(labels.size());
  auto work = [&](std::size_t k) {
    rep.tasks[k] = run_task(x, labels[k], mix64(seed ^ (0x51ed27ULL + k)), cfg);
  };
  threads = std::max(1u, threads);
  if (threads == 1 || labels.size() == 1) {
    for (std::size_t k = 0; k < labels.size(); ++k) work(k);
  } else {
    std::vector<std::exception_ptr> errors(labels.size());
    for (std::size_t lo = 0; lo < labels.size(); lo += threads) {
      std::vector<std::thread> pool;
      for (std::size_t k = lo; k < std::min(labels.size(), lo + threads); ++k)
        pool.emplace_back([&, k] {
          try {
            work(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return rep;
}

nlohmann::json report_json(const std::vector<ProfileReport>& reports) {
  using nlohmann::json;
  json out;
  out["profiles"] = json::array();
  for (const auto& r : reports) {
    json p;
    p["name"] = r.name;
    p["dim"] = r.dim;
    json tasks = json::object();
    for (const auto& t : r.tasks) {
      json e;
      e["auroc"] = t.auroc;
      e["novelty"] = t.novelty ? json(*t.novelty) : json(nullptr);
      e["diversity"] = t.diversity ? json(*t.diversity) : json(nullptr);
      e["score"] = t.score;
      e["validation_clients"] = t.validation_clients;
      e["best_epoch"] = t.best_epoch;
      tasks[to_string(t.task)] = e;
    }
    p["tasks"] = tasks;
    p["total"] = r.total();
    out["profiles"].push_back(p);
  }
  if (reports.size() >= 2) {
    std::vector<std::vector<std::string>> rankings;
    for (std::size_t k = 0; k < reports.front().tasks.size(); ++k) {
      std::vector<const ProfileReport*> order;
      for (const auto& r : reports) order.push_back(&r);
      std::stable_sort(order.begin(), order.end(), [k](const ProfileReport* a, const ProfileReport* b) {
        return a->tasks[k].score > b->tasks[k].score;
      });
      std::vector<std::string> names;
      for (const auto* r : order) names.push_back(r->name);
      rankings.push_back(std::move(names));
    }
    json b = json::array();
    for (const auto& e : borda(rankings)) b.push_back({{"team", e.team}, {"points", e.points}});
    out["borda"] = b;
  }
  return out;
}

}  // namespace uniprofile::eval
