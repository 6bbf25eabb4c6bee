// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ensemble.hpp"
#include "eval.hpp"
#include "gradcheck.hpp"
#include "gru_ae.hpp"
#include "ials.hpp"
#include "oracles.hpp"
#include "profile.hpp"
#include "random.hpp"
#include "sequence.hpp"
#include "synth.hpp"

using namespace uniprofile;
namespace fs = std::filesystem;
using nlohmann::json;
using ensemble::DenseMatrix;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kGradBudget = 30.0;
constexpr double kOverfitAcc = 0.95;
constexpr int kOverfitMaxEpochs = 500;
constexpr double kOverfitBudget = 120.0;
constexpr double kIalsMonotoneTol = 1e-9;
constexpr double kIalsScalarTol = 1e-8;
constexpr int kAurocInstances = 1000;
constexpr int kAurocMaxN = 200;
constexpr double kPcaTol = 1e-8;
constexpr double kUnitNormTol = 1e-6;
constexpr double kChurnLift = 0.10;
constexpr double kTaskMargin = -0.005;
constexpr double kBenchmarkBudget = 600.0;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// 1

EncodedSequence random_sequence(std::uint64_t id, const std::vector<std::int32_t>& vocab, int events,
                                Rng& rng) {
  EncodedSequence s;
  s.client_id = id;
  for (auto v : vocab) {
    std::vector<std::int32_t> f = {SpecialIds::kSos};
    for (int t = 0; t < events; ++t) f.push_back(static_cast<std::int32_t>(1 + rng.below(v - 1)));
    f.push_back(SpecialIds::kEos);
    s.fields.push_back(std::move(f));
  }
  return s;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  gruae::GruAeConfig c = gruae::GruAeConfig::preset(SchemaVariant::kDayEventType);
  c.hidden = 8;
  c.layers = 2;
  c.vocab_sizes = {7, 7};
  gruae::GruAeModel<double> m(c);
  Rng init(101);
  for (auto* p : m.parameters()) nn::init_uniform(*p, 0.5, init);

  Rng rng(102);
  std::vector<EncodedSequence> seqs;
  // 1 to 4 events plus the start and end markers, so at most 6 steps
  for (int i = 0; i < 4; ++i) seqs.push_back(random_sequence(i + 1, c.vocab_sizes, 1 + i, rng));
  std::vector<const EncodedSequence*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  const gruae::Batch b = gruae::make_batch(ptrs);

  double worst = 0.0;
  std::string where;
  long params = 0;
  for (auto* p : m.parameters()) params += static_cast<long>(p->value.size());
  for (bool training : {false, true}) {
    auto loss = [&](bool bw) {
      Rng mask(103);
      gruae::ForwardOptions opt{training, &mask};
      nn::Tape<double> tape;
      auto fwd = gruae::forward_batch(tape, m, b, opt);
      if (bw) tape.backward(fwd.loss);
      return tape.value(fwd.loss)(0, 0);
    };
    const auto w = gc::check(m.parameters(), loss, kGradEps);
    if (w.rel >= worst) {
      worst = w.rel;
      where = w.param + "[" + std::to_string(w.index) + "]" + (training ? " with dropout" : "");
    }
  }
  const double secs = since(t0);
  return {worst < kGradRelTol && secs < kGradBudget,
          std::to_string(params) + " parameters, max rel err " + fmt(worst, 3) + " at " + where + " (< " +
              fmt(kGradRelTol) + "), " + fmt(secs, 3) + " s (< " + fmt(kGradBudget) + " s)"};
}

// ---------------------------------------------------------------------------
// 2

Outcome reconstruction_capacity() {
  const auto t0 = Clock::now();
  auto sc = synth::SynthConfig::desk_default();
  sc.n_clients = 200;
  sc.window_days = 35;
  for (auto& a : sc.archetypes) a.churn_day_max = sc.window_days;
  const auto syn = synth::generate(sc, 202);
  const auto schema = SequenceSchema::for_variant(SchemaVariant::kWeekAll, 32);
  const auto enc = SequenceEncoder::fit(syn.log, schema);
  std::vector<EncodedSequence> seqs;
  for (const auto& s : enc.encode_all(syn.log))
    if (s.fields[0].size() >= 5 && seqs.size() < 32) seqs.push_back(s);
  if (seqs.size() < 32) return {false, "could not draw 32 sequences"};

  gruae::GruAeConfig c = gruae::GruAeConfig::preset(SchemaVariant::kWeekAll);
  c.hidden = 64;
  c.layers = 1;
  c.max_len = 32;
  c.vocab_sizes = enc.vocab_sizes();
  c.epochs = kOverfitMaxEpochs;
  c.batch_size = 4;
  c.lr = 3e-3;
  std::vector<double> acc;
  int epochs = 0;
  auto res = gruae::train(seqs, c, 203, [&](int epoch, double, gruae::GruAeModel<float>& model) {
    epochs = epoch + 1;
    if (epochs % 10 != 0) return true;
    acc = gruae::teacher_forced_accuracy(model, seqs);
    return *std::min_element(acc.begin(), acc.end()) < kOverfitAcc;
  });
  acc = gruae::teacher_forced_accuracy(res.model, seqs);
  const double min_acc = *std::min_element(acc.begin(), acc.end());

  std::vector<std::size_t> self(seqs.size()), shifted(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    self[i] = i;
    shifted[i] = (i + 1) % seqs.size();
  }
  const double own = gruae::mean_loss_with_users(res.model, seqs, self);
  const double swapped = gruae::mean_loss_with_users(res.model, seqs, shifted);
  const double secs = since(t0);
  std::string per_field;
  for (double a : acc) per_field += (per_field.empty() ? "" : "/") + fmt(a, 3);
  return {min_acc >= kOverfitAcc && epochs <= kOverfitMaxEpochs && swapped > own && secs < kOverfitBudget,
          "accuracy " + per_field + " after " + std::to_string(epochs) + " epochs (>= " + fmt(kOverfitAcc) +
              " within " + std::to_string(kOverfitMaxEpochs) + "), loss own " + fmt(own) + " < swapped " +
              fmt(swapped) + ", " + fmt(secs, 3) + " s (< " + fmt(kOverfitBudget) + " s)"};
}

// ---------------------------------------------------------------------------
// 3

double dense_ials_objective(const ials::InteractionMatrix& m, const ials::IalsModel& model) {
  const DenseMatrix r = m.to_dense();
  double total = 0.0;
  for (Eigen::Index u = 0; u < r.rows(); ++u)
    for (Eigen::Index i = 0; i < r.cols(); ++i) {
      const double c = 1.0 + model.alpha * r(u, i);
      const double p = r(u, i) > 0.0 ? 1.0 : 0.0;
      const double e = p - model.user_factors.row(u).dot(model.item_factors.row(i));
      total += c * e * e;
    }
  return total + model.regularization * (model.user_factors.squaredNorm() + model.item_factors.squaredNorm());
}

// Minimum of a convex scalar function by bisection on the sign of a symmetric
// difference; needs only function values and resolves far below sqrt(eps).
double scalar_argmin(const std::function<double(double)>& f, double lo, double hi) {
  const double h = 1e-6;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid + h) > f(mid - h))
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

Outcome ials_correctness() {
  int sweeps = 0, violations = 0;
  double worst_rise = -1e300;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(300 + trial);
    std::vector<std::uint64_t> uids;
    std::vector<std::int64_t> iids;
    for (int u = 0; u < 20; ++u) uids.push_back(u + 1);
    for (int i = 0; i < 15; ++i) iids.push_back(i);
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
    for (std::uint32_t u = 0; u < 20; ++u)
      for (std::uint32_t i = 0; i < 15; ++i)
        if (rng.uniform() < 0.25) t.emplace_back(u, i, 1.0 + static_cast<double>(rng.below(5)));
    ials::InteractionMatrix m(uids, iids, t);
    ials::IalsParams p;
    p.factors = 3;
    double prev = dense_ials_objective(m, ials::init_model(m, p, 400 + trial));
    ials::ials_fit(m, p, 400 + trial, [&](const ials::IalsModel& model) {
      const double cur = dense_ials_objective(m, model);
      const double rise = (cur - prev) / std::max(1.0, std::abs(prev));
      worst_rise = std::max(worst_rise, rise);
      if (rise > kIalsMonotoneTol) ++violations;
      prev = cur;
      ++sweeps;
    });
  }

  // 1 x 1: each half sweep is a scalar ridge problem
  double worst_scalar = 0.0;
  for (double r : {1.0, 3.0, 4.0}) {
    ials::InteractionMatrix m({1}, {1}, {{0, 0, r}});
    ials::IalsParams p;
    p.factors = 1;
    auto model = ials::init_model(m, p, 7);
    model.item_factors(0, 0) = 0.37;
    const double c = 1.0 + p.alpha * r, lambda = p.regularization;
    for (int half = 0; half < 6; ++half) {
      const bool users = half % 2 == 0;
      const double other = users ? model.item_factors(0, 0) : model.user_factors(0, 0);
      auto f = [&](double x) { return c * (1 - x * other) * (1 - x * other) + lambda * x * x; };
      const double expected = scalar_argmin(f, -10.0, 10.0);
      if (users)
        ials::solve_users(m, model);
      else
        ials::solve_items(m, model);
      const double got = users ? model.user_factors(0, 0) : model.item_factors(0, 0);
      worst_scalar = std::max(worst_scalar, std::abs(got - expected));
    }
  }
  return {violations == 0 && sweeps == 10 * 30 && worst_scalar < kIalsScalarTol,
          std::to_string(sweeps) + " half sweeps on 20x15 k=3, largest relative rise " + fmt(worst_rise, 3) +
              " (<= " + fmt(kIalsMonotoneTol) + "); 1x1 closed form vs scalar search " + fmt(worst_scalar, 3) +
              " (< " + fmt(kIalsScalarTol) + ")"};
}

// ---------------------------------------------------------------------------
// 4

Outcome metric_oracles() {
  Rng rng(400);
  int mismatches = 0;
  for (int trial = 0; trial < kAurocInstances; ++trial) {
    const std::size_t n = 1 + rng.below(kAurocMaxN);
    const int levels = trial % 3 == 0 ? 1 + static_cast<int>(rng.below(5)) : 1 << 20;
    const double pos_rate = rng.uniform();
    std::vector<double> s(n);
    std::vector<float> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) / levels;
      y[i] = rng.uniform() < pos_rate ? 1.0f : 0.0f;
    }
    if (eval::auroc(s, y) != oracle::auroc_pairs(s, y)) ++mismatches;
  }
  int borda_bad = 0;
  const int tables = 300;
  for (int trial = 0; trial < tables; ++trial) {
    const int teams = 2 + static_cast<int>(rng.below(8));
    std::vector<std::string> names;
    for (int i = 0; i < teams; ++i) names.push_back("s" + std::to_string(i));
    std::vector<std::vector<std::string>> r(1 + rng.below(6), names);
    for (auto& row : r) rng.shuffle(row.begin(), row.end());
    const auto ref = oracle::borda_points(r);
    const auto got = eval::borda(r);
    bool ok = got.size() == ref.size();
    for (std::size_t k = 0; ok && k < got.size(); ++k) {
      ok = ref.at(got[k].team) == got[k].points;
      if (k > 0) ok = ok && got[k - 1].points >= got[k].points;
    }
    borda_bad += !ok;
  }
  return {mismatches == 0 && borda_bad == 0,
          std::to_string(kAurocInstances) + " AUROC instances (n <= " + std::to_string(kAurocMaxN) + "), " +
              std::to_string(mismatches) + " differ from pair counting; " + std::to_string(tables) +
              " Borda tables, " + std::to_string(borda_bad) + " differ from enumeration"};
}

// ---------------------------------------------------------------------------
// 5

Outcome pca_oracle() {
  Rng rng(500);
  double worst_var = 0.0, worst_sub = 0.0;
  int trials = 0;
  for (int trial = 0; trial < 20; ++trial) {
    DenseMatrix mix(10, 10), x(50, 10);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(3.0, 1.0);
    x = x * mix;
    const int k = 1 + trial % 10;
    const auto model = ensemble::pca_fit(x, k);
    const DenseMatrix z = ensemble::pca_transform(model, x);
    const DenseMatrix c = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / 49.0;
    const auto [vals, vecs] = oracle::jacobi_eigen(cov);
    for (int j = 0; j < k; ++j) {
      const double var = (z.col(j).array() - z.col(j).mean()).square().sum() / 49.0;
      worst_var = std::max(worst_var, std::abs(var - vals(j)) / std::max(1.0, vals(j)));
    }
    // projector onto the top-k subspace is sign free
    const Eigen::MatrixXd vk = vecs.leftCols(k);
    const Eigen::MatrixXd pk = model.components.transpose();
    const double d = (vk * vk.transpose() - pk * pk.transpose()).cwiseAbs().maxCoeff();
    worst_sub = std::max(worst_sub, d);
    ++trials;
  }
  return {worst_var < kPcaTol && worst_sub < kPcaTol,
          std::to_string(trials) + " random 50x10 inputs, variance err " + fmt(worst_var, 3) + ", subspace err " +
              fmt(worst_sub, 3) + " (< " + fmt(kPcaTol) + ")"};
}

// ---------------------------------------------------------------------------
// 6

Outcome fusion_hygiene() {
  Rng rng(600);
  int nan = 0, norm_bad = 0, impute_bad = 0, checked_impute = 0;
  double worst_norm = 0.0;
  const Normalization norms[3] = {Normalization::kUnitLength, Normalization::kUnitLength,
                                  Normalization::kQuantile};
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(60));
    std::vector<std::uint64_t> master;
    for (int i = 0; i < n; ++i) master.push_back(1000 + 3 * static_cast<std::uint64_t>(i));
    rng.shuffle(master.begin(), master.end());
    std::vector<ensemble::SourceSpec> sources;
    for (int s = 0; s < 3; ++s) {
      const double keep = trial % 7 == 0 ? 1.0 : rng.uniform(0.1, 1.0);
      std::vector<std::uint64_t> ids;
      for (auto id : master)
        if (rng.uniform() < keep) ids.push_back(id);
      if (ids.size() < 3) ids.assign(master.begin(), master.begin() + 3);
      if (rng.bernoulli(0.3)) ids.push_back(999999);  // not in master
      rng.shuffle(ids.begin(), ids.end());
      const std::uint32_t d = 1 + static_cast<std::uint32_t>(rng.below(6));
      std::vector<float> v(ids.size() * d);
      for (auto& x : v) x = static_cast<float>(rng.normal(s, 1.0 + s));
      ensemble::SourceSpec spec{"src" + std::to_string(s), ProfileMatrix(ids, d, v), norms[s], {}};
      if (s == 0 && d > 1 && rng.bernoulli(0.5))
        spec.pca_k = 1 + static_cast<int>(rng.below(std::min<std::uint32_t>(d, 3)));
      sources.push_back(std::move(spec));
    }
    const ProfileMatrix out = ensemble::combine(sources, master);
    for (float v : out.values()) nan += !std::isfinite(v);
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& blk = out.blocks[s];
      const auto& src = sources[s].matrix;
      // post-normalization column means over present master clients, in source order
      std::vector<double> acc(blk.width, 0.0);
      std::size_t present = 0;
      for (auto id : src.client_ids()) {
        auto row = out.find(id);
        if (!row) continue;
        ++present;
        auto r = out.row(*row);
        for (std::uint32_t j = 0; j < blk.width; ++j) acc[j] += r[blk.offset + j];
        if (norms[s] == Normalization::kUnitLength) {
          double sq = 0.0;
          for (std::uint32_t j = 0; j < blk.width; ++j) sq += double(r[blk.offset + j]) * r[blk.offset + j];
          const double e = std::abs(std::sqrt(sq) - 1.0);
          worst_norm = std::max(worst_norm, e);
          norm_bad += e > kUnitNormTol;
        }
      }
      for (std::size_t i = 0; i < out.rows(); ++i) {
        if (src.find(out.client_ids()[i])) continue;
        ++checked_impute;
        auto r = out.row(i);
        for (std::uint32_t j = 0; j < blk.width; ++j)
          impute_bad += r[blk.offset + j] != static_cast<float>(acc[j] / static_cast<double>(present));
      }
    }
  }
  return {nan == 0 && norm_bad == 0 && impute_bad == 0 && checked_impute > 0,
          "200 missingness patterns: " + std::to_string(nan) + " non-finite, unit norm err " + fmt(worst_norm, 3) +
              " (<= " + fmt(kUnitNormTol) + "), " + std::to_string(checked_impute) + " imputed blocks with " +
              std::to_string(impute_bad) + " inexact entries"};
}

// ---------------------------------------------------------------------------
// 7, 8, 9

struct Runs {
  bool ok_a = false, ok_b = false;
  double secs_a = 0.0;
  fs::path dir_a, dir_b;
  std::string error;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Runs run_benchmark(const std::string& cli, const std::string& config, const fs::path& work) {
  Runs r;
  r.dir_a = work / "run_a";
  r.dir_b = work / "run_b";
  fs::remove_all(r.dir_a);
  fs::remove_all(r.dir_b);
  fs::create_directories(work);
  auto run = [&](const fs::path& dir, const std::string& tag) {
    const std::string cmd = quote(cli) + " run --config " + quote(config) + " --seed 42 --threads 1 --work-dir " +
                            quote(dir.string()) + " --report " + quote((work / (tag + "_report.json")).string()) +
                            " > " + quote((work / (tag + "_stdout.json")).string()) + " 2> " +
                            quote((work / (tag + "_stderr.log")).string());
    std::cout << "  running " << tag << " ..." << std::endl;
    return std::system(cmd.c_str()) == 0;
  };
  const auto t0 = Clock::now();
  r.ok_a = run(r.dir_a, "a");
  r.secs_a = since(t0);
  if (!r.ok_a) {
    r.error = slurp(work / "a_stderr.log");
    return r;
  }
  r.ok_b = run(r.dir_b, "b");
  if (!r.ok_b) r.error = slurp(work / "b_stderr.log");
  return r;
}

Outcome end_to_end(const Runs& runs) {
  if (!runs.ok_a) return {false, "pipeline failed: " + runs.error};
  const json rep = json::parse(slurp(runs.dir_a / "report.json"));
  std::map<std::string, const json*> by_name;
  for (const auto& p : rep["profiles"]) by_name[p["name"].get<std::string>()] = &p;
  if (!by_name.count("gru_ae_week_all") || !by_name.count("ensemble") || !rep.contains("control"))
    return {false, "report lacks week_all, ensemble or control"};
  const double week = (*by_name["gru_ae_week_all"])["tasks"]["churn"]["auroc"].get<double>();
  const double ctrl = rep["control"]["tasks"]["churn"]["auroc"].get<double>();
  const auto& ens = *by_name["ensemble"];
  const double ens_total = ens["total"].get<double>();

  bool total_ok = true;
  std::string best_name;
  double best_total = -1e300;
  for (const auto& [name, p] : by_name) {
    if (name == "ensemble") continue;
    const double t = (*p)["total"].get<double>();
    if (t > best_total) {
      best_total = t;
      best_name = name;
    }
    total_ok = total_ok && ens_total >= t;
  }
  int wins = 0;
  bool margins_ok = true;
  double worst_margin = 1e300;
  for (const auto& [task, e] : ens["tasks"].items()) {
    double best = -1e300;
    for (const auto& [name, p] : by_name)
      if (name != "ensemble") best = std::max(best, (*p)["tasks"][task]["score"].get<double>());
    const double margin = e["score"].get<double>() - best;
    worst_margin = std::min(worst_margin, margin);
    wins += margin > 0.0;
    margins_ok = margins_ok && margin >= kTaskMargin;
  }
  const bool a = week - ctrl >= kChurnLift;
  const bool b = total_ok && wins >= 1 && margins_ok;
  return {a && b && runs.secs_a < kBenchmarkBudget,
          "(a) churn AUROC week_all " + fmt(week) + " vs random " + fmt(ctrl) + ", lift " + fmt(week - ctrl) +
              " (>= " + fmt(kChurnLift) + "); (b) ensemble total " + fmt(ens_total) + " vs best single " +
              best_name + " " + fmt(best_total) + ", wins " + std::to_string(wins) + " task(s), worst margin " +
              fmt(worst_margin) + " (>= " + fmt(kTaskMargin) + "); " + fmt(runs.secs_a, 3) + " s (< " +
              fmt(kBenchmarkBudget) + " s)"};
}

std::vector<fs::path> files_with(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path().filename());
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism(const Runs& runs, const fs::path& work) {
  if (!runs.ok_a || !runs.ok_b) return {false, "pipeline failed: " + runs.error};
  int compared = 0, differ = 0;
  std::string first_diff;
  auto compare = [&](const fs::path& a, const fs::path& b, const std::string& label) {
    ++compared;
    if (!fs::exists(a) || !fs::exists(b) || slurp(a) != slurp(b)) {
      ++differ;
      if (first_diff.empty()) first_diff = label;
    }
  };
  compare(runs.dir_a / "report.json", runs.dir_b / "report.json", "report.json");
  compare(work / "a_report.json", work / "b_report.json", "--report copy");
  compare(work / "a_stdout.json", work / "b_stdout.json", "stdout report");
  const auto ua = files_with(runs.dir_a, ".uemb"), ub = files_with(runs.dir_b, ".uemb");
  if (ua != ub) return {false, "runs produced different embedding file sets"};
  for (const auto& f : ua) compare(runs.dir_a / f, runs.dir_b / f, f.string());
  for (const auto& f : files_with(runs.dir_a, ".ckpt")) compare(runs.dir_a / f, runs.dir_b / f, f.string());
  return {differ == 0 && ua.size() >= 8,
          std::to_string(compared) + " files compared (" + std::to_string(ua.size()) + " embeddings), " +
              std::to_string(differ) + " differ" + (first_diff.empty() ? "" : ", first: " + first_diff)};
}

// Independent byte-level reader of the embedding layout.
struct RawUemb {
  std::uint64_t n = 0;
  std::uint32_t dim = 0;
  json meta;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> bits;
};

bool parse_raw(const std::string& b, RawUemb& out) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > b.size()) return false;
    std::memcpy(dst, b.data() + pos, n);
    pos += n;
    return true;
  };
  char magic[4];
  std::uint32_t version = 0, meta_len = 0;
  if (!take(magic, 4) || std::memcmp(magic, "UEMB", 4) != 0) return false;
  if (!take(&version, 4) || version != 1) return false;
  if (!take(&out.n, 8) || !take(&out.dim, 4) || !take(&meta_len, 4)) return false;
  if (pos + meta_len > b.size()) return false;
  out.meta = json::parse(b.substr(pos, meta_len));
  pos += meta_len;
  for (std::uint64_t i = 0; i < out.n; ++i) {
    std::uint64_t id;
    if (!take(&id, 8)) return false;
    out.ids.push_back(id);
    for (std::uint32_t j = 0; j < out.dim; ++j) {
      std::uint32_t w;
      if (!take(&w, 4)) return false;
      out.bits.push_back(w);
    }
  }
  return pos == b.size();
}

bool roundtrips(const std::string& bytes, std::string& why) {
  RawUemb raw;
  if (!parse_raw(bytes, raw)) {
    why = "raw parse failed";
    return false;
  }
  std::istringstream is(bytes, std::ios::binary);
  const ProfileMatrix m = read_uemb(is);
  if (m.client_ids() != raw.ids || m.dim() != raw.dim || m.rows() != raw.n) {
    why = "ids or shape differ";
    return false;
  }
  if (m.metadata() != raw.meta) {
    why = "metadata differs";
    return false;
  }
  for (std::size_t i = 0; i < raw.bits.size(); ++i)
    if (std::bit_cast<std::uint32_t>(m.values()[i]) != raw.bits[i]) {
      why = "payload bits differ";
      return false;
    }
  std::ostringstream os(std::ios::binary);
  write_uemb(m, os);
  if (os.str() != bytes) {
    why = "rewrite is not byte identical";
    return false;
  }
  return true;
}

Outcome format_roundtrip(const Runs& runs) {
  int files = 0, bad = 0;
  std::string why, first;
  if (runs.ok_a)
    for (const auto& f : files_with(runs.dir_a, ".uemb")) {
      ++files;
      if (!roundtrips(slurp(runs.dir_a / f), why)) {
        ++bad;
        if (first.empty()) first = f.string() + ": " + why;
      }
    }
  // payloads the pipeline never produces
  std::vector<ProfileMatrix> edge;
  edge.emplace_back(std::vector<std::uint64_t>{}, 3, std::vector<float>{});
  edge.emplace_back(std::vector<std::uint64_t>{7, 1}, 0, std::vector<float>{});
  edge.emplace_back(std::vector<std::uint64_t>{~std::uint64_t{0}, 0}, 2,
                    std::vector<float>{-0.0f, std::bit_cast<float>(0x7fa00001u),
                                       -std::numeric_limits<float>::infinity(), 1e-45f});
  edge.back().source = "edge \"quoted\" \xc3\xa9";
  edge.back().feature_names = {"a\tb", ""};
  edge.back().blocks = {{"x", 0, 2, Normalization::kQuantile}};
  int edges = 0;
  for (const auto& m : edge) {
    std::ostringstream os(std::ios::binary);
    write_uemb(m, os);
    ++edges;
    std::istringstream is(os.str(), std::ios::binary);
    if (!roundtrips(os.str(), why) || !(read_uemb(is) == m)) {
      ++bad;
      if (first.empty()) first = "edge case " + std::to_string(edges) + ": " + why;
    }
  }
  return {runs.ok_a && bad == 0 && files >= 8,
          std::to_string(files) + " pipeline files and " + std::to_string(edges) + " edge cases, " +
              std::to_string(bad) + " failed" + (first.empty() ? "" : " (" + first + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string cli, config, work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--cli", cli, "uniprofile command line binary");
  app.add_option("--config", config, "pipeline config for the benchmark");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  int failed = 0;
  auto report = [&](int k, const std::string& title, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << k << " " << title << ": " << o.detail << std::endl;
    failed += !o.pass;
  };
  auto guarded = [&](int k, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted(k)) return;
    try {
      report(k, title, fn());
    } catch (const std::exception& e) {
      report(k, title, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, "gradient fidelity", gradient_fidelity);
  guarded(2, "reconstruction capacity", reconstruction_capacity);
  guarded(3, "iALS correctness", ials_correctness);
  guarded(4, "metric oracle equivalence", metric_oracles);
  guarded(5, "PCA oracle equivalence", pca_oracle);
  guarded(6, "fusion hygiene", fusion_hygiene);

  if (wanted(7) || wanted(8) || wanted(9)) {
    Runs runs;
    if (cli.empty() || config.empty()) {
      runs.error = "--cli and --config are required";
    } else {
      runs = run_benchmark(cli, config, fs::absolute(work));
    }
    guarded(7, "end-to-end signal", [&] { return end_to_end(runs); });
    guarded(8, "determinism", [&] { return determinism(runs, fs::absolute(work)); });
    guarded(9, "format round trip", [&] { return format_roundtrip(runs); });
  }

  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
