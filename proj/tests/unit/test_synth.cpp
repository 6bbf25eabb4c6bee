#include <doctest.h>

#include <array>
#include <cmath>
#include <sstream>

#include "errors.hpp"
#include "eval.hpp"
#include "synth.hpp"

using namespace uniprofile;
using namespace uniprofile::synth;

static SynthConfig small(int clients) {
  auto c = SynthConfig::desk_default();
  c.n_clients = clients;
  return c;
}

static SynthConfig flat_single(int clients) {
  auto c = small(clients);
  c.activity_shape = 0.0;
  Archetype a;
  a.name = "flat";
  a.churn_probability = 0.0;
  a.churn_day_max = c.window_days;
  c.archetypes = {a};
  return c;
}

static std::array<double, kNumEventTypes> type_counts(const EventLog& log) {
  std::array<double, kNumEventTypes> c{};
  for (const auto& s : event_counts(log))
    for (int k = 0; k < kNumEventTypes; ++k)
      if (kAllEventTypes[k] == s.type) c[k] = static_cast<double>(s.interactions);
  return c;
}

static int slot(EventType t) {
  for (int k = 0; k < kNumEventTypes; ++k)
    if (kAllEventTypes[k] == t) return k;
  return -1;
}

static std::string dump(const EventLog& log) {
  std::ostringstream os;
  serialize_events(log, os);
  return os.str();
}

TEST_CASE("generation is a pure function of config and seed") {
  auto cfg = small(300);
  auto a = generate(cfg, 7), b = generate(cfg, 7, 4), c = generate(cfg, 8);
  CHECK(dump(a.log) == dump(b.log));
  CHECK(a.truth_json() == b.truth_json());
  CHECK(dump(a.log) != dump(c.log));
  CHECK(a.log.num_clients() <= 300);
  CHECK(a.log.num_events() > 1000);
}

TEST_CASE("events stay inside the window and carry valid fields") {
  auto cfg = small(200);
  auto out = generate(cfg, 3);
  const auto w = cfg.window();
  for (const auto& h : out.log.clients())
    for (const auto& e : h.events) {
      CHECK(e.timestamp >= w.start);
      CHECK(e.timestamp < w.start + cfg.window_days * 86400);
      CHECK_NOTHROW(validate_event(e));
      if (e.sku) {
        CHECK(*e.sku < cfg.n_skus);
        CHECK(*e.category < cfg.n_categories);
      }
      if (e.url) CHECK(*e.url < cfg.n_urls);
    }
}

TEST_CASE("zero rates produce no events of that type") {
  auto cfg = flat_single(200);
  cfg.archetypes[0].rates.search_query = 0.0;
  cfg.archetypes[0].rates.product_buy = 0.0;
  auto out = generate(cfg, 1);
  auto counts = type_counts(out.log);
  CHECK(counts[slot(EventType::kSearchQuery)] == 0);
  CHECK(counts[slot(EventType::kProductBuy)] == 0);
  CHECK(counts[slot(EventType::kPageVisit)] > 0);
}

TEST_CASE("per type counts converge to the configured rates") {
  auto cfg = flat_single(600);
  auto out = generate(cfg, 2);
  auto counts = type_counts(out.log);
  const auto& r = cfg.archetypes[0].rates;
  for (EventType t : kAllEventTypes) {
    const double expected = r.of(t) * cfg.window_days * cfg.n_clients;
    const double got = counts[slot(t)];
    CHECK(std::abs(got - expected) < 4.0 * std::sqrt(expected));
  }
}

TEST_CASE("fade moves activity toward the start of the window") {
  auto cfg = flat_single(800);
  cfg.archetypes[0].fade = 0.8;
  auto out = generate(cfg, 4);
  const std::int64_t mid = cfg.window_start + cfg.window_days * 86400 / 2;
  double early = 0, late = 0;
  for (const auto& h : out.log.clients())
    for (const auto& e : h.events) (e.timestamp < mid ? early : late) += 1;
  // the rate integrates to 0.5 +- fade / 4 over each half
  CHECK(early / (early + late) == doctest::Approx(0.7).epsilon(0.03));
}

TEST_CASE("churned clients are silent after their churn time") {
  auto cfg = flat_single(300);
  cfg.archetypes[0].churn_probability = 1.0;
  cfg.archetypes[0].churn_day_min = 40.0;
  cfg.archetypes[0].churn_day_max = 40.0;
  auto out = generate(cfg, 5);
  const std::int64_t churn = cfg.window_start + 40 * 86400;
  for (const auto& t : out.truth) {
    REQUIRE(t.churn_ts.has_value());
    CHECK(*t.churn_ts == churn);
  }
  for (const auto& h : out.log.clients())
    for (const auto& e : h.events) CHECK(e.timestamp < churn);
  auto split = split_window(out.log, churn, 30);
  CHECK(split.holdout.num_events() == 0);

  cfg.archetypes[0].churn_day_max = 0.0;
  cfg.archetypes[0].churn_day_min = 0.0;
  auto none = generate(cfg, 5);
  CHECK(none.log.num_clients() == 0);
  CHECK(none.truth.size() == 300);
}

// Multinomial log likelihood of a client's type counts under each archetype.
TEST_CASE("archetypes are recoverable from event type mixes") {
  auto cfg = small(3000);
  auto out = generate(cfg, 6);
  const std::size_t A = cfg.archetypes.size();
  std::vector<std::array<double, kNumEventTypes>> logp(A);
  for (std::size_t a = 0; a < A; ++a) {
    double total = 0.0;
    for (EventType t : kAllEventTypes) total += cfg.archetypes[a].rates.of(t);
    for (EventType t : kAllEventTypes)
      logp[a][slot(t)] = std::log(cfg.archetypes[a].rates.of(t) / total);
  }
  std::vector<int> truth(out.truth.size() + 1);
  for (const auto& t : out.truth) truth[t.client_id] = t.archetype;
  std::vector<std::vector<double>> score(A);
  std::vector<std::vector<float>> label(A);
  int correct = 0, n = 0;
  for (const auto& h : out.log.clients()) {
    if (h.events.size() < 10) continue;
    std::array<double, kNumEventTypes> cnt{};
    for (const auto& e : h.events) cnt[slot(e.type)] += 1;
    std::vector<double> ll(A, 0.0);
    for (std::size_t a = 0; a < A; ++a)
      for (int t = 0; t < kNumEventTypes; ++t) ll[a] += cnt[t] * logp[a][t];
    std::size_t best = 0;
    for (std::size_t a = 1; a < A; ++a)
      if (ll[a] > ll[best]) best = a;
    correct += static_cast<int>(best) == truth[h.client_id];
    ++n;
    for (std::size_t a = 0; a < A; ++a) {
      double other = -1e300;
      for (std::size_t b = 0; b < A; ++b)
        if (b != a) other = std::max(other, ll[b]);
      score[a].push_back(ll[a] - other);
      label[a].push_back(truth[h.client_id] == static_cast<int>(a) ? 1.0f : 0.0f);
    }
  }
  REQUIRE(n > 1000);
  MESSAGE("archetype accuracy " << static_cast<double>(correct) / n);
  for (std::size_t a = 0; a < A; ++a) {
    const double auc = eval::auroc(score[a], label[a]);
    MESSAGE(cfg.archetypes[a].name << " auroc " << auc);
    CHECK(auc > 0.9);
  }
}

TEST_CASE("config validation and json") {
  auto cfg = SynthConfig::desk_default();
  CHECK(cfg.n_clients == 10000);
  CHECK(cfg.archetypes.size() == 4);
  CHECK_NOTHROW(cfg.validate());
  auto back = SynthConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  auto partial = SynthConfig::from_json({{"n_clients", 12}});
  CHECK(partial.n_clients == 12);
  CHECK(partial.archetypes.size() == 4);

  auto bad = cfg;
  bad.n_clients = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.archetypes[1].churn_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.archetypes[0].rates.page_visit = -1;
  CHECK_THROWS_AS(generate(bad, 1), ConfigError);
  bad = cfg;
  bad.archetypes.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("truth json lists every client") {
  auto out = generate(small(50), 9);
  auto j = out.truth_json();
  REQUIRE(j["clients"].is_array());
  CHECK(j["clients"].size() == 50);
  CHECK(j["clients"][0]["client_id"] == 1);
  CHECK(j["clients"][0].contains("archetype"));
  CHECK(j["clients"][0].contains("churn_ts"));
}
