#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "event_log.hpp"

namespace uniprofile::synth {

inline constexpr int kCodebookSize = 256;

// Events per day for one client of average activity.
struct EventRates {
  double product_buy = 0.03;
  double add_to_cart = 0.06;
  double remove_from_cart = 0.015;
  double page_visit = 0.25;
  double search_query = 0.04;

  double of(EventType t) const;
};

struct Archetype {
  std::string name;
  double weight = 1.0;     // mixture weight used when assigning clients
  EventRates rates;
  double churn_probability = 0.1;
  double churn_day_min = 0.0;   // churn time ~ U(min, max) days after window start
  double churn_day_max = 90.0;
  double fade = 0.0;            // activity multiplier goes 1 + fade -> 1 - fade over the window
  // Explicit affinities (one weight per category / url); generated from the
  // seed when empty: `focus` favoured items carry most of the mass.
  std::vector<double> category_affinity;
  std::vector<double> url_affinity;
  int category_focus = 5;
  int url_focus = 40;
  double price_preference = 50.0;  // preferred price bucket
  double price_spread = 20.0;
};

struct SynthConfig {
  int n_clients = 10000;
  int n_skus = 500;
  int n_categories = 50;
  int n_urls = 1000;
  int n_price_buckets = kPriceBuckets;
  int window_days = 90;
  std::int64_t window_start = 1700006400;  // a UTC midnight
  double activity_shape = 2.0;      // per-client rate multiplier ~ Gamma(k, 1/k); 0 disables
  double personal_weight = 0.5;     // mix of personal and archetype preferences
  double repeat_probability = 0.3;  // product event reuses an earlier SKU
  std::vector<Archetype> archetypes;
  std::uint64_t seed = 42;

  // Ten thousand clients, 500 SKUs, 50 categories, 1000 URLs, 90 days and four archetypes.
  static SynthConfig desk_default();
  void validate() const;
  TimeWindow window() const;

  nlohmann::json to_json() const;
  // Missing keys keep desk_default() values; omitting "archetypes" keeps the default four.
  static SynthConfig from_json(const nlohmann::json& j);
};

struct ClientTruth {
  std::uint64_t client_id = 0;
  int archetype = 0;
  double activity = 1.0;
  std::optional<std::int64_t> churn_ts;
};

struct SynthOutput {
  EventLog log;
  std::vector<ClientTruth> truth;
  nlohmann::json truth_json() const;
};

SynthOutput generate(const SynthConfig& cfg, std::uint64_t seed, unsigned threads = 1);

}  // namespace uniprofile::synth
