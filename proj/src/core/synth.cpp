#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "errors.hpp"
#include "random.hpp"

namespace uniprofile::synth {

using nlohmann::json;

double EventRates::of(EventType t) const {
  switch (t) {
    case EventType::kProductBuy: return product_buy;
    case EventType::kAddToCart: return add_to_cart;
    case EventType::kRemoveFromCart: return remove_from_cart;
    case EventType::kPageVisit: return page_visit;
    case EventType::kSearchQuery: return search_query;
  }
  return 0.0;
}

namespace {

Archetype make_archetype(std::string name, EventRates r, double churn, double churn_min,
                         double fade, double price) {
  Archetype a;
  a.name = std::move(name);
  a.rates = r;
  a.churn_probability = churn;
  a.churn_day_min = churn_min;
  a.fade = fade;
  a.price_preference = price;
  return a;
}

json rates_json(const EventRates& r) {
  return {{"product_buy", r.product_buy},   {"add_to_cart", r.add_to_cart},
          {"remove_from_cart", r.remove_from_cart}, {"page_visit", r.page_visit},
          {"search_query", r.search_query}};
}

EventRates rates_from_json(const json& j, EventRates r) {
  r.product_buy = j.value("product_buy", r.product_buy);
  r.add_to_cart = j.value("add_to_cart", r.add_to_cart);
  r.remove_from_cart = j.value("remove_from_cart", r.remove_from_cart);
  r.page_visit = j.value("page_visit", r.page_visit);
  r.search_query = j.value("search_query", r.search_query);
  return r;
}

}  // namespace

SynthConfig SynthConfig::desk_default() {
  SynthConfig c;
  c.archetypes = {
      make_archetype("browser", {0.01, 0.03, 0.01, 0.45, 0.06}, 0.15, 0.0, 0.0, 30.0),
      make_archetype("shopper", {0.08, 0.12, 0.03, 0.15, 0.04}, 0.05, 0.0, 0.0, 60.0),
      make_archetype("fading", {0.03, 0.05, 0.02, 0.25, 0.03}, 0.6, 30.0, 0.6, 45.0),
      make_archetype("searcher", {0.02, 0.04, 0.01, 0.12, 0.20}, 0.1, 0.0, 0.0, 75.0),
  };
  for (auto& a : c.archetypes) a.churn_day_max = c.window_days;
  return c;
}

TimeWindow SynthConfig::window() const {
  return {window_start, window_start + static_cast<std::int64_t>(window_days) * kSecondsPerDay - 1};
}

void SynthConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("synth config: " + what);
  };
  need(n_clients >= 1, "n_clients must be positive");
  need(n_skus >= 1 && n_categories >= 1 && n_urls >= 1, "catalog sizes must be positive");
  need(n_price_buckets == kPriceBuckets, "n_price_buckets must be 100");
  need(window_days >= 1, "window_days must be positive");
  need(window_start >= 0, "window_start must be non-negative");
  need(activity_shape >= 0.0, "activity_shape must be non-negative");
  need(personal_weight >= 0.0 && personal_weight <= 1.0, "personal_weight must lie in [0, 1]");
  need(repeat_probability >= 0.0 && repeat_probability <= 1.0,
       "repeat_probability must lie in [0, 1]");
  need(!archetypes.empty(), "at least one archetype is required");
  double total = 0.0;
  for (const auto& a : archetypes) {
    const std::string p = "archetype '" + a.name + "': ";
    need(a.weight >= 0.0, p + "weight must be non-negative");
    total += a.weight;
    for (EventType t : kAllEventTypes) need(a.rates.of(t) >= 0.0, p + "rates must be non-negative");
    need(a.churn_probability >= 0.0 && a.churn_probability <= 1.0,
         p + "churn_probability must lie in [0, 1]");
    need(a.churn_day_min >= 0.0 && a.churn_day_min <= a.churn_day_max,
         p + "churn days must satisfy 0 <= min <= max");
    need(a.fade >= 0.0 && a.fade <= 1.0, p + "fade must lie in [0, 1]");
    need(a.category_affinity.empty() ||
             a.category_affinity.size() == static_cast<std::size_t>(n_categories),
         p + "category_affinity needs one weight per category");
    need(a.url_affinity.empty() || a.url_affinity.size() == static_cast<std::size_t>(n_urls),
         p + "url_affinity needs one weight per url");
    for (double w : a.category_affinity) need(w >= 0.0, p + "affinities must be non-negative");
    for (double w : a.url_affinity) need(w >= 0.0, p + "affinities must be non-negative");
    need(a.category_focus >= 1 && a.url_focus >= 1, p + "focus sizes must be positive");
    need(a.price_spread > 0.0, p + "price_spread must be positive");
  }
  need(total > 0.0, "archetype weights sum to zero");
}

json SynthConfig::to_json() const {
  json j = {{"n_clients", n_clients},
            {"n_skus", n_skus},
            {"n_categories", n_categories},
            {"n_urls", n_urls},
            {"n_price_buckets", n_price_buckets},
            {"window_days", window_days},
            {"window_start", window_start},
            {"activity_shape", activity_shape},
            {"personal_weight", personal_weight},
            {"repeat_probability", repeat_probability},
            {"seed", seed}};
  j["archetypes"] = json::array();
  for (const auto& a : archetypes) {
    json aj = {{"name", a.name},
               {"weight", a.weight},
               {"rates", rates_json(a.rates)},
               {"churn_probability", a.churn_probability},
               {"churn_day_min", a.churn_day_min},
               {"churn_day_max", a.churn_day_max},
               {"fade", a.fade},
               {"category_focus", a.category_focus},
               {"url_focus", a.url_focus},
               {"price_preference", a.price_preference},
               {"price_spread", a.price_spread}};
    if (!a.category_affinity.empty()) aj["category_affinity"] = a.category_affinity;
    if (!a.url_affinity.empty()) aj["url_affinity"] = a.url_affinity;
    j["archetypes"].push_back(aj);
  }
  return j;
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c = desk_default();
  try {
    c.n_clients = j.value("n_clients", c.n_clients);
    c.n_skus = j.value("n_skus", c.n_skus);
    c.n_categories = j.value("n_categories", c.n_categories);
    c.n_urls = j.value("n_urls", c.n_urls);
    c.n_price_buckets = j.value("n_price_buckets", c.n_price_buckets);
    c.window_days = j.value("window_days", c.window_days);
    c.window_start = j.value("window_start", c.window_start);
    c.activity_shape = j.value("activity_shape", c.activity_shape);
    c.personal_weight = j.value("personal_weight", c.personal_weight);
    c.repeat_probability = j.value("repeat_probability", c.repeat_probability);
    c.seed = j.value("seed", c.seed);
    if (j.contains("archetypes")) {
      c.archetypes.clear();
      for (const auto& aj : j["archetypes"]) {
        Archetype a;
        a.churn_day_max = c.window_days;
        a.name = aj.value("name", "archetype" + std::to_string(c.archetypes.size()));
        a.weight = aj.value("weight", a.weight);
        if (aj.contains("rates")) a.rates = rates_from_json(aj["rates"], a.rates);
        a.churn_probability = aj.value("churn_probability", a.churn_probability);
        a.churn_day_min = aj.value("churn_day_min", a.churn_day_min);
        a.churn_day_max = aj.value("churn_day_max", a.churn_day_max);
        a.fade = aj.value("fade", a.fade);
        a.category_focus = aj.value("category_focus", a.category_focus);
        a.url_focus = aj.value("url_focus", a.url_focus);
        a.price_preference = aj.value("price_preference", a.price_preference);
        a.price_spread = aj.value("price_spread", a.price_spread);
        if (aj.contains("category_affinity"))
          a.category_affinity = aj["category_affinity"].get<std::vector<double>>();
        if (aj.contains("url_affinity")) a.url_affinity = aj["url_affinity"].get<std::vector<double>>();
        c.archetypes.push_back(std::move(a));
      }
    } else {
      for (auto& a : c.archetypes) a.churn_day_max = c.window_days;
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("synth config: ") + ex.what());
  }
  c.validate();
  return c;
}

json SynthOutput::truth_json() const {
  json clients = json::array();
  for (const auto& t : truth) {
    clients.push_back({{"client_id", t.client_id},
                       {"archetype", t.archetype},
                       {"activity", t.activity},
                       {"churn_ts", t.churn_ts ? json(*t.churn_ts) : json(nullptr)}});
  }
  return {{"clients", clients}};
}

namespace {

// Catalog and archetype tables shared by all clients.
struct World {
  std::vector<int> sku_category;
  std::vector<std::int32_t> sku_price;
  std::vector<TokenList> sku_name;
  std::vector<std::vector<int>> category_skus;
  // [archetype][category] cumulative weights over category_skus[category]
  std::vector<std::vector<std::vector<double>>> sku_weights;
  std::vector<std::vector<double>> category_affinity;  // normalized
  std::vector<std::vector<double>> url_affinity;       // normalized
  std::vector<std::vector<double>> query_tokens;       // cumulative over the codebook
};

std::vector<double> normalized(std::vector<double> w) {
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  if (s <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
  } else {
    for (double& v : w) v /= s;
  }
  return w;
}

std::vector<double> focus_weights(int n, int focus, double background, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(n), background);
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx.begin(), idx.end());
  for (int k = 0; k < std::min(focus, n); ++k) w[static_cast<std::size_t>(idx[k])] = 1.0 + rng.uniform();
  return normalized(std::move(w));
}

World build_world(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0x776f726c64ULL));
  World w;
  const int nc = cfg.n_categories;
  w.sku_category.resize(static_cast<std::size_t>(cfg.n_skus));
  for (int s = 0; s < cfg.n_skus; ++s) w.sku_category[s] = s % nc;
  rng.shuffle(w.sku_category.begin(), w.sku_category.end());
  w.category_skus.assign(static_cast<std::size_t>(nc), {});
  for (int s = 0; s < cfg.n_skus; ++s) w.category_skus[w.sku_category[s]].push_back(s);

  std::vector<double> category_price(static_cast<std::size_t>(nc));
  std::vector<std::array<int, 8>> category_topic(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c) {
    category_price[c] = rng.uniform(5.0, 95.0);
    for (int& t : category_topic[c]) t = static_cast<int>(rng.below(kCodebookSize));
  }
  std::vector<double> sku_pop(static_cast<std::size_t>(cfg.n_skus));
  w.sku_price.resize(sku_pop.size());
  w.sku_name.resize(sku_pop.size());
  for (int s = 0; s < cfg.n_skus; ++s) {
    const int c = w.sku_category[s];
    w.sku_price[s] = static_cast<std::int32_t>(
        std::clamp(std::lround(category_price[c] + rng.normal(0.0, 10.0)), 0L,
                   static_cast<long>(kPriceBuckets - 1)));
    sku_pop[s] = 1.0 / std::pow(1.0 + static_cast<double>(rng.below(20)), 0.8);
    for (int k = 0; k < kTokensPerText; ++k)
      w.sku_name[s][k] = k < 10 ? category_topic[c][rng.below(8)]
                                : static_cast<std::int32_t>(rng.below(kCodebookSize));
  }

  for (const auto& a : cfg.archetypes) {
    w.category_affinity.push_back(a.category_affinity.empty()
                                      ? focus_weights(nc, a.category_focus, 0.02, rng)
                                      : normalized(a.category_affinity));
    w.url_affinity.push_back(a.url_affinity.empty() ? focus_weights(cfg.n_urls, a.url_focus, 0.01, rng)
                                                    : normalized(a.url_affinity));
    w.query_tokens.push_back(cumulative_weights(focus_weights(kCodebookSize, 24, 0.05, rng)));
    std::vector<std::vector<double>> per_cat;
    for (int c = 0; c < nc; ++c) {
      std::vector<double> sw;
      for (int s : w.category_skus[c]) {
        const double dp = (w.sku_price[s] - a.price_preference) / a.price_spread;
        sw.push_back(sku_pop[s] * std::exp(-0.5 * dp * dp) + 1e-9);
      }
      per_cat.push_back(sw.empty() ? std::vector<double>{} : cumulative_weights(sw));
    }
    w.sku_weights.push_back(std::move(per_cat));
  }
  return w;
}

struct Timed {
  double day;
  EventType type;
};

ClientHistory generate_client(const SynthConfig& cfg, const World& w, std::uint64_t seed,
                              std::size_t index, ClientTruth& truth) {
  Rng rng(mix64(seed ^ mix64(0x636c69656e74ULL + index)));
  const std::uint64_t id = index + 1;
  truth.client_id = id;

  std::vector<double> arch_w;
  for (const auto& a : cfg.archetypes) arch_w.push_back(a.weight);
  truth.archetype = static_cast<int>(rng.categorical(cumulative_weights(arch_w)));
  const Archetype& a = cfg.archetypes[truth.archetype];
  truth.activity = cfg.activity_shape > 0.0
                       ? rng.gamma(cfg.activity_shape) / cfg.activity_shape
                       : 1.0;
  const double days = cfg.window_days;
  double end_day = days;
  if (rng.bernoulli(a.churn_probability)) {
    const double churn_day = rng.uniform(a.churn_day_min, a.churn_day_max);
    end_day = std::min(days, churn_day);
    truth.churn_ts = cfg.window_start + static_cast<std::int64_t>(churn_day * kSecondsPerDay);
  }

  // Personal preferences are drawn even when unused so the stream layout is fixed.
  const auto nc = static_cast<std::size_t>(cfg.n_categories);
  std::vector<double> personal_cat(nc, 0.0), personal_url(static_cast<std::size_t>(cfg.n_urls), 0.0);
  for (int k = 0; k < 3; ++k) personal_cat[rng.below(nc)] += rng.gamma(1.0);
  for (int k = 0; k < 10; ++k) personal_url[rng.below(personal_url.size())] += rng.gamma(1.0);
  personal_cat = normalized(personal_cat);
  personal_url = normalized(personal_url);
  std::vector<double> cat_w(nc), url_w(personal_url.size());
  const double pw = cfg.personal_weight;
  for (std::size_t c = 0; c < nc; ++c)
    cat_w[c] = (1.0 - pw) * w.category_affinity[truth.archetype][c] + pw * personal_cat[c];
  for (std::size_t u = 0; u < url_w.size(); ++u)
    url_w[u] = (1.0 - pw) * w.url_affinity[truth.archetype][u] + pw * personal_url[u];
  const auto cat_cum = cumulative_weights(cat_w);
  const auto url_cum = cumulative_weights(url_w);

  // Thinned Poisson processes; the rate moves linearly from 1 + fade to 1 - fade.
  std::vector<Timed> times;
  for (EventType t : kAllEventTypes) {
    const double base = a.rates.of(t) * truth.activity;
    if (base <= 0.0) continue;
    const double peak = base * (1.0 + a.fade);
    double day = 0.0;
    for (;;) {
      day += rng.exponential(peak);
      if (day >= end_day) break;
      const double rate = base * (1.0 + a.fade * (1.0 - 2.0 * day / days));
      if (rng.uniform() * peak < rate) times.push_back({day, t});
    }
  }
  std::stable_sort(times.begin(), times.end(), [](const Timed& x, const Timed& y) { return x.day < y.day; });

  ClientHistory h;
  h.client_id = id;
  std::vector<int> seen, in_cart;
  for (const Timed& tm : times) {
    Event e;
    e.client_id = id;
    e.timestamp = cfg.window_start + static_cast<std::int64_t>(std::floor(tm.day * kSecondsPerDay));
    e.type = tm.type;
    if (is_product_event(tm.type)) {
      int sku = -1;
      if (tm.type == EventType::kRemoveFromCart && !in_cart.empty()) {
        sku = in_cart[rng.below(in_cart.size())];
      } else if (tm.type == EventType::kProductBuy && !in_cart.empty() && rng.bernoulli(0.5)) {
        sku = in_cart[rng.below(in_cart.size())];
      } else if (!seen.empty() && rng.bernoulli(cfg.repeat_probability)) {
        sku = seen[rng.below(seen.size())];
      }
      if (sku < 0) {
        std::size_t c = rng.categorical(cat_cum);
        while (w.category_skus[c].empty()) c = (c + 1) % nc;
        const auto& cum = w.sku_weights[truth.archetype][c];
        sku = w.category_skus[c][rng.categorical(cum)];
      }
      if (tm.type == EventType::kAddToCart) in_cart.push_back(sku);
      if (tm.type != EventType::kAddToCart) {
        auto it = std::find(in_cart.begin(), in_cart.end(), sku);
        if (it != in_cart.end()) in_cart.erase(it);
      }
      if (std::find(seen.begin(), seen.end(), sku) == seen.end()) seen.push_back(sku);
      e.sku = sku;
      e.category = w.sku_category[sku];
      e.price_bucket = w.sku_price[sku];
      e.name_tokens = w.sku_name[sku];
    } else if (tm.type == EventType::kPageVisit) {
      e.url = static_cast<std::int64_t>(rng.categorical(url_cum));
    } else {
      TokenList q;
      for (auto& tok : q) tok = static_cast<std::int32_t>(rng.categorical(w.query_tokens[truth.archetype]));
      e.query_tokens = q;
    }
    h.events.push_back(std::move(e));
  }
  return h;
}

}  // namespace

SynthOutput generate(const SynthConfig& cfg, std::uint64_t seed, unsigned threads) {
  cfg.validate();
  const World world = build_world(cfg, seed);
  const auto n = static_cast<std::size_t>(cfg.n_clients);
  std::vector<ClientHistory> clients(n);
  SynthOutput out;
  out.truth.resize(n);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) clients[i] = generate_client(cfg, world, seed, i, out.truth[i]);
  };
  threads = std::max(1u, threads);
  if (threads == 1 || n < 2 * threads) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned k = 0; k < threads; ++k)
      if (k * chunk < n) pool.emplace_back(work, k * chunk, std::min(n, (k + 1) * chunk));
    for (auto& t : pool) t.join();
  }
  std::vector<ClientHistory> active;
  for (auto& c : clients)
    if (!c.events.empty()) active.push_back(std::move(c));
  out.log = EventLog(std::move(active), cfg.window());
  return out;
}

}  // namespace uniprofile::synth
