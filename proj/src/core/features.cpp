#include "features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

#include "errors.hpp"

namespace uniprofile::features {

namespace {

constexpr std::int64_t kWeek = 7 * kSecondsPerDay;
constexpr std::int64_t kMonth = 30 * kSecondsPerDay;

struct SourceStats {
  std::vector<std::int64_t> times;  // ascending

  std::size_t count_in(std::int64_t lo, std::int64_t hi) const {
    return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), hi) -
                                    std::lower_bound(times.begin(), times.end(), lo));
  }

  double mean_gap_in(std::int64_t lo, std::int64_t hi) const {
    auto first = std::lower_bound(times.begin(), times.end(), lo);
    auto last = std::lower_bound(times.begin(), times.end(), hi);
    const auto n = last - first;
    if (n < 2) return 0.0;
    return static_cast<double>(*(last - 1) - *first) / static_cast<double>(n - 1);
  }

  double mean_gap_all() const {
    if (times.size() < 2) return 0.0;
    return static_cast<double>(times.back() - times.front()) /
           static_cast<double>(times.size() - 1);
  }
};

std::vector<std::string> make_names() {
  std::vector<std::string> names;
  for (const char* src : {"product", "page_visit"}) {
    for (const char* w : {"7d", "30d", "all"}) names.push_back(std::string(src) + "_count_" + w);
    for (const char* w : {"7d", "30d", "all"}) names.push_back(std::string(src) + "_mean_gap_" + w);
    names.push_back(std::string(src) + "_wow_change");
    names.push_back(std::string(src) + "_mom_change");
  }
  for (const char* n : {"distinct_sku", "distinct_category", "distinct_url", "buy_price_mean",
                        "buy_price_std", "buy_price_min", "buy_price_max", "cart_abandonment"})
    names.emplace_back(n);
  return names;
}

void append_source(std::vector<double>& out, const SourceStats& s, std::int64_t now) {
  const double c7 = static_cast<double>(s.count_in(now - kWeek, now));
  const double c30 = static_cast<double>(s.count_in(now - kMonth, now));
  out.push_back(c7);
  out.push_back(c30);
  out.push_back(static_cast<double>(s.times.size()));
  out.push_back(s.mean_gap_in(now - kWeek, now));
  out.push_back(s.mean_gap_in(now - kMonth, now));
  out.push_back(s.mean_gap_all());
  const double prior7 = static_cast<double>(s.count_in(now - 2 * kWeek, now - kWeek));
  const double prior30 = static_cast<double>(s.count_in(now - 2 * kMonth, now - kMonth));
  out.push_back((c7 - prior7) / (prior7 + 1.0));
  out.push_back((c30 - prior30) / (prior30 + 1.0));
}

}  // namespace

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = make_names();
  return names;
}

FeatureVector extract_features(const ClientHistory& history, std::int64_t now_ts) {
  SourceStats product, visits;
  std::set<std::int64_t> skus, categories, urls;
  std::vector<double> prices;
  double adds = 0.0, buys = 0.0;
  std::int64_t prev = std::numeric_limits<std::int64_t>::min();
  for (const auto& e : history.events) {
    if (e.timestamp < prev)
      throw ContractError("extract_features: history of client " +
                          std::to_string(history.client_id) + " is not sorted");
    prev = e.timestamp;
    if (is_product_event(e.type)) {
      product.times.push_back(e.timestamp);
      skus.insert(*e.sku);
      categories.insert(*e.category);
      if (e.type == EventType::kProductBuy) {
        buys += 1.0;
        prices.push_back(static_cast<double>(*e.price_bucket));
      } else if (e.type == EventType::kAddToCart) {
        adds += 1.0;
      }
    } else if (e.type == EventType::kPageVisit) {
      visits.times.push_back(e.timestamp);
      urls.insert(*e.url);
    }
  }

  FeatureVector fv;
  fv.client_id = history.client_id;
  fv.values.reserve(feature_names().size());
  append_source(fv.values, product, now_ts);
  append_source(fv.values, visits, now_ts);
  fv.values.push_back(static_cast<double>(skus.size()));
  fv.values.push_back(static_cast<double>(categories.size()));
  fv.values.push_back(static_cast<double>(urls.size()));
  if (prices.empty()) {
    fv.values.insert(fv.values.end(), {0.0, 0.0, 0.0, 0.0});
  } else {
    double mean = 0.0;
    for (double p : prices) mean += p;
    mean /= static_cast<double>(prices.size());
    double var = 0.0;
    for (double p : prices) var += (p - mean) * (p - mean);
    var /= static_cast<double>(prices.size());
    const auto [lo, hi] = std::minmax_element(prices.begin(), prices.end());
    fv.values.insert(fv.values.end(), {mean, std::sqrt(var), *lo, *hi});
  }
  fv.values.push_back(std::max(0.0, adds - buys) / std::max(adds, 1.0));
  return fv;
}

ProfileMatrix extract_all(const EventLog& log, std::int64_t now_ts, unsigned threads) {
  const std::size_t n = log.num_clients();
  const std::size_t d = feature_names().size();
  std::vector<float> values(n * d);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto fv = extract_features(log.clients()[i], now_ts);
      for (std::size_t j = 0; j < d; ++j) values[i * d + j] = static_cast<float>(fv.values[j]);
    }
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
  ProfileMatrix m(log.client_ids(), static_cast<std::uint32_t>(d), std::move(values));
  m.source = "handcrafted";
  m.feature_names = feature_names();
  return m;
}

}  // namespace uniprofile::features
