#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "event_log.hpp"
#include "profile.hpp"

namespace uniprofile::features {

// Feature order is fixed. Naming: <source>_<stat>_<window>, sources are
// `product` (buy/add/remove) and `page_visit`; windows 7d, 30d, all.
//
//   *_count_<w>        events in the window [now - w, now)
//   *_mean_gap_<w>     mean seconds between successive events (0 if < 2)
//   *_wow_change       (last 7d - prior 7d) / (prior 7d + 1)
//   *_mom_change       (last 30d - prior 30d) / (prior 30d + 1)
//   distinct_{sku,category,url}
//   buy_price_{mean,std,min,max}  over product_buy price buckets (0 if none)
//   cart_abandonment   max(0, adds - buys) / max(adds, 1)
const std::vector<std::string>& feature_names();

struct FeatureVector {
  std::uint64_t client_id = 0;
  std::vector<double> values;  // parallel to feature_names()
};

// `history` must be sorted by timestamp (ContractError otherwise).
FeatureVector extract_features(const ClientHistory& history, std::int64_t now_ts);

// One row per client of `log`, in log order.
ProfileMatrix extract_all(const EventLog& log, std::int64_t now_ts, unsigned threads = 1);

}  // namespace uniprofile::features
