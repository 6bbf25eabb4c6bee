#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "event_log.hpp"
#include "random.hpp"

namespace fx {

using namespace uniprofile;

inline TokenList tokens(std::int32_t base) {
  TokenList t{};
  for (int i = 0; i < kTokensPerText; ++i) t[i] = base + i;
  return t;
}

inline Event product(EventType type, std::uint64_t client, std::int64_t ts, std::int64_t sku,
                     std::int64_t category, std::int32_t price = 10) {
  Event e;
  e.client_id = client;
  e.timestamp = ts;
  e.type = type;
  e.sku = sku;
  e.category = category;
  e.price_bucket = price;
  e.name_tokens = tokens(static_cast<std::int32_t>(sku % 50));
  return e;
}

inline Event buy(std::uint64_t c, std::int64_t ts, std::int64_t sku, std::int64_t cat,
                 std::int32_t price = 10) {
  return product(EventType::kProductBuy, c, ts, sku, cat, price);
}
inline Event add(std::uint64_t c, std::int64_t ts, std::int64_t sku, std::int64_t cat,
                 std::int32_t price = 10) {
  return product(EventType::kAddToCart, c, ts, sku, cat, price);
}
inline Event removal(std::uint64_t c, std::int64_t ts, std::int64_t sku, std::int64_t cat) {
  return product(EventType::kRemoveFromCart, c, ts, sku, cat);
}

inline Event visit(std::uint64_t c, std::int64_t ts, std::int64_t url) {
  Event e;
  e.client_id = c;
  e.timestamp = ts;
  e.type = EventType::kPageVisit;
  e.url = url;
  return e;
}

inline Event search(std::uint64_t c, std::int64_t ts, std::int32_t base = 7) {
  Event e;
  e.client_id = c;
  e.timestamp = ts;
  e.type = EventType::kSearchQuery;
  e.query_tokens = tokens(base);
  return e;
}

inline constexpr std::int64_t kDay = kSecondsPerDay;
inline constexpr std::int64_t kT0 = 1700006400;

// Scratch directory under the test binary's working directory, emptied first.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::current_path() / ("scratch_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fx
