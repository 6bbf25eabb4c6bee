#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace uniprofile {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr int kTokensPerText = 16;
inline constexpr int kPriceBuckets = 100;

enum class EventType : std::uint8_t {
  kProductBuy = 0,
  kAddToCart = 1,
  kRemoveFromCart = 2,
  kPageVisit = 3,
  kSearchQuery = 4,
};
inline constexpr int kNumEventTypes = 5;
inline constexpr std::array<EventType, kNumEventTypes> kAllEventTypes = {
    EventType::kProductBuy, EventType::kAddToCart, EventType::kRemoveFromCart,
    EventType::kPageVisit, EventType::kSearchQuery};

std::string_view to_string(EventType type);
std::optional<EventType> event_type_from_string(std::string_view name);

// buy / add / remove carry item metadata.
inline bool is_product_event(EventType t) {
  return t == EventType::kProductBuy || t == EventType::kAddToCart ||
         t == EventType::kRemoveFromCart;
}

using TokenList = std::array<std::int32_t, kTokensPerText>;

struct Event {
  std::uint64_t client_id = 0;
  std::int64_t timestamp = 0;
  EventType type = EventType::kPageVisit;
  std::optional<std::int64_t> sku;
  std::optional<std::int64_t> category;
  std::optional<std::int32_t> price_bucket;
  std::optional<std::int64_t> url;
  std::optional<TokenList> query_tokens;
  std::optional<TokenList> name_tokens;

  bool operator==(const Event&) const = default;
};

// Throws ValidationError naming the offending field.
void validate_event(const Event& e);

struct ClientHistory {
  std::uint64_t client_id = 0;
  std::vector<Event> events;  // ascending timestamp, ties in input order

  bool operator==(const ClientHistory&) const = default;
};

struct TimeWindow {
  std::int64_t start = 0;
  std::int64_t end = 0;  // inclusive

  bool contains(std::int64_t ts) const { return ts >= start && ts <= end; }
  bool operator==(const TimeWindow&) const = default;
};

// Immutable after construction. Clients are ordered by ascending id.
class EventLog {
 public:
  EventLog() = default;
  EventLog(std::vector<ClientHistory> clients, TimeWindow window);

  // Groups and stably sorts raw events; the window defaults to [min, max] ts.
  static EventLog from_events(std::vector<Event> events,
                              std::optional<TimeWindow> window = std::nullopt);

  const std::vector<ClientHistory>& clients() const { return clients_; }
  const TimeWindow& window() const { return window_; }
  std::size_t num_clients() const { return clients_.size(); }
  std::size_t num_events() const;
  const ClientHistory* find(std::uint64_t client_id) const;
  std::vector<std::uint64_t> client_ids() const;

  bool operator==(const EventLog&) const = default;

 private:
  std::vector<ClientHistory> clients_;
  TimeWindow window_;
};

EventLog parse_events(std::istream& in,
                      std::optional<TimeWindow> window = std::nullopt);
EventLog read_events_file(const std::string& path,
                          std::optional<TimeWindow> window = std::nullopt);

std::string serialize_event(const Event& e);
// Client-grouped order; parse_events(serialize_events(log)) == log for
// logs whose window is the [min, max] timestamp span.
void serialize_events(const EventLog& log, std::ostream& out);
void write_events_file(const EventLog& log, const std::string& path);

struct WindowSplit {
  EventLog history;  // ts < cutoff; every client of the input is kept
  EventLog holdout;  // cutoff <= ts < cutoff + horizon; only active clients
};

WindowSplit split_window(const EventLog& log, std::int64_t cutoff_ts,
                         int horizon_days = 14);

struct EventTypeStats {
  EventType type = EventType::kPageVisit;
  std::uint64_t interactions = 0;
  std::uint64_t clients = 0;
  std::optional<std::uint64_t> entities;  // none for search_query
  double avg_length = 0.0;                // interactions / clients
};

std::vector<EventTypeStats> event_counts(const EventLog& log);

}  // namespace uniprofile
