#include "event_log.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "errors.hpp"

namespace uniprofile {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumEventTypes> kTypeNames = {
    "product_buy", "add_to_cart", "remove_from_cart", "page_visit",
    "search_query"};

const char* const kKnownKeys[] = {"client_id",    "timestamp", "event_type",
                                  "sku",          "category",  "price_bucket",
                                  "url",          "query_tokens",
                                  "name_tokens"};

TokenList parse_tokens(const json& j, const char* field) {
  if (!j.is_array()) throw ValidationError(std::string(field) + ": expected array");
  if (j.size() != kTokensPerText)
    throw ValidationError(std::string(field) + ": expected " +
                          std::to_string(kTokensPerText) + " tokens, got " +
                          std::to_string(j.size()));
  TokenList out{};
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!j[i].is_number_integer())
      throw ValidationError(std::string(field) + ": tokens must be integers");
    out[i] = j[i].get<std::int32_t>();
  }
  return out;
}

template <typename T>
std::optional<T> optional_int(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer())
    throw ValidationError(std::string(key) + ": expected integer");
  return it->get<T>();
}

Event event_from_json(const json& obj) {
  if (!obj.is_object()) throw ValidationError("record: expected JSON object");
  for (const auto& item : obj.items()) {
    if (std::find(std::begin(kKnownKeys), std::end(kKnownKeys), item.key()) ==
        std::end(kKnownKeys))
      throw ValidationError(item.key() + ": unknown field");
  }
  Event e;
  auto cid = optional_int<std::int64_t>(obj, "client_id");
  if (!cid || *cid < 0) throw ValidationError("client_id: required non-negative integer");
  e.client_id = static_cast<std::uint64_t>(*cid);
  auto ts = optional_int<std::int64_t>(obj, "timestamp");
  if (!ts) throw ValidationError("timestamp: required integer");
  e.timestamp = *ts;
  auto type_it = obj.find("event_type");
  if (type_it == obj.end() || !type_it->is_string())
    throw ValidationError("event_type: required string");
  auto type = event_type_from_string(type_it->get<std::string>());
  if (!type) throw ValidationError("event_type: unknown value '" +
                                   type_it->get<std::string>() + "'");
  e.type = *type;
  e.sku = optional_int<std::int64_t>(obj, "sku");
  e.category = optional_int<std::int64_t>(obj, "category");
  e.price_bucket = optional_int<std::int32_t>(obj, "price_bucket");
  e.url = optional_int<std::int64_t>(obj, "url");
  if (auto it = obj.find("query_tokens"); it != obj.end() && !it->is_null())
    e.query_tokens = parse_tokens(*it, "query_tokens");
  if (auto it = obj.find("name_tokens"); it != obj.end() && !it->is_null())
    e.name_tokens = parse_tokens(*it, "name_tokens");
  validate_event(e);
  return e;
}

}  // namespace

std::string_view to_string(EventType type) {
  return kTypeNames[static_cast<std::size_t>(type)];
}

std::optional<EventType> event_type_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i)
    if (kTypeNames[i] == name) return static_cast<EventType>(i);
  return std::nullopt;
}

void validate_event(const Event& e) {
  auto require = [](bool ok, const char* field, const char* why) {
    if (!ok) throw ValidationError(std::string(field) + ": " + why);
  };
  if (is_product_event(e.type)) {
    require(e.sku.has_value(), "sku", "required for product events");
    require(e.category.has_value(), "category", "required for product events");
    require(e.price_bucket.has_value(), "price_bucket", "required for product events");
    require(e.name_tokens.has_value(), "name_tokens", "required for product events");
    require(!e.url, "url", "not allowed for product events");
    require(!e.query_tokens, "query_tokens", "not allowed for product events");
  } else if (e.type == EventType::kPageVisit) {
    require(e.url.has_value(), "url", "required for page_visit");
    require(!e.sku, "sku", "not allowed for page_visit");
    require(!e.category, "category", "not allowed for page_visit");
    require(!e.price_bucket, "price_bucket", "not allowed for page_visit");
    require(!e.query_tokens, "query_tokens", "not allowed for page_visit");
    require(!e.name_tokens, "name_tokens", "not allowed for page_visit");
  } else {
    require(e.query_tokens.has_value(), "query_tokens", "required for search_query");
    require(!e.sku, "sku", "not allowed for search_query");
    require(!e.category, "category", "not allowed for search_query");
    require(!e.price_bucket, "price_bucket", "not allowed for search_query");
    require(!e.url, "url", "not allowed for search_query");
    require(!e.name_tokens, "name_tokens", "not allowed for search_query");
  }
  if (e.price_bucket)
    require(*e.price_bucket >= 0 && *e.price_bucket < kPriceBuckets,
            "price_bucket", "must lie in [0, 99]");
}

EventLog::EventLog(std::vector<ClientHistory> clients, TimeWindow window)
    : clients_(std::move(clients)), window_(window) {}

EventLog EventLog::from_events(std::vector<Event> events,
                               std::optional<TimeWindow> window) {
  TimeWindow w{};
  if (window) {
    w = *window;
    if (w.end < w.start) throw RangeError("observation window end precedes start");
    for (const auto& e : events)
      if (!w.contains(e.timestamp))
        throw RangeError("timestamp " + std::to_string(e.timestamp) +
                         " outside observation window");
  } else if (!events.empty()) {
    auto [lo, hi] = std::minmax_element(
        events.begin(), events.end(),
        [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
    w = {lo->timestamp, hi->timestamp};
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.client_id != b.client_id) return a.client_id < b.client_id;
    return a.timestamp < b.timestamp;
  });
  std::vector<ClientHistory> clients;
  for (auto& e : events) {
    if (clients.empty() || clients.back().client_id != e.client_id)
      clients.push_back({e.client_id, {}});
    clients.back().events.push_back(std::move(e));
  }
  return EventLog(std::move(clients), w);
}

std::size_t EventLog::num_events() const {
  std::size_t n = 0;
  for (const auto& c : clients_) n += c.events.size();
  return n;
}

const ClientHistory* EventLog::find(std::uint64_t client_id) const {
  auto it = std::lower_bound(
      clients_.begin(), clients_.end(), client_id,
      [](const ClientHistory& c, std::uint64_t id) { return c.client_id < id; });
  if (it == clients_.end() || it->client_id != client_id) return nullptr;
  return &*it;
}

std::vector<std::uint64_t> EventLog::client_ids() const {
  std::vector<std::uint64_t> ids;
  ids.reserve(clients_.size());
  for (const auto& c : clients_) ids.push_back(c.client_id);
  return ids;
}

EventLog parse_events(std::istream& in, std::optional<TimeWindow> window) {
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw ParseError("line " + std::to_string(line_no) + ": " + ex.what());
    }
    try {
      events.push_back(event_from_json(obj));
    } catch (const ValidationError& ex) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const json::exception& ex) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return EventLog::from_events(std::move(events), window);
}

EventLog read_events_file(const std::string& path, std::optional<TimeWindow> window) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open events file '" + path + "'");
  return parse_events(in, window);
}

std::string serialize_event(const Event& e) {
  // Fixed key order; written by hand so output does not depend on json's
  // internal key sorting.
  std::string s;
  s.reserve(128);
  s += "{\"client_id\":" + std::to_string(e.client_id);
  s += ",\"timestamp\":" + std::to_string(e.timestamp);
  s += ",\"event_type\":\"";
  s += to_string(e.type);
  s += '"';
  auto put = [&s](const char* key, const auto& v) {
    if (v) s += std::string(",\"") + key + "\":" + std::to_string(*v);
  };
  auto put_tokens = [&s](const char* key, const std::optional<TokenList>& v) {
    if (!v) return;
    s += std::string(",\"") + key + "\":[";
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (i) s += ',';
      s += std::to_string((*v)[i]);
    }
    s += ']';
  };
  put("sku", e.sku);
  put("category", e.category);
  put("price_bucket", e.price_bucket);
  put("url", e.url);
  put_tokens("query_tokens", e.query_tokens);
  put_tokens("name_tokens", e.name_tokens);
  s += '}';
  return s;
}

void serialize_events(const EventLog& log, std::ostream& out) {
  for (const auto& c : log.clients())
    for (const auto& e : c.events) out << serialize_event(e) << '\n';
}

void write_events_file(const EventLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write events file '" + path + "'");
  serialize_events(log, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

WindowSplit split_window(const EventLog& log, std::int64_t cutoff_ts, int horizon_days) {
  if (horizon_days <= 0) throw RangeError("horizon_days must be positive");
  if (!log.window().contains(cutoff_ts))
    throw RangeError("cutoff " + std::to_string(cutoff_ts) +
                     " outside observation window [" +
                     std::to_string(log.window().start) + ", " +
                     std::to_string(log.window().end) + "]");
  const std::int64_t bound = cutoff_ts + horizon_days * kSecondsPerDay;
  std::vector<ClientHistory> hist, hold;
  hist.reserve(log.num_clients());
  for (const auto& c : log.clients()) {
    ClientHistory h{c.client_id, {}}, o{c.client_id, {}};
    for (const auto& e : c.events) {
      if (e.timestamp < cutoff_ts)
        h.events.push_back(e);
      else if (e.timestamp < bound)
        o.events.push_back(e);
    }
    hist.push_back(std::move(h));
    if (!o.events.empty()) hold.push_back(std::move(o));
  }
  const TimeWindow w = log.window();
  return {EventLog(std::move(hist), {w.start, std::max(w.start, cutoff_ts - 1)}),
          EventLog(std::move(hold), {cutoff_ts, std::min(w.end, bound - 1)})};
}

std::vector<EventTypeStats> event_counts(const EventLog& log) {
  std::vector<EventTypeStats> rows;
  for (EventType t : kAllEventTypes) {
    EventTypeStats s;
    s.type = t;
    std::unordered_set<std::int64_t> entities;
    for (const auto& c : log.clients()) {
      std::uint64_t n = 0;
      for (const auto& e : c.events) {
        if (e.type != t) continue;
        ++n;
        if (t == EventType::kPageVisit)
          entities.insert(*e.url);
        else if (is_product_event(t))
          entities.insert(*e.sku);
      }
      s.interactions += n;
      if (n > 0) ++s.clients;
    }
    if (t != EventType::kSearchQuery) s.entities = entities.size();
    s.avg_length = s.clients ? static_cast<double>(s.interactions) / s.clients : 0.0;
    rows.push_back(s);
  }
  return rows;
}

}  // namespace uniprofile
