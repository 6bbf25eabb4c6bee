#include "sequence.hpp"

#include <algorithm>

#include "errors.hpp"

namespace uniprofile {

using nlohmann::json;

namespace {

constexpr std::pair<Field, std::string_view> kFieldNames[] = {
    {Field::kDayIndex, "day_index"}, {Field::kWeekIndex, "week_index"},
    {Field::kEventType, "event_type"}, {Field::kCategory, "category"},
    {Field::kSku, "sku"},             {Field::kPrice, "price"},
    {Field::kUrl, "url"},             {Field::kNameToken, "name_token"},
};

constexpr std::pair<SchemaVariant, std::string_view> kVariantNames[] = {
    {SchemaVariant::kWeekAll, "week_all"},
    {SchemaVariant::kAll, "all"},
    {SchemaVariant::kDayEventType, "day_event_type"},
    {SchemaVariant::kSkuText, "sku_text"},
};

int limit_for(Field f, const VocabLimits& limits) {
  switch (f) {
    case Field::kSku: return limits.sku;
    case Field::kUrl: return limits.url;
    case Field::kCategory: return limits.category;
    case Field::kPrice: return limits.price;
    default: return -1;
  }
}

void wrap(EncodedSequence& seq) {
  for (auto& f : seq.fields) {
    f.insert(f.begin(), SpecialIds::kSos);
    f.push_back(SpecialIds::kEos);
  }
}

}  // namespace

std::string_view to_string(Field f) {
  for (auto [k, name] : kFieldNames)
    if (k == f) return name;
  return "?";
}

Field field_from_string(std::string_view name) {
  for (auto [k, n] : kFieldNames)
    if (n == name) return k;
  throw SchemaError("unknown field '" + std::string(name) + "'");
}

std::string_view to_string(SchemaVariant v) {
  for (auto [k, name] : kVariantNames)
    if (k == v) return name;
  return "?";
}

SchemaVariant variant_from_string(std::string_view name) {
  for (auto [k, n] : kVariantNames)
    if (n == name) return k;
  throw SchemaError("unknown schema variant '" + std::string(name) + "'");
}

FieldVocabulary::FieldVocabulary(Field field, std::vector<std::int64_t> retained)
    : field_(field), values_(std::move(retained)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    auto [it, inserted] =
        index_.emplace(values_[i], SpecialIds::kCount + static_cast<std::int32_t>(i));
    if (!inserted) throw ValidationError("duplicate vocabulary value " +
                                         std::to_string(values_[i]));
  }
}

std::int32_t FieldVocabulary::id_of(std::int64_t value) const {
  auto it = index_.find(value);
  return it == index_.end() ? SpecialIds::kRare : it->second;
}

std::int64_t FieldVocabulary::value_of(std::int32_t id) const {
  if (id < SpecialIds::kCount || id >= size())
    throw IndexError("id " + std::to_string(id) + " is not a data id of field " +
                     std::string(to_string(field_)));
  return values_[static_cast<std::size_t>(id - SpecialIds::kCount)];
}

json FieldVocabulary::to_json() const {
  return {{"field", std::string(to_string(field_))}, {"values", values_}};
}

FieldVocabulary FieldVocabulary::from_json(const json& j) {
  return FieldVocabulary(field_from_string(j.at("field").get<std::string>()),
                         j.at("values").get<std::vector<std::int64_t>>());
}

SequenceSchema SequenceSchema::for_variant(SchemaVariant v, int max_len) {
  SequenceSchema s;
  s.variant = v;
  s.max_len = max_len;
  switch (v) {
    case SchemaVariant::kWeekAll:
      s.fields = {Field::kWeekIndex, Field::kEventType, Field::kCategory,
                  Field::kSku,       Field::kPrice,     Field::kUrl};
      break;
    case SchemaVariant::kAll:
      s.fields = {Field::kEventType, Field::kCategory, Field::kSku, Field::kPrice,
                  Field::kUrl};
      break;
    case SchemaVariant::kDayEventType:
      s.fields = {Field::kDayIndex, Field::kEventType};
      break;
    case SchemaVariant::kSkuText:
      s.fields = {Field::kNameToken};
      s.max_len = kSkuTextProducts * kTokensPerText;
      break;
  }
  return s;
}

void SequenceSchema::validate() const {
  if (fields.empty()) throw SchemaError("schema has no fields");
  if (max_len < 1) throw SchemaError("max_len must be positive");
  auto has = [this](Field f) {
    return std::find(fields.begin(), fields.end(), f) != fields.end();
  };
  if (has(Field::kDayIndex) && has(Field::kWeekIndex))
    throw SchemaError("schema may hold at most one of day_index/week_index");
  for (std::size_t i = 0; i < fields.size(); ++i)
    for (std::size_t j = i + 1; j < fields.size(); ++j)
      if (fields[i] == fields[j])
        throw SchemaError("duplicate field " + std::string(to_string(fields[i])));
  if (has(Field::kNameToken) && fields.size() != 1)
    throw SchemaError("name_token must be the only field of its schema");
}

std::optional<Field> SequenceSchema::temporal_field() const {
  for (Field f : fields)
    if (f == Field::kDayIndex || f == Field::kWeekIndex) return f;
  return std::nullopt;
}

std::int64_t temporal_index(std::int64_t timestamp, std::int64_t window_start,
                            Granularity g) {
  if (timestamp < window_start)
    throw RangeError("timestamp " + std::to_string(timestamp) +
                     " precedes window start " + std::to_string(window_start));
  const std::int64_t day = (timestamp - window_start) / kSecondsPerDay;
  return g == Granularity::kDay ? day : day / 7;
}

std::optional<std::int64_t> raw_field_value(const Event& e, Field f,
                                            std::int64_t window_start) {
  switch (f) {
    case Field::kDayIndex: return temporal_index(e.timestamp, window_start, Granularity::kDay);
    case Field::kWeekIndex: return temporal_index(e.timestamp, window_start, Granularity::kWeek);
    case Field::kEventType: return static_cast<std::int64_t>(e.type);
    case Field::kCategory: return e.category;
    case Field::kSku: return e.sku;
    case Field::kPrice:
      if (e.price_bucket) return *e.price_bucket;
      return std::nullopt;
    case Field::kUrl: return e.url;
    case Field::kNameToken: return std::nullopt;  // multi-valued; see encode_sku_text
  }
  return std::nullopt;
}

FieldVocabulary build_vocab_from_counts(Field field,
                                        const std::map<std::int64_t, std::uint64_t>& counts,
                                        int max_size) {
  std::vector<std::pair<std::int64_t, std::uint64_t>> ranked(counts.begin(), counts.end());
  // map iteration is ascending by value, so a stable sort on count keeps the
  // smaller-value-first tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size >= 0 && ranked.size() > static_cast<std::size_t>(max_size))
    ranked.resize(static_cast<std::size_t>(max_size));
  std::vector<std::int64_t> retained;
  retained.reserve(ranked.size());
  for (const auto& [v, n] : ranked) retained.push_back(v);
  return FieldVocabulary(field, std::move(retained));
}

FieldVocabulary build_vocab(const EventLog& log, Field field, int max_size) {
  if (max_size == 0 || max_size < -1)
    throw ParameterError("vocabulary max_size must be >= 1 (or -1 for unbounded)");
  if (field == Field::kEventType) {
    // Fixed vocabulary in enum order, never truncated.
    std::vector<std::int64_t> all;
    for (EventType t : kAllEventTypes) all.push_back(static_cast<std::int64_t>(t));
    return FieldVocabulary(field, std::move(all));
  }
  std::map<std::int64_t, std::uint64_t> counts;
  const std::int64_t start = log.window().start;
  for (const auto& c : log.clients()) {
    for (const auto& e : c.events) {
      if (field == Field::kNameToken) {
        if (is_product_event(e.type) && e.name_tokens)
          for (auto tok : *e.name_tokens) ++counts[tok];
      } else if (auto v = raw_field_value(e, field, start)) {
        ++counts[*v];
      }
    }
  }
  return build_vocab_from_counts(field, counts, max_size);
}

SequenceEncoder SequenceEncoder::fit(const EventLog& log, const SequenceSchema& schema,
                                     const VocabLimits& limits) {
  schema.validate();
  SequenceEncoder enc;
  enc.schema = schema;
  enc.window_start = log.window().start;
  for (Field f : schema.fields) enc.vocabs.push_back(build_vocab(log, f, limit_for(f, limits)));
  return enc;
}

EncodedSequence encode_sequence(const ClientHistory& history, const SequenceSchema& schema,
                                const std::vector<FieldVocabulary>& vocabs,
                                std::int64_t window_start) {
  if (vocabs.size() != schema.fields.size())
    throw SchemaError("vocabulary count does not match schema fields");
  for (std::size_t f = 0; f < vocabs.size(); ++f)
    if (vocabs[f].field() != schema.fields[f])
      throw SchemaError("vocabulary for '" + std::string(to_string(vocabs[f].field())) +
                        "' supplied for field '" +
                        std::string(to_string(schema.fields[f])) + "'");
  if (schema.variant == SchemaVariant::kSkuText)
    return encode_sku_text(history, vocabs[0], schema.max_len / kTokensPerText);

  const auto& events = history.events;
  const std::size_t keep = std::min(events.size(), static_cast<std::size_t>(schema.max_len));
  const std::size_t first = events.size() - keep;
  EncodedSequence seq;
  seq.client_id = history.client_id;
  seq.fields.assign(schema.fields.size(), {});
  for (std::size_t f = 0; f < schema.fields.size(); ++f) {
    auto& ids = seq.fields[f];
    ids.reserve(keep + 2);
    for (std::size_t i = first; i < events.size(); ++i) {
      auto v = raw_field_value(events[i], schema.fields[f], window_start);
      ids.push_back(v ? vocabs[f].id_of(*v) : SpecialIds::kMissing);
    }
  }
  wrap(seq);
  return seq;
}

EncodedSequence encode_sku_text(const ClientHistory& history,
                                const FieldVocabulary& token_vocab, int n_products) {
  std::vector<const Event*> products;
  for (auto it = history.events.rbegin();
       it != history.events.rend() && static_cast<int>(products.size()) < n_products; ++it)
    if (is_product_event(it->type) && it->name_tokens) products.push_back(&*it);
  std::reverse(products.begin(), products.end());

  EncodedSequence seq;
  seq.client_id = history.client_id;
  seq.fields.assign(1, {});
  auto& ids = seq.fields[0];
  ids.reserve(products.size() * kTokensPerText + 2);
  for (const Event* e : products)
    for (auto tok : *e->name_tokens) ids.push_back(token_vocab.id_of(tok));
  wrap(seq);
  return seq;
}

EncodedSequence SequenceEncoder::encode(const ClientHistory& history) const {
  return encode_sequence(history, schema, vocabs, window_start);
}

std::vector<EncodedSequence> SequenceEncoder::encode_all(const EventLog& log) const {
  std::vector<EncodedSequence> out;
  out.reserve(log.num_clients());
  for (const auto& c : log.clients()) out.push_back(encode(c));
  return out;
}

std::vector<std::int32_t> SequenceEncoder::vocab_sizes() const {
  std::vector<std::int32_t> sizes;
  for (const auto& v : vocabs) sizes.push_back(v.size());
  return sizes;
}

json SequenceEncoder::to_json() const {
  json fields = json::array();
  for (const auto& v : vocabs) fields.push_back(v.to_json());
  return {{"schema", std::string(to_string(schema.variant))},
          {"max_len", schema.max_len},
          {"window_start", window_start},
          {"vocabularies", fields}};
}

SequenceEncoder SequenceEncoder::from_json(const json& j) {
  SequenceEncoder enc;
  enc.schema = SequenceSchema::for_variant(
      variant_from_string(j.at("schema").get<std::string>()), j.at("max_len").get<int>());
  enc.window_start = j.at("window_start").get<std::int64_t>();
  for (const auto& v : j.at("vocabularies")) enc.vocabs.push_back(FieldVocabulary::from_json(v));
  if (enc.vocabs.size() != enc.schema.fields.size())
    throw SchemaError("vocabulary list does not match schema '" +
                      j.at("schema").get<std::string>() + "'");
  return enc;
}

}  // namespace uniprofile
