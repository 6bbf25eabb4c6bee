#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "event_log.hpp"

namespace uniprofile {

enum class Field : std::uint8_t {
  kDayIndex,
  kWeekIndex,
  kEventType,
  kCategory,
  kSku,
  kPrice,
  kUrl,
  kNameToken,  // sku_text payload
};

std::string_view to_string(Field f);
Field field_from_string(std::string_view name);  // SchemaError if unknown

// Reserved ids shared by every field vocabulary.
struct SpecialIds {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kMissing = 1;
  static constexpr std::int32_t kRare = 2;
  static constexpr std::int32_t kSos = 3;
  static constexpr std::int32_t kEos = 4;
  static constexpr std::int32_t kCount = 5;
};

class FieldVocabulary {
 public:
  FieldVocabulary() = default;
  FieldVocabulary(Field field, std::vector<std::int64_t> retained);

  Field field() const { return field_; }
  std::int32_t size() const {
    return SpecialIds::kCount + static_cast<std::int32_t>(values_.size());
  }
  // Data values in id order; values()[i] has id kCount + i.
  const std::vector<std::int64_t>& values() const { return values_; }
  std::int32_t id_of(std::int64_t value) const;  // kRare when not retained
  std::int64_t value_of(std::int32_t id) const;  // IndexError on a special id

  nlohmann::json to_json() const;
  static FieldVocabulary from_json(const nlohmann::json& j);

  bool operator==(const FieldVocabulary& o) const {
    return field_ == o.field_ && values_ == o.values_;
  }

 private:
  Field field_ = Field::kEventType;
  std::vector<std::int64_t> values_;
  std::map<std::int64_t, std::int32_t> index_;
};

enum class SchemaVariant { kWeekAll, kAll, kDayEventType, kSkuText };

inline constexpr int kSkuTextProducts = 4;

std::string_view to_string(SchemaVariant v);
SchemaVariant variant_from_string(std::string_view name);

struct SequenceSchema {
  SchemaVariant variant = SchemaVariant::kWeekAll;
  std::vector<Field> fields;
  int max_len = 128;  // events before SOS/EOS; sku_text fixes it at 64 tokens

  static SequenceSchema for_variant(SchemaVariant v, int max_len = 128);
  void validate() const;
  std::optional<Field> temporal_field() const;
};

enum class Granularity { kDay, kWeek };

std::int64_t temporal_index(std::int64_t timestamp, std::int64_t window_start,
                            Granularity g);

struct VocabLimits {
  int sku = 5000;
  int url = 5000;
  int category = -1;  // -1: unbounded
  int price = -1;
};

// Frequency-ranked vocabulary; ties broken by smaller raw value.
// max_size < 0 keeps every value.
FieldVocabulary build_vocab(const EventLog& log, Field field, int max_size);
FieldVocabulary build_vocab_from_counts(Field field,
                                        const std::map<std::int64_t, std::uint64_t>& counts,
                                        int max_size);

// Raw value of a field for one event, before vocabulary lookup.
std::optional<std::int64_t> raw_field_value(const Event& e, Field f,
                                            std::int64_t window_start);

struct EncodedSequence {
  std::uint64_t client_id = 0;
  // fields[f][t]; t = 0 is SOS, t = length()-1 is EOS.
  std::vector<std::vector<std::int32_t>> fields;

  int length() const { return fields.empty() ? 0 : static_cast<int>(fields[0].size()); }
  bool operator==(const EncodedSequence&) const = default;
};

struct SequenceEncoder {
  SequenceSchema schema;
  std::vector<FieldVocabulary> vocabs;  // parallel to schema.fields
  std::int64_t window_start = 0;

  static SequenceEncoder fit(const EventLog& log, const SequenceSchema& schema,
                             const VocabLimits& limits = {});

  EncodedSequence encode(const ClientHistory& history) const;
  std::vector<EncodedSequence> encode_all(const EventLog& log) const;
  std::vector<std::int32_t> vocab_sizes() const;

  nlohmann::json to_json() const;
  static SequenceEncoder from_json(const nlohmann::json& j);
};

EncodedSequence encode_sequence(const ClientHistory& history,
                                const SequenceSchema& schema,
                                const std::vector<FieldVocabulary>& vocabs,
                                std::int64_t window_start);

// Concatenated name tokens of the last n product-related events.
EncodedSequence encode_sku_text(const ClientHistory& history,
                                const FieldVocabulary& token_vocab,
                                int n_products = 4);

}  // namespace uniprofile
