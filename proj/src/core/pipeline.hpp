#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eval.hpp"
#include "gru_ae.hpp"
#include "ials.hpp"
#include "sequence.hpp"
#include "synth.hpp"

namespace uniprofile::pipeline {

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string work_dir = "uniprofile_run";
  std::optional<std::string> events_path;  // synthesized into work_dir when absent
  synth::SynthConfig synth = synth::SynthConfig::desk_default();
  std::optional<std::int64_t> cutoff;       // default: window end minus the horizon
  int horizon_days = 14;
  VocabLimits vocab;

  std::vector<SchemaVariant> ae_variants = {SchemaVariant::kWeekAll, SchemaVariant::kAll,
                                            SchemaVariant::kDayEventType, SchemaVariant::kSkuText};
  nlohmann::json ae_common = nlohmann::json::object();     // applied to every variant preset
  nlohmann::json ae_overrides = nlohmann::json::object();  // variant name -> overrides
  int ae_train_clients = 0;                                 // 0 trains on every client

  std::vector<ials::Target> ials_targets = {ials::Target::kCategory, ials::Target::kUrl};
  ials::IalsParams ials;

  bool features = true;
  int pca_k = 64;
  std::vector<SchemaVariant> pca_exempt = {SchemaVariant::kDayEventType};
  bool control = true;  // random Gaussian profile as wide as the first AE variant

  std::vector<eval::Task> tasks = {eval::Task::kChurn, eval::Task::kCategoryPropensity,
                                   eval::Task::kProductPropensity, eval::Task::kConversion};
  eval::ProbeConfig probe;

  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig from_file(const std::string& path);
  // Canonical form; stage cache keys are derived from it.
  nlohmann::json to_json() const;
};

struct StageRecord {
  std::string name;
  bool cache_hit = false;
  double seconds = 0.0;
};

struct PipelineResult {
  nlohmann::json report;
  std::string report_path;
  std::vector<StageRecord> stages;
};

using StageLogger = std::function<void(const StageRecord&)>;

// Runs every stage in dependency order under cfg.work_dir. Stage outputs are
// reused when the content hash of their inputs and settings is unchanged and
// the recorded output files are intact. Failures surface as StageError.
PipelineResult run_pipeline(const PipelineConfig& cfg, unsigned threads = 1,
                            const StageLogger& log = {});

// Per-source normalization and PCA rule used for fusion and for scoring a
// single source: unit length for model sources, quantile for handcrafted
// features, PCA for AE variants not exempted.
struct SourcePlan {
  std::string name;
  std::string file;
  Normalization normalization = Normalization::kUnitLength;
  std::optional<int> pca_k;
};

// Variant preset, then the common overrides, then the per-variant ones.
gruae::GruAeConfig ae_config(const PipelineConfig& cfg, SchemaVariant v);

// At most `limit` sequences (all when limit <= 0), picked by a seeded hash of
// the client id and kept in input order.
std::vector<EncodedSequence> training_subset(const std::vector<EncodedSequence>& all, int limit,
                                             std::uint64_t seed);

// One entry per produced source, in fusion order. pca_k is clamped to the
// source width when applied.
std::vector<SourcePlan> source_plan(const PipelineConfig& cfg);

}  // namespace uniprofile::pipeline
