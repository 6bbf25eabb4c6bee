#include "uniprofile/uniprofile.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <new>
#include <string>

#include "ensemble.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "event_log.hpp"
#include "features.hpp"
#include "gru_ae.hpp"
#include "ials.hpp"
#include "pipeline.hpp"
#include "profile.hpp"
#include "sequence.hpp"
#include "synth.hpp"

using namespace uniprofile;
using nlohmann::json;

struct up_event_log {
  EventLog log;
};

struct up_profiles {
  ProfileMatrix matrix;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_last_stage;

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Fn>
up_status guarded(Fn&& fn) {
  g_last_error.clear();
  g_last_stage.clear();
  try {
    fn();
    return UP_OK;
  } catch (const StageError& e) {
    g_last_error = e.what();
    g_last_stage = e.stage();
    return UP_ERR_STAGE;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<up_status>(static_cast<int>(e.code()));
  } catch (const ArgumentError& e) {
    g_last_error = e.what();
    return UP_ERR_INVALID_ARGUMENT;
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return UP_ERR_PARSE;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return UP_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return UP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return UP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return UP_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw ArgumentError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

json stats_json(const EventLog& log) {
  json rows = json::array();
  for (const auto& s : event_counts(log))
    rows.push_back({{"event_type", std::string(to_string(s.type))},
                    {"interactions", s.interactions},
                    {"clients", s.clients},
                    {"entities", s.entities ? json(*s.entities) : json(nullptr)},
                    {"avg_length", s.avg_length}});
  return {{"clients", log.num_clients()},
          {"events", log.num_events()},
          {"window", {{"start", log.window().start}, {"end", log.window().end}}},
          {"event_types", rows}};
}

// History part of the log when a cutoff is given, else the whole log.
EventLog history_of(const std::string& events_path, std::int64_t cutoff) {
  EventLog log = read_events_file(events_path);
  if (cutoff == UP_NO_CUTOFF) return log;
  return split_window(log, cutoff).history;
}

pipeline::PipelineConfig load_config(const char* path) {
  return path ? pipeline::PipelineConfig::from_file(path) : pipeline::PipelineConfig{};
}

}  // namespace

extern "C" {

const char* up_version(void) { return "1.0.0"; }

const char* up_status_name(up_status s) {
  switch (s) {
    case UP_OK: return "ok";
    case UP_ERR_PARSE: return "parse_error";
    case UP_ERR_VALIDATION: return "validation_error";
    case UP_ERR_RANGE: return "range_error";
    case UP_ERR_SCHEMA: return "schema_error";
    case UP_ERR_SHAPE: return "shape_error";
    case UP_ERR_INDEX: return "index_error";
    case UP_ERR_CONTRACT: return "contract_error";
    case UP_ERR_NUMERIC: return "numeric_error";
    case UP_ERR_TRAINING: return "training_error";
    case UP_ERR_PARAMETER: return "parameter_error";
    case UP_ERR_CONFIG: return "config_error";
    case UP_ERR_IO: return "io_error";
    case UP_ERR_STAGE: return "stage_error";
    case UP_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case UP_ERR_INTERNAL: return "internal_error";
  }
  return "unknown";
}

const char* up_last_error(void) { return g_last_error.c_str(); }
const char* up_last_stage(void) { return g_last_stage.c_str(); }
void up_string_free(char* s) { std::free(s); }

// ---------------------------------------------------------------------------

up_status up_event_log_read(const char* path, up_event_log** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new up_event_log{read_events_file(path)};
  });
}

up_status up_event_log_write(const up_event_log* log, const char* path) {
  return guarded([&] {
    need(log, "log");
    need(path, "path");
    write_events_file(log->log, path);
  });
}

void up_event_log_free(up_event_log* log) { delete log; }

up_status up_event_log_counts(const up_event_log* log, uint64_t* clients, uint64_t* events) {
  return guarded([&] {
    need(log, "log");
    if (clients) *clients = log->log.num_clients();
    if (events) *events = log->log.num_events();
  });
}

up_status up_event_log_window(const up_event_log* log, int64_t* start, int64_t* end) {
  return guarded([&] {
    need(log, "log");
    if (start) *start = log->log.window().start;
    if (end) *end = log->log.window().end;
  });
}

up_status up_event_log_stats_json(const up_event_log* log, char** json_out) {
  return guarded([&] {
    need(log, "log");
    need(json_out, "json_out");
    *json_out = dup_string(stats_json(log->log).dump());
  });
}

up_status up_event_log_split(const up_event_log* log, int64_t cutoff, int horizon_days,
                             up_event_log** history, up_event_log** holdout) {
  return guarded([&] {
    need(log, "log");
    need(history, "history");
    need(holdout, "holdout");
    auto s = split_window(log->log, cutoff, horizon_days);
    auto* h = new up_event_log{std::move(s.history)};
    try {
      *holdout = new up_event_log{std::move(s.holdout)};
    } catch (...) {
      delete h;
      throw;
    }
    *history = h;
  });
}

// ---------------------------------------------------------------------------

up_status up_profiles_read(const char* path, up_profiles** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new up_profiles{read_uemb_file(path)};
  });
}

up_status up_profiles_write(const up_profiles* p, const char* path) {
  return guarded([&] {
    need(p, "profiles");
    need(path, "path");
    write_uemb_file(p->matrix, path);
  });
}

up_status up_profiles_export_tsv(const up_profiles* p, const char* path) {
  return guarded([&] {
    need(p, "profiles");
    need(path, "path");
    std::ofstream out(path);
    if (!out) throw IoError(std::string("cannot write '") + path + "'");
    write_tsv(p->matrix, out);
    if (!out) throw IoError(std::string("write failed for '") + path + "'");
  });
}

void up_profiles_free(up_profiles* p) { delete p; }

up_status up_profiles_shape(const up_profiles* p, uint64_t* rows, uint32_t* dim) {
  return guarded([&] {
    need(p, "profiles");
    if (rows) *rows = p->matrix.rows();
    if (dim) *dim = p->matrix.dim();
  });
}

up_status up_profiles_client_id(const up_profiles* p, uint64_t row, uint64_t* client_id) {
  return guarded([&] {
    need(p, "profiles");
    need(client_id, "client_id");
    if (row >= p->matrix.rows()) throw IndexError("row " + std::to_string(row) + " out of range");
    *client_id = p->matrix.client_ids()[row];
  });
}

up_status up_profiles_row(const up_profiles* p, uint64_t row, float* out, uint32_t capacity) {
  return guarded([&] {
    need(p, "profiles");
    need(out, "out");
    if (row >= p->matrix.rows()) throw IndexError("row " + std::to_string(row) + " out of range");
    if (capacity < p->matrix.dim())
      throw ArgumentError("capacity " + std::to_string(capacity) + " is below dim " +
                          std::to_string(p->matrix.dim()));
    const auto r = p->matrix.row(row);
    std::memcpy(out, r.data(), r.size() * sizeof(float));
  });
}

up_status up_profiles_metadata_json(const up_profiles* p, char** json_out) {
  return guarded([&] {
    need(p, "profiles");
    need(json_out, "json_out");
    *json_out = dup_string(p->matrix.metadata().dump());
  });
}

up_status up_profiles_equal(const up_profiles* a, const up_profiles* b, int* equal) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(equal, "equal");
    *equal = a->matrix == b->matrix ? 1 : 0;
  });
}

// ---------------------------------------------------------------------------

up_status up_synth(const char* config_path, const uint64_t* seed, unsigned threads,
                   const char* events_out, const char* truth_out) {
  return guarded([&] {
    need(events_out, "events_out");
    synth::SynthConfig cfg = synth::SynthConfig::desk_default();
    if (config_path) {
      json j = read_json_file(config_path);
      // A pipeline config carries the generator settings under "synth".
      if (j.contains("synth") && j["synth"].is_object()) {
        const auto s = j.value("seed", cfg.seed);
        j = j["synth"];
        if (!j.contains("seed")) j["seed"] = s;
      }
      cfg = synth::SynthConfig::from_json(j);
    }
    const auto out = synth::generate(cfg, seed ? *seed : cfg.seed, threads);
    write_events_file(out.log, events_out);
    if (truth_out) write_text(truth_out, out.truth_json().dump() + "\n");
  });
}

up_status up_ingest(const char* events_path, const char* out_path, char** stats_json_out) {
  return guarded([&] {
    need(events_path, "events_path");
    const EventLog log = read_events_file(events_path);
    if (out_path) write_events_file(log, out_path);
    if (stats_json_out) *stats_json_out = dup_string(stats_json(log).dump());
  });
}

up_status up_encode(const char* events_path, const char* schema, int64_t cutoff, const char* out_path) {
  return guarded([&] {
    need(events_path, "events_path");
    need(schema, "schema");
    need(out_path, "out_path");
    const EventLog log = history_of(events_path, cutoff);
    const auto enc = SequenceEncoder::fit(log, SequenceSchema::for_variant(variant_from_string(schema)));
    write_text(out_path, enc.to_json().dump(2) + "\n");
  });
}

up_status up_train_ae(const char* events_path, const char* variant, const char* config_path,
                      uint64_t seed, int64_t cutoff, const char* ckpt_out) {
  return guarded([&] {
    need(events_path, "events_path");
    need(variant, "variant");
    need(ckpt_out, "ckpt_out");
    const auto cfg = load_config(config_path);
    const SchemaVariant v = variant_from_string(variant);
    const EventLog log = history_of(events_path, cutoff);
    gruae::GruAeConfig ac = pipeline::ae_config(cfg, v);
    const auto enc = SequenceEncoder::fit(log, SequenceSchema::for_variant(v, ac.max_len), cfg.vocab);
    ac.vocab_sizes = enc.vocab_sizes();
    const auto seqs = pipeline::training_subset(enc.encode_all(log), cfg.ae_train_clients, seed);
    auto trained = gruae::train(seqs, ac, seed);
    write_checkpoint(trained.model.to_checkpoint({{"encoder", enc.to_json()}, {"epoch_loss", trained.epoch_loss}}),
                     ckpt_out);
  });
}

up_status up_embed_ae(const char* ckpt_path, const char* events_path, int64_t cutoff, unsigned threads,
                      const char* out_path) {
  return guarded([&] {
    need(ckpt_path, "ckpt_path");
    need(events_path, "events_path");
    need(out_path, "out_path");
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    if (!ckpt.metadata.contains("encoder"))
      throw SchemaError(std::string("checkpoint '") + ckpt_path + "' carries no encoder");
    const auto enc = SequenceEncoder::from_json(ckpt.metadata["encoder"]);
    const auto model = gruae::GruAeModel<float>::from_checkpoint(ckpt);
    const EventLog log = history_of(events_path, cutoff);
    ProfileMatrix emb = gruae::embed_all(enc.encode_all(log), model, threads);
    emb.source = "gru_ae_" + std::string(to_string(enc.schema.variant));
    write_uemb_file(emb, out_path);
  });
}

up_status up_train_ials(const char* events_path, const char* target, int64_t cutoff, int k,
                        int iterations, uint64_t seed, const char* out_path) {
  return guarded([&] {
    need(events_path, "events_path");
    need(target, "target");
    need(out_path, "out_path");
    const ials::Target t = ials::target_from_string(target);
    const EventLog log = history_of(events_path, cutoff);
    ials::IalsParams p;
    if (k > 0) p.factors = k;
    if (iterations > 0) p.iterations = iterations;
    const auto m = ials::build_interaction_matrix(log, t, ials::default_weights(t), log.client_ids());
    const auto model = ials::ials_fit(m, p, seed);
    write_uemb_file(ials::user_embeddings(m, model, "ials_" + ials::to_string(t)), out_path);
  });
}

up_status up_features(const char* events_path, int64_t cutoff, unsigned threads, const char* out_path) {
  return guarded([&] {
    need(events_path, "events_path");
    need(out_path, "out_path");
    if (cutoff == UP_NO_CUTOFF) throw ArgumentError("features need a cutoff timestamp");
    const EventLog log = history_of(events_path, cutoff);
    write_uemb_file(features::extract_all(log, cutoff, threads), out_path);
  });
}

up_status up_combine(const char* spec_path, const char* out_path) {
  return guarded([&] {
    need(spec_path, "spec_path");
    need(out_path, "out_path");
    const json spec = read_json_file(spec_path);
    const auto base = std::filesystem::path(spec_path).parent_path().string();
    write_uemb_file(ensemble::combine_from_config(spec, base), out_path);
  });
}

up_status up_evaluate(const char* const* profile_paths, size_t n_profiles, const char* events_path,
                      int64_t cutoff, int horizon_days, const char* tasks_csv, uint64_t seed,
                      unsigned threads, const char* report_out, char** report_json_out) {
  return guarded([&] {
    need(profile_paths, "profile_paths");
    need(events_path, "events_path");
    if (n_profiles == 0) throw ArgumentError("at least one profile file is required");
    if (cutoff == UP_NO_CUTOFF) throw ArgumentError("evaluation needs a cutoff timestamp");
    const auto tasks = eval::parse_task_list(tasks_csv ? tasks_csv : "churn,category,product,conversion");
    const auto split = split_window(read_events_file(events_path), cutoff, horizon_days);
    std::vector<eval::TaskLabels> labels;
    for (auto t : tasks) labels.push_back(eval::make_labels(split.history, split.holdout, t));

    std::vector<eval::ProfileReport> reports;
    std::vector<std::string> names;
    for (size_t i = 0; i < n_profiles; ++i) {
      need(profile_paths[i], "profile path");
      const ProfileMatrix m = read_uemb_file(profile_paths[i]);
      std::string name = std::filesystem::path(profile_paths[i]).stem().string();
      if (std::find(names.begin(), names.end(), name) != names.end()) name += "_" + std::to_string(i);
      names.push_back(name);
      reports.push_back(eval::evaluate_profile(name, m, labels, seed, {}, threads));
    }
    json report = eval::report_json(reports);
    report["cutoff"] = cutoff;
    report["horizon_days"] = horizon_days;
    report["seed"] = seed;
    const std::string text = report.dump(2) + "\n";
    if (report_out) write_text(report_out, text);
    if (report_json_out) *report_json_out = dup_string(text);
  });
}

up_status up_run_pipeline(const char* config_path, const uint64_t* seed, unsigned threads,
                          const char* work_dir, up_stage_callback on_stage, void* user,
                          char** report_json_out) {
  return guarded([&] {
    auto cfg = load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.synth.seed = *seed;
    }
    if (work_dir) cfg.work_dir = work_dir;
    pipeline::StageLogger logger;
    if (on_stage)
      logger = [on_stage, user](const pipeline::StageRecord& r) {
        on_stage(r.name.c_str(), r.cache_hit ? 1 : 0, r.seconds, user);
      };
    const auto res = pipeline::run_pipeline(cfg, threads, logger);
    if (report_json_out) *report_json_out = dup_string(res.report.dump(2) + "\n");
  });
}

}  // extern "C"
