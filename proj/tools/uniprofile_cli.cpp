#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uniprofile/uniprofile.h"

namespace {

int fail(up_status s) {
  const std::string stage = up_last_stage();
  std::cerr << "uniprofile: " << up_status_name(s);
  if (!stage.empty()) std::cerr << " in stage '" << stage << "'";
  std::cerr << ": " << up_last_error() << "\n";
  return static_cast<int>(s);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int64_t cutoff_or_none(const std::optional<int64_t>& c) { return c ? *c : UP_NO_CUTOFF; }

void print_stage(const char* stage, int cache_hit, double seconds, void*) {
  std::fprintf(stderr, "[%s] %s (%.2fs)\n", cache_hit ? "cached" : "ran", stage, seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal behavioral profiles from e-commerce event logs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(up_version()));

  std::string config, out, truth, events, schema, variant, ckpt, target, spec, report, tasks, work_dir;
  std::string profile_file;
  std::vector<std::string> profiles;
  std::optional<int64_t> cutoff;
  std::optional<uint64_t> seed;
  unsigned threads = 1;
  int k = 64, iterations = 0, horizon = 14;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic event log");
  synth->add_option("--config", config, "Generator or pipeline config")->check(CLI::ExistingFile);
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--out", out, "Output events JSONL")->required();
  synth->add_option("--truth", truth, "Output ground-truth JSON");
  synth->add_option("--threads", threads);

  auto* ingest = app.add_subcommand("ingest", "Validate and sort an event log");
  ingest->add_option("--events", events)->required();
  ingest->add_option("--out", out, "Canonical sorted JSONL");

  auto* encode = app.add_subcommand("encode", "Fit field vocabularies for a sequence schema");
  encode->add_option("--events", events)->required();
  encode->add_option("--schema", schema)->required()->check(
      CLI::IsMember({"week_all", "all", "day_event_type", "sku_text"}));
  encode->add_option("--cutoff", cutoff, "Fit on events before this timestamp");
  encode->add_option("--out", out)->required();

  auto* train_ae = app.add_subcommand("train-ae", "Train a GRU autoencoder");
  train_ae->add_option("--variant", variant)->required()->check(
      CLI::IsMember({"week_all", "all", "day_event_type", "sku_text"}));
  train_ae->add_option("--config", config, "Pipeline config (gru_ae and vocab sections)")
      ->check(CLI::ExistingFile);
  train_ae->add_option("--seed", seed);
  train_ae->add_option("--events", events)->required();
  train_ae->add_option("--cutoff", cutoff, "Train on events before this timestamp");
  train_ae->add_option("--out", out, "Checkpoint path")->required();

  auto* embed_ae = app.add_subcommand("embed-ae", "Embed clients with a trained autoencoder");
  embed_ae->add_option("--ckpt", ckpt)->required();
  embed_ae->add_option("--events", events)->required();
  embed_ae->add_option("--cutoff", cutoff);
  embed_ae->add_option("--threads", threads);
  embed_ae->add_option("--out", out)->required();

  auto* train_ials = app.add_subcommand("train-ials", "Factorize a client x item matrix with iALS");
  train_ials->add_option("--target", target)->required()->check(CLI::IsMember({"category", "url"}));
  train_ials->add_option("--k", k, "Latent factors");
  train_ials->add_option("--iterations", iterations);
  train_ials->add_option("--seed", seed);
  train_ials->add_option("--events", events)->required();
  train_ials->add_option("--cutoff", cutoff);
  train_ials->add_option("--out", out)->required();

  auto* features = app.add_subcommand("features", "Extract handcrafted features");
  features->add_option("--events", events)->required();
  features->add_option("--cutoff", cutoff)->required();
  features->add_option("--threads", threads);
  features->add_option("--out", out)->required();

  auto* combine = app.add_subcommand("combine", "Fuse per-source profiles");
  combine->add_option("--spec", spec)->required()->check(CLI::ExistingFile);
  combine->add_option("--out", out)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score profiles on the downstream tasks");
  evaluate->add_option("--profiles", profiles, "One or more .uemb files")->required();
  evaluate->add_option("--events", events)->required();
  evaluate->add_option("--cutoff", cutoff)->required();
  evaluate->add_option("--horizon", horizon, "Holdout length in days");
  evaluate->add_option("--tasks", tasks, "Comma-separated task list")
      ->default_val("churn,category,product,conversion");
  evaluate->add_option("--seed", seed);
  evaluate->add_option("--threads", threads);
  evaluate->add_option("--report", report)->required();

  auto* run = app.add_subcommand("run", "Run the whole pipeline");
  run->add_option("--config", config)->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed);
  run->add_option("--threads", threads);
  run->add_option("--work-dir", work_dir, "Overrides work_dir from the config");
  run->add_option("--report", report, "Also copy the report here");

  auto* export_tsv = app.add_subcommand("export-tsv", "Dump a .uemb file as TSV");
  export_tsv->add_option("--profiles", profile_file)->required();
  export_tsv->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  const uint64_t seed_value = seed.value_or(42);
  up_status s = UP_OK;
  if (*synth) {
    s = up_synth(opt(config), seed ? &*seed : nullptr, threads, out.c_str(), opt(truth));
  } else if (*ingest) {
    char* stats = nullptr;
    s = up_ingest(events.c_str(), opt(out), &stats);
    if (s == UP_OK) {
      std::cout << stats << "\n";
      up_string_free(stats);
    }
  } else if (*encode) {
    s = up_encode(events.c_str(), schema.c_str(), cutoff_or_none(cutoff), out.c_str());
  } else if (*train_ae) {
    s = up_train_ae(events.c_str(), variant.c_str(), opt(config), seed_value, cutoff_or_none(cutoff),
                    out.c_str());
  } else if (*embed_ae) {
    s = up_embed_ae(ckpt.c_str(), events.c_str(), cutoff_or_none(cutoff), threads, out.c_str());
  } else if (*train_ials) {
    s = up_train_ials(events.c_str(), target.c_str(), cutoff_or_none(cutoff), k, iterations, seed_value,
                      out.c_str());
  } else if (*features) {
    s = up_features(events.c_str(), *cutoff, threads, out.c_str());
  } else if (*combine) {
    s = up_combine(spec.c_str(), out.c_str());
  } else if (*evaluate) {
    std::vector<const char*> paths;
    for (const auto& p : profiles) paths.push_back(p.c_str());
    s = up_evaluate(paths.data(), paths.size(), events.c_str(), *cutoff, horizon, tasks.c_str(),
                    seed_value, threads, report.c_str(), nullptr);
  } else if (*run) {
    char* json = nullptr;
    s = up_run_pipeline(config.c_str(), seed ? &*seed : nullptr, threads, opt(work_dir), print_stage,
                        nullptr, &json);
    if (s == UP_OK) {
      if (!report.empty()) {
        std::FILE* f = std::fopen(report.c_str(), "wb");
        if (f == nullptr) {
          std::cerr << "uniprofile: cannot write '" << report << "'\n";
          up_string_free(json);
          return static_cast<int>(UP_ERR_IO);
        }
        std::fputs(json, f);
        std::fclose(f);
      }
      std::cout << json;
      up_string_free(json);
    }
  } else if (*export_tsv) {
    up_profiles* p = nullptr;
    s = up_profiles_read(profile_file.c_str(), &p);
    if (s == UP_OK) {
      s = up_profiles_export_tsv(p, out.c_str());
      up_profiles_free(p);
    }
  }
  return s == UP_OK ? 0 : fail(s);
}
