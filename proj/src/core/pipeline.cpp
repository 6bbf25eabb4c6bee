#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "ensemble.hpp"
#include "errors.hpp"
#include "features.hpp"
#include "gru_ae.hpp"
#include "random.hpp"

namespace uniprofile::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.work_dir = j.value("work_dir", c.work_dir);
    if (j.contains("events") && !j["events"].is_null()) c.events_path = j["events"].get<std::string>();
    if (j.contains("synth")) c.synth = synth::SynthConfig::from_json(j["synth"]);
    if (j.contains("cutoff") && !j["cutoff"].is_null()) c.cutoff = j["cutoff"].get<std::int64_t>();
    c.horizon_days = j.value("horizon_days", c.horizon_days);
    if (j.contains("vocab")) {
      const auto& v = j["vocab"];
      c.vocab.sku = v.value("sku", c.vocab.sku);
      c.vocab.url = v.value("url", c.vocab.url);
      c.vocab.category = v.value("category", c.vocab.category);
      c.vocab.price = v.value("price", c.vocab.price);
    }
    if (j.contains("gru_ae")) {
      const auto& g = j["gru_ae"];
      if (g.contains("variants")) {
        c.ae_variants.clear();
        for (const auto& v : g["variants"]) c.ae_variants.push_back(variant_from_string(v.get<std::string>()));
      }
      c.ae_common = g.value("common", json::object());
      c.ae_overrides = g.value("overrides", json::object());
      c.ae_train_clients = g.value("train_clients", c.ae_train_clients);
    }
    if (j.contains("ials")) {
      const auto& i = j["ials"];
      if (i.contains("targets")) {
        c.ials_targets.clear();
        for (const auto& t : i["targets"]) c.ials_targets.push_back(ials::target_from_string(t.get<std::string>()));
      }
      c.ials.factors = i.value("factors", c.ials.factors);
      c.ials.regularization = i.value("regularization", c.ials.regularization);
      c.ials.alpha = i.value("alpha", c.ials.alpha);
      c.ials.iterations = i.value("iterations", c.ials.iterations);
      c.ials.init_scale = i.value("init_scale", c.ials.init_scale);
    }
    c.features = j.value("features", c.features);
    if (j.contains("ensemble")) {
      const auto& e = j["ensemble"];
      c.pca_k = e.value("pca_k", c.pca_k);
      if (e.contains("pca_exempt")) {
        c.pca_exempt.clear();
        for (const auto& v : e["pca_exempt"]) c.pca_exempt.push_back(variant_from_string(v.get<std::string>()));
      }
      c.control = e.value("control", c.control);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      if (e.contains("tasks")) {
        c.tasks.clear();
        for (const auto& t : e["tasks"]) c.tasks.push_back(eval::task_from_string(t.get<std::string>()));
      }
      if (e.contains("probe")) {
        const auto& p = e["probe"];
        c.probe.hidden = p.value("hidden", c.probe.hidden);
        c.probe.lr = p.value("lr", c.probe.lr);
        c.probe.batch_size = p.value("batch_size", c.probe.batch_size);
        c.probe.max_epochs = p.value("max_epochs", c.probe.max_epochs);
        c.probe.patience = p.value("patience", c.probe.patience);
        c.probe.validation_mod = p.value("validation_mod", c.probe.validation_mod);
      }
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("pipeline config: ") + ex.what());
  }
  if (c.horizon_days < 1) throw ConfigError("pipeline config: horizon_days must be positive");
  if (c.pca_k < 1) throw ConfigError("pipeline config: pca_k must be positive");
  if (c.ae_train_clients < 0) throw ConfigError("pipeline config: train_clients must be >= 0");
  if (c.control && c.ae_variants.empty())
    throw ConfigError("pipeline config: the random control needs at least one AE variant");
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& ex) {
    throw ParseError("config '" + path + "': " + ex.what());
  }
  PipelineConfig c = from_json(j);
  // Relative paths inside the config resolve against the config's directory.
  const fs::path base = fs::path(path).parent_path();
  if (c.events_path && fs::path(*c.events_path).is_relative() && !base.empty())
    c.events_path = (base / *c.events_path).string();
  return c;
}

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["work_dir"] = work_dir;
  j["events"] = events_path ? json(*events_path) : json(nullptr);
  j["synth"] = synth.to_json();
  j["cutoff"] = cutoff ? json(*cutoff) : json(nullptr);
  j["horizon_days"] = horizon_days;
  j["vocab"] = {{"sku", vocab.sku}, {"url", vocab.url}, {"category", vocab.category}, {"price", vocab.price}};
  json variants = json::array();
  for (auto v : ae_variants) variants.push_back(std::string(to_string(v)));
  j["gru_ae"] = {{"variants", variants}, {"common", ae_common}, {"overrides", ae_overrides},
                 {"train_clients", ae_train_clients}};
  json targets = json::array();
  for (auto t : ials_targets) targets.push_back(ials::to_string(t));
  j["ials"] = {{"targets", targets},
               {"factors", ials.factors},
               {"regularization", ials.regularization},
               {"alpha", ials.alpha},
               {"iterations", ials.iterations},
               {"init_scale", ials.init_scale}};
  j["features"] = features;
  json exempt = json::array();
  for (auto v : pca_exempt) exempt.push_back(std::string(to_string(v)));
  j["ensemble"] = {{"pca_k", pca_k}, {"pca_exempt", exempt}, {"control", control}};
  json tasks_j = json::array();
  for (auto t : tasks) tasks_j.push_back(eval::to_string(t));
  j["eval"] = {{"tasks", tasks_j},
               {"probe",
                {{"hidden", probe.hidden},
                 {"lr", probe.lr},
                 {"batch_size", probe.batch_size},
                 {"max_epochs", probe.max_epochs},
                 {"patience", probe.patience},
                 {"validation_mod", probe.validation_mod}}}};
  return j;
}

std::vector<SourcePlan> source_plan(const PipelineConfig& cfg) {
  std::vector<SourcePlan> out;
  for (auto v : cfg.ae_variants) {
    SourcePlan p;
    p.name = "gru_ae_" + std::string(to_string(v));
    p.file = p.name + ".uemb";
    if (std::find(cfg.pca_exempt.begin(), cfg.pca_exempt.end(), v) == cfg.pca_exempt.end())
      p.pca_k = cfg.pca_k;
    out.push_back(p);
  }
  for (auto t : cfg.ials_targets) {
    SourcePlan p;
    p.name = "ials_" + ials::to_string(t);
    p.file = p.name + ".uemb";
    out.push_back(p);
  }
  if (cfg.features) out.push_back({"handcrafted", "handcrafted.uemb", Normalization::kQuantile, std::nullopt});
  return out;
}

gruae::GruAeConfig ae_config(const PipelineConfig& cfg, SchemaVariant v) {
  json j = cfg.ae_common;
  const std::string name(to_string(v));
  if (cfg.ae_overrides.contains(name)) j.merge_patch(cfg.ae_overrides[name]);
  return gruae::GruAeConfig::from_json(j, v);
}

std::vector<EncodedSequence> training_subset(const std::vector<EncodedSequence>& all, int limit,
                                             std::uint64_t seed) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= all.size()) return all;
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return mix64(all[a].client_id ^ seed) < mix64(all[b].client_id ^ seed);
  });
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  std::vector<EncodedSequence> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Hashing and cache

namespace {

std::string to_hex(const unsigned char* d, unsigned n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < n; ++i) {
    s.push_back(digits[d[i] >> 4]);
    s.push_back(digits[d[i] & 15]);
  }
  return s;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw Error(ErrorCode::kIo, "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned n = 0;
    EVP_DigestFinal_ex(ctx_, md, &n);
    return to_hex(md, n);
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string sha256_hex(const std::string& s) {
  Sha256 h;
  h.update(s);
  return h.hex();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : stage) h = (h ^ c) * 1099511628211ULL;
  return mix64(seed ^ h);
}

// Manifest of finished stages: key plus the hash of every output file.
class Cache {
 public:
  explicit Cache(fs::path dir) : dir_(std::move(dir)), manifest_(dir_ / "cache.json") {
    std::ifstream in(manifest_);
    if (in) {
      try {
        entries_ = json::parse(in);
      } catch (const json::exception&) {
        entries_ = json::object();
      }
    }
    if (!entries_.is_object()) entries_ = json::object();
  }

  std::string path(const std::string& file) const { return (dir_ / file).string(); }

  bool hit(const std::string& stage, const std::string& key) {
    std::lock_guard lock(mu_);
    if (!entries_.contains(stage)) return false;
    const json& e = entries_[stage];
    if (e.value("key", "") != key) return false;
    for (const auto& [file, digest] : e["outputs"].items()) {
      if (!fs::exists(dir_ / file)) return false;
      if (sha256_file(path(file)) != digest.get<std::string>()) return false;
    }
    return true;
  }

  void store(const std::string& stage, const std::string& key, const std::vector<std::string>& files) {
    json outs = json::object();
    for (const auto& f : files) outs[f] = sha256_file(path(f));
    std::lock_guard lock(mu_);
    entries_[stage] = {{"key", key}, {"outputs", outs}};
    const fs::path tmp = manifest_.string() + ".tmp";
    {
      std::ofstream out(tmp);
      out << entries_.dump(2) << "\n";
      if (!out) throw IoError("cannot write cache manifest");
    }
    fs::rename(tmp, manifest_);
  }

  std::string output_hash(const std::string& stage, const std::string& file) {
    std::lock_guard lock(mu_);
    return entries_.at(stage).at("outputs").at(file).get<std::string>();
  }

 private:
  fs::path dir_, manifest_;
  json entries_ = json::object();
  std::mutex mu_;
};

struct Context {
  const PipelineConfig& cfg;
  Cache cache;
  std::string events_path;
  std::string events_hash;
  std::int64_t cutoff = 0;
  std::vector<StageRecord> records;
  std::mutex mu;
  const StageLogger& logger;

  std::once_flag log_once;
  WindowSplit split;

  const WindowSplit& data() {
    std::call_once(log_once, [this] { split = split_window(read_events_file(events_path), cutoff, cfg.horizon_days); });
    return split;
  }
};

template <typename Fn>
void run_stage(Context& ctx, const std::string& name, const std::string& key,
               const std::vector<std::string>& outputs, Fn&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  StageRecord rec;
  rec.name = name;
  try {
    rec.cache_hit = ctx.cache.hit(name, key);
    if (!rec.cache_hit) {
      body();
      ctx.cache.store(name, key, outputs);
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.code(), e.what());
  } catch (const std::exception& e) {
    throw StageError(name, ErrorCode::kIo, e.what());
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::lock_guard lock(ctx.mu);
  ctx.records.push_back(rec);
  if (ctx.logger) ctx.logger(rec);
}

std::string key_of(const json& parts) { return sha256_hex(parts.dump()); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

ProfileMatrix random_control(const std::vector<std::uint64_t>& ids, std::uint32_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(ids.size() * dim);
  for (float& x : v) x = static_cast<float>(rng.normal());
  ProfileMatrix m(ids, dim, std::move(v));
  m.source = "random_gaussian";
  return m;
}

template <typename Job>
void run_parallel(std::vector<Job>& jobs, unsigned threads) {
  threads = std::max(1u, threads);
  if (threads == 1 || jobs.size() <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard lock(mu);
        if (next >= jobs.size()) return;
        k = next++;
      }
      try {
        jobs[k]();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, jobs.size()); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ensemble::SourceSpec as_source(const SourcePlan& p, ProfileMatrix m) {
  ensemble::SourceSpec s;
  s.name = p.name;
  s.normalization = p.normalization;
  if (p.pca_k) s.pca_k = std::min<int>(*p.pca_k, static_cast<int>(std::min<std::size_t>(m.dim(), m.rows())));
  s.matrix = std::move(m);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

PipelineResult run_pipeline(const PipelineConfig& cfg, unsigned threads, const StageLogger& logger) {
  fs::create_directories(cfg.work_dir);
  Context ctx{cfg, Cache(cfg.work_dir), {}, {}, 0, {}, {}, logger, {}, {}};
  const json config_json = cfg.to_json();

  std::optional<TimeWindow> synth_window;
  if (cfg.events_path) {
    ctx.events_path = *cfg.events_path;
  } else {
    ctx.events_path = ctx.cache.path("events.jsonl");
    synth_window = cfg.synth.window();
    const std::string key = key_of({{"stage", "synth"}, {"synth", config_json["synth"]}, {"seed", cfg.seed}});
    run_stage(ctx, "synth", key, {"events.jsonl", "truth.json"}, [&] {
      const auto out = synth::generate(cfg.synth, cfg.seed, threads);
      write_events_file(out.log, ctx.events_path);
      write_text(ctx.cache.path("truth.json"), out.truth_json().dump() + "\n");
    });
  }

  // ingest: the events file hash anchors every downstream key.
  {
    std::string key;
    try {
      if (!fs::exists(ctx.events_path)) throw IoError("events file '" + ctx.events_path + "' does not exist");
      ctx.events_hash = sha256_file(ctx.events_path);
    } catch (const Error& e) {
      throw StageError("ingest", e.code(), e.what());
    }
    if (cfg.cutoff) {
      ctx.cutoff = *cfg.cutoff;
    } else if (synth_window) {
      ctx.cutoff = synth_window->end + 1 - cfg.horizon_days * kSecondsPerDay;
    } else {
      try {
        ctx.cutoff = read_events_file(ctx.events_path).window().end + 1 - cfg.horizon_days * kSecondsPerDay;
      } catch (const Error& e) {
        throw StageError("ingest", e.code(), e.what());
      }
    }
    key = key_of({{"stage", "ingest"}, {"events", ctx.events_hash}, {"cutoff", ctx.cutoff},
                  {"horizon", cfg.horizon_days}});
    run_stage(ctx, "ingest", key, {"ingest.json"}, [&] {
      const WindowSplit& s = ctx.data();
      json stats = json::array();
      for (const auto& st : event_counts(s.history))
        stats.push_back({{"event_type", std::string(to_string(st.type))},
                         {"interactions", st.interactions},
                         {"clients", st.clients},
                         {"entities", st.entities ? json(*st.entities) : json(nullptr)},
                         {"avg_length", st.avg_length}});
      json j = {{"cutoff", ctx.cutoff},
                {"history_clients", s.history.num_clients()},
                {"history_events", s.history.num_events()},
                {"holdout_clients", s.holdout.num_clients()},
                {"holdout_events", s.holdout.num_events()},
                {"history_stats", stats}};
      write_text(ctx.cache.path("ingest.json"), j.dump(2) + "\n");
    });
  }
  const json data_key = {{"events", ctx.events_hash}, {"cutoff", ctx.cutoff}, {"horizon", cfg.horizon_days}};

  // Independent producers of per-source profiles.
  std::vector<std::function<void()>> jobs;
  for (auto v : cfg.ae_variants) {
    jobs.push_back([&, v] {
      const std::string vname(to_string(v));
      const std::string stage = "gru_ae_" + vname;
      const gruae::GruAeConfig base = ae_config(cfg, v);
      const json key = {{"stage", stage}, {"data", data_key}, {"config", base.to_json()},
                        {"vocab", config_json["vocab"]}, {"train_clients", cfg.ae_train_clients},
                        {"seed", cfg.seed}};
      run_stage(ctx, stage, key_of(key), {stage + ".ckpt", stage + ".uemb"}, [&] {
        const WindowSplit& s = ctx.data();
        const auto enc = SequenceEncoder::fit(s.history, SequenceSchema::for_variant(v, base.max_len), cfg.vocab);
        gruae::GruAeConfig ac = base;
        ac.vocab_sizes = enc.vocab_sizes();
        const auto seqs = enc.encode_all(s.history);
        const std::uint64_t seed = stage_seed(cfg.seed, stage);
        auto trained = gruae::train(training_subset(seqs, cfg.ae_train_clients, seed), ac, seed);
        write_checkpoint(trained.model.to_checkpoint({{"encoder", enc.to_json()},
                                                      {"epoch_loss", trained.epoch_loss}}),
                         ctx.cache.path(stage + ".ckpt"));
        ProfileMatrix emb = gruae::embed_all(seqs, trained.model, 1);
        emb.source = stage;
        write_uemb_file(emb, ctx.cache.path(stage + ".uemb"));
      });
    });
  }
  for (auto t : cfg.ials_targets) {
    jobs.push_back([&, t] {
      const std::string stage = "ials_" + ials::to_string(t);
      const json key = {{"stage", stage}, {"data", data_key}, {"params", config_json["ials"]}, {"seed", cfg.seed}};
      run_stage(ctx, stage, key_of(key), {stage + ".uemb"}, [&] {
        const WindowSplit& s = ctx.data();
        const auto m = ials::build_interaction_matrix(s.history, t, ials::default_weights(t), s.history.client_ids());
        const auto model = ials::ials_fit(m, cfg.ials, stage_seed(cfg.seed, stage));
        write_uemb_file(ials::user_embeddings(m, model, stage), ctx.cache.path(stage + ".uemb"));
      });
    });
  }
  if (cfg.features) {
    jobs.push_back([&] {
      const json key = {{"stage", "handcrafted"}, {"data", data_key}};
      run_stage(ctx, "handcrafted", key_of(key), {"handcrafted.uemb"}, [&] {
        const WindowSplit& s = ctx.data();
        write_uemb_file(features::extract_all(s.history, ctx.cutoff, 1), ctx.cache.path("handcrafted.uemb"));
      });
    });
  }
  if (cfg.control) {
    jobs.push_back([&] {
      const std::uint32_t width = static_cast<std::uint32_t>(ae_config(cfg, cfg.ae_variants.front()).hidden);
      const json key = {{"stage", "random_gaussian"}, {"data", data_key}, {"width", width}, {"seed", cfg.seed}};
      run_stage(ctx, "random_gaussian", key_of(key), {"random_gaussian.uemb"}, [&] {
        const WindowSplit& s = ctx.data();
        write_uemb_file(random_control(s.history.client_ids(), width, stage_seed(cfg.seed, "random_gaussian")),
                        ctx.cache.path("random_gaussian.uemb"));
      });
    });
  }
  run_parallel(jobs, threads);

  const auto plan = source_plan(cfg);
  json source_hashes = json::object();
  for (const auto& p : plan) source_hashes[p.name] = sha256_file(ctx.cache.path(p.file));

  {
    json plan_j = json::array();
    for (const auto& p : plan)
      plan_j.push_back({{"name", p.name}, {"normalization", to_string(p.normalization)},
                        {"pca_k", p.pca_k ? json(*p.pca_k) : json(nullptr)}});
    const json key = {{"stage", "combine"}, {"sources", source_hashes}, {"plan", plan_j}};
    run_stage(ctx, "combine", key_of(key), {"ensemble.uemb"}, [&] {
      std::vector<ensemble::SourceSpec> specs;
      std::vector<std::uint64_t> master;
      for (const auto& p : plan) {
        specs.push_back(as_source(p, read_uemb_file(ctx.cache.path(p.file))));
        if (master.empty()) master = specs.back().matrix.client_ids();
      }
      // Every source covers the history clients; the union guards external inputs.
      std::set<std::uint64_t> all;
      for (const auto& s : specs) all.insert(s.matrix.client_ids().begin(), s.matrix.client_ids().end());
      master.assign(all.begin(), all.end());
      write_uemb_file(ensemble::combine(specs, master), ctx.cache.path("ensemble.uemb"));
    });
  }

  {
    json hashes = source_hashes;
    hashes["ensemble"] = sha256_file(ctx.cache.path("ensemble.uemb"));
    if (cfg.control) hashes["random_gaussian"] = sha256_file(ctx.cache.path("random_gaussian.uemb"));
    const json key = {{"stage", "evaluate"}, {"data", data_key}, {"profiles", hashes},
                      {"eval", config_json["eval"]}, {"ensemble", config_json["ensemble"]}, {"seed", cfg.seed}};
    run_stage(ctx, "evaluate", key_of(key), {"report.json"}, [&] {
      const WindowSplit& s = ctx.data();
      std::vector<eval::TaskLabels> labels;
      for (auto t : cfg.tasks) labels.push_back(eval::make_labels(s.history, s.holdout, t));
      const auto ids = s.history.client_ids();
      const std::uint64_t seed = stage_seed(cfg.seed, "evaluate");

      std::vector<std::pair<std::string, ProfileMatrix>> profiles;
      for (const auto& p : plan)
        profiles.emplace_back(p.name, ensemble::combine({as_source(p, read_uemb_file(ctx.cache.path(p.file)))}, ids));
      profiles.emplace_back("ensemble", read_uemb_file(ctx.cache.path("ensemble.uemb")));
      std::optional<ProfileMatrix> control;
      if (cfg.control) {
        // Scored under the same treatment as the first AE variant.
        SourcePlan cp = plan.front();
        cp.name = "random_gaussian";
        control = ensemble::combine({as_source(cp, read_uemb_file(ctx.cache.path("random_gaussian.uemb")))}, ids);
      }

      std::vector<eval::ProfileReport> reports(profiles.size());
      std::optional<eval::ProfileReport> control_report;
      std::vector<std::function<void()>> eval_jobs;
      for (std::size_t k = 0; k < profiles.size(); ++k)
        eval_jobs.push_back([&, k] {
          reports[k] = eval::evaluate_profile(profiles[k].first, profiles[k].second, labels, seed, cfg.probe, 1);
        });
      if (control)
        eval_jobs.push_back([&] {
          control_report = eval::evaluate_profile("random_gaussian", *control, labels, seed, cfg.probe, 1);
        });
      run_parallel(eval_jobs, threads);

      json report = eval::report_json(reports);
      if (control_report) report["control"] = eval::report_json({*control_report})["profiles"][0];

      // Ensemble against the best single source, per task and in total.
      const eval::ProfileReport& ens = reports.back();
      json cmp;
      std::size_t best = 0;
      for (std::size_t k = 0; k + 1 < reports.size(); ++k)
        if (reports[k].total() > reports[best].total()) best = k;
      cmp["best_single"] = reports[best].name;
      cmp["best_single_total"] = reports[best].total();
      cmp["ensemble_total"] = ens.total();
      json per_task = json::object();
      for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
        std::size_t b = 0;
        for (std::size_t k = 0; k + 1 < reports.size(); ++k)
          if (reports[k].tasks[t].score > reports[b].tasks[t].score) b = k;
        per_task[eval::to_string(cfg.tasks[t])] = {{"best_single", reports[b].name},
                                                    {"best_single_score", reports[b].tasks[t].score},
                                                    {"ensemble_score", ens.tasks[t].score},
                                                    {"margin", ens.tasks[t].score - reports[b].tasks[t].score}};
      }
      cmp["tasks"] = per_task;
      report["comparison"] = cmp;
      report["seed"] = cfg.seed;
      report["cutoff"] = ctx.cutoff;
      report["horizon_days"] = cfg.horizon_days;
      report["clients"] = ids.size();
      report["holdout_clients"] = s.holdout.num_clients();
      write_text(ctx.cache.path("report.json"), report.dump(2) + "\n");
    });
  }

  PipelineResult res;
  res.report_path = ctx.cache.path("report.json");
  std::ifstream in(res.report_path);
  res.report = json::parse(in);
  res.stages = std::move(ctx.records);
  return res;
}

}  // namespace uniprofile::pipeline
