#include "gru_ae.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "errors.hpp"

namespace uniprofile::gruae {

using nlohmann::json;

GruAeConfig GruAeConfig::preset(SchemaVariant v) {
  GruAeConfig c;
  c.variant = v;
  if (v == SchemaVariant::kDayEventType) {
    c.hidden = 128;
    c.layers = 2;
    c.dropout = 0.5;
  } else {
    c.hidden = 512;
    c.layers = 3;
    c.dropout = 0.1;
  }
  c.max_len = 128;
  return c;
}

void GruAeConfig::validate() const {
  const auto schema = SequenceSchema::for_variant(variant, max_len);
  if (vocab_sizes.size() != schema.fields.size())
    throw ConfigError("gru_ae: expected " + std::to_string(schema.fields.size()) +
                      " vocab sizes for variant " + std::string(to_string(variant)) + ", got " +
                      std::to_string(vocab_sizes.size()));
  for (auto v : vocab_sizes)
    if (v <= SpecialIds::kCount - 1) throw ConfigError("gru_ae: vocab size too small");
  if (hidden <= 0) throw ConfigError("gru_ae: hidden must be positive");
  if (layers <= 0) throw ConfigError("gru_ae: layers must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("gru_ae: dropout must lie in [0, 1)");
  if (max_len <= 0) throw ConfigError("gru_ae: max_len must be positive");
  if (batch_size <= 0) throw ConfigError("gru_ae: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("gru_ae: lr must be positive");
  if (epochs < 0) throw ConfigError("gru_ae: epochs must be non-negative");
}

json GruAeConfig::to_json() const {
  return {{"variant", std::string(to_string(variant))},
          {"hidden", hidden},
          {"layers", layers},
          {"dropout", dropout},
          {"max_len", max_len},
          {"vocab_sizes", vocab_sizes},
          {"batch_size", batch_size},
          {"lr", lr},
          {"epochs", epochs},
          {"clip_norm", clip_norm}};
}

GruAeConfig GruAeConfig::from_json(const json& j, SchemaVariant v) {
  GruAeConfig c = preset(v);
  try {
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    c.dropout = j.value("dropout", c.dropout);
    c.max_len = j.value("max_len", c.max_len);
    c.vocab_sizes = j.value("vocab_sizes", c.vocab_sizes);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("gru_ae config: ") + ex.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
GruAeModel<T>::GruAeModel(GruAeConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto schema = SequenceSchema::for_variant(cfg_.variant, cfg_.max_len);
  const int d = cfg_.hidden;
  embeddings.reserve(schema.fields.size());
  head_w.reserve(schema.fields.size());
  head_b.reserve(schema.fields.size());
  for (std::size_t f = 0; f < schema.fields.size(); ++f) {
    const std::string name(to_string(schema.fields[f]));
    embeddings.emplace_back("embedding." + name, cfg_.vocab_sizes[f], d);
    head_w.emplace_back("head." + name + ".w", d, cfg_.vocab_sizes[f]);
    head_b.emplace_back("head." + name + ".b", 1, cfg_.vocab_sizes[f]);
  }
  encoder.reserve(static_cast<std::size_t>(cfg_.layers));
  decoder.reserve(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    encoder.emplace_back("encoder." + std::to_string(l), d, d);
    decoder.emplace_back("decoder." + std::to_string(l), d, d);
  }
}

template <typename T>
void GruAeModel<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
  for (auto& e : embeddings) nn::init_normal(e, 0.02, rng);
  for (auto* stack : {&encoder, &decoder})
    for (auto& g : *stack)
      for (auto* p : {&g.w_z, &g.w_r, &g.w_h, &g.u_z, &g.u_r, &g.u_h}) nn::init_uniform(*p, bound, rng);
  for (auto& w : head_w) nn::init_normal(w, 0.02, rng);
}

template <typename T>
nn::ParamList<T> GruAeModel<T>::parameters() {
  nn::ParamList<T> out;
  for (auto& e : embeddings) out.push_back(&e);
  for (auto* stack : {&encoder, &decoder})
    for (auto& g : *stack)
      for (auto* p : g.parameters()) out.push_back(p);
  for (std::size_t f = 0; f < head_w.size(); ++f) {
    out.push_back(&head_w[f]);
    out.push_back(&head_b[f]);
  }
  return out;
}

template <typename T>
void GruAeModel<T>::check_sequence(const EncodedSequence& seq) const {
  if (seq.fields.size() != embeddings.size())
    throw ContractError("sequence has " + std::to_string(seq.fields.size()) +
                        " fields, model expects " + std::to_string(embeddings.size()));
  for (const auto& f : seq.fields)
    if (static_cast<int>(f.size()) != seq.length())
      throw ContractError("sequence fields differ in length");
  if (seq.length() < 2) throw ContractError("sequence shorter than SOS/EOS");
}

template <typename T>
Matrix<T> GruAeModel<T>::embed_event(const EncodedSequence& seq, int step) const {
  Matrix<T> x = Matrix<T>::Zero(1, cfg_.hidden);
  for (std::size_t f = 0; f < embeddings.size(); ++f) {
    const auto id = seq.fields[f][static_cast<std::size_t>(step)];
    if (id < 0 || id >= embeddings[f].value.rows())
      throw IndexError("embedding '" + embeddings[f].name + "': id " + std::to_string(id) +
                       " out of range");
    x += embeddings[f].value.row(id);
  }
  return x;
}

template <typename T>
Matrix<T> GruAeModel<T>::encode(const EncodedSequence& seq) const {
  check_sequence(seq);
  std::vector<Matrix<T>> h(encoder.size(), Matrix<T>::Zero(1, cfg_.hidden));
  for (int t = 0; t < seq.length(); ++t) {
    Matrix<T> inp = embed_event(seq, t);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      h[l] = nn::gru_cell(encoder[l], inp, h[l]);
      inp = h[l];
    }
  }
  return h.back();
}

template <typename T>
std::vector<Matrix<T>> GruAeModel<T>::decode_teacher_forced(const Matrix<T>& user,
                                                            const EncodedSequence& seq) const {
  check_sequence(seq);
  if (user.rows() != 1 || user.cols() != cfg_.hidden)
    throw ShapeError("user embedding width " + std::to_string(user.cols()) +
                     " does not match hidden size " + std::to_string(cfg_.hidden));
  const int steps = seq.length() - 1;
  std::vector<Matrix<T>> logits;
  for (std::size_t f = 0; f < head_w.size(); ++f)
    logits.emplace_back(steps, head_w[f].value.cols());
  std::vector<Matrix<T>> h(decoder.size(), Matrix<T>::Zero(1, cfg_.hidden));
  for (int t = 1; t <= steps; ++t) {
    Matrix<T> inp = embed_event(seq, t - 1) + user;
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      h[l] = nn::gru_cell(decoder[l], inp, h[l]);
      inp = h[l];
    }
    for (std::size_t f = 0; f < head_w.size(); ++f)
      logits[f].row(t - 1) = inp * head_w[f].value + head_b[f].value;
  }
  return logits;
}

template <typename T>
Checkpoint GruAeModel<T>::to_checkpoint(json extra_metadata) const {
  Checkpoint ck;
  ck.metadata = std::move(extra_metadata);
  ck.metadata["config"] = cfg_.to_json();
  auto& self = const_cast<GruAeModel<T>&>(*this);
  for (auto* p : self.parameters()) {
    NamedTensor t;
    t.name = p->name;
    t.shape = {static_cast<std::uint64_t>(p->value.rows()),
               static_cast<std::uint64_t>(p->value.cols())};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i)
      t.data[static_cast<std::size_t>(i)] = static_cast<float>(p->value.data()[i]);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

template <typename T>
GruAeModel<T> GruAeModel<T>::from_checkpoint(const Checkpoint& ck) {
  const json& cj = ck.metadata.at("config");
  GruAeConfig cfg =
      GruAeConfig::from_json(cj, variant_from_string(cj.at("variant").get<std::string>()));
  GruAeModel<T> model(cfg);
  for (auto* p : model.parameters()) {
    const NamedTensor& t = ck.at(p->name);
    if (t.shape.size() != 2 || t.shape[0] != static_cast<std::uint64_t>(p->value.rows()) ||
        t.shape[1] != static_cast<std::uint64_t>(p->value.cols()))
      throw ShapeError("checkpoint tensor '" + p->name + "' has the wrong shape");
    for (Eigen::Index i = 0; i < p->value.size(); ++i)
      p->value.data()[i] = static_cast<T>(t.data[static_cast<std::size_t>(i)]);
  }
  return model;
}

template <typename T>
T reconstruction_loss(const std::vector<Matrix<T>>& logits, const EncodedSequence& seq) {
  T total = 0;
  for (std::size_t f = 0; f < logits.size(); ++f) {
    const auto& l = logits[f];
    T field = 0;
    for (Eigen::Index t = 0; t < l.rows(); ++t) {
      std::span<const T> row(l.data() + t * l.cols(), static_cast<std::size_t>(l.cols()));
      field += nn::softmax_cross_entropy<T>(row, seq.fields[f][static_cast<std::size_t>(t + 1)], {});
    }
    total += field / static_cast<T>(l.rows());
  }
  return total;
}

// ---------------------------------------------------------------------------

Batch make_batch(std::span<const EncodedSequence* const> seqs, int pad_to) {
  Batch b;
  b.size = static_cast<int>(seqs.size());
  if (seqs.empty()) return b;
  const std::size_t nf = seqs[0]->fields.size();
  for (const auto* s : seqs) {
    if (s->fields.size() != nf) throw ContractError("batch mixes schemas");
    b.lengths.push_back(s->length());
    b.steps = std::max(b.steps, s->length());
  }
  b.steps = std::max(b.steps, pad_to);
  b.ids.assign(nf, std::vector<std::vector<std::int32_t>>(
                       static_cast<std::size_t>(b.steps),
                       std::vector<std::int32_t>(seqs.size(), SpecialIds::kPad)));
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t i = 0; i < seqs.size(); ++i)
      for (int t = 0; t < seqs[i]->length(); ++t)
        b.ids[f][static_cast<std::size_t>(t)][i] = seqs[i]->fields[f][static_cast<std::size_t>(t)];
  return b;
}

namespace {

template <typename T>
Var event_embedding(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch, int t) {
  Var x = nn::embedding(tape, model.embeddings[0], batch.ids[0][static_cast<std::size_t>(t)]);
  for (std::size_t f = 1; f < model.embeddings.size(); ++f)
    x = nn::add(tape, x,
                nn::embedding(tape, model.embeddings[f], batch.ids[f][static_cast<std::size_t>(t)]));
  return x;
}

template <typename T>
Var maybe_dropout(nn::Tape<T>& tape, Var x, const GruAeModel<T>& model, const ForwardOptions& opt) {
  if (!opt.training || model.config().dropout == 0.0) return x;
  if (!opt.rng) throw ContractError("dropout in training mode needs an rng");
  return nn::dropout(tape, x, model.config().dropout, true, *opt.rng);
}

}  // namespace

template <typename T>
Var encode_batch(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch,
                 const ForwardOptions& opt) {
  if (batch.ids.size() != model.num_fields())
    throw ContractError("batch field count does not match the model");
  const int d = model.hidden();
  const auto layers = model.encoder.size();
  std::vector<Var> h(layers, tape.constant(Matrix<T>::Zero(batch.size, d)));
  std::vector<bool> keep(static_cast<std::size_t>(batch.size));
  for (int t = 0; t < batch.steps; ++t) {
    bool all = true;
    for (int b = 0; b < batch.size; ++b) {
      keep[static_cast<std::size_t>(b)] = t < batch.lengths[static_cast<std::size_t>(b)];
      all = all && keep[static_cast<std::size_t>(b)];
    }
    Var inp = maybe_dropout(tape, event_embedding(tape, model, batch, t), model, opt);
    for (std::size_t l = 0; l < layers; ++l) {
      Var next = nn::gru_cell(tape, model.encoder[l], inp, h[l]);
      h[l] = all ? next : nn::select_rows(tape, keep, next, h[l]);
      inp = l + 1 < layers ? maybe_dropout(tape, h[l], model, opt) : h[l];
    }
  }
  return h.back();
}

template <typename T>
BatchForward<T> decode_batch(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch,
                             Var user, const ForwardOptions& opt) {
  const int d = model.hidden();
  if (tape.value(user).rows() != batch.size || tape.value(user).cols() != d)
    throw ShapeError("user embedding batch does not match decoder shape");
  const auto layers = model.decoder.size();
  std::vector<Var> h(layers, tape.constant(Matrix<T>::Zero(batch.size, d)));
  std::vector<Var> tops;
  for (int t = 1; t < batch.steps; ++t) {
    Var x = maybe_dropout(tape, event_embedding(tape, model, batch, t - 1), model, opt);
    Var inp = nn::add(tape, x, user);
    for (std::size_t l = 0; l < layers; ++l) {
      h[l] = nn::gru_cell(tape, model.decoder[l], inp, h[l]);
      inp = l + 1 < layers ? maybe_dropout(tape, h[l], model, opt) : h[l];
    }
    tops.push_back(inp);
  }
  BatchForward<T> out;
  out.user = user;
  Var top = nn::concat_rows(tape, tops);

  std::size_t valid = 0;
  for (int len : batch.lengths) valid += static_cast<std::size_t>(len - 1);
  const T inv_valid = T(1) / static_cast<T>(valid);
  const auto rows = static_cast<std::size_t>(batch.steps - 1) * static_cast<std::size_t>(batch.size);
  std::vector<T> weights(rows, T(0));
  for (int t = 1; t < batch.steps; ++t)
    for (int b = 0; b < batch.size; ++b)
      if (t < batch.lengths[static_cast<std::size_t>(b)])
        weights[static_cast<std::size_t>(t - 1) * batch.size + b] = inv_valid;

  std::optional<Var> total;
  for (std::size_t f = 0; f < model.num_fields(); ++f) {
    Var logits = nn::affine(tape, top, tape.param(model.head_w[f]), tape.param(model.head_b[f]));
    std::vector<std::int32_t> targets(rows);
    for (int t = 1; t < batch.steps; ++t)
      for (int b = 0; b < batch.size; ++b)
        targets[static_cast<std::size_t>(t - 1) * batch.size + b] =
            batch.ids[f][static_cast<std::size_t>(t)][static_cast<std::size_t>(b)];
    Var loss = nn::softmax_cross_entropy(tape, logits, std::move(targets), weights);
    total = total ? nn::add(tape, *total, loss) : loss;
    out.field_logits.push_back(logits);
  }
  out.loss = *total;
  return out;
}

template <typename T>
BatchForward<T> forward_batch(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch,
                              const ForwardOptions& opt) {
  Var user = encode_batch(tape, model, batch, opt);
  return decode_batch(tape, model, batch, user, opt);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> plan_batches(const std::vector<EncodedSequence>& seqs,
                                                   int batch_size, Rng& rng) {
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  // Length-sort inside windows of several batches to cut padding.
  const std::size_t window = static_cast<std::size_t>(batch_size) * 16;
  for (std::size_t lo = 0; lo < order.size(); lo += window) {
    const std::size_t hi = std::min(order.size(), lo + window);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) { return seqs[a].length() < seqs[b].length(); });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(batch_size))
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(order.size(), lo + batch_size)));
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

}  // namespace

TrainResult train(const std::vector<EncodedSequence>& seqs, const GruAeConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch) {
  if (seqs.empty()) throw TrainingError("gru_ae: empty training set");
  Rng rng(seed);
  TrainResult res{GruAeModel<float>(cfg), {}};
  GruAeModel<float>& model = res.model;
  model.init(rng);
  auto params = model.parameters();
  nn::Adam<float> adam(params, {cfg.lr, 0.9, 0.999, 1e-8});
  ForwardOptions opt{true, &rng};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = plan_batches(seqs, cfg.batch_size, rng);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<const EncodedSequence*> ptrs;
      for (auto i : batches[bi]) ptrs.push_back(&seqs[i]);
      const Batch batch = make_batch(ptrs);
      nn::zero_grads(params);
      nn::Tape<float> tape;
      auto fwd = forward_batch(tape, model, batch, opt);
      const double loss = tape.value(fwd.loss)(0, 0);
      if (!std::isfinite(loss))
        throw TrainingError("gru_ae: non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi));
      tape.backward(fwd.loss);
      nn::clip_grad_norm(params, cfg.clip_norm);
      adam.step();
      loss_sum += loss;
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(batches.size()));
    if (on_epoch && !on_epoch(epoch, res.epoch_loss.back(), model)) break;
  }
  return res;
}

std::vector<double> teacher_forced_accuracy(const GruAeModel<float>& model,
                                            const std::vector<EncodedSequence>& seqs) {
  std::vector<double> hits(model.num_fields(), 0.0);
  double steps = 0.0;
  for (const auto& s : seqs) {
    const auto logits = model.decode_teacher_forced(model.encode(s), s);
    for (std::size_t f = 0; f < logits.size(); ++f)
      for (Eigen::Index t = 0; t < logits[f].rows(); ++t) {
        Eigen::Index best;
        logits[f].row(t).maxCoeff(&best);
        if (best == s.fields[f][static_cast<std::size_t>(t + 1)]) hits[f] += 1.0;
      }
    steps += s.length() - 1;
  }
  for (auto& h : hits) h /= steps;
  return hits;
}

double mean_loss_with_users(const GruAeModel<float>& model, const std::vector<EncodedSequence>& seqs,
                            const std::vector<std::size_t>& partner) {
  std::vector<Matrix<float>> users;
  users.reserve(seqs.size());
  for (const auto& s : seqs) users.push_back(model.encode(s));
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    total += reconstruction_loss(model.decode_teacher_forced(users[partner[i]], seqs[i]), seqs[i]);
  return total / static_cast<double>(seqs.size());
}

ProfileMatrix embed_all(const std::vector<EncodedSequence>& seqs, const GruAeModel<float>& model,
                        unsigned threads) {
  const auto d = static_cast<std::size_t>(model.hidden());
  std::vector<float> values(seqs.size() * d);
  std::vector<std::uint64_t> ids;
  ids.reserve(seqs.size());
  for (const auto& s : seqs) ids.push_back(s.client_id);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Matrix<float> u = model.encode(seqs[i]);
      std::copy(u.data(), u.data() + d, values.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || seqs.size() < 2 * threads) {
    work(0, seqs.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (seqs.size() + threads - 1) / threads;
    for (unsigned k = 0; k < threads; ++k) {
      const std::size_t lo = k * chunk, hi = std::min(seqs.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  for (float v : values)
    if (!std::isfinite(v)) throw NumericError("gru_ae: non-finite embedding value");
  ProfileMatrix m(std::move(ids), static_cast<std::uint32_t>(d), std::move(values));
  return m;
}

template class GruAeModel<float>;
template class GruAeModel<double>;
template float reconstruction_loss<float>(const std::vector<Matrix<float>>&, const EncodedSequence&);
template double reconstruction_loss<double>(const std::vector<Matrix<double>>&, const EncodedSequence&);
template Var encode_batch<float>(nn::Tape<float>&, GruAeModel<float>&, const Batch&, const ForwardOptions&);
template Var encode_batch<double>(nn::Tape<double>&, GruAeModel<double>&, const Batch&, const ForwardOptions&);
template BatchForward<float> decode_batch<float>(nn::Tape<float>&, GruAeModel<float>&, const Batch&, Var, const ForwardOptions&);
template BatchForward<double> decode_batch<double>(nn::Tape<double>&, GruAeModel<double>&, const Batch&, Var, const ForwardOptions&);
template BatchForward<float> forward_batch<float>(nn::Tape<float>&, GruAeModel<float>&, const Batch&, const ForwardOptions&);
template BatchForward<double> forward_batch<double>(nn::Tape<double>&, GruAeModel<double>&, const Batch&, const ForwardOptions&);

}  // namespace uniprofile::gruae
