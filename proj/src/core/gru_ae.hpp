#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "nn.hpp"
#include "profile.hpp"
#include "sequence.hpp"

namespace uniprofile::gruae {

using nn::Matrix;
using nn::Var;

struct GruAeConfig {
  SchemaVariant variant = SchemaVariant::kWeekAll;
  int hidden = 512;
  int layers = 3;
  double dropout = 0.1;
  int max_len = 128;
  std::vector<std::int32_t> vocab_sizes;  // one per schema field

  // Training knobs; not stated for the original model.
  int batch_size = 64;
  double lr = 1e-3;
  int epochs = 20;
  double clip_norm = 5.0;

  // day_event_type: 128 hidden, 2 layers, dropout 0.5; others: 512, 3, 0.1.
  static GruAeConfig preset(SchemaVariant v);
  void validate() const;

  nlohmann::json to_json() const;
  // Starts from the variant preset and applies any keys present in j.
  static GruAeConfig from_json(const nlohmann::json& j, SchemaVariant v);
};

template <typename T>
class GruAeModel {
 public:
  // All parameters zero; call init() for the standard initialisation.
  explicit GruAeModel(GruAeConfig cfg);
  GruAeModel(const GruAeModel&) = delete;
  GruAeModel& operator=(const GruAeModel&) = delete;
  GruAeModel(GruAeModel&&) = default;

  // GRU matrices ~ U(-1/sqrt(d_h), 1/sqrt(d_h)), embeddings and heads ~ N(0, 0.02),
  // biases zero.
  void init(Rng& rng);

  const GruAeConfig& config() const { return cfg_; }
  int hidden() const { return cfg_.hidden; }
  std::size_t num_fields() const { return embeddings.size(); }
  nn::ParamList<T> parameters();

  // Inference path (no tape, dropout off).
  Matrix<T> embed_event(const EncodedSequence& seq, int step) const;  // 1 x d_h
  Matrix<T> encode(const EncodedSequence& seq) const;                  // 1 x d_h
  // Per field: (L-1) x V logits; row t-1 predicts step t.
  std::vector<Matrix<T>> decode_teacher_forced(const Matrix<T>& user,
                                               const EncodedSequence& seq) const;

  Checkpoint to_checkpoint(nlohmann::json extra_metadata) const;
  static GruAeModel from_checkpoint(const Checkpoint& ckpt);

  std::vector<nn::Parameter<T>> embeddings;
  std::vector<nn::GruParams<T>> encoder;
  std::vector<nn::GruParams<T>> decoder;
  std::vector<nn::Parameter<T>> head_w;  // d_h x V
  std::vector<nn::Parameter<T>> head_b;  // 1 x V

 private:
  void check_sequence(const EncodedSequence& seq) const;
  GruAeConfig cfg_;
};

// Sum over fields of the mean cross-entropy over prediction steps 1..L-1.
template <typename T>
T reconstruction_loss(const std::vector<Matrix<T>>& logits, const EncodedSequence& seq);

// Time-major padded batch. ids[f][t][b]; PAD beyond each sequence's length.
struct Batch {
  int size = 0;
  int steps = 0;
  std::vector<int> lengths;
  std::vector<std::vector<std::vector<std::int32_t>>> ids;
};

// pad_to > max length appends extra all-PAD steps.
Batch make_batch(std::span<const EncodedSequence* const> seqs, int pad_to = 0);

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

template <typename T>
struct BatchForward {
  Var user;   // B x d_h encoder output
  Var loss;   // scalar
  std::vector<Var> field_logits;  // per field: (steps-1)*B x V, row (t-1)*B + b
};

template <typename T>
Var encode_batch(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch,
                 const ForwardOptions& opt);

// Teacher-forced decoder loss conditioned on `user` (B x d_h).
template <typename T>
BatchForward<T> decode_batch(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch,
                             Var user, const ForwardOptions& opt);

template <typename T>
BatchForward<T> forward_batch(nn::Tape<T>& tape, GruAeModel<T>& model, const Batch& batch,
                              const ForwardOptions& opt);

struct TrainResult {
  GruAeModel<float> model;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

using EpochCallback = std::function<bool(int epoch, double mean_loss, GruAeModel<float>&)>;

// Deterministic for fixed seed. The callback may return false to stop early.
TrainResult train(const std::vector<EncodedSequence>& seqs, const GruAeConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch = {});

// Per-field fraction of correctly predicted steps under teacher forcing.
std::vector<double> teacher_forced_accuracy(const GruAeModel<float>& model,
                                            const std::vector<EncodedSequence>& seqs);

// Mean reconstruction loss when each sequence is decoded from the embedding of
// sequence partner[i].
double mean_loss_with_users(const GruAeModel<float>& model,
                            const std::vector<EncodedSequence>& seqs,
                            const std::vector<std::size_t>& partner);

// One row per sequence, in input order.
ProfileMatrix embed_all(const std::vector<EncodedSequence>& seqs, const GruAeModel<float>& model,
                        unsigned threads = 1);

}  // namespace uniprofile::gruae
