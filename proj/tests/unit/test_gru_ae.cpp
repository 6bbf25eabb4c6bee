#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "gru_ae.hpp"

using namespace uniprofile;
using namespace uniprofile::gruae;
using MD = nn::Matrix<double>;

static EncodedSequence random_sequence(std::uint64_t id, const std::vector<std::int32_t>& vocab,
                                       int events, Rng& rng) {
  EncodedSequence s;
  s.client_id = id;
  for (auto v : vocab) {
    std::vector<std::int32_t> f = {SpecialIds::kSos};
    // any id but PAD
    for (int t = 0; t < events; ++t) f.push_back(static_cast<std::int32_t>(1 + rng.below(v - 1)));
    f.push_back(SpecialIds::kEos);
    s.fields.push_back(std::move(f));
  }
  return s;
}

static GruAeConfig small_config(SchemaVariant v, int hidden, int layers, double dropout,
                                std::vector<std::int32_t> vocab) {
  GruAeConfig c = GruAeConfig::preset(v);
  c.hidden = hidden;
  c.layers = layers;
  c.dropout = dropout;
  c.vocab_sizes = std::move(vocab);
  return c;
}

template <typename T>
static GruAeModel<T> random_model(const GruAeConfig& c, std::uint64_t seed, double scale = 0.5) {
  GruAeModel<T> m(c);
  Rng rng(seed);
  for (auto* p : m.parameters()) nn::init_uniform(*p, scale, rng);
  return m;
}

TEST_CASE("presets and config validation") {
  auto d = GruAeConfig::preset(SchemaVariant::kDayEventType);
  CHECK(d.hidden == 128);
  CHECK(d.layers == 2);
  CHECK(d.dropout == 0.5);
  for (auto v : {SchemaVariant::kWeekAll, SchemaVariant::kAll, SchemaVariant::kSkuText}) {
    auto c = GruAeConfig::preset(v);
    CHECK(c.hidden == 512);
    CHECK(c.layers == 3);
    CHECK(c.dropout == 0.1);
  }
  auto c = small_config(SchemaVariant::kAll, 8, 1, 0.0, {7, 7, 7, 7, 7});
  CHECK_NOTHROW(c.validate());
  auto back = GruAeConfig::from_json(c.to_json(), SchemaVariant::kAll);
  CHECK(back.to_json() == c.to_json());
  auto patched = GruAeConfig::from_json({{"hidden", 16}}, SchemaVariant::kDayEventType);
  CHECK(patched.hidden == 16);
  CHECK(patched.layers == 2);

  auto bad = c;
  bad.vocab_sizes.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.hidden = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(GruAeConfig::from_json({{"hidden", "wide"}}, SchemaVariant::kAll), ConfigError);
}

TEST_CASE("zero model embeds to zero and empty histories are deterministic") {
  auto c = small_config(SchemaVariant::kDayEventType, 4, 2, 0.0, {7, 10});
  GruAeModel<double> zero(c);
  Rng rng(1);
  auto s = random_sequence(1, c.vocab_sizes, 3, rng);
  CHECK(zero.encode(s).isZero(0.0));

  auto m = random_model<double>(c, 2);
  EncodedSequence empty{5, {{SpecialIds::kSos, SpecialIds::kEos}, {SpecialIds::kSos, SpecialIds::kEos}}};
  EncodedSequence empty2 = empty;
  empty2.client_id = 6;
  CHECK(m.encode(empty) == m.encode(empty2));
  CHECK(m.decode_teacher_forced(m.encode(empty), empty)[0].rows() == 1);
}

// Stacked gru_cell calls step by step, written against the equations rather
// than the model's own loops.
static MD encode_oracle(GruAeModel<double>& m, const EncodedSequence& s) {
  const int d = m.hidden();
  std::vector<MD> h(m.encoder.size(), MD::Zero(1, d));
  for (int t = 0; t < s.length(); ++t) {
    MD x = MD::Zero(1, d);
    for (std::size_t f = 0; f < s.fields.size(); ++f) x += m.embeddings[f].value.row(s.fields[f][t]);
    for (std::size_t l = 0; l < h.size(); ++l) {
      h[l] = nn::gru_cell(m.encoder[l], x, h[l]);
      x = h[l];
    }
  }
  return h.back();
}

static std::vector<MD> decode_oracle(GruAeModel<double>& m, const MD& u, const EncodedSequence& s) {
  const int d = m.hidden();
  std::vector<MD> h(m.decoder.size(), MD::Zero(1, d));
  std::vector<MD> out(s.fields.size(), MD(s.length() - 1, 0));
  for (std::size_t f = 0; f < s.fields.size(); ++f) out[f].resize(s.length() - 1, m.head_w[f].value.cols());
  for (int t = 1; t < s.length(); ++t) {
    MD x = u;
    for (std::size_t f = 0; f < s.fields.size(); ++f) x += m.embeddings[f].value.row(s.fields[f][t - 1]);
    for (std::size_t l = 0; l < h.size(); ++l) {
      h[l] = nn::gru_cell(m.decoder[l], x, h[l]);
      x = h[l];
    }
    for (std::size_t f = 0; f < s.fields.size(); ++f)
      out[f].row(t - 1) = x * m.head_w[f].value + m.head_b[f].value;
  }
  return out;
}

TEST_CASE("encode and decode match the step-by-step oracle") {
  auto c = small_config(SchemaVariant::kDayEventType, 4, 2, 0.0, {7, 10});
  auto m = random_model<double>(c, 3);
  Rng rng(4);
  auto s = random_sequence(1, c.vocab_sizes, 1, rng);
  REQUIRE(s.length() == 3);
  MD u = m.encode(s);
  CHECK((u - encode_oracle(m, s)).cwiseAbs().maxCoeff() < 1e-14);
  auto logits = m.decode_teacher_forced(u, s);
  auto ref = decode_oracle(m, u, s);
  for (std::size_t f = 0; f < logits.size(); ++f)
    CHECK((logits[f] - ref[f]).cwiseAbs().maxCoeff() < 1e-14);

  // the user vector only enters through addition to the decoder input
  MD other = MD::Random(1, 4);
  auto shifted = m.decode_teacher_forced(other, s);
  CHECK((shifted[0] - decode_oracle(m, other, s)[0]).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(m.decode_teacher_forced(MD::Zero(1, 5), s), ShapeError);
}

TEST_CASE("reconstruction loss") {
  std::vector<MD> uniform = {MD::Zero(3, 7), MD::Zero(3, 11)};
  EncodedSequence s{1, {{3, 5, 6, 4}, {3, 9, 10, 4}}};
  CHECK(reconstruction_loss(uniform, s) == doctest::Approx(std::log(7.0) + std::log(11.0)));

  std::vector<MD> sharp = {MD::Constant(3, 7, -50.0), MD::Constant(3, 11, -50.0)};
  for (int t = 0; t < 3; ++t) {
    sharp[0](t, s.fields[0][t + 1]) = 50.0;
    sharp[1](t, s.fields[1][t + 1]) = 50.0;
  }
  CHECK(reconstruction_loss(sharp, s) < 1e-30);

  Rng rng(5);
  std::vector<MD> rnd = {MD::Random(3, 7), MD::Random(3, 11)};
  double ref = 0.0;
  for (int f = 0; f < 2; ++f) {
    double acc = 0.0;
    for (int t = 0; t < 3; ++t) {
      std::vector<double> row(rnd[f].row(t).data(), rnd[f].row(t).data() + rnd[f].cols());
      acc += nn::softmax_cross_entropy<double>(row, s.fields[f][t + 1], {});
    }
    ref += acc / 3;
  }
  CHECK(reconstruction_loss(rnd, s) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("batched loss equals the pooled per-sequence cross-entropy") {
  auto c = small_config(SchemaVariant::kAll, 6, 2, 0.0, {7, 8, 9, 7, 8});
  auto m = random_model<double>(c, 6);
  Rng rng(7);
  std::vector<EncodedSequence> seqs;
  for (int i = 0; i < 4; ++i) seqs.push_back(random_sequence(i + 1, c.vocab_sizes, 1 + 2 * i, rng));
  std::vector<const EncodedSequence*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  Batch b = make_batch(ptrs);
  nn::Tape<double> tape;
  auto fwd = forward_batch(tape, m, b, {});

  double total = 0.0;
  double valid = 0.0;
  std::vector<double> per_field(c.vocab_sizes.size(), 0.0);
  for (auto& s : seqs) {
    auto logits = m.decode_teacher_forced(m.encode(s), s);
    valid += s.length() - 1;
    for (std::size_t f = 0; f < logits.size(); ++f)
      for (Eigen::Index t = 0; t < logits[f].rows(); ++t) {
        std::vector<double> row(logits[f].row(t).data(), logits[f].row(t).data() + logits[f].cols());
        per_field[f] += nn::softmax_cross_entropy<double>(row, s.fields[f][t + 1], {});
      }
  }
  for (double v : per_field) total += v / valid;
  CHECK(tape.value(fwd.loss)(0, 0) == doctest::Approx(total).epsilon(1e-12));
  for (int i = 0; i < 4; ++i)
    CHECK((tape.value(fwd.user).row(i) - m.encode(seqs[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("appending PAD steps changes no loss and no gradient") {
  auto c = small_config(SchemaVariant::kWeekAll, 5, 2, 0.0, {7, 8, 9, 7, 8, 7});
  auto m = random_model<double>(c, 8);
  Rng rng(9);
  std::vector<EncodedSequence> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(random_sequence(i + 1, c.vocab_sizes, 2 + i, rng));
  std::vector<const EncodedSequence*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  auto params = m.parameters();

  auto run = [&](int pad_to, std::vector<MD>& grads, MD& user) {
    Batch b = make_batch(ptrs, pad_to);
    nn::zero_grads(params);
    nn::Tape<double> tape;
    auto fwd = forward_batch(tape, m, b, {});
    tape.backward(fwd.loss);
    grads.clear();
    for (auto* p : params) grads.push_back(p->grad);
    user = tape.value(fwd.user);
    return tape.value(fwd.loss)(0, 0);
  };
  std::vector<MD> g0, g1;
  MD u0, u1;
  const double l0 = run(0, g0, u0);
  const double l1 = run(seqs.back().length() + 5, g1, u1);
  CHECK(l0 == l1);
  CHECK(u0 == u1);
  bool same = true;
  for (std::size_t i = 0; i < g0.size(); ++i) same = same && g0[i] == g1[i];
  CHECK(same);
}

TEST_CASE("full model gradients match finite differences") {
  auto c = small_config(SchemaVariant::kAll, 5, 2, 0.3, {7, 6, 7, 6, 7});
  auto m = random_model<double>(c, 10);
  Rng rng(11);
  std::vector<EncodedSequence> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(random_sequence(i + 1, c.vocab_sizes, 1 + i, rng));
  std::vector<const EncodedSequence*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  Batch b = make_batch(ptrs);

  for (bool training : {false, true}) {
    auto loss = [&](bool bw) {
      Rng mask_rng(12);  // same dropout masks on every evaluation
      ForwardOptions opt{training, &mask_rng};
      nn::Tape<double> tape;
      auto fwd = forward_batch(tape, m, b, opt);
      if (bw) tape.backward(fwd.loss);
      return tape.value(fwd.loss)(0, 0);
    };
    auto w = gc::check(m.parameters(), loss);
    INFO("training=" << training << " worst " << w.param << "[" << w.index << "] analytic "
                     << w.analytic << " numeric " << w.numeric);
    CHECK(w.rel < 1e-4);
  }
}

TEST_CASE("dropout in training mode needs an rng") {
  auto c = small_config(SchemaVariant::kDayEventType, 4, 1, 0.5, {7, 10});
  auto m = random_model<double>(c, 13);
  Rng rng(14);
  auto s = random_sequence(1, c.vocab_sizes, 2, rng);
  const EncodedSequence* p = &s;
  Batch b = make_batch(std::span<const EncodedSequence* const>(&p, 1));
  nn::Tape<double> tape;
  CHECK_THROWS_AS(forward_batch(tape, m, b, {true, nullptr}), ContractError);
}

TEST_CASE("malformed sequences are rejected") {
  auto c = small_config(SchemaVariant::kDayEventType, 4, 1, 0.0, {7, 10});
  GruAeModel<float> m(c);
  EncodedSequence wrong_fields{1, {{3, 4}}};
  CHECK_THROWS_AS(m.encode(wrong_fields), ContractError);
  EncodedSequence ragged{1, {{3, 5, 4}, {3, 4}}};
  CHECK_THROWS_AS(m.encode(ragged), ContractError);
  EncodedSequence out_of_range{1, {{3, 7, 4}, {3, 5, 4}}};
  CHECK_THROWS_AS(m.encode(out_of_range), IndexError);
}

static std::vector<EncodedSequence> learnable_sequences(int n, std::uint64_t seed) {
  // Each client repeats a short personal motif; event type follows day parity.
  Rng rng(seed);
  std::vector<EncodedSequence> out;
  for (int i = 0; i < n; ++i) {
    EncodedSequence s;
    s.client_id = static_cast<std::uint64_t>(i + 1);
    const int len = 3 + static_cast<int>(rng.below(4));
    const int start = static_cast<int>(rng.below(4));
    std::vector<std::int32_t> day = {SpecialIds::kSos}, type = {SpecialIds::kSos};
    for (int t = 0; t < len; ++t) {
      day.push_back(SpecialIds::kCount + start + t);
      type.push_back(SpecialIds::kCount + (start + t) % 2);
    }
    day.push_back(SpecialIds::kEos);
    type.push_back(SpecialIds::kEos);
    s.fields = {day, type};
    out.push_back(std::move(s));
  }
  return out;
}

TEST_CASE("training reduces the loss and is reproducible") {
  auto seqs = learnable_sequences(40, 15);
  auto c = small_config(SchemaVariant::kDayEventType, 16, 1, 0.0, {5 + 12, 10});
  c.epochs = 8;
  c.batch_size = 8;
  c.lr = 0.01;
  auto a = train(seqs, c, 16);
  auto b = train(seqs, c, 16);
  REQUIRE(a.epoch_loss.size() == 8);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
  CHECK(a.epoch_loss == b.epoch_loss);
  // untrained heads give near-uniform predictions
  double uniform = std::log(17.0) + std::log(10.0);
  GruAeModel<float> fresh(c);
  Rng init(1);
  fresh.init(init);
  double l0 = 0.0;
  for (auto& s : seqs)
    l0 += reconstruction_loss(fresh.decode_teacher_forced(fresh.encode(s), s), s);
  CHECK(l0 / seqs.size() == doctest::Approx(uniform).epsilon(0.01));

  int calls = 0;
  auto stopped = train(seqs, c, 16, [&](int, double, GruAeModel<float>&) { return ++calls < 3; });
  CHECK(stopped.epoch_loss.size() == 3);
  std::vector<double> prefix(a.epoch_loss.begin(), a.epoch_loss.begin() + 3);
  CHECK(stopped.epoch_loss == prefix);

  CHECK_THROWS_AS(train({}, c, 1), TrainingError);
}

TEST_CASE("checkpoint round trip preserves the model exactly") {
  auto c = small_config(SchemaVariant::kAll, 6, 2, 0.1, {7, 8, 9, 7, 8});
  GruAeModel<float> m(c);
  Rng rng(17);
  m.init(rng);
  auto dir = fx::scratch("gru_ckpt");
  const auto path = (dir / "m.ckpt").string();
  write_checkpoint(m.to_checkpoint({{"note", "x"}}), path);
  Checkpoint ck = read_checkpoint(path);
  CHECK(ck.metadata.at("note") == "x");
  auto back = GruAeModel<float>::from_checkpoint(ck);
  CHECK(back.config().to_json() == c.to_json());
  Rng srng(18);
  for (int i = 0; i < 5; ++i) {
    auto s = random_sequence(i, c.vocab_sizes, i, srng);
    CHECK(back.encode(s) == m.encode(s));
  }

  ck.tensors[0].shape = {1, 1};
  ck.tensors[0].data = {0.0f};
  CHECK_THROWS_AS(GruAeModel<float>::from_checkpoint(ck), ShapeError);
  ck.tensors.erase(ck.tensors.begin());
  CHECK_THROWS_AS(GruAeModel<float>::from_checkpoint(ck), ParseError);
  CHECK_THROWS_AS(read_checkpoint((dir / "none.ckpt").string()), IoError);
  {
    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "UPCX";
  }
  CHECK_THROWS_AS(read_checkpoint((dir / "junk.ckpt").string()), ParseError);
}

TEST_CASE("embed_all rows equal per-client encodes for any thread count") {
  auto c = small_config(SchemaVariant::kDayEventType, 8, 2, 0.5, {7, 10});
  GruAeModel<float> m(c);
  Rng rng(19);
  m.init(rng);
  std::vector<EncodedSequence> seqs;
  for (int i = 0; i < 30; ++i) seqs.push_back(random_sequence(100 + i, c.vocab_sizes, i % 7, rng));
  seqs.push_back(seqs[3]);
  seqs.back().client_id = 999;
  auto p1 = embed_all(seqs, m, 1);
  auto p4 = embed_all(seqs, m, 4);
  CHECK(p1 == p4);
  REQUIRE(p1.rows() == seqs.size());
  CHECK(p1.dim() == 8);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto u = m.encode(seqs[i]);
    CHECK(std::equal(u.data(), u.data() + 8, p1.row(i).begin()));
    CHECK(p1.client_ids()[i] == seqs[i].client_id);
  }
  CHECK(std::equal(p1.row(3).begin(), p1.row(3).end(), p1.row(30).begin()));
}
