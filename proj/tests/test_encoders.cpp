#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tlkf/encoders.hpp"

using namespace tlkf;

namespace {

Series scalar_series(const std::vector<double>& v) {
  Series s;
  for (double x : v) s.push_back(Vec::Constant(1, x));
  return s;
}

Series constant(int n, double c) { return scalar_series(std::vector<double>(n, c)); }

LstmConfig small_lstm() {
  LstmConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.epochs = 60;
  c.adam.lr = 0.01;
  return c;
}

TransformerConfig small_transformer() {
  TransformerConfig c = TransformerConfig::desk();
  c.model_dim = 16;
  c.blocks = 2;
  c.epochs = 60;
  c.adam.lr = 0.01;
  return c;
}

bool all_finite(const Series& s) {
  return std::all_of(s.begin(), s.end(), [](const Vec& v) { return v.allFinite(); });
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("look-back windows") {
  const auto w = make_lookback_windows(scalar_series({1, 2, 3, 4, 5, 6, 7}), 5);
  REQUIRE(w.targets.size() == 2);
  CHECK(w.inputs[0].front()(0) == 1);
  CHECK(w.inputs[0].back()(0) == 5);
  CHECK(w.targets[0](0) == 6);
  CHECK(w.inputs[1].front()(0) == 2);
  CHECK(w.targets[1](0) == 7);

  const auto c = make_lookback_windows(constant(9, 2.5), 3);
  for (const Vec& t : c.targets) CHECK(t(0) == 2.5);
  CHECK(make_lookback_windows(constant(6, 1.0), 5).targets.size() == 1);
  for (int n = 4; n < 20; ++n) CHECK(make_lookback_windows(constant(n, 0.0), 3).targets.size() == n - 3);
  CHECK_THROWS_AS(make_lookback_windows(constant(5, 1.0), 5), std::runtime_error);
}

TEST_CASE("LSTM learns a constant") {
  const auto enc = train_lstm(constant(120, 0.7), small_lstm());
  CHECK(enc.report().heldout_loss < 1e-4);
}

TEST_CASE("LSTM training is deterministic per seed") {
  const Series s = scalar_series({0.1, 0.5, -0.2, 0.3, 0.9, 0.0, -0.4, 0.2, 0.6, 0.1, -0.1, 0.4});
  LstmConfig c = small_lstm();
  c.epochs = 5;
  auto a = train_lstm(s, c);
  auto b = train_lstm(s, c);
  const auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("LSTM denoises a noisy sine") {
  Rng rng(3);
  std::vector<double> v;
  for (int k = 0; k < 300; ++k) v.push_back(std::sin(0.1 * k) + 0.1 * rng.normal());
  LstmConfig c = small_lstm();
  c.epochs = 100;
  const auto enc = train_lstm(scalar_series(v), c);
  CHECK(enc.report().heldout_loss < 0.02);
}

TEST_CASE("LSTM encoding of a linear trend") {
  std::vector<double> v;
  for (int k = 0; k < 150; ++k) v.push_back(1.0 + 0.01 * k);
  const Series s = scalar_series(v);
  LstmConfig c = small_lstm();
  c.epochs = 150;
  const auto enc = train_lstm(s, c);
  const EncodedSeries e = lstm_encode(enc, s);
  REQUIRE(e.values.size() == s.size());
  CHECK(e.source == EncodingSource::Lstm);
  for (int k = 0; k < c.look_back; ++k) CHECK(e.values[k] == s[k]);
  double err = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    err += std::pow(e.values[k](0) - v[k], 2);
    ref += v[k] * v[k];
  }
  CHECK(std::sqrt(err / ref) < 0.05);
  CHECK(all_finite(e.values));
}

TEST_CASE("LSTM rejects series that are too short") {
  CHECK_THROWS_AS(train_lstm(constant(5, 1.0), small_lstm()), std::runtime_error);
}

TEST_CASE("LSTM checkpoint round trip") {
  LstmConfig c = small_lstm();
  c.epochs = 3;
  const Series s = scalar_series({0.1, 0.5, -0.2, 0.3, 0.9, 0.0, -0.4, 0.2, 0.6, 0.1});
  auto enc = train_lstm(s, c);
  const auto restored = LstmEncoder::from_checkpoint(enc.checkpoint());
  const Series w(s.begin(), s.begin() + c.look_back);
  CHECK(restored.predict(w) == enc.predict(w));
}

TEST_CASE("Transformer reconstructs a constant") {
  const auto enc = train_transformer(constant(40, -0.3), small_transformer());
  const Series rec = enc.reconstruct(constant(40, -0.3));
  double mse = 0.0;
  for (const Vec& r : rec) mse += std::pow(r(0) + 0.3, 2);
  CHECK(mse / 40 < 1e-3);
}

TEST_CASE("Transformer eval mode is deterministic and order-sensitive") {
  Rng rng(4);
  Series s;
  for (int k = 0; k < 20; ++k) s.push_back(Vec::Constant(1, rng.uniform(-1, 1)));
  TransformerConfig c = small_transformer();
  c.epochs = 3;
  const auto enc = train_transformer(s, c);
  const Series a = enc.reconstruct(s);
  const Series b = enc.reconstruct(s);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);

  Series p(s.rbegin(), s.rend());
  const Series r = enc.reconstruct(p);
  bool differs = false;
  for (std::size_t k = 0; k < r.size(); ++k) {
    // Position k of the reversed input holds s[n-1-k].
    if (std::abs(r[k](0) - a[a.size() - 1 - k](0)) > 1e-9) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("Transformer checkpoint round trip") {
  Series s = scalar_series({0.1, 0.5, -0.2, 0.3, 0.9, 0.0, -0.4, 0.2});
  TransformerConfig c = small_transformer();
  c.epochs = 2;
  auto enc = train_transformer(s, c);
  const auto restored = TransformerEncoder::from_checkpoint(enc.checkpoint());
  const Series a = enc.reconstruct(s), b = restored.reconstruct(s);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
}

TEST_CASE("Transformer-then-LSTM encoding is finite and full length") {
  Rng rng(5);
  Series s;
  for (int k = 0; k < 40; ++k) s.push_back(Vec::Constant(1, std::sin(0.2 * k) + 0.05 * rng.normal()));
  TransformerConfig t = small_transformer();
  t.epochs = 5;
  LstmConfig l = small_lstm();
  l.epochs = 5;
  const EncodedSeries e = tl_encode(s, t, l);
  CHECK(e.source == EncodingSource::TransformerLstm);
  CHECK(e.values.size() == s.size());
  CHECK(all_finite(e.values));

  std::ostringstream os;
  write_encoded_csv(os, e);
  CHECK(os.str().rfind("k,transformer_lstm_0\n", 0) == 0);
}

TEST_CASE("config validation") {
  LstmConfig l;
  l.look_back = 0;
  CHECK_THROWS_AS(l.validate(), std::invalid_argument);
  TransformerConfig t = TransformerConfig::desk();
  t.heads = 5;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t = TransformerConfig::desk();
  t.dropout_rate = 1.0;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("profiles") {
  CHECK(TransformerConfig::desk().model_dim == 32);
  CHECK(TransformerConfig::desk().epochs == 100);
  CHECK(TransformerConfig::paper().model_dim == 512);
  CHECK(TransformerConfig::paper().epochs == 500);
}

}
