#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deepred/checkpoint.hpp"
#include "deepred/gradient_check.hpp"
#include "deepred/model.hpp"
#include "deepred/rng.hpp"

using namespace deepred;

namespace {

History make_history(std::initializer_list<HistoryEntry> valid, int k,
                     CounterpartKind kind, double query_time = 100.0) {
  History h;
  h.entries.assign(static_cast<size_t>(k), {History::kPaddingIndex, 0.0});
  h.valid_len = static_cast<int>(valid.size());
  h.query_time = query_time;
  h.counterpart_kind = kind;
  int j = k - h.valid_len;
  for (const HistoryEntry& e : valid) h.entries[static_cast<size_t>(j++)] = e;
  return h;
}

Model small_model(int d, int k, uint64_t seed, DeltaTransform dt = DeltaTransform::kRaw,
                  Pooling pooling = Pooling::kMax, bool use_theta = false) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.k = k;
  cfg.delta_transform = dt;
  cfg.pooling = pooling;
  cfg.use_theta = use_theta;
  return make_model(cfg, 6, 8, seed);
}

void set_gate(GruGate& g, std::initializer_list<double> w1,
              std::initializer_list<double> b1, std::initializer_list<double> w2,
              std::initializer_list<double> b2, std::initializer_list<double> w3,
              std::initializer_list<double> b3) {
  auto fill = [](Tensor& t, std::initializer_list<double> vals) {
    size_t i = 0;
    for (double v : vals) t.data[i++] = v;
  };
  fill(g.w_input.value, w1);
  fill(g.b_input.value, b1);
  fill(g.w_delta.value, w2);
  fill(g.b_delta.value, b2);
  fill(g.w_state.value, w3);
  fill(g.b_state.value, b3);
}

}  // namespace

TEST_CASE("signature looks up counterpart embeddings and transforms deltas") {
  Model m = small_model(3, 2, 1);
  m.delta_scale = 1.0;
  History h = make_history({{3, 2.0}, {7, 1.0}}, 2, CounterpartKind::kItem);
  Tape tape;
  SignatureNodes sig = build_signature(tape, m, h);
  const Tensor& e = tape.value(sig.embeddings);
  for (int r = 0; r < 3; ++r) {
    CHECK(e.at(r, 0) == m.embeddings.value.at(m.item_row(3), r));
    CHECK(e.at(r, 1) == m.embeddings.value.at(m.item_row(7), r));
  }
  CHECK(sig.deltas[0] == 2.0);
  CHECK(sig.deltas[1] == 1.0);
  CHECK(sig.mask == std::vector<uint8_t>{1, 1});
}

TEST_CASE("empty history gives an all-zero, all-masked signature") {
  Model m = small_model(3, 4, 1);
  History h = make_history({}, 4, CounterpartKind::kItem);
  Tape tape;
  SignatureNodes sig = build_signature(tape, m, h);
  for (double v : tape.value(sig.embeddings).data) CHECK(v == 0.0);
  CHECK(sig.mask == std::vector<uint8_t>{0, 0, 0, 0});
}

TEST_CASE("signature rejects out-of-range counterparts") {
  Model m = small_model(3, 2, 1);
  History h = make_history({{42, 1.0}}, 2, CounterpartKind::kItem);
  Tape tape;
  CHECK_THROWS_WITH_AS(build_signature(tape, m, h), doctest::Contains("out of range"),
                       std::invalid_argument);
}

TEST_CASE("log decay of a zero delta is exactly one") {
  Model m = small_model(3, 2, 1, DeltaTransform::kLogDecay);
  CHECK(transform_delta(m, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("raw deltas are normalized by the mean same-entity gap") {
  Model m = small_model(3, 2, 1);
  // user 0 recurs after 10, item 0 recurs after 30
  std::vector<Event> train = {{0, 0, 0.0}, {0, 1, 10.0}, {1, 0, 30.0}};
  calibrate_delta_scale(m, train);
  CHECK(m.delta_scale == doctest::Approx(20.0));
  CHECK(transform_delta(m, 5.0) == doctest::Approx(0.25));

  // no recurring entity: scale stays at 1
  Model fresh = small_model(3, 2, 1);
  std::vector<Event> once = {{0, 0, 0.0}, {1, 1, 10.0}};
  calibrate_delta_scale(fresh, once);
  CHECK(fresh.delta_scale == 1.0);
}

TEST_CASE("gru zero-parameter fixpoint") {
  Model m = small_model(3, 2, 1);
  for (Parameter* p : m.parameters()) {
    if (p != &m.embeddings) p->value.fill(0.0);
  }
  m.delta_scale = 1.0;
  History h = make_history({{2, 1.0}}, 2, CounterpartKind::kItem);
  Tape tape;
  EncodedNodes enc = gru_encode(tape, m, build_signature(tape, m, h));
  // z = r = sigmoid(0) = 0.5, n = tanh(0) = 0, h1 = 0.5*0 + 0.5*0 = 0
  for (double v : tape.value(enc.features).data) CHECK(v == 0.0);
}

TEST_CASE("all-padded signature encodes to a zero feature matrix") {
  Model m = small_model(3, 3, 2);
  History h = make_history({}, 3, CounterpartKind::kUser);
  Tape tape;
  EncodedNodes enc = gru_encode(tape, m, build_signature(tape, m, h));
  for (double v : tape.value(enc.features).data) CHECK(v == 0.0);
  CHECK(enc.mask == std::vector<uint8_t>{0, 0, 0});
}

// Golden vector for the recurrence, produced once by an independent
// transcription of the update equations (reference_gru below). Guards the
// deliberate gate roles: z inside the candidate, r interpolating.
TEST_CASE("gru golden vector") {
  const double kExpectedH1[2] = {0.077008180050910244, -0.023509340364834815};
  const double kExpectedH2[2] = {-0.0452508448687245, 0.17805386921254879};

  // Plain-double transcription, no tape machinery.
  auto reference_gru = [](const double e[2][2], const double dl[2], double out[2][2]) {
    double W1z[2][2] = {{0.1, -0.2}, {0.3, 0.4}}, b1z[2] = {0.01, -0.02};
    double W2z[2] = {0.05, -0.05}, b2z[2] = {0.02, 0.03};
    double W3z[2][2] = {{0.2, 0.1}, {-0.1, 0.3}}, b3z[2] = {0.0, 0.01};
    double W1r[2][2] = {{-0.3, 0.2}, {0.1, -0.1}}, b1r[2] = {0.03, 0.0};
    double W2r[2] = {0.07, 0.02}, b2r[2] = {-0.01, 0.04};
    double W3r[2][2] = {{0.15, -0.2}, {0.25, 0.05}}, b3r[2] = {0.02, -0.03};
    double W1n[2][2] = {{0.4, -0.1}, {-0.2, 0.3}}, b1n[2] = {0.0, 0.05};
    double W2n[2] = {-0.06, 0.08}, b2n[2] = {0.01, -0.01};
    double W3n[2][2] = {{0.3, 0.2}, {-0.15, 0.1}}, b3n[2] = {-0.02, 0.02};

    double h[2] = {0.0, 0.0};
    for (int s = 0; s < 2; ++s) {
      double z[2], r[2], n[2], hn[2];
      for (int i = 0; i < 2; ++i) {
        double zp = b1z[i] + b2z[i] + b3z[i] + W2z[i] * dl[s];
        double rp = b1r[i] + b2r[i] + b3r[i] + W2r[i] * dl[s];
        for (int j = 0; j < 2; ++j) {
          zp += W1z[i][j] * e[s][j] + W3z[i][j] * h[j];
          rp += W1r[i][j] * e[s][j] + W3r[i][j] * h[j];
        }
        z[i] = 1.0 / (1.0 + std::exp(-zp));
        r[i] = 1.0 / (1.0 + std::exp(-rp));
      }
      for (int i = 0; i < 2; ++i) {
        double rec = b3n[i];
        double np = b1n[i] + b2n[i] + W2n[i] * dl[s];
        for (int j = 0; j < 2; ++j) {
          rec += W3n[i][j] * h[j];
          np += W1n[i][j] * e[s][j];
        }
        n[i] = std::tanh(np + z[i] * rec);
      }
      for (int i = 0; i < 2; ++i) hn[i] = (1.0 - r[i]) * n[i] + r[i] * h[i];
      for (int i = 0; i < 2; ++i) {
        h[i] = hn[i];
        out[s][i] = h[i];
      }
    }
  };

  const double inputs[2][2] = {{0.5, -0.4}, {-0.3, 0.8}};
  const double deltas[2] = {1.5, 0.5};
  double ref[2][2];
  reference_gru(inputs, deltas, ref);
  CHECK(ref[0][0] == doctest::Approx(kExpectedH1[0]).epsilon(1e-14));
  CHECK(ref[0][1] == doctest::Approx(kExpectedH1[1]).epsilon(1e-14));
  CHECK(ref[1][0] == doctest::Approx(kExpectedH2[0]).epsilon(1e-14));
  CHECK(ref[1][1] == doctest::Approx(kExpectedH2[1]).epsilon(1e-14));

  // Same constants through the model path.
  ModelConfig cfg;
  cfg.d = 2;
  cfg.k = 2;
  Model m = make_model(cfg, 2, 2, 0);
  m.delta_scale = 1.0;
  set_gate(m.gru.z, {0.1, -0.2, 0.3, 0.4}, {0.01, -0.02}, {0.05, -0.05}, {0.02, 0.03},
           {0.2, 0.1, -0.1, 0.3}, {0.0, 0.01});
  set_gate(m.gru.r, {-0.3, 0.2, 0.1, -0.1}, {0.03, 0.0}, {0.07, 0.02}, {-0.01, 0.04},
           {0.15, -0.2, 0.25, 0.05}, {0.02, -0.03});
  set_gate(m.gru.n, {0.4, -0.1, -0.2, 0.3}, {0.0, 0.05}, {-0.06, 0.08}, {0.01, -0.01},
           {0.3, 0.2, -0.15, 0.1}, {-0.02, 0.02});
  // Counterpart embeddings carry the step inputs: user history of items 0, 1.
  m.embeddings.value.at(m.item_row(0), 0) = 0.5;
  m.embeddings.value.at(m.item_row(0), 1) = -0.4;
  m.embeddings.value.at(m.item_row(1), 0) = -0.3;
  m.embeddings.value.at(m.item_row(1), 1) = 0.8;

  History h = make_history({{0, 1.5}, {1, 0.5}}, 2, CounterpartKind::kItem);
  Tape tape;
  EncodedNodes enc = gru_encode(tape, m, build_signature(tape, m, h));
  const Tensor& f = tape.value(enc.features);
  CHECK(f.at(0, 0) == doctest::Approx(kExpectedH1[0]).epsilon(1e-14));
  CHECK(f.at(1, 0) == doctest::Approx(kExpectedH1[1]).epsilon(1e-14));
  CHECK(f.at(0, 1) == doctest::Approx(kExpectedH2[0]).epsilon(1e-14));
  CHECK(f.at(1, 1) == doctest::Approx(kExpectedH2[1]).epsilon(1e-14));
}

TEST_CASE("gru states stay inside the unit box") {
  Rng rng(3, "bounds");
  ModelConfig cfg;
  cfg.d = 4;
  cfg.k = 6;
  Model m = make_model(cfg, 5, 9, 3);
  m.delta_scale = 1.0;
  for (int trial = 0; trial < 50; ++trial) {
    History h;
    h.valid_len = 6;
    h.counterpart_kind = CounterpartKind::kItem;
    h.query_time = 50.0;
    for (int j = 0; j < 6; ++j) {
      h.entries.push_back({static_cast<int>(rng.next_below(9)),
                           rng.next_double() * 10.0 + 0.1});
    }
    Tape tape;
    EncodedNodes enc = gru_encode(tape, m, build_signature(tape, m, h));
    for (double v : tape.value(enc.features).data) {
      CHECK(std::abs(v) < 1.0);
    }
  }
}

TEST_CASE("alignment of orthonormal identical features is tanh of identity") {
  Model m = small_model(3, 3, 4);
  Tape tape;
  Tensor eye(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  EncodedNodes side{tape.constant(eye), {1, 1, 1}};
  NodeId a = align(tape, m, side, side);
  const Tensor& av = tape.value(a);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        CHECK(av.at(i, j) == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
      } else {
        CHECK(av.at(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("alignment entries are tanh-bounded; zero features align to zero") {
  Model m = small_model(4, 3, 5);
  Rng rng(6, "align");
  Tape tape;
  Tensor fu(4, 3), fi(4, 3);
  for (double& v : fu.data) v = rng.next_normal() * 3.0;
  for (double& v : fi.data) v = rng.next_normal() * 3.0;
  EncodedNodes u{tape.constant(fu), {1, 1, 1}};
  EncodedNodes i{tape.constant(fi), {1, 1, 1}};
  for (double v : tape.value(align(tape, m, u, i)).data) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  EncodedNodes zero{tape.zeros(4, 3), {1, 1, 1}};
  for (double v : tape.value(align(tape, m, zero, i)).data) CHECK(v == 0.0);
}

TEST_CASE("attention pooling matches hand arithmetic") {
  Model m = small_model(2, 2, 6);
  Tape tape;
  Tensor a(2, 2);
  a.at(0, 0) = 0.1;
  a.at(0, 1) = 0.9;
  a.at(1, 0) = 0.5;
  a.at(1, 1) = 0.2;
  NodeId an = tape.constant(a);

  AttentionNodes mx = attend(tape, an, {1, 1}, {1, 1}, Pooling::kMax);
  CHECK(tape.value(mx.user_scores).at(0, 0) == doctest::Approx(0.9));
  CHECK(tape.value(mx.user_scores).at(1, 0) == doctest::Approx(0.5));
  CHECK(tape.value(mx.item_scores).at(0, 0) == doctest::Approx(0.5));
  CHECK(tape.value(mx.item_scores).at(1, 0) == doctest::Approx(0.9));

  AttentionNodes mean = attend(tape, an, {1, 1}, {1, 1}, Pooling::kMean);
  CHECK(tape.value(mean.user_scores).at(0, 0) == doctest::Approx(0.5));
  CHECK(tape.value(mean.user_scores).at(1, 0) == doctest::Approx(0.35));

  // single valid entry in a row comes back unchanged
  AttentionNodes single = attend(tape, an, {1, 1}, {0, 1}, Pooling::kMax);
  CHECK(tape.value(single.user_scores).at(0, 0) == doctest::Approx(0.9));
  CHECK(tape.value(single.user_scores).at(1, 0) == doctest::Approx(0.2));
}

TEST_CASE("attend refuses a fully masked pair") {
  Model m = small_model(2, 2, 6);
  Tape tape;
  NodeId a = tape.zeros(2, 2);
  CHECK_THROWS_AS(attend(tape, a, {0, 0}, {1, 1}, Pooling::kMax), std::invalid_argument);
}

TEST_CASE("projection selects columns by softmax weight") {
  Model m = small_model(2, 2, 7);
  Tape tape;
  Tensor f(2, 2);
  f.at(0, 0) = 1.0;
  f.at(1, 0) = 2.0;
  f.at(0, 1) = 5.0;
  f.at(1, 1) = -1.0;
  NodeId fn = tape.constant(f);

  SUBCASE("uniform attention averages the valid columns") {
    Tensor s(2, 1);
    NodeId p = project(tape, fn, tape.constant(s), {1, 1});
    CHECK(tape.value(p).at(0, 0) == doctest::Approx(3.0));
    CHECK(tape.value(p).at(1, 0) == doctest::Approx(0.5));
  }

  SUBCASE("single valid column comes back exactly") {
    Tensor s(2, 1);
    NodeId p = project(tape, fn, tape.constant(s), {0, 1});
    CHECK(tape.value(p).at(0, 0) == 5.0);
    CHECK(tape.value(p).at(1, 0) == -1.0);
  }

  SUBCASE("saturated attention picks one column to within 1e-4") {
    Tensor s(2, 1);
    s.at(0, 0) = 10.0;
    s.at(1, 0) = -10.0;
    NodeId p = project(tape, fn, tape.constant(s), {1, 1});
    CHECK(tape.value(p).at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(tape.value(p).at(1, 0) == doctest::Approx(2.0).epsilon(1e-4));
  }
}

TEST_CASE("forward output is a convex combination of feature columns") {
  Model m = small_model(4, 3, 8);
  m.delta_scale = 1.0;
  History hu = make_history({{1, 3.0}, {2, 1.0}}, 3, CounterpartKind::kItem);
  History hi = make_history({{0, 2.5}, {3, 0.5}}, 3, CounterpartKind::kUser);
  Tape tape;
  EncodedNodes us = gru_encode(tape, m, build_signature(tape, m, hu));
  EncodedNodes is = gru_encode(tape, m, build_signature(tape, m, hi));
  ForwardNodes fw = forward_from_features(tape, m, us, is);

  const Tensor& w = tape.value(fw.user_weights);
  double sum = 0.0;
  for (int j = 0; j < 3; ++j) {
    CHECK(w.at(j, 0) >= 0.0);
    CHECK(w.at(j, 0) <= 1.0);
    if (!us.mask[static_cast<size_t>(j)]) CHECK(w.at(j, 0) == 0.0);
    sum += w.at(j, 0);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // reconstruct F * w and compare coordinatewise
  const Tensor& f = tape.value(us.features);
  const Tensor& u = tape.value(fw.user_embed);
  for (int r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) acc += f.at(r, j) * w.at(j, 0);
    CHECK(std::abs(acc - u.at(r, 0)) < 1e-12);
  }
}

TEST_CASE("masking soundness: padded slot contents are never consulted") {
  Model m = small_model(4, 4, 9);
  m.delta_scale = 1.0;
  History hu = make_history({{1, 2.0}}, 4, CounterpartKind::kItem);
  History hi = make_history({{3, 1.0}, {0, 0.5}}, 4, CounterpartKind::kUser);

  auto run = [&](const History& a, const History& b) {
    Tape tape;
    ForwardNodes fw = forward(tape, m, a, b);
    return std::pair<Tensor, Tensor>(tape.value(fw.user_embed), tape.value(fw.item_embed));
  };
  auto [u1, i1] = run(hu, hi);

  History hu2 = hu;
  History hi2 = hi;
  // overwrite padded slots with in-range garbage
  hu2.entries[0] = {3, 123.0};
  hu2.entries[1] = {0, -7.0};
  hu2.entries[2] = {5, 0.25};
  hi2.entries[0] = {2, 9.0};
  hi2.entries[1] = {4, 1e6};
  auto [u2, i2] = run(hu2, hi2);

  for (size_t i = 0; i < u1.size(); ++i) CHECK(u1.data[i] == u2.data[i]);
  for (size_t i = 0; i < i1.size(); ++i) CHECK(i1.data[i] == i2.data[i]);
}

TEST_CASE("time shift invariance is exact") {
  Model m = small_model(4, 3, 10);
  m.delta_scale = 2.0;
  History hu = make_history({{1, 3.0}, {2, 1.0}}, 3, CounterpartKind::kItem, 10.0);
  History hi = make_history({{0, 2.0}}, 3, CounterpartKind::kUser, 10.0);

  auto run = [&](double shift) {
    History a = hu, b = hi;
    a.query_time += shift;
    b.query_time += shift;  // deltas unchanged: that is the whole input
    Tape tape;
    ForwardNodes fw = forward(tape, m, a, b);
    return tape.value(fw.user_embed);
  };
  Tensor base = run(0.0);
  Tensor shifted = run(1e6);
  for (size_t i = 0; i < base.size(); ++i) CHECK(base.data[i] == shifted.data[i]);
}

TEST_CASE("swapping the histories swaps the outputs exactly") {
  Model m = small_model(4, 3, 11);
  m.delta_scale = 1.0;
  // shared parameters mean a history encodes identically on either side;
  // use item-kind entries for both so the table rows match
  History ha = make_history({{1, 3.0}, {2, 1.0}}, 3, CounterpartKind::kItem);
  History hb = make_history({{4, 2.0}}, 3, CounterpartKind::kItem);

  Tape t1, t2;
  ForwardNodes ab = forward(t1, m, ha, hb);
  ForwardNodes ba = forward(t2, m, hb, ha);
  const Tensor& u1 = t1.value(ab.user_embed);
  const Tensor& i1 = t1.value(ab.item_embed);
  const Tensor& u2 = t2.value(ba.user_embed);
  const Tensor& i2 = t2.value(ba.item_embed);
  for (size_t i = 0; i < u1.size(); ++i) {
    CHECK(u1.data[i] == i2.data[i]);
    CHECK(i1.data[i] == u2.data[i]);
  }
}

TEST_CASE("static encoder is the embedding lookup") {
  Model m = small_model(3, 2, 12);
  History h = make_history({{3, 0.0}, {7, 0.0}}, 2, CounterpartKind::kItem, 0.0);
  Tape tape;
  EncodedNodes enc = static_encode(tape, m, h);
  const Tensor& f = tape.value(enc.features);
  for (int r = 0; r < 3; ++r) {
    CHECK(f.at(r, 0) == m.embeddings.value.at(m.item_row(3), r));
    CHECK(f.at(r, 1) == m.embeddings.value.at(m.item_row(7), r));
  }
}

TEST_CASE("static permutation invariance within 1e-12") {
  ModelConfig cfg;
  cfg.d = 5;
  cfg.k = 4;
  Model m = make_model(cfg, 6, 9, 13);
  History hu = make_history({{1, 0.0}, {7, 0.0}, {3, 0.0}, {5, 0.0}}, 4,
                            CounterpartKind::kItem, 0.0);
  History hi = make_history({{0, 0.0}, {2, 0.0}, {4, 0.0}}, 4, CounterpartKind::kUser, 0.0);

  History hu_perm = hu;
  std::swap(hu_perm.entries[0], hu_perm.entries[2]);
  std::swap(hu_perm.entries[1], hu_perm.entries[3]);

  Tape t1, t2;
  ForwardNodes a = forward_static(t1, m, hu, hi);
  ForwardNodes b = forward_static(t2, m, hu_perm, hi);
  const Tensor& ua = t1.value(a.user_embed);
  const Tensor& ub = t2.value(b.user_embed);
  const Tensor& ia = t1.value(a.item_embed);
  const Tensor& ib = t2.value(b.item_embed);
  for (size_t i = 0; i < ua.size(); ++i) {
    CHECK(ua.data[i] == doctest::Approx(ub.data[i]).epsilon(1e-12));
    CHECK(ia.data[i] == doctest::Approx(ib.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("static all-padding errors at the attention stage") {
  Model m = small_model(3, 2, 14);
  History empty = make_history({}, 2, CounterpartKind::kItem, 0.0);
  History hi = make_history({{0, 0.0}}, 2, CounterpartKind::kUser, 0.0);
  Tape tape;
  CHECK_THROWS_AS(forward_static(tape, m, empty, hi), std::invalid_argument);
}

TEST_CASE("padding row is zero and takes no gradient") {
  Model m = small_model(4, 3, 15);
  m.delta_scale = 1.0;
  for (int c = 0; c < 4; ++c) CHECK(m.embeddings.value.at(m.padding_row(), c) == 0.0);

  History hu = make_history({{1, 3.0}, {2, 1.0}}, 3, CounterpartKind::kItem);
  History hi = make_history({{0, 2.0}}, 3, CounterpartKind::kUser);
  auto params = m.parameters();
  auto loss_fn = [&]() {
    Tape tape;
    ForwardNodes fw = forward(tape, m, hu, hi);
    NodeId diff = tape.sub(fw.user_embed, fw.item_embed);
    NodeId l = tape.dot(diff, diff);
    tape.backward(l);
    return tape.value(l).at(0, 0);
  };
  CHECK(gradient_check(loss_fn, params, 1e-5) < 1e-5);
  for (Parameter* p : params) p->zero_grad();
  loss_fn();
  for (int c = 0; c < 4; ++c) CHECK(m.embeddings.grad.at(m.padding_row(), c) == 0.0);
}

TEST_CASE("checkpoint round-trips the model bit-exactly") {
  ModelConfig cfg;
  cfg.d = 5;
  cfg.k = 3;
  cfg.delta_transform = DeltaTransform::kLogDecay;
  cfg.pooling = Pooling::kMean;
  cfg.use_theta = true;
  Model m = make_model(cfg, 4, 6, 16);
  m.delta_scale = 3.25;

  auto path = std::filesystem::temp_directory_path() / "deepred_ckpt_test.dprd";
  save_checkpoint(path.string(), m, /*static_mode=*/false);
  Checkpoint back = load_checkpoint(path.string());

  CHECK(back.model.cfg.d == 5);
  CHECK(back.model.cfg.hidden_dim() == 5);
  CHECK(back.model.cfg.k == 3);
  CHECK(back.model.cfg.delta_transform == DeltaTransform::kLogDecay);
  CHECK(back.model.cfg.pooling == Pooling::kMean);
  CHECK(back.model.cfg.use_theta);
  CHECK_FALSE(back.static_mode);
  CHECK(back.model.delta_scale == 3.25);
  CHECK(back.model.num_users == 4);
  CHECK(back.model.num_items == 6);

  auto orig = m.parameters();
  auto loaded = back.model.parameters();
  REQUIRE(orig.size() == loaded.size());
  for (size_t p = 0; p < orig.size(); ++p) {
    REQUIRE(orig[p]->value.size() == loaded[p]->value.size());
    for (size_t i = 0; i < orig[p]->value.size(); ++i) {
      CHECK(orig[p]->value.data[i] == loaded[p]->value.data[i]);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint with optimizer state restores it") {
  Model m = small_model(3, 2, 17);
  auto params = m.parameters();
  AdamState st = AdamState::init(params, 0.9, 0.999, 1e-8);
  st.step = 41;
  st.m[0].at(0, 0) = 0.5;
  st.v[0].at(0, 0) = 0.25;

  auto path = std::filesystem::temp_directory_path() / "deepred_ckpt_opt.dprd";
  save_checkpoint(path.string(), m, /*static_mode=*/true, &st);
  Checkpoint back = load_checkpoint(path.string());
  CHECK(back.static_mode);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == 41);
  CHECK(back.optimizer->m[0].at(0, 0) == 0.5);
  CHECK(back.optimizer->v[0].at(0, 0) == 0.25);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected by the CRC") {
  Model m = small_model(3, 2, 18);
  auto path = std::filesystem::temp_directory_path() / "deepred_ckpt_bad.dprd";
  save_checkpoint(path.string(), m, false);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(64);
  char junk = 0x5a;
  f.write(&junk, 1);
  f.close();

  CHECK_THROWS_WITH_AS(load_checkpoint(path.string()), doctest::Contains("CRC"),
                       std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("end-to-end gradient check across every configuration") {
  Rng hist_rng(19, "e2e-histories");
  for (DeltaTransform dt : {DeltaTransform::kRaw, DeltaTransform::kLogDecay}) {
    for (Pooling pooling : {Pooling::kMax, Pooling::kMean}) {
      for (bool use_theta : {false, true}) {
        ModelConfig cfg;
        cfg.d = 8;
        cfg.hidden = 8;
        cfg.k = 3;
        cfg.delta_transform = dt;
        cfg.pooling = pooling;
        cfg.use_theta = use_theta;
        Model m = make_model(cfg, 4, 5, 20);
        m.delta_scale = 2.0;

        History hu = make_history({{static_cast<int>(hist_rng.next_below(5)), 2.5},
                                   {static_cast<int>(hist_rng.next_below(5)), 0.75}},
                                  3, CounterpartKind::kItem);
        History hi = make_history({{static_cast<int>(hist_rng.next_below(4)), 1.25},
                                   {static_cast<int>(hist_rng.next_below(4)), 0.5}},
                                  3, CounterpartKind::kUser);
        auto params = m.parameters();
        auto loss_fn = [&]() {
          Tape tape;
          ForwardNodes fw = forward(tape, m, hu, hi);
          NodeId diff = tape.sub(fw.user_embed, fw.item_embed);
          NodeId l = tape.dot(diff, diff);
          tape.backward(l);
          return tape.value(l).at(0, 0);
        };
        // eps balances truncation against cancellation noise on coordinates
        // whose gradient sits below the relative-error floor
        CHECK(gradient_check(loss_fn, params, 1e-4) < 1e-4);
      }
    }
  }
}
