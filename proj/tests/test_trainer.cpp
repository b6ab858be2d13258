#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "deepred/trainer.hpp"
#include "deepred/rng.hpp"
#include "support/synthetic.hpp"

using namespace deepred;

namespace {

NodeId constant_vec(Tape& tape, std::initializer_list<double> vals) {
  Tensor t(static_cast<int>(vals.size()), 1);
  size_t i = 0;
  for (double v : vals) t.data[i++] = v;
  return tape.constant(t);
}

Model model_for(const EventLog& log, int d, int k, uint64_t seed) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.k = k;
  return make_model(cfg, log.num_users(), log.num_items(), seed);
}

// Mirrors the trainer: events whose participants have no prior history
// cannot form a pair loss.
std::vector<TrainSample> samples_for(const EventLog& log, const LogSlice& slice, int k,
                                     size_t want) {
  HistoryIndex index(log);
  std::vector<TrainSample> out;
  for (const Event& e : slice.events()) {
    TrainSample s = make_sample(index, e, k);
    if (s.user_history.valid_len == 0 || s.item_history.valid_len == 0) continue;
    out.push_back(std::move(s));
    if (out.size() == want) break;
  }
  REQUIRE(out.size() == want);
  return out;
}

std::vector<double> flat_grads(std::span<Parameter* const> params) {
  std::vector<double> out;
  for (const Parameter* p : params) {
    out.insert(out.end(), p->grad.data.begin(), p->grad.data.end());
  }
  return out;
}

}  // namespace

TEST_CASE("pair loss hand values") {
  Tape tape;

  SUBCASE("identical unit vectors: distance 0, regularizer 2") {
    NodeId u = constant_vec(tape, {1.0, 0.0});
    NodeId l = pair_loss(tape, u, u, 1.0);
    CHECK(tape.value(l).at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("orthonormal pair: distance 2, regularizer 0") {
    NodeId u = constant_vec(tape, {1.0, 0.0});
    NodeId i = constant_vec(tape, {0.0, 1.0});
    NodeId l = pair_loss(tape, u, i, 1.0);
    CHECK(tape.value(l).at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("collapse to zero is penalized") {
    NodeId u = constant_vec(tape, {0.0, 0.0});
    NodeId l = pair_loss(tape, u, u, 1.0);
    CHECK(tape.value(l).at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("loss is non-negative on random inputs") {
    Rng rng(1, "pl");
    for (int t = 0; t < 100; ++t) {
      Tensor a(4, 1), b(4, 1);
      for (double& v : a.data) v = rng.next_normal();
      for (double& v : b.data) v = rng.next_normal();
      NodeId l = pair_loss(tape, tape.constant(a), tape.constant(b), 0.01);
      CHECK(tape.value(l).at(0, 0) >= 0.0);
    }
  }
}

TEST_CASE("batch loss is the mean of pair losses") {
  EventLog log = testing::unstructured_log(6, 6, 60, 21);
  Model m = model_for(log, 4, 3, 21);
  calibrate_delta_scale(m, log.events());
  auto samples = samples_for(log, {&log, 10, 60}, 3, 4);

  Tape tape;
  NodeId whole = batch_loss(tape, m, samples, 0.01);
  double mean = tape.value(whole).at(0, 0);

  double acc = 0.0;
  for (const TrainSample& s : samples) {
    Tape one;
    NodeId l = batch_loss(one, m, {&s, 1}, 0.01);
    acc += one.value(l).at(0, 0);
  }
  CHECK(mean == doctest::Approx(acc / 4.0).epsilon(1e-12));

  CHECK_THROWS_AS(batch_loss(tape, m, {}, 0.01), std::invalid_argument);
}

TEST_CASE("batch gradient equals the mean of per-sample gradients") {
  EventLog log = testing::unstructured_log(8, 8, 100, 22);
  Model m = model_for(log, 4, 3, 22);
  calibrate_delta_scale(m, log.events());
  auto samples = samples_for(log, {&log, 20, 100}, 3, 8);
  auto params = m.parameters();

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(batch_loss(tape, m, samples, 0.01));
  }
  std::vector<double> batch_grad = flat_grads(params);

  std::vector<double> mean_grad(batch_grad.size(), 0.0);
  for (const TrainSample& s : samples) {
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    tape.backward(batch_loss(tape, m, {&s, 1}, 0.01));
    std::vector<double> g = flat_grads(params);
    for (size_t i = 0; i < g.size(); ++i) mean_grad[i] += g[i] / 8.0;
  }

  for (size_t i = 0; i < batch_grad.size(); ++i) {
    double denom = std::max(1e-12, std::abs(batch_grad[i]) + std::abs(mean_grad[i]));
    CHECK(std::abs(batch_grad[i] - mean_grad[i]) / denom < 1e-8);
  }
}

TEST_CASE("per-sample losses form an order-invariant multiset") {
  EventLog log = testing::unstructured_log(8, 8, 64, 23);
  Model m = model_for(log, 4, 3, 23);
  calibrate_delta_scale(m, log.events());
  auto samples = samples_for(log, {&log, 0, 64}, 3, 30);

  auto losses_in_order = [&](const std::vector<size_t>& order) {
    std::vector<double> out;
    for (size_t idx : order) {
      Tape tape;
      out.push_back(tape.value(batch_loss(tape, m, {&samples[idx], 1}, 0.01)).at(0, 0));
    }
    return out;
  };

  std::vector<size_t> forward_order(samples.size());
  for (size_t i = 0; i < forward_order.size(); ++i) forward_order[i] = i;
  std::vector<size_t> shuffled = forward_order;
  Rng rng(9, "order");
  shuffle(shuffled, rng);

  std::vector<double> a = losses_in_order(forward_order);
  std::vector<double> b = losses_in_order(shuffled);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // exact
}

TEST_CASE("adam first step moves by the learning rate") {
  Parameter p("p", 1, 1);
  p.value.at(0, 0) = 1.0;
  p.grad.at(0, 0) = 0.37;
  Parameter* params[] = {&p};
  AdamState st = AdamState::init(params);
  adam_step(params, st, 0.01);
  CHECK(std::abs(1.0 - p.value.at(0, 0)) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  Parameter p("p", 2, 2);
  p.value.fill(3.5);
  Parameter* params[] = {&p};
  AdamState st = AdamState::init(params);
  for (int s = 0; s < 10; ++s) adam_step(params, st, 0.1);
  for (double v : p.value.data) CHECK(v == 3.5);
}

TEST_CASE("adam converges on a quadratic") {
  Parameter x("x", 3, 1);
  x.value.at(0, 0) = 4.0;
  x.value.at(1, 0) = -2.0;
  x.value.at(2, 0) = 0.5;
  const double target[3] = {1.0, 2.0, -3.0};
  Parameter* params[] = {&x};
  AdamState st = AdamState::init(params);
  for (int s = 0; s < 2000; ++s) {
    for (int i = 0; i < 3; ++i) x.grad.at(i, 0) = 2.0 * (x.value.at(i, 0) - target[i]);
    adam_step(params, st, 0.01);
  }
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(x.value.at(i, 0) - target[i]) < 1e-3);
  }
}

TEST_CASE("global norm clip caps the gradient") {
  Parameter a("a", 2, 1), b("b", 2, 1);
  a.grad.at(0, 0) = 3.0;
  a.grad.at(1, 0) = 4.0;
  b.grad.at(0, 0) = 12.0;
  Parameter* params[] = {&a, &b};
  double norm = clip_global_norm(params, 5.0);
  CHECK(norm == doctest::Approx(13.0));
  double clipped = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data) clipped += g * g;
  }
  CHECK(std::sqrt(clipped) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("zero epochs return the model unchanged") {
  EventLog log = testing::unstructured_log(6, 6, 50, 24);
  Split split = temporal_split(log, {0.8, 0.1, 0.1});
  Model m = model_for(log, 4, 3, 24);
  Tensor before = m.embeddings.value;

  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size = 8;
  cfg.checkpoint_dir.clear();
  cfg.metrics_path.clear();
  TrainResult r = train(m, log, split, cfg);
  CHECK(r.epochs.empty());
  CHECK(r.best_epoch == -1);
  for (size_t i = 0; i < before.size(); ++i) {
    CHECK(m.embeddings.value.data[i] == before.data[i]);
  }
}

TEST_CASE("training reduces the loss and keeps the padding row at zero") {
  EventLog log = testing::planted_context_log(20, 10, 1500, 25);
  Split split = temporal_split(log, {0.8, 0.1, 0.1});
  Model m = model_for(log, 8, 3, 25);

  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.seed = 25;
  cfg.checkpoint_dir.clear();
  cfg.metrics_path.clear();
  TrainResult r = train(m, log, split, cfg);
  REQUIRE(r.epochs.size() == 4);
  CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
  CHECK_FALSE(r.aborted);
  CHECK(r.best_epoch >= 1);

  for (int c = 0; c < m.cfg.d; ++c) {
    CHECK(m.embeddings.value.at(m.padding_row(), c) == 0.0);
  }
}

TEST_CASE("shuffle on and off both converge to similar validation MRR") {
  EventLog log = testing::planted_context_log(16, 8, 1200, 26);
  Split split = temporal_split(log, {0.8, 0.1, 0.1});

  auto run = [&](bool shuffle_on) {
    Model m = model_for(log, 8, 3, 26);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.seed = 26;
    cfg.shuffle = shuffle_on;
    cfg.checkpoint_dir.clear();
    cfg.metrics_path.clear();
    TrainResult r = train(m, log, split, cfg);
    return r.epochs.back().val_mrr;
  };
  double with_shuffle = run(true);
  double without = run(false);
  CHECK(std::abs(with_shuffle - without) / std::max(with_shuffle, without) < 0.2);
}

TEST_CASE("shuffled epochs visit samples out of temporal order") {
  EventLog log = testing::unstructured_log(10, 10, 300, 27);
  Split split = temporal_split(log, {0.8, 0.1, 0.1});
  Model m = model_for(log, 4, 3, 27);

  bool saw_unsorted = false;
  TrainHooks hooks;
  hooks.on_epoch_order = [&](int, std::span<const size_t> order) {
    saw_unsorted = saw_unsorted || !std::is_sorted(order.begin(), order.end());
  };
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.checkpoint_dir.clear();
  cfg.metrics_path.clear();
  train(m, log, split, cfg, &hooks);
  CHECK(saw_unsorted);
}

TEST_CASE("same seed twice gives bit-identical parameters") {
  EventLog log = testing::unstructured_log(10, 10, 400, 28);
  Split split = temporal_split(log, {0.8, 0.1, 0.1});

  auto run = [&]() {
    Model m = model_for(log, 4, 3, 28);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 123;
    cfg.checkpoint_dir.clear();
    cfg.metrics_path.clear();
    train(m, log, split, cfg);
    return m;
  };
  Model a = run();
  Model b = run();
  auto pa = a.parameters();
  auto pb = b.parameters();
  for (size_t p = 0; p < pa.size(); ++p) {
    for (size_t i = 0; i < pa[p]->value.size(); ++i) {
      CHECK(pa[p]->value.data[i] == pb[p]->value.data[i]);
    }
  }
}

TEST_CASE("static training learns the two-block structure") {
  EventLog graph = testing::two_block_graph(40, 40, 29);
  auto parts = random_split(graph, {0.6, 0.1, 0.3}, 29);

  ModelConfig mc;
  mc.d = 8;
  mc.k = 4;
  Model m = make_model(mc, graph.num_users(), graph.num_items(), 29);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.01;
  cfg.seed = 29;
  cfg.checkpoint_dir.clear();
  cfg.metrics_path.clear();
  TrainResult r = train_static(m, graph, parts[0], parts[1], cfg);
  REQUIRE(r.epochs.size() == 30);
  CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
  CHECK(r.epochs.back().val_ap > 0.5);
}
