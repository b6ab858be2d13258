#include "deepred/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "deepred/rng.hpp"

namespace deepred {

namespace {

double squared_distance(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double mrr(std::span<const int> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr of an empty rank list");
  double acc = 0.0;
  for (int r : ranks) acc += 1.0 / static_cast<double>(r);
  return acc / static_cast<double>(ranks.size());
}

double recall_at_k(std::span<const int> ranks, int k) {
  if (ranks.empty()) throw std::invalid_argument("recall of an empty rank list");
  size_t hits = 0;
  for (int r : ranks) hits += (r <= k);
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double average_precision(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("average_precision: scores/labels size mismatch");
  }
  size_t positives = 0;
  for (uint8_t l : labels) positives += (l != 0);
  if (positives == 0) throw std::invalid_argument("average_precision: no positives");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  size_t seen_pos = 0;
  for (size_t pos = 0; pos < order.size(); ++pos) {
    if (labels[order[pos]]) {
      ++seen_pos;
      ap += static_cast<double>(seen_pos) / static_cast<double>(pos + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

ReplayEngine::ReplayEngine(const Model& model, const EventLog& log, size_t prior_end,
                           EvalMode mode, bool freeze_store)
    : model_(model),
      index_(log, 0, prior_end),
      mode_(mode),
      freeze_store_(freeze_store) {
  store_.user_latest.resize(static_cast<size_t>(log.num_users()));
  store_.item_latest.resize(static_cast<size_t>(log.num_items()));
  cold_user_.resize(static_cast<size_t>(log.num_users()));
  cold_item_.resize(static_cast<size_t>(log.num_items()));

  if (mode_ == EvalMode::kCached) {
    // Each entity's latest pre-replay instance: what the refresh would have
    // stored when its most recent prior event was processed.
    std::vector<std::optional<Event>> last_user(store_.user_latest.size());
    std::vector<std::optional<Event>> last_item(store_.item_latest.size());
    for (size_t i = 0; i < prior_end; ++i) {
      const Event& e = log.events()[i];
      last_user[static_cast<size_t>(e.user)] = e;
      last_item[static_cast<size_t>(e.item)] = e;
    }
    for (size_t u = 0; u < last_user.size(); ++u) {
      if (last_user[u]) refresh_store(*last_user[u], true, false);
    }
    for (size_t i = 0; i < last_item.size(); ++i) {
      if (last_item[i]) refresh_store(*last_item[i], false, true);
    }
  }
}

const Tensor& ReplayEngine::cold_surrogate(bool item_side, int idx) {
  auto& slot = item_side ? cold_item_[static_cast<size_t>(idx)]
                         : cold_user_[static_cast<size_t>(idx)];
  if (slot.has_value()) return *slot;
  Tape tape;
  EncodedNodes enc = entity_features_on(tape, item_side, idx, 0.0);
  // A single-column feature matrix projects to itself.
  const Tensor& f = tape.value(enc.features);
  slot = Tensor(f.rows, 1);
  for (int r = 0; r < f.rows; ++r) slot->at(r, 0) = f.at(r, 0);
  return *slot;
}

EncodedNodes ReplayEngine::entity_features_on(Tape& tape, bool item_side, int entity,
                                              double t) {
  History h = item_side ? index_.item_history_before(entity, t, model_.cfg.k)
                        : index_.user_history_before(entity, t, model_.cfg.k);
  if (h.valid_len > 0) {
    return gru_encode(tape, model_, build_signature(tape, model_, h));
  }
  // Cold start: the entity's own long-term embedding through one encoder
  // step with delta 0.
  int row = item_side ? model_.item_row(entity) : model_.user_row(entity);
  NodeId table = tape.param(const_cast<Parameter*>(&model_.embeddings));
  SignatureNodes sig;
  sig.embeddings = tape.gather_columns(table, {row});
  sig.deltas = {0.0};
  sig.mask = {1};
  return gru_encode(tape, model_, sig);
}

Tensor ReplayEngine::entity_embedding(bool item_side, int entity, double t) {
  tape_.reset();
  EncodedNodes side = entity_features_on(tape_, item_side, entity, t);
  // Self-pairing: the features align against themselves, so the projection
  // depends on this entity's history alone.
  ForwardNodes out = forward_from_features(tape_, model_, side, side);
  return tape_.value(out.user_embed);
}

Tensor ReplayEngine::user_embedding_at(int user, double t) {
  if (user < 0 || user >= index_.num_users()) {
    throw std::invalid_argument("unknown user index " + std::to_string(user));
  }
  return entity_embedding(false, user, t);
}

Tensor ReplayEngine::item_embedding_at(int item, double t) {
  if (item < 0 || item >= index_.num_items()) {
    throw std::invalid_argument("unknown item index " + std::to_string(item));
  }
  return entity_embedding(true, item, t);
}

std::vector<double> ReplayEngine::item_distances(int user, double t) {
  if (user < 0 || user >= index_.num_users()) {
    throw std::invalid_argument("unknown user index " + std::to_string(user));
  }
  std::vector<double> distances(static_cast<size_t>(index_.num_items()));
  if (mode_ == EvalMode::kExact) {
    // Pairwise scoring: each candidate is judged by how close the two sides
    // of its own joint forward land, the quantity the loss optimizes.
    tape_.reset();
    EncodedNodes user_side = entity_features_on(tape_, false, user, t);
    for (int c = 0; c < index_.num_items(); ++c) {
      EncodedNodes item_side = entity_features_on(tape_, true, c, t);
      ForwardNodes out = forward_from_features(tape_, model_, user_side, item_side);
      distances[static_cast<size_t>(c)] =
          squared_distance(tape_.value(out.user_embed), tape_.value(out.item_embed));
    }
    return distances;
  }
  Tensor u = user_embedding_at(user, t);
  for (int c = 0; c < index_.num_items(); ++c) {
    const auto& cached = store_.item_latest[static_cast<size_t>(c)];
    const Tensor& rep = cached.has_value() ? *cached : cold_surrogate(true, c);
    distances[static_cast<size_t>(c)] = squared_distance(u, rep);
  }
  return distances;
}

int ReplayEngine::rank_of(int user, int item, double t) {
  if (item < 0 || item >= index_.num_items()) {
    throw std::invalid_argument("unknown item index " + std::to_string(item));
  }
  std::vector<double> d = item_distances(user, t);
  double target = d[static_cast<size_t>(item)];
  int rank = 1;
  for (int c = 0; c < index_.num_items(); ++c) {
    if (c == item) continue;
    double dc = d[static_cast<size_t>(c)];
    if (dc < target || (dc == target && c < item)) ++rank;
  }
  return rank;
}

std::vector<std::pair<int, double>> ReplayEngine::top_k(int user, double t, int k) {
  if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");
  std::vector<double> d = item_distances(user, t);
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return d[static_cast<size_t>(a)] < d[static_cast<size_t>(b)];
  });
  size_t take = std::min(static_cast<size_t>(k), d.size());
  std::vector<std::pair<int, double>> out;
  out.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    out.emplace_back(order[i], d[static_cast<size_t>(order[i])]);
  }
  return out;
}

void ReplayEngine::refresh_store(const Event& e, bool user_side, bool item_side) {
  // The interaction's joint forward produces the new instances. Histories
  // are strictly before the event time, so appending the event first does
  // not change what gets stored.
  tape_.reset();
  EncodedNodes us = entity_features_on(tape_, false, e.user, e.time);
  EncodedNodes is = entity_features_on(tape_, true, e.item, e.time);
  ForwardNodes out = forward_from_features(tape_, model_, us, is);
  if (user_side) store_.user_latest[static_cast<size_t>(e.user)] = tape_.value(out.user_embed);
  if (item_side) store_.item_latest[static_cast<size_t>(e.item)] = tape_.value(out.item_embed);
}

void ReplayEngine::reveal(const Event& e) {
  index_.append(e);
  if (freeze_store_) return;
  refresh_store(e, true, true);
}

RankingOutcome replay_evaluate(const Model& model, const EventLog& log,
                               const LogSlice& eval_slice, EvalMode mode,
                               bool freeze_store, std::vector<ReplayRecord>* dump) {
  if (eval_slice.size() == 0) throw std::invalid_argument("empty evaluation split");
  auto t0 = std::chrono::steady_clock::now();

  ReplayEngine engine(model, log, eval_slice.begin, mode, freeze_store);
  RankingOutcome out;
  out.ranks.reserve(eval_slice.size());
  for (size_t i = 0; i < eval_slice.size(); ++i) {
    const Event& e = log.events()[eval_slice.begin + i];
    int rank = engine.rank_of(e.user, e.item, e.time);
    out.ranks.push_back(rank);
    if (dump) dump->push_back({i, e.user, e.item, e.time, rank});
    engine.reveal(e);
  }
  out.num_events = out.ranks.size();
  out.mrr = mrr(out.ranks);
  out.recall_at_1 = recall_at_k(out.ranks, 1);
  out.recall_at_10 = recall_at_k(out.ranks, 10);
  out.wall_seconds = seconds_since(t0);
  return out;
}

std::vector<std::pair<int, double>> predict_topk(const Model& model, const EventLog& log,
                                                 int user, double t, int k, EvalMode mode) {
  if (user < 0 || user >= log.num_users()) {
    throw std::invalid_argument("unknown user index " + std::to_string(user));
  }
  ReplayEngine engine(model, log, log.size(), mode);
  return engine.top_k(user, t, k);
}

namespace {

// Joint static forward; an endpoint with no sampled events contributes its
// own global embedding as a single feature column.
EncodedNodes static_side(Tape& tape, const Model& model, const History& h, bool item_side,
                         int entity) {
  if (h.valid_len > 0) return static_encode(tape, model, h);
  NodeId table = tape.param(const_cast<Parameter*>(&model.embeddings));
  int row = item_side ? model.item_row(entity) : model.user_row(entity);
  EncodedNodes out;
  out.features = tape.gather_columns(table, {row});
  out.mask = {1};
  return out;
}

}  // namespace

double static_ap(const Model& model, const EventLog& full_log,
                 const HistoryIndex& train_index, std::span<const Event> positives,
                 uint64_t seed, std::string_view label) {
  if (positives.empty()) throw std::invalid_argument("static_ap: no positive pairs");

  // Deduplicated positive edges, first-occurrence order.
  std::unordered_set<uint64_t> seen;
  std::vector<std::pair<int, int>> pairs;
  auto key = [&](int u, int i) {
    return static_cast<uint64_t>(u) * static_cast<uint64_t>(full_log.num_items()) +
           static_cast<uint64_t>(i);
  };
  for (const Event& e : positives) {
    if (seen.insert(key(e.user, e.item)).second) pairs.emplace_back(e.user, e.item);
  }
  size_t num_pos = pairs.size();

  std::unordered_set<uint64_t> edges;
  edges.reserve(full_log.size() * 2);
  for (const Event& e : full_log.events()) edges.insert(key(e.user, e.item));

  Rng neg_rng(seed, label);
  std::unordered_set<uint64_t> chosen;
  size_t attempts = 0;
  size_t max_attempts = 100 * num_pos;
  while (chosen.size() < num_pos) {
    if (++attempts > max_attempts) {
      throw std::runtime_error("negative sampling exhausted after " +
                               std::to_string(max_attempts) + " attempts");
    }
    int u = static_cast<int>(neg_rng.next_below(static_cast<uint64_t>(full_log.num_users())));
    int i = static_cast<int>(neg_rng.next_below(static_cast<uint64_t>(full_log.num_items())));
    uint64_t k = key(u, i);
    if (edges.count(k) || chosen.count(k)) continue;
    chosen.insert(k);
    pairs.emplace_back(u, i);
  }

  Rng hist_rng(seed, std::string(label) + "-histories");
  Tape tape;
  std::vector<double> scores;
  std::vector<uint8_t> labels;
  scores.reserve(pairs.size());
  labels.reserve(pairs.size());
  for (size_t idx = 0; idx < pairs.size(); ++idx) {
    auto [u, i] = pairs[idx];
    History hu =
        sample_history_static(train_index, CounterpartKind::kItem, u, model.cfg.k, hist_rng);
    History hi =
        sample_history_static(train_index, CounterpartKind::kUser, i, model.cfg.k, hist_rng);
    tape.reset();
    EncodedNodes user_side = static_side(tape, model, hu, false, u);
    EncodedNodes item_side = static_side(tape, model, hi, true, i);
    ForwardNodes fw = forward_from_features(tape, model, user_side, item_side);
    double dist = squared_distance(tape.value(fw.user_embed), tape.value(fw.item_embed));
    scores.push_back(-std::sqrt(dist));
    labels.push_back(idx < num_pos ? 1 : 0);
  }
  return average_precision(scores, labels);
}

StaticEvalResult static_link_prediction(const Model& model, const EventLog& log,
                                        uint64_t seed, std::array<double, 3> fractions) {
  auto t0 = std::chrono::steady_clock::now();
  auto parts = random_split(log, fractions, seed);
  const EventLog& train_log = parts[0];
  const EventLog& test_log = parts[2];
  if (test_log.size() == 0) throw std::invalid_argument("empty test partition");

  HistoryIndex train_index(train_log);
  StaticEvalResult out;
  out.average_precision =
      static_ap(model, log, train_index, test_log.events(), seed, "static-test");
  // Positives are deduplicated inside static_ap; report the raw counts.
  std::unordered_set<uint64_t> uniq;
  for (const Event& e : test_log.events()) {
    uniq.insert(static_cast<uint64_t>(e.user) * static_cast<uint64_t>(log.num_items()) +
                static_cast<uint64_t>(e.item));
  }
  out.num_positives = uniq.size();
  out.num_negatives = uniq.size();
  out.wall_seconds = seconds_since(t0);
  return out;
}

}  // namespace deepred
