#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepred/event_log.hpp"
#include "deepred/history.hpp"
#include "deepred/model.hpp"

namespace deepred {

double mrr(std::span<const int> ranks);
double recall_at_k(std::span<const int> ranks, int k);

// Precision averaged at each positive hit over the score-ranked list
// (descending scores, ties broken by input index).
double average_precision(std::span<const double> scores, std::span<const uint8_t> labels);

enum class EvalMode { kExact, kCached };

// Latest short-term embedding instance per entity. An entry changes only
// when its entity participates in a processed event; entities without an
// instance fall back to the cold-start surrogate.
struct ShortTermStore {
  std::vector<std::optional<Tensor>> user_latest;
  std::vector<std::optional<Tensor>> item_latest;
};

struct RankingOutcome {
  std::vector<int> ranks;  // 1-based rank of the ground-truth item per event
  double mrr = 0.0;
  double recall_at_1 = 0.0;
  double recall_at_10 = 0.0;
  double wall_seconds = 0.0;
  size_t num_events = 0;
};

struct ReplayRecord {
  size_t event_index;
  int user;
  int item;
  double time;
  int rank;
};

// Sequential replay state: scores an event against every item before the
// event is revealed, then folds the event into the history index and the
// short-term store. Single owner; queries between reveals are const-like.
//
// Exact mode scores candidate c by the squared distance between the two
// projections of the pairwise forward over (user history, c's history) --
// the same quantity training minimizes. Cached mode compares the user's
// self-paired embedding against each item's stored latest instance. An
// entity with an empty history contributes the cold-start surrogate: its
// long-term embedding passed through a single encoder step with delta 0.
class ReplayEngine {
 public:
  // Prior history is log.events()[0, prior_end). In cached mode the store is
  // warm-started with each entity's latest pre-replay instance.
  ReplayEngine(const Model& model, const EventLog& log, size_t prior_end, EvalMode mode,
               bool freeze_store = false);

  // Distance from the user at t to every item's representative.
  std::vector<double> item_distances(int user, double t);

  // 1-based rank of `item` with ties broken by item index.
  int rank_of(int user, int item, double t);

  // The K closest items as (item, squared distance), ascending, ties by
  // index. K >= I returns all items.
  std::vector<std::pair<int, double>> top_k(int user, double t, int k);

  void reveal(const Event& e);

  // Self-paired short-term embedding of one entity from its own history at
  // t (the cold-start surrogate when the history is empty).
  Tensor user_embedding_at(int user, double t);
  Tensor item_embedding_at(int item, double t);

  const ShortTermStore& store() const { return store_; }
  const HistoryIndex& index() const { return index_; }

 private:
  // Encoder features for one entity at t: the encoded history, or the
  // single-column surrogate when empty.
  EncodedNodes entity_features_on(Tape& tape, bool item_side, int entity, double t);
  Tensor entity_embedding(bool item_side, int entity, double t);
  const Tensor& cold_surrogate(bool item_side, int idx);
  // Stores the instances the event's joint forward produced.
  void refresh_store(const Event& e, bool user_side, bool item_side);

  const Model& model_;
  HistoryIndex index_;
  EvalMode mode_;
  bool freeze_store_;
  ShortTermStore store_;
  std::vector<std::optional<Tensor>> cold_user_, cold_item_;
  Tape tape_;
};

// Replays eval_slice in temporal order with histories drawn from the full
// past (prior partitions included). Throws on an empty slice.
RankingOutcome replay_evaluate(const Model& model, const EventLog& log,
                               const LogSlice& eval_slice, EvalMode mode,
                               bool freeze_store = false,
                               std::vector<ReplayRecord>* dump = nullptr);

// Ranked prediction for one user at time t with the whole log as history.
// Throws on an unknown user.
std::vector<std::pair<int, double>> predict_topk(const Model& model, const EventLog& log,
                                                 int user, double t, int k,
                                                 EvalMode mode = EvalMode::kExact);

struct StaticEvalResult {
  double average_precision = 0.0;
  size_t num_positives = 0;
  size_t num_negatives = 0;
  double wall_seconds = 0.0;
};

// Link-prediction protocol for static networks: random 60/10/30 partition,
// negatives sampled uniformly among pairs absent from the full log
// (one per test positive), pairs scored by -L2 distance between the two
// context embeddings built from freshly sampled k-histories of the training
// partition. Deterministic under the seed; the partition matches what
// train_static derives from the same seed.
StaticEvalResult static_link_prediction(const Model& model, const EventLog& log,
                                        uint64_t seed,
                                        std::array<double, 3> fractions = {0.6, 0.1, 0.3});

// AP of `positives` against freshly sampled negatives, with histories drawn
// from train_index. Shared by static training (validation metric) and the
// test protocol. `label` isolates the rng stream.
double static_ap(const Model& model, const EventLog& full_log,
                 const HistoryIndex& train_index, std::span<const Event> positives,
                 uint64_t seed, std::string_view label);

}  // namespace deepred
