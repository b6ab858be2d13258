#pragma once

#include <cstdint>
#include <vector>

#include "deepred/event_log.hpp"
#include "deepred/rng.hpp"

namespace deepred {

// What the counterpart indices of a history refer to: a user's history lists
// items, an item's history lists users.
enum class CounterpartKind { kItem, kUser };

struct HistoryEntry {
  int counterpart = -1;
  double delta = 0.0;  // query_time - event time; 0 sentinel in static mode
};

// The k most recent counterpart interactions of one entity before a query
// time, oldest to newest, left-padded to exactly k slots. Padded slots hold
// the reserved padding index (-1) with delta 0 and must never be consulted.
struct History {
  static constexpr int kPaddingIndex = -1;

  std::vector<HistoryEntry> entries;  // size k
  int valid_len = 0;
  double query_time = 0.0;
  CounterpartKind counterpart_kind = CounterpartKind::kItem;

  int k() const { return static_cast<int>(entries.size()); }
};

// Per-entity event lists appended in log order. Answers strictly-before
// history queries by binary search; immutable sharing during training, a
// single owner appends during replay.
class HistoryIndex {
 public:
  HistoryIndex(int num_users, int num_items);

  // Index over log.events()[begin, end).
  explicit HistoryIndex(const EventLog& log, size_t begin = 0,
                        size_t end = static_cast<size_t>(-1));

  // Events must arrive in non-decreasing time order per entity (log order).
  void append(const Event& e);

  // The last min(k, available) events strictly before t, oldest to newest.
  // An entity with no prior events yields valid_len = 0.
  History user_history_before(int user, double t, int k) const;
  History item_history_before(int item, double t, int k) const;

  int num_users() const { return static_cast<int>(by_user_.size()); }
  int num_items() const { return static_cast<int>(by_item_.size()); }
  size_t user_event_count(int user) const { return by_user_[user].size(); }
  size_t item_event_count(int item) const { return by_item_[item].size(); }
  // Time of the entity's most recent indexed event; only valid when the
  // count is nonzero.
  double user_last_time(int user) const { return by_user_[user].back().time; }
  double item_last_time(int item) const { return by_item_[item].back().time; }

 private:
  struct Entry {
    int counterpart;
    double time;
  };

  static History history_from(const std::vector<Entry>& list, double t, int k,
                              CounterpartKind kind);

  std::vector<std::vector<Entry>> by_user_;
  std::vector<std::vector<Entry>> by_item_;
};

// Static-mode history: k events sampled uniformly without replacement from
// the entity's events in `train_index` (with replacement when fewer than k
// exist but at least one does). `counterpart_kind` names what the sampled
// entries list, so kItem samples a user's events. Deltas are the 0 sentinel.
// Deterministic under the rng stream. An entity with zero events yields all
// padding.
History sample_history_static(const HistoryIndex& train_index,
                              CounterpartKind counterpart_kind, int entity, int k,
                              Rng& rng);

}  // namespace deepred
