#include "deepred/history.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace deepred {

HistoryIndex::HistoryIndex(int num_users, int num_items)
    : by_user_(num_users), by_item_(num_items) {}

HistoryIndex::HistoryIndex(const EventLog& log, size_t begin, size_t end)
    : HistoryIndex(log.num_users(), log.num_items()) {
  if (end > log.size()) end = log.size();
  for (size_t i = begin; i < end; ++i) append(log.events()[i]);
}

void HistoryIndex::append(const Event& e) {
  if (e.user < 0 || e.user >= num_users() || e.item < 0 || e.item >= num_items()) {
    throw std::invalid_argument("append: event index out of range");
  }
  auto& ul = by_user_[e.user];
  auto& il = by_item_[e.item];
  if ((!ul.empty() && ul.back().time > e.time) ||
      (!il.empty() && il.back().time > e.time)) {
    throw std::logic_error("append: events must arrive in time order");
  }
  ul.push_back({e.item, e.time});
  il.push_back({e.user, e.time});
}

History HistoryIndex::history_from(const std::vector<Entry>& list, double t, int k,
                                   CounterpartKind kind) {
  if (k < 1) throw std::invalid_argument("history: k must be >= 1");
  // First position with time >= t; everything before is strictly older.
  auto it = std::lower_bound(list.begin(), list.end(), t,
                             [](const Entry& e, double v) { return e.time < v; });
  auto avail = static_cast<size_t>(it - list.begin());
  int take = static_cast<int>(std::min<size_t>(avail, static_cast<size_t>(k)));

  History h;
  h.entries.assign(static_cast<size_t>(k), {History::kPaddingIndex, 0.0});
  h.valid_len = take;
  h.query_time = t;
  h.counterpart_kind = kind;
  for (int j = 0; j < take; ++j) {
    const Entry& e = list[avail - static_cast<size_t>(take) + static_cast<size_t>(j)];
    h.entries[static_cast<size_t>(k - take + j)] = {e.counterpart, t - e.time};
  }
  return h;
}

History HistoryIndex::user_history_before(int user, double t, int k) const {
  if (user < 0 || user >= num_users()) {
    throw std::invalid_argument("unknown user index " + std::to_string(user));
  }
  return history_from(by_user_[user], t, k, CounterpartKind::kItem);
}

History HistoryIndex::item_history_before(int item, double t, int k) const {
  if (item < 0 || item >= num_items()) {
    throw std::invalid_argument("unknown item index " + std::to_string(item));
  }
  return history_from(by_item_[item], t, k, CounterpartKind::kUser);
}

History sample_history_static(const HistoryIndex& train_index,
                              CounterpartKind counterpart_kind, int entity, int k,
                              Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_history_static: k must be >= 1");
  size_t count = counterpart_kind == CounterpartKind::kItem
                     ? train_index.user_event_count(entity)
                     : train_index.item_event_count(entity);

  History h;
  h.entries.assign(static_cast<size_t>(k), {History::kPaddingIndex, 0.0});
  h.valid_len = 0;
  h.query_time = 0.0;
  h.counterpart_kind = counterpart_kind;
  if (count == 0) return h;

  auto full = [&](int k_query) {
    return counterpart_kind == CounterpartKind::kItem
               ? train_index.user_history_before(entity,
                                                 std::numeric_limits<double>::infinity(),
                                                 k_query)
               : train_index.item_history_before(entity,
                                                 std::numeric_limits<double>::infinity(),
                                                 k_query);
  };
  // All of the entity's events, oldest first.
  History all = full(static_cast<int>(count));

  std::vector<int> picks;
  picks.reserve(static_cast<size_t>(k));
  if (count >= static_cast<size_t>(k)) {
    // Partial Fisher-Yates: the first k positions are a uniform sample
    // without replacement, in sampled order.
    std::vector<int> pool(count);
    for (size_t i = 0; i < count; ++i) pool[i] = static_cast<int>(i);
    for (int j = 0; j < k; ++j) {
      size_t pick = static_cast<size_t>(j) + rng.next_below(count - static_cast<size_t>(j));
      std::swap(pool[static_cast<size_t>(j)], pool[pick]);
      picks.push_back(pool[static_cast<size_t>(j)]);
    }
  } else {
    for (int j = 0; j < k; ++j) picks.push_back(static_cast<int>(rng.next_below(count)));
  }

  h.valid_len = k;
  for (int j = 0; j < k; ++j) {
    h.entries[static_cast<size_t>(j)] = {all.entries[static_cast<size_t>(picks[j])].counterpart,
                                         0.0};
  }
  return h;
}

}  // namespace deepred
