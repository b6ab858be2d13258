#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace deepred {

// One timestamped user-item interaction. Indices are 0-based and contiguous.
struct Event {
  int user = 0;
  int item = 0;
  double time = 0.0;
};

// The time-ordered interaction corpus with the original-ID <-> index maps.
// Immutable after construction; safe to share read-only across workers.
class EventLog {
 public:
  EventLog() = default;

  // Builds a log from already-indexed events. Events must be sorted by time
  // (ascending, ties allowed) with indices inside [0,U) x [0,I).
  static EventLog from_events(std::vector<Event> events, int num_users, int num_items,
                              std::vector<std::string> user_names = {},
                              std::vector<std::string> item_names = {});

  const std::vector<Event>& events() const { return events_; }
  std::span<const Event> span(size_t begin, size_t end) const;
  size_t size() const { return events_.size(); }
  int num_users() const { return num_users_; }
  int num_items() const { return num_items_; }

  const std::string& user_name(int u) const { return user_names_[u]; }
  const std::string& item_name(int i) const { return item_names_[i]; }
  const std::vector<std::string>& user_names() const { return user_names_; }
  const std::vector<std::string>& item_names() const { return item_names_; }
  // -1 when the original ID is unknown.
  int user_index(const std::string& name) const;
  int item_index(const std::string& name) const;

 private:
  std::vector<Event> events_;
  int num_users_ = 0;
  int num_items_ = 0;
  std::vector<std::string> user_names_;
  std::vector<std::string> item_names_;
  std::unordered_map<std::string, int> user_index_;
  std::unordered_map<std::string, int> item_index_;

  void rebuild_lookup();
  friend EventLog read_log_cache(std::istream&);
};

// Column layout of the input CSV. The first line is treated as a header when
// has_header is set; extra columns (state label, feature list) are ignored.
struct FormatDescriptor {
  int user_col = 0;
  int item_col = 1;
  int time_col = 2;
  bool has_header = true;
};

struct ParseResult {
  EventLog log;
  // Input rows whose timestamp was smaller than the previous row's; such
  // rows are sorted into place rather than rejected.
  size_t out_of_order_rows = 0;
};

// Parses a CSV event stream. Indices are assigned by first appearance in
// time-sorted order, so identical bytes always produce an identical log.
// Throws with the 1-based line number on malformed rows; throws on an
// empty log.
ParseResult parse_event_log(std::istream& in, const FormatDescriptor& fmt = {});
ParseResult parse_event_log_file(const std::string& path, const FormatDescriptor& fmt = {});

// A contiguous range of a log's events.
struct LogSlice {
  const EventLog* log = nullptr;
  size_t begin = 0;
  size_t end = 0;
  std::span<const Event> events() const { return log->span(begin, end); }
  size_t size() const { return end - begin; }
};

struct Split {
  LogSlice train, val, test;
};

// Temporal split by event count: the partitions are prefixes of the sorted
// log (cumulative floor of fraction * L). Fractions must be positive and sum
// to 1 within 1e-9; throws if any partition comes out empty.
Split temporal_split(const EventLog& log, std::array<double, 3> fractions);

// Random partition of the events (static-network protocol). The returned
// logs share U/I and name tables with the source; events within each
// partition are re-sorted by time. Deterministic under the seed.
std::array<EventLog, 3> random_split(const EventLog& log, std::array<double, 3> fractions,
                                     uint64_t seed);

// Fraction of events whose (user, item) pair already occurred earlier in the
// log.
double repeat_action_rate(const EventLog& log);

// Binary cache: magic "DPRDLOG1", then U, I, L as u64 LE, then L triples
// (user u64, item u64, time f64), then the two name tables length-prefixed.
void write_log_cache(std::ostream& out, const EventLog& log);
EventLog read_log_cache(std::istream& in);
void write_log_cache_file(const std::string& path, const EventLog& log);
EventLog read_log_cache_file(const std::string& path);

}  // namespace deepred
