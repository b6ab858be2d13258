#include "deepred/event_log.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "deepred/rng.hpp"

namespace deepred {

namespace {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

// LE byte IO so the cache layout is host-independent.
void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) fail("log cache truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  uint64_t len = get_u64(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) fail("log cache truncated");
  return s;
}

constexpr char kLogMagic[8] = {'D', 'P', 'R', 'D', 'L', 'O', 'G', '1'};

}  // namespace

void EventLog::rebuild_lookup() {
  user_index_.clear();
  item_index_.clear();
  for (size_t i = 0; i < user_names_.size(); ++i) user_index_[user_names_[i]] = static_cast<int>(i);
  for (size_t i = 0; i < item_names_.size(); ++i) item_index_[item_names_[i]] = static_cast<int>(i);
}

EventLog EventLog::from_events(std::vector<Event> events, int num_users, int num_items,
                               std::vector<std::string> user_names,
                               std::vector<std::string> item_names) {
  EventLog log;
  for (size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.user < 0 || e.user >= num_users || e.item < 0 || e.item >= num_items) {
      fail("event " + std::to_string(i) + " has an out-of-range index");
    }
    if (e.time < 0.0 || !std::isfinite(e.time)) {
      fail("event " + std::to_string(i) + " has an invalid timestamp");
    }
    if (i > 0 && e.time < events[i - 1].time) {
      fail("events are not sorted by time at position " + std::to_string(i));
    }
  }
  if (user_names.empty()) {
    for (int u = 0; u < num_users; ++u) user_names.push_back("u" + std::to_string(u));
  }
  if (item_names.empty()) {
    for (int i = 0; i < num_items; ++i) item_names.push_back("i" + std::to_string(i));
  }
  if (static_cast<int>(user_names.size()) != num_users ||
      static_cast<int>(item_names.size()) != num_items) {
    fail("name table size does not match entity count");
  }
  log.events_ = std::move(events);
  log.num_users_ = num_users;
  log.num_items_ = num_items;
  log.user_names_ = std::move(user_names);
  log.item_names_ = std::move(item_names);
  log.rebuild_lookup();
  return log;
}

std::span<const Event> EventLog::span(size_t begin, size_t end) const {
  return {events_.data() + begin, events_.data() + end};
}

int EventLog::user_index(const std::string& name) const {
  auto it = user_index_.find(name);
  return it == user_index_.end() ? -1 : it->second;
}

int EventLog::item_index(const std::string& name) const {
  auto it = item_index_.find(name);
  return it == item_index_.end() ? -1 : it->second;
}

ParseResult parse_event_log(std::istream& in, const FormatDescriptor& fmt) {
  struct Row {
    std::string user, item;
    double time;
  };
  std::vector<Row> rows;
  std::string line;
  size_t line_no = 0;
  int needed = std::max({fmt.user_col, fmt.item_col, fmt.time_col}) + 1;
  size_t out_of_order = 0;
  bool skipped_header = !fmt.has_header;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    auto fields = split_fields(line);
    if (static_cast<int>(fields.size()) < needed) {
      fail("line " + std::to_string(line_no) + ": expected at least " +
           std::to_string(needed) + " columns, found " + std::to_string(fields.size()));
    }
    std::string_view ts = trim(fields[fmt.time_col]);
    double t = 0.0;
    auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), t);
    if (ec != std::errc() || ptr != ts.data() + ts.size()) {
      fail("line " + std::to_string(line_no) + ": unparsable timestamp '" +
           std::string(ts) + "'");
    }
    if (!std::isfinite(t) || t < 0.0) {
      fail("line " + std::to_string(line_no) + ": timestamp must be finite and >= 0");
    }
    if (!rows.empty() && t < rows.back().time) ++out_of_order;
    rows.push_back({std::string(trim(fields[fmt.user_col])),
                    std::string(trim(fields[fmt.item_col])), t});
  }
  if (rows.empty()) fail("empty event log");

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.time < b.time; });

  std::unordered_map<std::string, int> user_ids, item_ids;
  std::vector<std::string> user_names, item_names;
  std::vector<Event> events;
  events.reserve(rows.size());
  for (const Row& r : rows) {
    auto [uit, unew] = user_ids.try_emplace(r.user, static_cast<int>(user_names.size()));
    if (unew) user_names.push_back(r.user);
    auto [iit, inew] = item_ids.try_emplace(r.item, static_cast<int>(item_names.size()));
    if (inew) item_names.push_back(r.item);
    events.push_back({uit->second, iit->second, r.time});
  }

  int num_users = static_cast<int>(user_names.size());
  int num_items = static_cast<int>(item_names.size());
  ParseResult result;
  result.log = EventLog::from_events(std::move(events), num_users, num_items,
                                     std::move(user_names), std::move(item_names));
  result.out_of_order_rows = out_of_order;
  return result;
}

ParseResult parse_event_log_file(const std::string& path, const FormatDescriptor& fmt) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  return parse_event_log(in, fmt);
}

Split temporal_split(const EventLog& log, std::array<double, 3> fractions) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    fail("split fractions must sum to 1, got " + std::to_string(sum));
  }
  for (double f : fractions) {
    if (f <= 0.0) fail("split fractions must be positive");
  }
  size_t total = log.size();
  size_t n1 = static_cast<size_t>(std::floor(fractions[0] * static_cast<double>(total)));
  size_t n2 = static_cast<size_t>(
      std::floor((fractions[0] + fractions[1]) * static_cast<double>(total)));
  if (n2 > total) n2 = total;
  if (n1 == 0 || n2 <= n1 || n2 >= total) {
    fail("split produces an empty partition (" + std::to_string(n1) + "/" +
         std::to_string(n2 - n1) + "/" + std::to_string(total - n2) + " of " +
         std::to_string(total) + ")");
  }
  Split s;
  s.train = {&log, 0, n1};
  s.val = {&log, n1, n2};
  s.test = {&log, n2, total};
  return s;
}

std::array<EventLog, 3> random_split(const EventLog& log, std::array<double, 3> fractions,
                                     uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    fail("split fractions must sum to 1, got " + std::to_string(sum));
  }
  for (double f : fractions) {
    if (f <= 0.0) fail("split fractions must be positive");
  }
  size_t total = log.size();
  std::vector<size_t> order(total);
  for (size_t i = 0; i < total; ++i) order[i] = i;
  Rng rng(seed, "random-split");
  shuffle(order, rng);
  size_t n1 = static_cast<size_t>(std::floor(fractions[0] * static_cast<double>(total)));
  size_t n2 = static_cast<size_t>(
      std::floor((fractions[0] + fractions[1]) * static_cast<double>(total)));
  if (n2 > total) n2 = total;
  if (n1 == 0 || n2 <= n1 || n2 >= total) fail("split produces an empty partition");

  auto build = [&](size_t begin, size_t end) {
    std::vector<Event> part;
    part.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) part.push_back(log.events()[order[i]]);
    std::stable_sort(part.begin(), part.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    return EventLog::from_events(std::move(part), log.num_users(), log.num_items(),
                                 log.user_names(), log.item_names());
  };
  return {build(0, n1), build(n1, n2), build(n2, total)};
}

double repeat_action_rate(const EventLog& log) {
  if (log.size() == 0) fail("repeat rate of an empty log");
  std::unordered_map<uint64_t, bool> seen;
  seen.reserve(log.size());
  size_t repeats = 0;
  for (const Event& e : log.events()) {
    uint64_t key = static_cast<uint64_t>(e.user) * static_cast<uint64_t>(log.num_items()) +
                   static_cast<uint64_t>(e.item);
    auto [it, inserted] = seen.try_emplace(key, true);
    if (!inserted) ++repeats;
  }
  return static_cast<double>(repeats) / static_cast<double>(log.size());
}

void write_log_cache(std::ostream& out, const EventLog& log) {
  out.write(kLogMagic, sizeof(kLogMagic));
  put_u64(out, static_cast<uint64_t>(log.num_users()));
  put_u64(out, static_cast<uint64_t>(log.num_items()));
  put_u64(out, log.size());
  for (const Event& e : log.events()) {
    put_u64(out, static_cast<uint64_t>(e.user));
    put_u64(out, static_cast<uint64_t>(e.item));
    put_f64(out, e.time);
  }
  put_u64(out, log.user_names().size());
  for (const auto& s : log.user_names()) put_string(out, s);
  put_u64(out, log.item_names().size());
  for (const auto& s : log.item_names()) put_string(out, s);
  if (!out) fail("log cache write failed");
}

EventLog read_log_cache(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kLogMagic, 8) != 0) fail("not a DPRDLOG1 cache");
  auto num_users = static_cast<int>(get_u64(in));
  auto num_items = static_cast<int>(get_u64(in));
  uint64_t count = get_u64(in);
  std::vector<Event> events;
  events.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    Event e;
    e.user = static_cast<int>(get_u64(in));
    e.item = static_cast<int>(get_u64(in));
    e.time = get_f64(in);
    events.push_back(e);
  }
  uint64_t un = get_u64(in);
  std::vector<std::string> user_names;
  user_names.reserve(un);
  for (uint64_t i = 0; i < un; ++i) user_names.push_back(get_string(in));
  uint64_t it = get_u64(in);
  std::vector<std::string> item_names;
  item_names.reserve(it);
  for (uint64_t i = 0; i < it; ++i) item_names.push_back(get_string(in));
  return EventLog::from_events(std::move(events), num_users, num_items,
                               std::move(user_names), std::move(item_names));
}

void write_log_cache_file(const std::string& path, const EventLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '" + path + "' for writing");
  write_log_cache(out, log);
}

EventLog read_log_cache_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path + "'");
  return read_log_cache(in);
}

}  // namespace deepred
