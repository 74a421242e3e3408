#include "mvad/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mvad/errors.hpp"
#include "mvad/rng.hpp"

namespace mvad {

using nlohmann::json;

void TimeBucketRule::validate() const {
  if (work_start_hour < 0 || work_start_hour > 23 || work_end_hour < 1 || work_end_hour > 24 ||
      work_start_hour >= work_end_hour)
    throw std::invalid_argument("TimeBucketRule: need 0 <= work_start < work_end <= 24, got " +
                                std::to_string(work_start_hour) + ".." +
                                std::to_string(work_end_hour));
}

std::string TimeBucketRule::bucket(std::int64_t ts) const {
  const std::int64_t local = ts + utc_offset_seconds;
  const std::int64_t seconds_of_day = ((local % 86400) + 86400) % 86400;
  const std::int32_t hour = static_cast<std::int32_t>(seconds_of_day / 3600);
  return hour >= work_start_hour && hour < work_end_hour ? "work" : "off";
}

std::string tokenize(const RawEvent& event, const TimeBucketRule& rule) {
  return event.behavior + ":" + rule.bucket(event.ts);
}

namespace {

// Splits a CSV line on commas; event fields never contain quoting or commas.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_jsonl_line(const std::string& line, RawEvent& event, std::string& reason) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) {
    reason = "invalid JSON";
    return false;
  }
  if (!j.is_object() || !j.contains("user") || !j.contains("behavior") || !j.contains("ts")) {
    reason = "missing required field (user, behavior, ts)";
    return false;
  }
  if (!j["user"].is_string() || !j["behavior"].is_string() || !j["ts"].is_number_integer()) {
    reason = "wrong field type (user/behavior strings, ts integer)";
    return false;
  }
  event.user_id = j["user"].get<std::string>();
  event.behavior = j["behavior"].get<std::string>();
  event.ts = j["ts"].get<std::int64_t>();
  return true;
}

bool parse_csv_line(const std::string& line, RawEvent& event, std::string& reason) {
  const auto fields = split_csv(line);
  if (fields.size() != 3) {
    reason = "expected 3 comma-separated fields";
    return false;
  }
  event.user_id = fields[0];
  event.behavior = fields[1];
  const std::string& ts = fields[2];
  if (ts.empty() || ts.find_first_not_of("0123456789-") != std::string::npos) {
    reason = "ts is not an integer";
    return false;
  }
  try {
    event.ts = std::stoll(ts);
  } catch (const std::exception&) {
    reason = "ts is not an integer";
    return false;
  }
  return true;
}

}  // namespace

ParseResult parse_events(std::istream& source, EventFormat format) {
  if (!source) throw std::runtime_error("parse_events: unreadable source stream");
  ParseResult result;
  std::string line;
  std::int64_t line_no = 0;
  bool saw_csv_header = false;
  while (std::getline(source, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (format == EventFormat::kCsv && !saw_csv_header) {
      saw_csv_header = true;
      if (line != "user,behavior,ts")
        throw std::runtime_error("parse_events: CSV header must be 'user,behavior,ts', got '" +
                                 line + "'");
      continue;
    }
    ++result.total_lines;
    RawEvent event;
    std::string reason;
    const bool ok = format == EventFormat::kJsonl ? parse_jsonl_line(line, event, reason)
                                                  : parse_csv_line(line, event, reason);
    if (ok && event.behavior.empty()) {
      reason = "behavior is empty";
    } else if (ok && event.ts < 0) {
      reason = "timestamp is negative";
    } else if (ok) {
      result.events.push_back(std::move(event));
      continue;
    }
    result.line_errors.push_back("line " + std::to_string(line_no) + ": " + reason);
  }
  if (result.total_lines > 0 &&
      2 * static_cast<std::int64_t>(result.line_errors.size()) > result.total_lines)
    throw std::runtime_error("parse_events: " + std::to_string(result.line_errors.size()) +
                             " of " + std::to_string(result.total_lines) +
                             " lines malformed (over half), e.g. " + result.line_errors.front());
  std::stable_sort(result.events.begin(), result.events.end(),
                   [](const RawEvent& a, const RawEvent& b) {
                     if (a.user_id != b.user_id) return a.user_id < b.user_id;
                     return a.ts < b.ts;
                   });
  return result;
}

ParseResult parse_events_file(const std::string& path, EventFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_events: cannot open '" + path + "'");
  return parse_events(in, format);
}

std::vector<Session> sessionize(const std::vector<RawEvent>& events, std::int64_t gap_seconds) {
  if (gap_seconds <= 0)
    throw std::invalid_argument("sessionize: gap_seconds must be positive, got " +
                                std::to_string(gap_seconds));
  std::vector<Session> sessions;
  if (events.empty()) return sessions;
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].user_id != events[0].user_id)
      throw std::invalid_argument("sessionize: events span multiple users ('" +
                                  events[0].user_id + "' and '" + events[i].user_id + "')");
    if (events[i].ts < events[i - 1].ts)
      throw std::invalid_argument("sessionize: events not sorted by timestamp");
  }
  Session current;
  current.user_id = events[0].user_id;
  for (const RawEvent& e : events) {
    if (!current.events.empty() && e.ts - current.events.back().ts > gap_seconds) {
      sessions.push_back(std::move(current));
      current = Session{};
      current.user_id = e.user_id;
    }
    current.events.push_back(e);
  }
  sessions.push_back(std::move(current));
  return sessions;
}

std::vector<Session> sessionize_all(const std::vector<RawEvent>& events,
                                    std::int64_t gap_seconds) {
  std::vector<Session> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= events.size(); ++i) {
    if (i == events.size() || events[i].user_id != events[start].user_id) {
      std::vector<RawEvent> user_events(events.begin() + static_cast<std::ptrdiff_t>(start),
                                        events.begin() + static_cast<std::ptrdiff_t>(i));
      auto sessions = sessionize(user_events, gap_seconds);
      out.insert(out.end(), std::make_move_iterator(sessions.begin()),
                 std::make_move_iterator(sessions.end()));
      start = i;
    }
  }
  return out;
}

namespace {
const std::string kReservedNames[] = {"<PAD>", "<CLS>", "<UNK>"};
}

std::int32_t TokenVocab::encode(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& TokenVocab::decode(std::int32_t id) const {
  if (id >= 0 && id < kReserved) return kReservedNames[id];
  const std::int32_t slot = id - kReserved;
  if (slot < 0 || slot >= static_cast<std::int32_t>(tokens_.size()))
    throw std::out_of_range("TokenVocab: id " + std::to_string(id) + " outside [0, " +
                            std::to_string(size()) + ")");
  return tokens_[static_cast<std::size_t>(slot)];
}

bool TokenVocab::contains(const std::string& token) const { return index_.count(token) > 0; }

std::int32_t TokenVocab::size() const {
  return kReserved + static_cast<std::int32_t>(tokens_.size());
}

std::uint64_t TokenVocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

void TokenVocab::add(const std::string& token) {
  if (token.empty()) throw std::invalid_argument("TokenVocab: empty token");
  if (index_.count(token)) return;
  index_.emplace(token, size());
  tokens_.push_back(token);
}

void TokenVocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("TokenVocab: cannot write '" + path + "'");
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw std::runtime_error("TokenVocab: write failed for '" + path + "'");
}

TokenVocab TokenVocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("TokenVocab: cannot open '" + path + "'");
  TokenVocab vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (vocab.contains(line))
      throw std::runtime_error("TokenVocab: duplicate token '" + line + "' in '" + path + "'");
    vocab.add(line);
  }
  return vocab;
}

TokenVocab build_vocab(const std::vector<Session>& sessions, const TimeBucketRule& rule,
                       std::int32_t min_count) {
  if (sessions.empty()) throw std::runtime_error("build_vocab: empty training set");
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  rule.validate();
  std::unordered_map<std::string, std::int64_t> counts;
  std::vector<std::string> first_appearance;
  for (const Session& s : sessions)
    for (const RawEvent& e : s.events) {
      const std::string token = tokenize(e, rule);
      if (++counts[token] == 1) first_appearance.push_back(token);
    }
  TokenVocab vocab;
  for (const std::string& token : first_appearance)
    if (counts[token] >= min_count) vocab.add(token);
  return vocab;
}

std::vector<std::int32_t> encode_session(const Session& session, const TokenVocab& vocab,
                                         const TimeBucketRule& rule) {
  std::vector<std::int32_t> out;
  out.reserve(session.events.size());
  for (const RawEvent& e : session.events) out.push_back(vocab.encode(tokenize(e, rule)));
  return out;
}

void write_sessions_jsonl(std::ostream& out, const std::vector<Session>& sessions,
                          const TimeBucketRule& rule) {
  for (const Session& s : sessions) {
    json j;
    j["user"] = s.user_id;
    if (s.label)
      j["label"] = *s.label;
    else
      j["label"] = nullptr;
    json tokens = json::array();
    json ts = json::array();
    for (const RawEvent& e : s.events) {
      tokens.push_back(tokenize(e, rule));
      ts.push_back(e.ts);
    }
    j["tokens"] = std::move(tokens);
    j["ts"] = std::move(ts);
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_sessions_jsonl: stream write failed");
}

}  // namespace mvad
