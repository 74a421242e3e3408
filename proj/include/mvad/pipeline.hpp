#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvad {

// One audit-log record: who did what, when (epoch seconds).
struct RawEvent {
  std::string user_id;
  std::string behavior;
  std::int64_t ts = 0;
};

// A temporally contiguous run of one user's events.
struct Session {
  std::string user_id;
  std::vector<RawEvent> events;
  std::optional<std::int32_t> label;  // 0 normal, 1 anomalous, unset when unlabeled
};

// Maps epoch seconds to a coarse hour-of-day bucket label.
struct TimeBucketRule {
  std::int32_t utc_offset_seconds = 0;
  std::int32_t work_start_hour = 8;
  std::int32_t work_end_hour = 18;

  void validate() const;
  std::string bucket(std::int64_t ts) const;  // "work" or "off"
};

// Discrete activity token for one event: behavior + ":" + time bucket.
std::string tokenize(const RawEvent& event, const TimeBucketRule& rule);

enum class EventFormat { kJsonl, kCsv };

struct ParseResult {
  std::vector<RawEvent> events;             // stably sorted by (user_id, ts)
  std::vector<std::string> line_errors;     // "line N: reason" per malformed line
  std::int64_t total_lines = 0;
};

// Reads line-delimited events. Malformed lines are skipped and reported; more
// than half malformed is a hard failure.
ParseResult parse_events(std::istream& source, EventFormat format);
ParseResult parse_events_file(const std::string& path, EventFormat format);

// Splits one user's time-sorted events wherever the gap exceeds gap_seconds.
std::vector<Session> sessionize(const std::vector<RawEvent>& events, std::int64_t gap_seconds);

// Groups a (user, ts)-sorted event list by user, then sessionizes each user.
std::vector<Session> sessionize_all(const std::vector<RawEvent>& events,
                                    std::int64_t gap_seconds);

// Token-string <-> dense-id bijection with reserved ids 0=PAD, 1=CLS, 2=UNK.
class TokenVocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kCls = 1;
  static constexpr std::int32_t kUnk = 2;
  static constexpr std::int32_t kReserved = 3;

  std::int32_t encode(const std::string& token) const;  // UNK for unknown tokens
  const std::string& decode(std::int32_t id) const;     // throws on out-of-range ids
  bool contains(const std::string& token) const;
  std::int32_t size() const;  // including reserved ids
  std::uint64_t hash() const;  // fingerprint over tokens in id order

  void add(const std::string& token);  // no-op if present

  void save(const std::string& path) const;
  static TokenVocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;  // index = id - kReserved
  std::unordered_map<std::string, std::int32_t> index_;
};

// Builds a vocabulary from training sessions: tokens seen at least min_count
// times get dense ids in first-appearance order.
TokenVocab build_vocab(const std::vector<Session>& sessions, const TimeBucketRule& rule,
                       std::int32_t min_count = 1);

// Token-id sequence for one session under a frozen vocabulary.
std::vector<std::int32_t> encode_session(const Session& session, const TokenVocab& vocab,
                                         const TimeBucketRule& rule);

// One session per line: {user, label, tokens:[string...], ts:[int...]}.
void write_sessions_jsonl(std::ostream& out, const std::vector<Session>& sessions,
                          const TimeBucketRule& rule);

}  // namespace mvad
