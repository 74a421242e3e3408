#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvad/pipeline.hpp"
#include "mvad/views.hpp"

namespace mvad {

// Model-ready session: token ids plus the two derived views, index-aligned.
struct FeaturizedSession {
  std::string user;
  std::int32_t label = -1;  // -1 when unlabeled
  std::vector<std::int32_t> z;
  std::vector<std::int32_t> s;
  std::vector<double> f;
  std::int64_t clamped_count = 0;
};

FeaturizedSession featurize_session(const Session& session, const TokenVocab& vocab,
                                    const TimeBucketRule& rule, const StatusConfig& status_cfg,
                                    const FreqConfig& freq_cfg);

// One JSON object per line:
//   {"user":...,"label":...,"z":[...],"s":[...],"f":[...],"meta":{"clamped_count":...}}
// Floats carry 9 significant digits, written by hand so bytes are stable.
void write_features_jsonl(std::ostream& out, const std::vector<FeaturizedSession>& sessions);
std::vector<FeaturizedSession> read_features_jsonl(std::istream& in);
std::vector<FeaturizedSession> read_features_file(const std::string& path);
void write_features_file(const std::string& path, const std::vector<FeaturizedSession>& sessions);

// Session ground truth emitted by the generator and joined back at featurize
// time on (user, timestamp of the session's first event).
struct SessionLabel {
  std::string user;
  std::int64_t session_start_ts = 0;
  std::int32_t label = 0;
  std::string kind;  // "normal" or the injected anomaly kind
};

void write_labels_jsonl(std::ostream& out, const std::vector<SessionLabel>& labels);
std::vector<SessionLabel> read_labels_jsonl(std::istream& in);
std::vector<SessionLabel> read_labels_file(const std::string& path);

// Attaches labels to sessions in place; every session must find its label when
// `require_all` is set.
void join_labels(std::vector<Session>& sessions, const std::vector<SessionLabel>& labels,
                 bool require_all);

}  // namespace mvad
