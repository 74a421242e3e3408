#include "mvad/features.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "mvad/errors.hpp"

namespace mvad {

using nlohmann::json;

FeaturizedSession featurize_session(const Session& session, const TokenVocab& vocab,
                                    const TimeBucketRule& rule, const StatusConfig& status_cfg,
                                    const FreqConfig& freq_cfg) {
  if (session.events.empty())
    throw std::invalid_argument("featurize_session: session has no events");
  FeaturizedSession out;
  out.user = session.user_id;
  out.label = session.label ? *session.label : -1;
  out.z = encode_session(session, vocab, rule);
  ViewTriplet views = derive_views(out.z, status_cfg, freq_cfg);
  out.s = std::move(views.s);
  out.f = std::move(views.f);
  out.clamped_count = views.clamped_count;
  return out;
}

namespace {

void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

}  // namespace

void write_features_jsonl(std::ostream& out, const std::vector<FeaturizedSession>& sessions) {
  std::string line;
  char buf[64];
  for (const FeaturizedSession& fs : sessions) {
    line.clear();
    line += "{\"user\":";
    append_json_string(line, fs.user);
    line += ",\"label\":";
    line += std::to_string(fs.label);
    line += ",\"z\":[";
    for (std::size_t i = 0; i < fs.z.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(fs.z[i]);
    }
    line += "],\"s\":[";
    for (std::size_t i = 0; i < fs.s.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(fs.s[i]);
    }
    line += "],\"f\":[";
    for (std::size_t i = 0; i < fs.f.size(); ++i) {
      if (i) line += ',';
      std::snprintf(buf, sizeof buf, "%.9g", fs.f[i]);
      line += buf;
    }
    line += "],\"meta\":{\"clamped_count\":";
    line += std::to_string(fs.clamped_count);
    line += "}}\n";
    out << line;
  }
  if (!out) throw std::runtime_error("write_features_jsonl: stream write failed");
}

std::vector<FeaturizedSession> read_features_jsonl(std::istream& in) {
  if (!in) throw std::runtime_error("read_features_jsonl: unreadable stream");
  std::vector<FeaturizedSession> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    const std::string where = "read_features_jsonl: line " + std::to_string(line_no);
    if (j.is_discarded()) throw std::runtime_error(where + ": invalid JSON");
    for (const char* key : {"user", "label", "z", "s", "f", "meta"})
      if (!j.contains(key)) throw std::runtime_error(where + ": missing key '" + key + "'");
    FeaturizedSession fs;
    fs.user = j["user"].get<std::string>();
    fs.label = j["label"].get<std::int32_t>();
    fs.z = j["z"].get<std::vector<std::int32_t>>();
    fs.s = j["s"].get<std::vector<std::int32_t>>();
    fs.f = j["f"].get<std::vector<double>>();
    if (!j["meta"].contains("clamped_count"))
      throw std::runtime_error(where + ": missing meta.clamped_count");
    fs.clamped_count = j["meta"]["clamped_count"].get<std::int64_t>();
    if (fs.z.empty() || fs.z.size() != fs.s.size() || fs.z.size() != fs.f.size())
      throw std::runtime_error(where + ": z/s/f must be non-empty and equal-length");
    out.push_back(std::move(fs));
  }
  return out;
}

std::vector<FeaturizedSession> read_features_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_features_file: cannot open '" + path + "'");
  return read_features_jsonl(in);
}

void write_features_file(const std::string& path, const std::vector<FeaturizedSession>& sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_features_file: cannot write '" + path + "'");
  write_features_jsonl(out, sessions);
}

void write_labels_jsonl(std::ostream& out, const std::vector<SessionLabel>& labels) {
  std::string line;
  for (const SessionLabel& l : labels) {
    line.clear();
    line += "{\"user\":";
    append_json_string(line, l.user);
    line += ",\"session_start_ts\":";
    line += std::to_string(l.session_start_ts);
    line += ",\"label\":";
    line += std::to_string(l.label);
    line += ",\"kind\":";
    append_json_string(line, l.kind);
    line += "}\n";
    out << line;
  }
  if (!out) throw std::runtime_error("write_labels_jsonl: stream write failed");
}

std::vector<SessionLabel> read_labels_jsonl(std::istream& in) {
  if (!in) throw std::runtime_error("read_labels_jsonl: unreadable stream");
  std::vector<SessionLabel> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    const std::string where = "read_labels_jsonl: line " + std::to_string(line_no);
    if (j.is_discarded()) throw std::runtime_error(where + ": invalid JSON");
    for (const char* key : {"user", "session_start_ts", "label"})
      if (!j.contains(key)) throw std::runtime_error(where + ": missing key '" + key + "'");
    SessionLabel l;
    l.user = j["user"].get<std::string>();
    l.session_start_ts = j["session_start_ts"].get<std::int64_t>();
    l.label = j["label"].get<std::int32_t>();
    if (l.label != 0 && l.label != 1)
      throw std::runtime_error(where + ": label must be 0 or 1");
    l.kind = j.value("kind", std::string{});
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<SessionLabel> read_labels_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_labels_file: cannot open '" + path + "'");
  return read_labels_jsonl(in);
}

void join_labels(std::vector<Session>& sessions, const std::vector<SessionLabel>& labels,
                 bool require_all) {
  std::map<std::pair<std::string, std::int64_t>, std::int32_t> by_key;
  for (const SessionLabel& l : labels) {
    const auto key = std::make_pair(l.user, l.session_start_ts);
    if (!by_key.emplace(key, l.label).second)
      throw std::runtime_error("join_labels: duplicate label for user '" + l.user +
                               "' at ts " + std::to_string(l.session_start_ts));
  }
  for (Session& s : sessions) {
    if (s.events.empty()) throw std::runtime_error("join_labels: session has no events");
    const auto it = by_key.find(std::make_pair(s.user_id, s.events.front().ts));
    if (it != by_key.end()) {
      s.label = it->second;
    } else if (require_all) {
      throw std::runtime_error("join_labels: no label for user '" + s.user_id +
                               "' session starting at ts " +
                               std::to_string(s.events.front().ts));
    }
  }
}

}  // namespace mvad
