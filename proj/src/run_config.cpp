#include "mvad/run_config.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mvad/checkpoint.hpp"

namespace mvad {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad_type(const std::string& path, const char* want, const json& v) {
  throw std::invalid_argument("config: key '" + path + "' must be " + want + ", got " +
                              v.type_name());
}

std::int64_t as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) bad_type(path, "an integer", v);
  return v.get<std::int64_t>();
}

std::int32_t as_int32(const json& v, const std::string& path) {
  return static_cast<std::int32_t>(as_int(v, path));
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    bad_type(path, "a non-negative integer", v);
  return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) bad_type(path, "a number", v);
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) bad_type(path, "a boolean", v);
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) bad_type(path, "a string", v);
  return v.get<std::string>();
}

std::vector<std::int32_t> as_int_array(const json& v, const std::string& path) {
  if (!v.is_array()) bad_type(path, "an array of integers", v);
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_int32(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<std::string> as_string_array(const json& v, const std::string& path) {
  if (!v.is_array()) bad_type(path, "an array of strings", v);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_string(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::array<double, 4> as_mix(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 4)
    throw std::invalid_argument("config: key '" + path +
                                "' must be an array of exactly 4 numbers "
                                "(novel, resurfacing, burst, suppression)");
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = as_double(v[i], path + "[" + std::to_string(i) + "]");
  return out;
}

const json& as_object(const json& v, const std::string& path) {
  if (!v.is_object()) bad_type(path, "an object", v);
  return v;
}

// Re-throws nlohmann's parse diagnostics under the config banner.
json parse_config_text(const std::string& text) {
  try {
    return json::parse(text, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

// Each block reader consumes the keys it knows and reports the rest by
// dotted path; absent keys keep the defaults already in `out`.
void read_buckets(const json& obj, TimeBucketRule& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "buckets." + key;
    if (key == "utc_offset_seconds") out.utc_offset_seconds = as_int32(value, path);
    else if (key == "work_start_hour") out.work_start_hour = as_int32(value, path);
    else if (key == "work_end_hour") out.work_end_hour = as_int32(value, path);
    else unknown.push_back(path);
  }
}

void read_status(const json& obj, StatusConfig& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "status." + key;
    if (key == "windows") out.windows = as_int_array(value, path);
    else unknown.push_back(path);
  }
}

void read_freq(const json& obj, FreqConfig& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "freq." + key;
    if (key == "h_s") out.h_s = as_int32(value, path);
    else if (key == "h_l") out.h_l = as_int32(value, path);
    else if (key == "epsilon") out.epsilon = as_double(value, path);
    else if (key == "clamp_max") out.clamp_max = as_double(value, path);
    else unknown.push_back(path);
  }
}

void read_model(const json& obj, ModelConfig& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "model." + key;
    if (key == "d_model") out.d_model = as_int(value, path);
    else if (key == "n_heads") out.n_heads = as_int(value, path);
    else if (key == "n_layers") out.n_layers = as_int(value, path);
    else if (key == "mlp_layers") out.mlp_layers = as_int(value, path);
    else if (key == "max_len") out.max_len = as_int(value, path);
    else if (key == "dropout") out.dropout = as_double(value, path);
    else if (key == "gate_enabled") out.gate_enabled = as_bool(value, path);
    else if (key == "status_enabled") out.status_enabled = as_bool(value, path);
    else if (key == "freq_enabled") out.freq_enabled = as_bool(value, path);
    else if (key == "fusion_enabled") out.fusion_enabled = as_bool(value, path);
    else unknown.push_back(path);
  }
}

void read_train(const json& obj, TrainConfig& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "train." + key;
    if (key == "lr") out.lr = as_double(value, path);
    else if (key == "beta1") out.beta1 = as_double(value, path);
    else if (key == "beta2") out.beta2 = as_double(value, path);
    else if (key == "weight_decay") out.weight_decay = as_double(value, path);
    else if (key == "epochs") out.epochs = as_int(value, path);
    else if (key == "batch_size") out.batch_size = as_int(value, path);
    else if (key == "threshold") out.threshold = as_double(value, path);
    else unknown.push_back(path);
  }
}

void read_gen(const json& obj, GenSpec& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "gen." + key;
    if (key == "n_users") out.n_users = as_int(value, path);
    else if (key == "sessions_per_user") out.sessions_per_user = as_int(value, path);
    else if (key == "session_len_min") out.session_len_min = as_int(value, path);
    else if (key == "session_len_max") out.session_len_max = as_int(value, path);
    else if (key == "anomaly_rate") out.anomaly_rate = as_double(value, path);
    else if (key == "anomaly_mix") out.anomaly_mix = as_mix(value, path);
    else if (key == "behaviors") out.behaviors = as_string_array(value, path);
    else unknown.push_back(path);
  }
}

void read_paths(const json& obj, RunPaths& out, std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "paths." + key;
    if (key == "events_in") out.events_in = as_string(value, path);
    else if (key == "labels") out.labels = as_string(value, path);
    else if (key == "features_out") out.features_out = as_string(value, path);
    else if (key == "vocab") out.vocab = as_string(value, path);
    else if (key == "checkpoint") out.checkpoint = as_string(value, path);
    else if (key == "reports_dir") out.reports_dir = as_string(value, path);
    else if (key == "scores_in") out.scores_in = as_string(value, path);
    else unknown.push_back(path);
  }
}

}  // namespace

void RunConfig::validate() const {
  if (gap_seconds <= 0)
    throw std::invalid_argument("config: gap_seconds must be positive, got " +
                                std::to_string(gap_seconds));
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw std::invalid_argument("config: split_ratio must lie strictly in (0, 1), got " +
                                std::to_string(split_ratio));
  buckets.validate();
  status.validate();
  freq.validate();
  {
    // vocab_size is read from the vocabulary file at train time; stand in a
    // minimal value so the remaining model fields are still checked here.
    ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = TokenVocab::kReserved + 1;
    m.validate();
  }
  train.validate();
  gen.validate();
  const std::pair<const char*, const std::string*> required[] = {
      {"paths.events_in", &paths.events_in},   {"paths.labels", &paths.labels},
      {"paths.features_out", &paths.features_out}, {"paths.vocab", &paths.vocab},
      {"paths.checkpoint", &paths.checkpoint}, {"paths.reports_dir", &paths.reports_dir},
  };
  for (const auto& [name, value] : required)
    if (value->empty())
      throw std::invalid_argument(std::string("config: ") + name + " must not be empty");
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["gap_seconds"] = cfg.gap_seconds;
  j["split_ratio"] = cfg.split_ratio;
  j["buckets"] = {{"utc_offset_seconds", cfg.buckets.utc_offset_seconds},
                  {"work_start_hour", cfg.buckets.work_start_hour},
                  {"work_end_hour", cfg.buckets.work_end_hour}};
  j["status"] = {{"windows", cfg.status.windows}};
  j["freq"] = {{"h_s", cfg.freq.h_s},
               {"h_l", cfg.freq.h_l},
               {"epsilon", cfg.freq.epsilon},
               {"clamp_max", cfg.freq.clamp_max}};
  j["model"] = {{"d_model", cfg.model.d_model},
                {"n_heads", cfg.model.n_heads},
                {"n_layers", cfg.model.n_layers},
                {"mlp_layers", cfg.model.mlp_layers},
                {"max_len", cfg.model.max_len},
                {"dropout", cfg.model.dropout},
                {"gate_enabled", cfg.model.gate_enabled},
                {"status_enabled", cfg.model.status_enabled},
                {"freq_enabled", cfg.model.freq_enabled},
                {"fusion_enabled", cfg.model.fusion_enabled}};
  j["train"] = {{"lr", cfg.train.lr},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"threshold", cfg.train.threshold}};
  j["gen"] = {{"n_users", cfg.gen.n_users},
              {"sessions_per_user", cfg.gen.sessions_per_user},
              {"session_len_min", cfg.gen.session_len_min},
              {"session_len_max", cfg.gen.session_len_max},
              {"anomaly_rate", cfg.gen.anomaly_rate},
              {"anomaly_mix", cfg.gen.anomaly_mix},
              {"behaviors", cfg.gen.behaviors}};
  j["paths"] = {{"events_in", cfg.paths.events_in},
                {"labels", cfg.paths.labels},
                {"features_out", cfg.paths.features_out},
                {"vocab", cfg.paths.vocab},
                {"checkpoint", cfg.paths.checkpoint},
                {"reports_dir", cfg.paths.reports_dir},
                {"scores_in", cfg.paths.scores_in}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json root = parse_config_text(text);
  if (!root.is_object())
    throw std::invalid_argument(std::string("config: top level must be a JSON object, got ") +
                                root.type_name());

  RunConfig cfg;
  std::vector<std::string> unknown;
  for (const auto& [key, value] : root.items()) {
    if (key == "seed") cfg.seed = as_u64(value, "seed");
    else if (key == "gap_seconds") cfg.gap_seconds = as_int(value, "gap_seconds");
    else if (key == "split_ratio") cfg.split_ratio = as_double(value, "split_ratio");
    else if (key == "buckets") read_buckets(as_object(value, "buckets"), cfg.buckets, unknown);
    else if (key == "status") read_status(as_object(value, "status"), cfg.status, unknown);
    else if (key == "freq") read_freq(as_object(value, "freq"), cfg.freq, unknown);
    else if (key == "model") read_model(as_object(value, "model"), cfg.model, unknown);
    else if (key == "train") read_train(as_object(value, "train"), cfg.train, unknown);
    else if (key == "gen") read_gen(as_object(value, "gen"), cfg.gen, unknown);
    else if (key == "paths") read_paths(as_object(value, "paths"), cfg.paths, unknown);
    else unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string joined;
    for (const auto& k : unknown) {
      if (!joined.empty()) joined += ", ";
      joined += k;
    }
    throw std::invalid_argument("config: unknown key(s): " + joined);
  }

  // The one-seed rule and the single source of truth for sequence length.
  cfg.train.seed = cfg.seed;
  cfg.gen.seed = cfg.seed;
  cfg.train.max_len = cfg.model.max_len;
  return cfg;
}

void apply_config_override(std::string& json_text, const std::string& override_spec) {
  const std::size_t eq = override_spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("config override must look like dotted.path=value, got '" +
                                override_spec + "'");
  const std::string dotted = override_spec.substr(0, eq);
  const std::string value_text = override_spec.substr(eq + 1);

  std::vector<std::string> segments;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    segments.push_back(dotted.substr(start, dot - start));
    if (segments.back().empty())
      throw std::invalid_argument("config override '" + override_spec +
                                  "' has an empty path segment");
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  // Values are JSON when they parse as JSON (numbers, booleans, arrays,
  // quoted strings) and bare strings otherwise, so paths need no quoting.
  json value = json::parse(value_text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = value_text;

  json root = parse_config_text(json_text);
  json* node = &root;
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    if (!node->is_object())
      throw std::invalid_argument("config override '" + override_spec + "': '" + segments[i] +
                                  "' cannot be descended into");
    json& next = (*node)[segments[i]];
    if (next.is_null()) next = json::object();
    node = &next;
  }
  if (!node->is_object())
    throw std::invalid_argument("config override '" + override_spec +
                                "': the path descends into a non-object value");
  (*node)[segments.back()] = std::move(value);
  json_text = root.dump(2) + "\n";
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();

  for (const auto& spec : overrides) apply_config_override(text, spec);
  RunConfig cfg = run_config_from_json(text);
  cfg.validate();
  return cfg;
}

}  // namespace mvad
