#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvad/checkpoint.hpp"
#include "mvad/datagen.hpp"
#include "mvad/errors.hpp"
#include "mvad/features.hpp"
#include "mvad/grad_check.hpp"
#include "mvad/model.hpp"
#include "mvad/pipeline.hpp"
#include "mvad/run_config.hpp"
#include "mvad/training.hpp"

using namespace mvad;

namespace {

using ordered_json = nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::ofstream open_out(const std::string& path, const char* who) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(std::string(who) + ": cannot write '" + path + "'");
  return out;
}

void close_out(std::ofstream& out, const std::string& path, const char* who) {
  out.flush();
  if (!out) throw IoError(std::string(who) + ": failed writing '" + path + "'");
}

// The featurization fingerprint embedded in checkpoints: the view settings
// plus the vocabulary hash, so eval can refuse mismatched inputs.
std::string featurization_meta(const RunConfig& cfg, const TokenVocab& vocab) {
  ordered_json j;
  j["windows"] = cfg.status.windows;
  j["h_s"] = cfg.freq.h_s;
  j["h_l"] = cfg.freq.h_l;
  j["epsilon"] = cfg.freq.epsilon;
  j["clamp_max"] = cfg.freq.clamp_max;
  j["vocab_hash"] = hex64(vocab.hash());
  return j.dump();
}

EventFormat format_for(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? EventFormat::kCsv
                                                                           : EventFormat::kJsonl;
}

ordered_json report_json(const EvalReport& r, std::int64_t n_scored) {
  ordered_json j;
  j["n_scored"] = n_scored;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["tn"] = r.tn;
  j["fn"] = r.fn;
  j["recall"] = r.recall;
  j["precision"] = r.precision;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["recall_defined"] = r.recall_defined;
  j["precision_defined"] = r.precision_defined;
  j["f1_defined"] = r.f1_defined;
  return j;
}

int cmd_gen(const RunConfig& cfg) {
  const GeneratedData data = gen_dataset(cfg.gen);
  const std::vector<RawEvent> events = flatten_events(data);

  {
    std::ofstream out = open_out(cfg.paths.events_in, "gen");
    for (const auto& e : events) {
      ordered_json j{{"user", e.user_id}, {"behavior", e.behavior}, {"ts", e.ts}};
      out << j.dump() << '\n';
    }
    close_out(out, cfg.paths.events_in, "gen");
  }
  {
    std::ofstream out = open_out(cfg.paths.labels, "gen");
    write_labels_jsonl(out, data.labels);
    close_out(out, cfg.paths.labels, "gen");
  }

  std::int64_t n_anom = 0;
  for (const auto& l : data.labels) n_anom += l.label;
  std::printf("gen: %zu events in %zu sessions (%" PRId64 " anomalous) for %" PRId64
              " users\ngen: events -> %s\ngen: labels -> %s\n",
              events.size(), data.sessions.size(), n_anom, cfg.gen.n_users,
              cfg.paths.events_in.c_str(), cfg.paths.labels.c_str());
  return 0;
}

int cmd_featurize(const RunConfig& cfg) {
  const ParseResult parsed = parse_events_file(cfg.paths.events_in, format_for(cfg.paths.events_in));
  for (const auto& err : parsed.line_errors)
    std::fprintf(stderr, "warning: %s: %s\n", cfg.paths.events_in.c_str(), err.c_str());

  std::vector<Session> sessions = sessionize_all(parsed.events, cfg.gap_seconds);
  if (sessions.empty())
    throw std::runtime_error("featurize: '" + cfg.paths.events_in + "' holds no events");

  // Ground truth is optional: a missing labels file just leaves the features
  // unlabeled (scoring-only corpora have no labels to join).
  const bool have_labels = std::filesystem::exists(cfg.paths.labels);
  if (have_labels)
    join_labels(sessions, read_labels_file(cfg.paths.labels), /*require_all=*/true);

  const TokenVocab vocab = build_vocab(sessions, cfg.buckets, 1);
  std::vector<FeaturizedSession> feats;
  feats.reserve(sessions.size());
  for (const auto& s : sessions)
    feats.push_back(featurize_session(s, vocab, cfg.buckets, cfg.status, cfg.freq));

  write_features_file(cfg.paths.features_out, feats);
  vocab.save(cfg.paths.vocab);

  std::int64_t clamped = 0;
  for (const auto& f : feats) clamped += f.clamped_count;
  std::printf("featurize: %" PRId64 " events (%zu malformed lines skipped) -> %zu sessions\n",
              static_cast<std::int64_t>(parsed.events.size()), parsed.line_errors.size(),
              feats.size());
  std::printf("featurize: labels %s\n",
              have_labels ? ("joined from '" + cfg.paths.labels + "'").c_str()
                          : ("'" + cfg.paths.labels + "' not found; output is unlabeled").c_str());
  std::printf("featurize: vocabulary of %d tokens (hash %s) -> %s\n", vocab.size(),
              hex64(vocab.hash()).c_str(), cfg.paths.vocab.c_str());
  std::printf("featurize: %" PRId64 " clamped frequency positions\nfeaturize: features -> %s\n",
              clamped, cfg.paths.features_out.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const std::vector<FeaturizedSession> feats = read_features_file(cfg.paths.features_out);
  const TokenVocab vocab = TokenVocab::load(cfg.paths.vocab);
  ModelConfig model_cfg = cfg.model;
  model_cfg.vocab_size = vocab.size();

  auto [train_set, hold_out] = split(feats, cfg.split_ratio, cfg.seed);
  std::printf("train: %zu sessions for training, %zu held out\n", train_set.size(),
              hold_out.size());

  const TrainResult result =
      train(train_set, hold_out, model_cfg, cfg.train, featurization_meta(cfg, vocab));

  save_checkpoint(cfg.paths.checkpoint, result.checkpoint);
  ensure_dir(cfg.paths.reports_dir);
  const std::string log_path = cfg.paths.reports_dir + "/epoch_log.jsonl";
  {
    std::ofstream out = open_out(log_path, "train");
    write_epoch_log_jsonl(out, result.log);
    close_out(out, log_path, "train");
  }

  for (const auto& e : result.log)
    std::printf("train: epoch %" PRId64 "  loss %.6f  val_f1 %.4f\n", e.epoch, e.train_loss,
                e.val.f1);
  std::printf("train: best epoch %" PRId64 " (val_f1 %.4f)\ntrain: checkpoint -> %s\ntrain: "
              "epoch log -> %s\n",
              result.best_epoch, result.best_val_f1, cfg.paths.checkpoint.c_str(),
              log_path.c_str());
  return 0;
}

// Precomputed-score rows for eval: {"score": probability, "label": 0|1}.
std::pair<std::vector<double>, std::vector<std::int32_t>> read_scores_file(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("scores: cannot open '" + path + "'");
  std::vector<double> scores;
  std::vector<std::int32_t> labels;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("score") || !j.contains("label") ||
        !j["score"].is_number() || !j["label"].is_number_integer())
      throw std::runtime_error("scores: line " + std::to_string(line_no) +
                               ": expected {\"score\": number, \"label\": 0|1}");
    const std::int64_t label = j["label"].get<std::int64_t>();
    if (label != 0 && label != 1)
      throw std::runtime_error("scores: line " + std::to_string(line_no) +
                               ": label must be 0 or 1, got " + std::to_string(label));
    scores.push_back(j["score"].get<double>());
    labels.push_back(static_cast<std::int32_t>(label));
  }
  return {std::move(scores), std::move(labels)};
}

// The checkpoint remembers the view settings it was trained with; refuse to
// evaluate features derived under different ones.
void check_featurization(const std::string& meta_json, const RunConfig& cfg) {
  const nlohmann::json meta = nlohmann::json::parse(meta_json);
  if (!meta.contains("featurization")) return;
  const nlohmann::json& feat = meta["featurization"];
  const nlohmann::json active =
      nlohmann::json::parse(featurization_meta(cfg, TokenVocab{}));
  std::string mismatched;
  for (const char* key : {"windows", "h_s", "h_l", "epsilon", "clamp_max"}) {
    if (!feat.contains(key)) continue;
    if (feat[key] != active[key]) {
      if (!mismatched.empty()) mismatched += ", ";
      mismatched += key;
    }
  }
  if (!mismatched.empty())
    throw std::runtime_error(
        "eval: checkpoint was trained under different view settings than the active config: " +
        mismatched);
}

int cmd_eval(const RunConfig& cfg) {
  EvalReport report;
  std::int64_t n_scored = 0;

  if (!cfg.paths.scores_in.empty()) {
    const auto [scores, labels] = read_scores_file(cfg.paths.scores_in);
    if (scores.empty())
      throw std::runtime_error("eval: '" + cfg.paths.scores_in + "' holds no score rows");
    report = metrics(scores, labels, cfg.train.threshold);
    n_scored = static_cast<std::int64_t>(scores.size());
  } else {
    const std::vector<FeaturizedSession> feats = read_features_file(cfg.paths.features_out);
    const TokenVocab vocab = TokenVocab::load(cfg.paths.vocab);
    const Checkpoint ckpt = load_checkpoint(cfg.paths.checkpoint);
    check_featurization(ckpt.meta_json, cfg);

    // Score the same stratified hold-out that training validated against.
    const auto [train_set, hold_out] = split(feats, cfg.split_ratio, cfg.seed);
    const std::vector<double> scores = score(hold_out, ckpt, hex64(vocab.hash()));
    std::vector<std::int32_t> labels;
    labels.reserve(hold_out.size());
    for (const auto& s : hold_out) labels.push_back(s.label);
    report = metrics(scores, labels, cfg.train.threshold);
    n_scored = static_cast<std::int64_t>(hold_out.size());
  }

  const std::string text = report_json(report, n_scored).dump(2) + "\n";
  std::fputs(text.c_str(), stdout);
  ensure_dir(cfg.paths.reports_dir);
  const std::string report_path = cfg.paths.reports_dir + "/eval_report.json";
  std::ofstream out = open_out(report_path, "eval");
  out << text;
  close_out(out, report_path, "eval");
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const std::vector<FeaturizedSession> feats = read_features_file(cfg.paths.features_out);
  const TokenVocab vocab = TokenVocab::load(cfg.paths.vocab);
  ModelConfig model_cfg = cfg.model;
  model_cfg.vocab_size = vocab.size();

  const std::vector<AblationRow> rows =
      ablation_run(feats, model_cfg, cfg.train, featurization_meta(cfg, vocab));

  ensure_dir(cfg.paths.reports_dir);
  const std::string csv_path = cfg.paths.reports_dir + "/ablation.csv";
  {
    std::ofstream out = open_out(csv_path, "ablate");
    write_ablation_csv(out, rows);
    close_out(out, csv_path, "ablate");
  }
  write_ablation_csv(std::cout, rows);
  std::printf("ablate: table -> %s\n", csv_path.c_str());
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  // Fixed probe: the full architecture at its smallest legal footprint, in
  // double precision, dropout off. Only the seed comes from the config.
  ModelConfig probe;
  probe.d_model = 8;
  probe.n_heads = 2;
  probe.n_layers = 2;
  probe.mlp_layers = 3;
  probe.vocab_size = 7;
  probe.max_len = 8;
  probe.dropout = 0.0;

  auto store = ParamStore<double>::init(probe, cfg.seed);
  // The default embedding scale (0.02) leaves some true gradients near the
  // 1e-8 denominator floor of the relative error, where finite-difference
  // rounding noise dominates. Inflating the embedding-side parameters lifts
  // every connected gradient clear of the floor; the comparison itself (step,
  // formula, tolerance) stays untouched.
  for (const char* name : {"token_emb", "pos_emb", "cls_emb", "status_w", "freq_w"})
    for (double& v : store.at(name).data()) v *= 25.0;

  // Two labeled examples, six positions each: CLS + events + one PAD tail.
  Batch batch;
  batch.b = 2;
  batch.t = 6;
  const auto cls = static_cast<std::int32_t>(TokenVocab::kCls);
  const auto pad = static_cast<std::int32_t>(TokenVocab::kPad);
  batch.tokens = {cls, 3, 4, 5, 6, pad, cls, 6, 3, 4, 3, pad};
  batch.status = {0, 1, 2, 3, 0, 0, 0, 3, 2, 1, 0, 0};
  batch.freq = {0.0, 0.5, -0.75, 1.25, -1.0, 0.0, 0.0, 2.0, -0.5, 0.25, 6.0, 0.0};
  batch.mask = {1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0};
  batch.labels = {1, 0};
  batch.validate(probe);

  auto forward = [&]() {
    auto out = model_forward(batch, store, probe, nullptr);
    return bce_loss(out.y_hat, batch);
  };
  const double tolerance = 1e-4;
  const GradCheckReport report = grad_check(store.items, forward, 1e-5);

  std::printf("gradcheck: %" PRId64 " parameter elements checked across %zu tensors\n",
              report.checked, report.per_param.size());
  std::printf("gradcheck: max_rel_err %.3e (tolerance %.0e)\n", report.max_rel_err, tolerance);
  std::printf("gradcheck: worst %s[%" PRId64 "]: analytic %.9e vs numeric %.9e\n",
              report.worst_param.c_str(), report.worst_index, report.worst_analytic,
              report.worst_numeric);
  const bool ok = report.pass(tolerance);
  std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view behavioral anomaly detection over event logs"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
    CLI::App* cmd = nullptr;
  };
  Sub subs[] = {
      {"gen", "write a synthetic labeled event log", cmd_gen},
      {"featurize", "parse, sessionize and derive views from an event log", cmd_featurize},
      {"train", "train the gated-attention classifier on featurized sessions", cmd_train},
      {"eval", "score the hold-out split (or a scores file) and report metrics", cmd_eval},
      {"ablate", "train the full model and its four ablations, emit the table", cmd_ablate},
      {"gradcheck", "compare analytic gradients against finite differences", cmd_gradcheck},
  };
  for (auto& sub : subs) {
    sub.cmd = app.add_subcommand(sub.name, sub.help);
    sub.cmd->add_option("-c,--config", config_path,
                        "run configuration file (JSON, // comments allowed); "
                        "defaults apply when omitted");
    sub.cmd->add_option("--set", overrides,
                        "override one config leaf as dotted.path=value (repeatable)");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (config_path.empty()) {
      std::string text = run_config_to_json(RunConfig{});
      for (const auto& spec : overrides) apply_config_override(text, spec);
      cfg = run_config_from_json(text);
      cfg.validate();
    } else {
      cfg = load_run_config(config_path, overrides);
    }
    for (const auto& sub : subs)
      if (sub.cmd->parsed()) return sub.run(cfg);
    return 1;  // unreachable: require_subcommand(1)
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
