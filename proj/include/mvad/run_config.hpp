#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvad/datagen.hpp"
#include "mvad/model.hpp"
#include "mvad/pipeline.hpp"
#include "mvad/training.hpp"
#include "mvad/views.hpp"

namespace mvad {

// Every file a subcommand reads or writes; relative paths resolve against the
// process working directory.
struct RunPaths {
  std::string events_in = "events.jsonl";      // gen writes, featurize reads
  std::string labels = "labels.jsonl";         // gen writes, featurize joins
  std::string features_out = "features.jsonl"; // featurize writes, train/eval read
  std::string vocab = "vocab.txt";             // featurize writes, eval checks
  std::string checkpoint = "model.ckpt";       // train writes, eval reads
  std::string reports_dir = "reports";         // epoch log, ablation table, eval report
  std::string scores_in;                       // optional: eval precomputed {score,label} rows
};

// The whole run, one declarative tree: JSON with // comments allowed, every
// leaf overridable from the command line as dotted.path=value.
//
// One seed rules everything: the top-level value is copied into the training
// and generator configs after parsing, and model.max_len is copied into
// train.max_len, so the file cannot contradict itself. Those mirrored fields
// (and model.vocab_size, which is read from the vocabulary at train time) are
// deliberately absent from the file schema.
struct RunConfig {
  std::uint64_t seed = 42;
  std::int64_t gap_seconds = 1800;  // session split threshold, seconds
  double split_ratio = 0.8;         // stratified train share; the rest evaluates
  TimeBucketRule buckets;
  StatusConfig status;
  FreqConfig freq;
  ModelConfig model;
  TrainConfig train;
  GenSpec gen;
  RunPaths paths;

  void validate() const;
};

// Serializes every schema field in a fixed order; parse(to_json(c)) == c.
std::string run_config_to_json(const RunConfig& cfg);

// Strict parse: absent keys keep their defaults, unknown keys are a hard
// error listing every offender by dotted path. // and /* */ comments allowed.
RunConfig run_config_from_json(const std::string& text);

// Applies one dotted.path=value override to a parsed JSON tree; the value is
// itself parsed as JSON when possible and taken as a bare string otherwise.
void apply_config_override(std::string& json_text, const std::string& override_spec);

// File load + overrides + strict parse + validation, the CLI entry point.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace mvad
