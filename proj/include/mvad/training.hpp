#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mvad/checkpoint.hpp"
#include "mvad/features.hpp"
#include "mvad/model.hpp"

namespace mvad {

// Optimizer and loop hyperparameters. lr = 0 is allowed and performs exact
// null updates, which the tests rely on.
struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 16;
  std::int64_t max_len = 128;
  std::uint64_t seed = 42;
  double threshold = 0.5;

  void validate() const;
};

// Confusion counts and the derived ratios at a fixed threshold. A ratio whose
// denominator is zero is reported as 0 with its `_defined` flag cleared,
// so tables never carry silent NaNs.
struct EvalReport {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double recall = 0.0, precision = 0.0, accuracy = 0.0, f1 = 0.0;
  bool recall_defined = true, precision_defined = true, f1_defined = true;
};

// Deterministic stratified split: each label class is shuffled by a seed
// substream and divided so both sides hold at least one example of it.
std::pair<std::vector<FeaturizedSession>, std::vector<FeaturizedSession>> split(
    const std::vector<FeaturizedSession>& dataset, double ratio, std::uint64_t seed);

// Stratified k-fold partition; fold i is the validation set of pair i and
// every example validates exactly once.
std::vector<std::pair<std::vector<FeaturizedSession>, std::vector<FeaturizedSession>>> kfold(
    const std::vector<FeaturizedSession>& dataset, std::int64_t k, std::uint64_t seed);

// Pads/truncates featurized sessions into fixed-shape batches: CLS prepended,
// sequences longer than max_len-1 keep their most recent events, PAD fills the
// tail. Empty sessions are skipped with a warning on stderr. Labels are
// attached only when every session in the batch carries one.
std::vector<Batch> make_batches(const std::vector<FeaturizedSession>& sessions,
                                std::int64_t max_len, std::int64_t batch_size);

// Adam first/second moment buffers, one pair per parameter tensor.
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;

  static AdamState for_params(const ParamStore<float>& params);
};

// One Adam update from the gradients currently stored on the parameters.
void adam_step(ParamStore<float>& params, AdamState& state, const TrainConfig& cfg);

struct EpochLog {
  std::int64_t epoch = 0;     // 1-based
  double train_loss = 0.0;    // example-weighted mean BCE over the epoch
  EvalReport val;
};

struct TrainResult {
  Checkpoint checkpoint;       // parameters from the best-val-F1 epoch
  std::vector<EpochLog> log;   // one entry per epoch
  std::int64_t best_epoch = 0; // 1-based epoch the checkpoint was taken from
  double best_val_f1 = 0.0;
};

// Full training loop: Adam over shuffled batches, per-epoch validation
// metrics, best-F1 checkpointing. Deterministic given (data, configs, seed).
// `featurization_meta_json` is embedded verbatim in the checkpoint metadata
// under "featurization" (pass "{}" when not applicable).
TrainResult train(const std::vector<FeaturizedSession>& train_set,
                  const std::vector<FeaturizedSession>& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::string& featurization_meta_json = "{}");

// Probability per session under a loaded checkpoint. When
// `expected_vocab_hash` is non-empty it must equal the hash recorded in the
// checkpoint metadata, otherwise scoring refuses to run.
std::vector<double> score(const std::vector<FeaturizedSession>& sessions, const Checkpoint& ckpt,
                          const std::string& expected_vocab_hash = "");

// Confusion counts of y_hat >= threshold against 0/1 labels.
EvalReport metrics(const std::vector<double>& y_hat, const std::vector<std::int32_t>& labels,
                   double threshold);

struct AblationRow {
  std::string variant;
  EvalReport report;
};

// Trains the full model and the four single-component ablations on one shared
// split/seed; each row reports the variant's best-epoch validation metrics.
std::vector<AblationRow> ablation_run(const std::vector<FeaturizedSession>& dataset,
                                      const ModelConfig& base_cfg, const TrainConfig& train_cfg,
                                      const std::string& featurization_meta_json = "{}");

// One JSONL object per epoch:
// {"epoch":..,"train_loss":..,"val_recall":..,"val_precision":..,"val_accuracy":..,"val_f1":..}
void write_epoch_log_jsonl(std::ostream& out, const std::vector<EpochLog>& log);

// CSV with header variant,recall,precision,accuracy,f1.
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace mvad
