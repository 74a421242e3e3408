#include "mvad/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "mvad/rng.hpp"

namespace mvad {

namespace {

constexpr double kAdamEps = 1e-8;
// Evaluation batch size is a fixed constant (not the training batch size) so
// validation metrics and post-hoc scoring batch the data identically.
constexpr std::int64_t kEvalBatch = 64;

// %.9g covers every float32 exactly and keeps doubles stable on re-read;
// matches the features writer so all emitted numbers look alike.
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Indices of each label class, in dataset order. Throws unless every session
// is labeled 0/1.
std::map<std::int32_t, std::vector<std::size_t>> indices_by_class(
    const std::vector<FeaturizedSession>& dataset, const char* op) {
  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::int32_t label = dataset[i].label;
    if (label != 0 && label != 1)
      throw std::invalid_argument(std::string(op) + ": session " + std::to_string(i) +
                                  " (user '" + dataset[i].user + "') has label " +
                                  std::to_string(label) + ", expected 0 or 1");
    by_class[label].push_back(i);
  }
  return by_class;
}

std::vector<FeaturizedSession> take(const std::vector<FeaturizedSession>& dataset,
                                    std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  std::vector<FeaturizedSession> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(dataset[i]);
  return out;
}

EvalReport evaluate_params(const ParamStore<float>& params,
                           const std::vector<FeaturizedSession>& sessions,
                           const ModelConfig& cfg, double threshold);

}  // namespace

void TrainConfig::validate() const {
  if (lr < 0.0)
    throw std::invalid_argument("train config: lr must be non-negative, got " +
                                std::to_string(lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train config: betas must lie in [0, 1), got (" +
                                std::to_string(beta1) + ", " + std::to_string(beta2) + ")");
  if (weight_decay < 0.0)
    throw std::invalid_argument("train config: weight_decay must be non-negative");
  if (epochs <= 0)
    throw std::invalid_argument("train config: epochs must be positive, got " +
                                std::to_string(epochs));
  if (batch_size <= 0)
    throw std::invalid_argument("train config: batch_size must be positive, got " +
                                std::to_string(batch_size));
  if (max_len < 2)
    throw std::invalid_argument("train config: max_len must be at least 2, got " +
                                std::to_string(max_len));
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("train config: threshold must lie in [0, 1], got " +
                                std::to_string(threshold));
}

std::pair<std::vector<FeaturizedSession>, std::vector<FeaturizedSession>> split(
    const std::vector<FeaturizedSession>& dataset, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("split: ratio must lie strictly in (0, 1), got " +
                                std::to_string(ratio));
  auto by_class = indices_by_class(dataset, "split");
  for (const auto& [label, idx] : by_class)
    if (idx.size() < 2)
      throw std::invalid_argument("split: label class " + std::to_string(label) + " has only " +
                                  std::to_string(idx.size()) +
                                  " example(s); need at least 2 to stratify");
  if (by_class.size() < 2)
    throw std::invalid_argument("split: dataset holds only label class " +
                                std::to_string(by_class.begin()->first) +
                                "; cannot stratify a single-class dataset");

  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [label, idx] : by_class) {
    Rng rng = Rng::derive(seed, "split", static_cast<std::uint64_t>(label));
    rng.shuffle(idx);
    const double want = ratio * static_cast<double>(idx.size());
    std::int64_t n_train = std::llround(want);
    n_train = std::clamp<std::int64_t>(n_train, 1, static_cast<std::int64_t>(idx.size()) - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (static_cast<std::int64_t>(i) < n_train ? train_idx : test_idx).push_back(idx[i]);
  }
  return {take(dataset, std::move(train_idx)), take(dataset, std::move(test_idx))};
}

std::vector<std::pair<std::vector<FeaturizedSession>, std::vector<FeaturizedSession>>> kfold(
    const std::vector<FeaturizedSession>& dataset, std::int64_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be at least 2, got " + std::to_string(k));
  auto by_class = indices_by_class(dataset, "kfold");
  for (const auto& [label, idx] : by_class)
    if (static_cast<std::int64_t>(idx.size()) < k)
      throw std::invalid_argument("kfold: label class " + std::to_string(label) + " has " +
                                  std::to_string(idx.size()) + " example(s), fewer than k=" +
                                  std::to_string(k));

  // Deal each class round-robin into k buckets after a seeded shuffle.
  std::vector<std::vector<std::size_t>> fold_idx(static_cast<std::size_t>(k));
  for (auto& [label, idx] : by_class) {
    Rng rng = Rng::derive(seed, "kfold", static_cast<std::uint64_t>(label));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
      fold_idx[i % static_cast<std::size_t>(k)].push_back(idx[i]);
  }

  std::vector<std::pair<std::vector<FeaturizedSession>, std::vector<FeaturizedSession>>> out;
  for (std::int64_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train_idx;
    for (std::int64_t g = 0; g < k; ++g)
      if (g != f)
        train_idx.insert(train_idx.end(), fold_idx[static_cast<std::size_t>(g)].begin(),
                         fold_idx[static_cast<std::size_t>(g)].end());
    out.emplace_back(take(dataset, std::move(train_idx)),
                     take(dataset, fold_idx[static_cast<std::size_t>(f)]));
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<FeaturizedSession>& sessions,
                                std::int64_t max_len, std::int64_t batch_size) {
  if (max_len < 2)
    throw std::invalid_argument("make_batches: max_len must be at least 2, got " +
                                std::to_string(max_len));
  if (batch_size <= 0)
    throw std::invalid_argument("make_batches: batch_size must be positive, got " +
                                std::to_string(batch_size));

  std::vector<const FeaturizedSession*> kept;
  for (const auto& s : sessions) {
    if (s.z.empty()) {
      std::fprintf(stderr, "warning: skipping empty session for user '%s'\n", s.user.c_str());
      continue;
    }
    if (s.z.size() != s.s.size() || s.z.size() != s.f.size())
      throw std::invalid_argument("make_batches: session for user '" + s.user +
                                  "' has misaligned view lengths");
    kept.push_back(&s);
  }

  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < kept.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(kept.size(), begin + static_cast<std::size_t>(batch_size));
    Batch batch;
    batch.b = static_cast<std::int64_t>(end - begin);
    batch.t = max_len;
    const std::size_t n = static_cast<std::size_t>(batch.b * batch.t);
    batch.tokens.assign(n, static_cast<std::int32_t>(TokenVocab::kPad));
    batch.status.assign(n, 0);
    batch.freq.assign(n, 0.0);
    batch.mask.assign(n, 0);
    bool all_labeled = true;
    std::vector<std::int32_t> labels;
    for (std::size_t i = begin; i < end; ++i) {
      const FeaturizedSession& s = *kept[i];
      const std::size_t row = (i - begin) * static_cast<std::size_t>(max_len);
      batch.tokens[row] = static_cast<std::int32_t>(TokenVocab::kCls);
      batch.mask[row] = 1;
      // Keep the most recent events when the session exceeds the window.
      const std::size_t budget = static_cast<std::size_t>(max_len - 1);
      const std::size_t start = s.z.size() > budget ? s.z.size() - budget : 0;
      for (std::size_t j = start; j < s.z.size(); ++j) {
        const std::size_t at = row + 1 + (j - start);
        batch.tokens[at] = s.z[j];
        batch.status[at] = s.s[j];
        batch.freq[at] = s.f[j];
        batch.mask[at] = 1;
      }
      if (s.label == 0 || s.label == 1)
        labels.push_back(s.label);
      else
        all_labeled = false;
    }
    if (all_labeled) batch.labels = std::move(labels);
    batches.push_back(std::move(batch));
  }
  return batches;
}

AdamState AdamState::for_params(const ParamStore<float>& params) {
  AdamState state;
  for (const auto& [name, t] : params.items) {
    state.m.emplace_back(t.data().size(), 0.0f);
    state.v.emplace_back(t.data().size(), 0.0f);
  }
  return state;
}

void adam_step(ParamStore<float>& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.size() != params.items.size())
    throw std::invalid_argument("adam_step: state was built for a different parameter set");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.items.size(); ++p) {
    auto& tensor = params.items[p].second;
    const auto& grad = tensor.grad();
    auto& data = tensor.data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < data.size(); ++i) {
      double g = static_cast<double>(grad[i]);
      if (cfg.weight_decay > 0.0) g += cfg.weight_decay * static_cast<double>(data[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + kAdamEps);
      data[i] = static_cast<float>(static_cast<double>(data[i]) - update);
    }
    tensor.check_finite("adam_step");
  }
}

namespace {

EvalReport evaluate_params(const ParamStore<float>& params,
                           const std::vector<FeaturizedSession>& sessions,
                           const ModelConfig& cfg, double threshold) {
  std::vector<double> y_hat;
  std::vector<std::int32_t> labels;
  for (const Batch& batch : make_batches(sessions, cfg.max_len, kEvalBatch)) {
    auto out = model_forward(batch, params, cfg, nullptr);
    for (std::int64_t i = 0; i < batch.b; ++i)
      y_hat.push_back(static_cast<double>(out.y_hat.data()[static_cast<std::size_t>(i)]));
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  return metrics(y_hat, labels, threshold);
}

}  // namespace

TrainResult train(const std::vector<FeaturizedSession>& train_set,
                  const std::vector<FeaturizedSession>& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::string& featurization_meta_json) {
  model_cfg.validate();
  train_cfg.validate();
  if (train_cfg.max_len != model_cfg.max_len)
    throw std::invalid_argument("train: train config max_len " +
                                std::to_string(train_cfg.max_len) +
                                " differs from model max_len " +
                                std::to_string(model_cfg.max_len));
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  auto by_class = indices_by_class(train_set, "train");
  if (by_class.size() < 2)
    throw std::invalid_argument("train: training set holds a single label class; "
                                "both classes are required");
  indices_by_class(val_set, "train (validation set)");

  nlohmann::json feat_meta;
  try {
    feat_meta = nlohmann::json::parse(featurization_meta_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("train: featurization metadata is not valid JSON: ") +
                                e.what());
  }

  ParamStore<float> params = ParamStore<float>::init(model_cfg, train_cfg.seed);
  AdamState adam = AdamState::for_params(params);

  TrainResult result;
  double best_f1 = -1.0;
  ParamStore<float> best_params;

  for (std::int64_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng = Rng::derive(train_cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(order);
    std::vector<FeaturizedSession> shuffled;
    shuffled.reserve(order.size());
    for (std::size_t i : order) shuffled.push_back(train_set[i]);

    double loss_sum = 0.0;
    std::int64_t example_count = 0;
    const auto batches = make_batches(shuffled, train_cfg.max_len, train_cfg.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      Rng dropout_rng = Rng::derive(train_cfg.seed, "dropout", static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(bi));
      Rng* rng = model_cfg.dropout > 0.0 ? &dropout_rng : nullptr;
      auto out = model_forward(batch, params, model_cfg, rng);
      Tensor<float> loss = bce_loss(out.y_hat, batch);
      const double loss_value = static_cast<double>(loss.data()[0]);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(bi));
      backward(loss);
      adam_step(params, adam, train_cfg);
      params.zero_grad();
      loss_sum += loss_value * static_cast<double>(batch.b);
      example_count += batch.b;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = example_count > 0 ? loss_sum / static_cast<double>(example_count) : 0.0;
    entry.val = evaluate_params(params, val_set, model_cfg, train_cfg.threshold);
    result.log.push_back(entry);

    if (entry.val.f1 > best_f1) {
      best_f1 = entry.val.f1;
      result.best_epoch = epoch;
      best_params = ParamStore<float>{};
      for (const auto& [name, t] : params.items)
        best_params.add(name, Tensor<float>(t.shape(), t.data(), true));
    }
  }

  result.best_val_f1 = best_f1;
  nlohmann::ordered_json meta;
  meta["format"] = 1;
  meta["model"] = nlohmann::ordered_json::parse(model_config_to_json(model_cfg));
  meta["featurization"] = feat_meta;
  meta["threshold"] = train_cfg.threshold;
  meta["best_epoch"] = result.best_epoch;
  meta["best_val_f1"] = result.best_val_f1;
  result.checkpoint.meta_json = meta.dump();
  result.checkpoint.params = std::move(best_params);
  return result;
}

std::vector<double> score(const std::vector<FeaturizedSession>& sessions, const Checkpoint& ckpt,
                          const std::string& expected_vocab_hash) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.meta_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("score: checkpoint metadata is not valid JSON: ") +
                             e.what());
  }
  if (!meta.contains("model"))
    throw std::runtime_error("score: checkpoint metadata has no \"model\" block");
  const ModelConfig cfg = model_config_from_json(meta["model"].dump());

  if (!expected_vocab_hash.empty()) {
    const std::string recorded =
        meta.contains("featurization") && meta["featurization"].contains("vocab_hash")
            ? meta["featurization"]["vocab_hash"].get<std::string>()
            : "";
    if (recorded != expected_vocab_hash)
      throw std::runtime_error("score: vocabulary hash mismatch: checkpoint built with '" +
                               recorded + "', input featurized with '" + expected_vocab_hash +
                               "' - refusing to score");
  }

  for (std::size_t i = 0; i < sessions.size(); ++i)
    if (sessions[i].z.empty())
      throw std::invalid_argument("score: session " + std::to_string(i) + " (user '" +
                                  sessions[i].user + "') has no events");

  std::vector<double> y_hat;
  y_hat.reserve(sessions.size());
  for (const Batch& batch : make_batches(sessions, cfg.max_len, kEvalBatch)) {
    auto out = model_forward(batch, ckpt.params, cfg, nullptr);
    for (std::int64_t i = 0; i < batch.b; ++i)
      y_hat.push_back(static_cast<double>(out.y_hat.data()[static_cast<std::size_t>(i)]));
  }
  return y_hat;
}

EvalReport metrics(const std::vector<double>& y_hat, const std::vector<std::int32_t>& labels,
                   double threshold) {
  if (y_hat.size() != labels.size())
    throw std::invalid_argument("metrics: got " + std::to_string(y_hat.size()) +
                                " scores but " + std::to_string(labels.size()) + " labels");
  if (y_hat.empty()) throw std::invalid_argument("metrics: empty input");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("metrics: threshold must lie in [0, 1], got " +
                                std::to_string(threshold));

  EvalReport r;
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("metrics: label at index " + std::to_string(i) +
                                  " must be 0 or 1, got " + std::to_string(labels[i]));
    const bool predicted = y_hat[i] >= threshold;
    const bool actual = labels[i] == 1;
    if (predicted && actual)
      ++r.tp;
    else if (predicted && !actual)
      ++r.fp;
    else if (!predicted && actual)
      ++r.fn;
    else
      ++r.tn;
  }
  if (r.tp + r.fn > 0)
    r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  else
    r.recall_defined = false;
  if (r.tp + r.fp > 0)
    r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  else
    r.precision_defined = false;
  r.accuracy = static_cast<double>(r.tp + r.tn) /
               static_cast<double>(r.tp + r.fp + r.tn + r.fn);
  if (r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else
    r.f1_defined = false;
  return r;
}

std::vector<AblationRow> ablation_run(const std::vector<FeaturizedSession>& dataset,
                                      const ModelConfig& base_cfg, const TrainConfig& train_cfg,
                                      const std::string& featurization_meta_json) {
  auto [train_set, test_set] = split(dataset, 0.8, train_cfg.seed);

  std::vector<std::pair<std::string, ModelConfig>> variants;
  variants.emplace_back("full", base_cfg);
  ModelConfig wo_status = base_cfg;
  wo_status.status_enabled = false;
  variants.emplace_back("wo-status", wo_status);
  ModelConfig wo_freq = base_cfg;
  wo_freq.freq_enabled = false;
  variants.emplace_back("wo-frequency", wo_freq);
  ModelConfig wo_fusion = base_cfg;
  wo_fusion.fusion_enabled = false;
  variants.emplace_back("wo-fusion", wo_fusion);
  ModelConfig wo_gate = base_cfg;
  wo_gate.gate_enabled = false;
  variants.emplace_back("wo-gating", wo_gate);

  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants) {
    TrainResult result = train(train_set, test_set, cfg, train_cfg, featurization_meta_json);
    rows.push_back({name, result.log[static_cast<std::size_t>(result.best_epoch - 1)].val});
  }
  return rows;
}

void write_epoch_log_jsonl(std::ostream& out, const std::vector<EpochLog>& log) {
  for (const EpochLog& e : log) {
    out << "{\"epoch\":" << e.epoch << ",\"train_loss\":" << fmt_double(e.train_loss)
        << ",\"val_recall\":" << fmt_double(e.val.recall)
        << ",\"val_precision\":" << fmt_double(e.val.precision)
        << ",\"val_accuracy\":" << fmt_double(e.val.accuracy)
        << ",\"val_f1\":" << fmt_double(e.val.f1) << "}\n";
  }
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,recall,precision,accuracy,f1\n";
  for (const AblationRow& row : rows) {
    out << row.variant << ',' << fmt_double(row.report.recall) << ','
        << fmt_double(row.report.precision) << ',' << fmt_double(row.report.accuracy) << ','
        << fmt_double(row.report.f1) << "\n";
  }
}

}  // namespace mvad
