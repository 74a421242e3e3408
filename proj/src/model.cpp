#include "mvad/model.hpp"

#include <stdexcept>
#include <string>

namespace mvad {

void ModelConfigValidateImpl(const ModelConfig& cfg) {
  if (cfg.d_model <= 0 || cfg.d_model % 2 != 0)
    throw std::invalid_argument("model config: d_model must be a positive even integer, got " +
                                std::to_string(cfg.d_model));
  if (cfg.n_heads <= 0 || cfg.d_model % cfg.n_heads != 0)
    throw std::invalid_argument("model config: n_heads must be positive and divide d_model, got " +
                                std::to_string(cfg.n_heads) + " for d_model " +
                                std::to_string(cfg.d_model));
  if (cfg.n_layers <= 0)
    throw std::invalid_argument("model config: n_layers must be positive, got " +
                                std::to_string(cfg.n_layers));
  if (cfg.mlp_layers <= 0)
    throw std::invalid_argument("model config: mlp_layers must be positive, got " +
                                std::to_string(cfg.mlp_layers));
  if (cfg.vocab_size <= static_cast<std::int64_t>(TokenVocab::kReserved))
    throw std::invalid_argument("model config: vocab_size must exceed the " +
                                std::to_string(TokenVocab::kReserved) +
                                " reserved ids, got " + std::to_string(cfg.vocab_size));
  if (cfg.max_len < 2)
    throw std::invalid_argument("model config: max_len must be at least 2 (CLS plus one event)");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
    throw std::invalid_argument("model config: dropout must lie in [0, 1), got " +
                                std::to_string(cfg.dropout));
}

void BatchValidateImpl(const Batch& batch, const ModelConfig& cfg) {
  if (batch.b <= 0 || batch.t <= 0)
    throw std::invalid_argument("batch: dimensions must be positive, got b=" +
                                std::to_string(batch.b) + " t=" + std::to_string(batch.t));
  if (batch.t > cfg.max_len)
    throw std::invalid_argument("batch: t=" + std::to_string(batch.t) +
                                " exceeds max_len=" + std::to_string(cfg.max_len));
  const std::size_t n = static_cast<std::size_t>(batch.b * batch.t);
  if (batch.tokens.size() != n || batch.status.size() != n || batch.freq.size() != n ||
      batch.mask.size() != n)
    throw std::invalid_argument("batch: tokens/status/freq/mask must all hold b*t entries");
  if (!batch.labels.empty() && batch.labels.size() != static_cast<std::size_t>(batch.b))
    throw std::invalid_argument("batch: labels must be empty or hold one entry per example");
  for (std::int64_t i = 0; i < batch.b; ++i) {
    for (std::int64_t j = 0; j < batch.t; ++j) {
      const std::size_t k = static_cast<std::size_t>(i * batch.t + j);
      const std::int32_t tok = batch.tokens[k];
      if (tok < 0 || tok >= cfg.vocab_size)
        throw std::invalid_argument("batch: token id " + std::to_string(tok) + " at example " +
                                    std::to_string(i) + " position " + std::to_string(j) +
                                    " is outside the vocabulary of size " +
                                    std::to_string(cfg.vocab_size));
      if (batch.status[k] < 0)
        throw std::invalid_argument("batch: negative status value at example " +
                                    std::to_string(i) + " position " + std::to_string(j));
      if (j == 0) {
        if (tok != static_cast<std::int32_t>(TokenVocab::kCls) || batch.mask[k] == 0)
          throw std::invalid_argument("batch: example " + std::to_string(i) +
                                      " must carry an unmasked CLS token at position 0");
        if (batch.status[k] != 0 || batch.freq[k] != 0.0)
          throw std::invalid_argument("batch: example " + std::to_string(i) +
                                      " must carry zero status/freq scalars at the CLS position");
      } else if (batch.mask[k] == 0) {
        if (tok != static_cast<std::int32_t>(TokenVocab::kPad))
          throw std::invalid_argument("batch: masked position " + std::to_string(j) +
                                      " of example " + std::to_string(i) +
                                      " must hold the PAD token");
        if (batch.status[k] != 0 || batch.freq[k] != 0.0)
          throw std::invalid_argument("batch: masked position " + std::to_string(j) +
                                      " of example " + std::to_string(i) +
                                      " must carry zero status/freq scalars");
      }
      if (batch.mask[k] != 0 && j > 0 &&
          batch.mask[static_cast<std::size_t>(i * batch.t + j - 1)] == 0)
        throw std::invalid_argument("batch: example " + std::to_string(i) +
                                    " has a real event after padding at position " +
                                    std::to_string(j));
    }
    if (!batch.labels.empty()) {
      const std::int32_t y = batch.labels[static_cast<std::size_t>(i)];
      if (y != 0 && y != 1)
        throw std::invalid_argument("batch: label for example " + std::to_string(i) +
                                    " must be 0 or 1, got " + std::to_string(y));
    }
  }
}

}  // namespace mvad
