#pragma once

#include <stdexcept>
#include <string>

#include "mvad/errors.hpp"
#include "mvad/model.hpp"

namespace mvad {

// A trained model: float parameters plus an opaque JSON metadata block
// (model config, featurization fingerprint, selection info).
struct Checkpoint {
  std::string meta_json = "{}";
  ParamStore<float> params;
};

// Binary container described in docs/checkpoint_format.md. Writing the same
// checkpoint twice produces byte-identical files.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ModelConfig <-> JSON text, used by the checkpoint metadata and the CLI.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace mvad
