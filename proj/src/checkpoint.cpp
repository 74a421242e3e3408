#include "mvad/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "json.hpp"

namespace mvad {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i64(std::string& out, std::int64_t v) {
  const std::uint64_t u = static_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u32(out, bits);
}

// Cursor over the loaded file; every read checks the remaining length so a
// truncated file fails with a message instead of running off the buffer.
struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string("checkpoint: truncated file while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::int64_t i64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return static_cast<std::int64_t>(v);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.meta_json.size()));
  out.append(ckpt.meta_json);
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.items.size()));
  for (const auto& [name, tensor] : ckpt.params.items) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(kDtypeF32));
    put_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
    for (std::int64_t d : tensor.shape()) put_i64(out, d);
  }
  for (const auto& [name, tensor] : ckpt.params.items)
    for (float v : tensor.data()) put_f32(out, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("checkpoint: failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};

  const std::string magic = r.bytes(sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32("format version");
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version) +
                             ", expected " + std::to_string(kFormatVersion));

  Checkpoint ckpt;
  const std::uint32_t meta_len = r.u32("metadata length");
  ckpt.meta_json = r.bytes(meta_len, "metadata");

  struct Entry {
    std::string name;
    Shape shape;
  };
  const std::uint32_t n_tensors = r.u32("tensor count");
  std::vector<Entry> directory;
  directory.reserve(n_tensors);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Entry e;
    const std::uint32_t name_len = r.u32("tensor name length");
    e.name = r.bytes(name_len, "tensor name");
    r.need(1, "tensor dtype");
    const std::uint8_t dtype = static_cast<std::uint8_t>(buf[r.pos++]);
    if (dtype != kDtypeF32)
      throw std::runtime_error("checkpoint: tensor '" + e.name + "' has unsupported dtype " +
                               std::to_string(dtype));
    const std::uint32_t rank = r.u32("tensor rank");
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.i64("tensor dim"));
    directory.push_back(std::move(e));
  }
  for (auto& e : directory) {
    const std::int64_t n = shape_numel(e.shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = r.f32("tensor payload");
    ckpt.params.add(e.name, Tensor<float>(std::move(e.shape), std::move(data), true));
  }
  if (r.pos != buf.size())
    throw std::runtime_error("checkpoint: " + std::to_string(buf.size() - r.pos) +
                             " trailing bytes after the last tensor payload");
  return ckpt;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["n_layers"] = cfg.n_layers;
  j["mlp_layers"] = cfg.mlp_layers;
  j["vocab_size"] = cfg.vocab_size;
  j["max_len"] = cfg.max_len;
  j["gate_enabled"] = cfg.gate_enabled;
  j["status_enabled"] = cfg.status_enabled;
  j["freq_enabled"] = cfg.freq_enabled;
  j["fusion_enabled"] = cfg.fusion_enabled;
  j["dropout"] = cfg.dropout;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("model config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("model config: expected a JSON object");
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<std::int64_t>();
    cfg.n_heads = j.at("n_heads").get<std::int64_t>();
    cfg.n_layers = j.at("n_layers").get<std::int64_t>();
    cfg.mlp_layers = j.at("mlp_layers").get<std::int64_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::int64_t>();
    cfg.max_len = j.at("max_len").get<std::int64_t>();
    cfg.gate_enabled = j.at("gate_enabled").get<bool>();
    cfg.status_enabled = j.at("status_enabled").get<bool>();
    cfg.freq_enabled = j.at("freq_enabled").get<bool>();
    cfg.fusion_enabled = j.at("fusion_enabled").get<bool>();
    cfg.dropout = j.at("dropout").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace mvad
