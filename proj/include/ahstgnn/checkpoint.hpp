#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ahstgnn/common.hpp"
#include "ahstgnn/model.hpp"
#include "ahstgnn/tensor.hpp"

namespace ahst {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

// Checkpoint layout:
//   "AHST" | version u32 LE | header_len u64 LE | header JSON | f64 payload
// The header lists every tensor with its shape and byte offset into the
// payload, the structural model fields, the config hash, and (optionally)
// the serialized optimizer state. Round trips are bit-exact.
inline constexpr uint32_t kCheckpointVersion = 1;

struct StructuralFields {
  int64_t n_nodes = 0, input_len = 0, horizon = 0, n_features = 0, hidden = 0, n_blocks = 0;

  bool operator==(const StructuralFields&) const = default;
};

inline StructuralFields structural_fields(const ModelConfig& cfg) {
  return {cfg.n_nodes, cfg.input_len, cfg.horizon, cfg.n_features, cfg.hidden, cfg.n_blocks};
}

namespace detail {

inline void append_u32(std::string& buf, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

inline void append_u64(std::string& buf, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ModelParams& params, const ModelConfig& cfg,
                            const std::string& config_hash, const TrainState* train_state = nullptr,
                            const Normalizer* norm = nullptr) {
  nlohmann::json header;
  header["config_hash"] = config_hash;
  header["ablation"] = ablation_name(cfg.ablation);
  const StructuralFields sf = structural_fields(cfg);
  header["structural"] = {{"n_nodes", sf.n_nodes},   {"input_len", sf.input_len},
                          {"horizon", sf.horizon},   {"n_features", sf.n_features},
                          {"hidden", sf.hidden},     {"n_blocks", sf.n_blocks}};

  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& name, const Shape& shape, const std::vector<double>& values) {
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = shape;
    t["offset"] = payload.size();
    tensors.push_back(std::move(t));
    const size_t bytes = values.size() * sizeof(double);
    const size_t at = payload.size();
    payload.resize(at + bytes);
    std::memcpy(payload.data() + at, values.data(), bytes);
  };
  params.for_each_param([&](const std::string& name, Tensor& t) { put(name, t.shape(), t.values()); });
  if (norm) {
    put("norm.mean", {static_cast<int64_t>(norm->mean.size())}, norm->mean);
    put("norm.std", {static_cast<int64_t>(norm->std.size())}, norm->std);
  }
  if (train_state) {
    nlohmann::json ts;
    ts["step"] = train_state->adam.step;
    ts["rng_state"] = train_state->rng_state;
    ts["epochs_done"] = train_state->epochs_done;
    header["train_state"] = std::move(ts);
    for (size_t i = 0; i < train_state->adam.names.size(); ++i) {
      put("adam.m." + train_state->adam.names[i], {static_cast<int64_t>(train_state->adam.m[i].size())},
          train_state->adam.m[i]);
      put("adam.v." + train_state->adam.names[i], {static_cast<int64_t>(train_state->adam.v[i].size())},
          train_state->adam.v[i]);
    }
  }
  header["tensors"] = std::move(tensors);

  const std::string hs = header.dump();
  std::string out = "AHST";
  detail::append_u32(out, kCheckpointVersion);
  detail::append_u64(out, hs.size());
  out += hs;
  out += payload;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to checkpoint '" + path + "'");
}

struct Checkpoint {
  std::string config_hash;
  std::string ablation;
  StructuralFields structural;
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  auto truncated = [&] { throw IoError("checkpoint '" + path + "' is truncated or corrupt"); };
  if (data.size() < 16) truncated();
  if (data.compare(0, 4, "AHST") != 0) {
    throw IoError("checkpoint '" + path + "' has bad magic bytes");
  }
  uint32_t version = 0;
  std::memcpy(&version, data.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  uint64_t header_len = 0;
  std::memcpy(&header_len, data.data() + 8, 8);
  if (header_len > data.size() || 16 + header_len > data.size()) truncated();

  Checkpoint cp;
  try {
    cp.header = nlohmann::json::parse(data.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a corrupt header: " + e.what());
  }
  cp.config_hash = cp.header.value("config_hash", "");
  cp.ablation = cp.header.value("ablation", "full");
  const auto& sj = cp.header.at("structural");
  cp.structural = {sj.at("n_nodes"), sj.at("input_len"), sj.at("horizon"),
                   sj.at("n_features"), sj.at("hidden"), sj.at("n_blocks")};

  const size_t payload_at = 16 + header_len;
  for (const auto& tj : cp.header.at("tensors")) {
    const std::string name = tj.at("name");
    const Shape shape = tj.at("shape").get<Shape>();
    const uint64_t offset = tj.at("offset");
    const int64_t n = shape_numel(shape);
    const size_t bytes = static_cast<size_t>(n) * sizeof(double);
    if (payload_at + offset + bytes > data.size()) truncated();
    std::vector<double> values(static_cast<size_t>(n));
    std::memcpy(values.data(), data.data() + payload_at + offset, bytes);
    cp.tensors.emplace_back(name, Tensor::from(shape, std::move(values)));
  }
  return cp;
}

inline Normalizer checkpoint_normalizer(const Checkpoint& cp) {
  const Tensor* mean = cp.find("norm.mean");
  const Tensor* std_ = cp.find("norm.std");
  if (!mean || !std_) throw IoError("checkpoint carries no normalizer");
  Normalizer n;
  n.mean = mean->values();
  n.std = std_->values();
  return n;
}

// Instantiates parameters for `cfg` and fills them from the checkpoint.
// Structural disagreement or a shape mismatch is an error naming the tensor.
inline ModelParams load_checkpoint(const Checkpoint& cp, const ModelConfig& cfg,
                                   TrainState* train_state = nullptr) {
  if (cp.structural != structural_fields(cfg)) {
    throw IoError("checkpoint structural fields (N=" + std::to_string(cp.structural.n_nodes) +
                  ",T=" + std::to_string(cp.structural.input_len) + ",M=" +
                  std::to_string(cp.structural.horizon) + ",F=" + std::to_string(cp.structural.n_features) +
                  ",D=" + std::to_string(cp.structural.hidden) + ",blocks=" +
                  std::to_string(cp.structural.n_blocks) + ") do not match the run configuration");
  }
  if (cp.ablation != ablation_name(cfg.ablation)) {
    throw IoError("checkpoint was trained with ablation '" + cp.ablation + "', config says '" +
                  std::string(ablation_name(cfg.ablation)) + "'");
  }
  ModelParams params = init_params(cfg);
  params.for_each_param([&](const std::string& name, Tensor& t) {
    const Tensor* src = cp.find(name);
    if (!src) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (src->shape() != t.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape()) +
                    ", expected " + shape_str(t.shape()));
    }
    t.values() = src->values();
  });
  if (train_state) {
    if (!cp.header.contains("train_state")) {
      throw IoError("checkpoint has no optimizer state to resume from");
    }
    train_state->adam.init(params);
    train_state->adam.step = cp.header["train_state"].at("step");
    train_state->rng_state = cp.header["train_state"].at("rng_state");
    train_state->epochs_done = cp.header["train_state"].at("epochs_done");
    for (size_t i = 0; i < train_state->adam.names.size(); ++i) {
      const Tensor* m = cp.find("adam.m." + train_state->adam.names[i]);
      const Tensor* v = cp.find("adam.v." + train_state->adam.names[i]);
      if (!m || !v) throw IoError("checkpoint optimizer state is incomplete");
      train_state->adam.m[i] = m->values();
      train_state->adam.v[i] = v->values();
    }
  }
  return params;
}

}  // namespace ahst
