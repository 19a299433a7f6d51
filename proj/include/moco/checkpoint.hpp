#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moco/network.hpp"

// Checkpoint container: 8-byte magic, little-endian u32 version, u64 JSON
// header length, the JSON header (cfg echo, training metadata, tensor
// directory), then raw little-endian f64 tensor payloads.

namespace moco {

constexpr char kCheckpointMagic[8] = {'M', 'O', 'C', 'O', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int64_t iteration = 0;
  uint64_t seed = 0;
  double loss = 0.0;
};

struct Checkpoint {
  MoCoPnetCfg cfg;
  ParamSet params;
  CheckpointMeta meta;
  AdamState adam;
  bool has_adam = false;
};

namespace detail {

template <class T>
void write_le(std::ofstream& out, T v) {
  // Host is little-endian on every supported target.
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const MoCoPnetCfg& cfg,
                            const ParamSet& params, const CheckpointMeta& meta,
                            const AdamState* adam = nullptr) {
  nlohmann::json header;
  header["cfg"] = cfg;
  header["meta"] = {{"iteration", meta.iteration}, {"seed", meta.seed}, {"loss", meta.loss}};

  uint64_t offset = 0;
  nlohmann::json tensors = nlohmann::json::array();
  auto add_entry = [&](const std::string& name, const std::string& kind, const Tensor& t) {
    tensors.push_back({{"name", name},
                       {"kind", kind},
                       {"dtype", "f64"},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.numel()}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(double);
  };
  for (const auto& [name, t] : params) add_entry(name, "param", t);
  if (adam) {
    header["adam"] = {{"step", adam->step_count()}};
    for (const auto& [name, moments] : adam->slots()) {
      add_entry(name, "adam_m", moments.m);
      add_entry(name, "adam_v", moments.v);
    }
  }
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCode::IoError, "cannot write " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<uint32_t>(out, kCheckpointVersion);
  detail::write_le<uint64_t>(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  auto write_tensor = [&](const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  for (const auto& [name, t] : params) write_tensor(t);
  if (adam)
    for (const auto& [name, moments] : adam->slots()) {
      write_tensor(moments.m);
      write_tensor(moments.v);
    }
  check(out.good(), ErrorCode::IoError, "failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::IoError, "cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  check(in.good() && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
        ErrorCode::ParseError, path + ": not a checkpoint file");
  const uint32_t version = detail::read_le<uint32_t>(in);
  check(version == kCheckpointVersion, ErrorCode::ParseError,
        path + ": unsupported checkpoint version " + std::to_string(version));
  const uint64_t header_len = detail::read_le<uint64_t>(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  check(in.good(), ErrorCode::ParseError, path + ": truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ckpt;
  header.at("cfg").get_to(ckpt.cfg);
  ckpt.meta.iteration = header.at("meta").at("iteration").get<int64_t>();
  ckpt.meta.seed = header.at("meta").at("seed").get<uint64_t>();
  ckpt.meta.loss = header.at("meta").at("loss").get<double>();

  std::map<std::string, AdamState::Moments> slots;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string kind = entry.at("kind").get<std::string>();
    check(entry.at("dtype").get<std::string>() == "f64", ErrorCode::ParseError,
          path + ": unsupported tensor dtype");
    std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    check(in.good(), ErrorCode::ParseError, path + ": truncated tensor payload for " + name);
    if (kind == "param")
      ckpt.params.add(name, std::move(t));
    else if (kind == "adam_m")
      slots[name].m = std::move(t);
    else if (kind == "adam_v")
      slots[name].v = std::move(t);
    else
      throw Error(ErrorCode::ParseError, path + ": unknown tensor kind " + kind);
  }
  if (header.contains("adam")) {
    ckpt.adam.restore(header.at("adam").at("step").get<int64_t>(), std::move(slots));
    ckpt.has_adam = true;
  }
  return ckpt;
}

}  // namespace moco
