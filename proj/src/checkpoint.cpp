// SPDX-License-Identifier: Apache-2.0
#include "ttc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "ttc/error.hpp"

namespace ttc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

constexpr std::size_t kMagicLen = 8;
constexpr std::size_t kPreamble = kMagicLen + 8;

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }
std::string dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

json config_json(const ModelConfig& c) {
  return {{"depth", c.depth},         {"dim", c.dim},         {"heads", c.heads},
          {"patch", c.patch},         {"image_size", c.image_size},
          {"channels", c.channels},   {"classes", c.classes}, {"mlp_ratio", c.mlp_ratio},
          {"qkv_bias", c.qkv_bias},   {"pooling", "gap"},     {"class_token", false}};
}

json ttt_json(const TTTConfig& t) {
  return {{"inner_loss", to_string(t.loss)},
          {"inner_lr", t.inner_lr},
          {"inner_steps", t.inner_steps},
          {"key_scale", to_string(t.key_scale)}};
}

json locality_json(const LocalityConfig& l) {
  json j = {{"mode", to_string(l.mode)}, {"kernel_size", l.kernel_size}};
  j["blend_nat"] = l.blend_nat ? json(*l.blend_nat) : json(nullptr);
  return j;
}

[[noreturn]] void header_error(const std::string& what) {
  throw FormatError(ErrorCode::format_header, "checkpoint header: " + what);
}

}  // namespace

std::vector<char> serialize_checkpoint(const Model& model, std::optional<DType> force_dtype) {
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& t : model.params.items()) {
    const DType dt = force_dtype ? *force_dtype : t.value.dtype();
    const std::size_t nbytes = t.value.numel() * dtype_size(dt);
    tensors.push_back({{"name", t.name},
                       {"shape", t.value.shape()},
                       {"dtype", dtype_name(dt)},
                       {"offset", offset},
                       {"nbytes", nbytes},
                       {"group", to_string(t.group)}});
    offset += nbytes;
  }
  const json header = {{"magic", kCheckpointMagic},
                       {"format_version", kCheckpointVersion},
                       {"config", config_json(model.config)},
                       {"arch", model.arch.label()},
                       {"locality", locality_json(model.arch.locality)},
                       {"ttt", ttt_json(model.ttt)},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<char> out;
  out.reserve(kPreamble + text.size() + offset);
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + kMagicLen);
  const std::uint64_t len = text.size();
  const char* lp = reinterpret_cast<const char*>(&len);
  out.insert(out.end(), lp, lp + 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : model.params.items()) {
    const DType dt = force_dtype ? *force_dtype : t.value.dtype();
    for (double v : t.value.data()) {
      if (dt == DType::f32) {
        const float f = static_cast<float>(v);
        const char* p = reinterpret_cast<const char*>(&f);
        out.insert(out.end(), p, p + 4);
      } else {
        const char* p = reinterpret_cast<const char*>(&v);
        out.insert(out.end(), p, p + 8);
      }
    }
  }
  return out;
}

Model deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) {
    throw FormatError(ErrorCode::format_magic, "checkpoint: magic 'TTTCKPT1' not found at offset 0");
  }
  if (bytes.size() < kPreamble) {
    throw FormatError(ErrorCode::format_truncated, "checkpoint: file ends inside the preamble");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagicLen, 8);
  if (len > bytes.size() - kPreamble) {
    throw FormatError(ErrorCode::format_truncated,
                      "checkpoint: header of " + std::to_string(len) + " bytes exceeds file size " +
                          std::to_string(bytes.size()));
  }
  json h;
  try {
    h = json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + len));
  } catch (const json::exception& e) {
    header_error(std::string("invalid JSON: ") + e.what());
  }

  Model m;
  std::vector<std::tuple<std::string, Shape, DType, std::size_t, std::size_t, ParamGroup>> index;
  try {
    if (h.at("magic").get<std::string>() != kCheckpointMagic) {
      throw FormatError(ErrorCode::format_magic, "checkpoint: header magic mismatch");
    }
    if (h.at("format_version").get<int>() != kCheckpointVersion) {
      header_error("unsupported format_version " + h.at("format_version").dump());
    }
    const auto& c = h.at("config");
    m.config.depth = c.at("depth");
    m.config.dim = c.at("dim");
    m.config.heads = c.at("heads");
    m.config.patch = c.at("patch");
    m.config.image_size = c.at("image_size");
    m.config.channels = c.at("channels");
    m.config.classes = c.at("classes");
    m.config.mlp_ratio = c.at("mlp_ratio");
    m.config.qkv_bias = c.at("qkv_bias");
    m.arch = ArchSpec::parse(h.at("arch").get<std::string>());
    const auto& l = h.at("locality");
    m.arch.locality.kernel_size = l.at("kernel_size");
    const auto& t = h.at("ttt");
    m.ttt.loss = parse_inner_loss(t.at("inner_loss"));
    m.ttt.inner_lr = t.at("inner_lr");
    m.ttt.inner_steps = t.at("inner_steps");
    m.ttt.key_scale = parse_key_scale(t.at("key_scale"));
    for (const auto& e : h.at("tensors")) {
      const std::string dt = e.at("dtype");
      if (dt != "f32" && dt != "f64") header_error("unknown dtype '" + dt + "'");
      index.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>(),
                         dt == "f32" ? DType::f32 : DType::f64, e.at("offset").get<std::size_t>(),
                         e.at("nbytes").get<std::size_t>(),
                         parse_param_group(e.at("group").get<std::string>()));
    }
  } catch (const json::exception& e) {
    header_error(e.what());
  } catch (const ConfigError& e) {
    header_error(e.what());
  }

  const std::size_t payload_begin = kPreamble + len;
  const std::size_t payload_size = bytes.size() - payload_begin;
  std::size_t expected_offset = 0;
  for (const auto& [name, shape, dt, offset, nbytes, group] : index) {
    std::size_t numel = shape.empty() ? 0 : 1;
    for (auto e : shape) numel *= e;
    if (numel == 0) {
      throw FormatError(ErrorCode::format_index, "checkpoint: tensor '" + name + "' has an empty shape");
    }
    if (numel * dtype_size(dt) != nbytes) {
      throw FormatError(ErrorCode::format_index,
                        "checkpoint: tensor '" + name + "' shape " + shape_string(shape) + " needs " +
                            std::to_string(numel * dtype_size(dt)) + " bytes but index says " +
                            std::to_string(nbytes));
    }
    if (offset != expected_offset) {
      throw FormatError(ErrorCode::format_index,
                        "checkpoint: tensor '" + name + "' at offset " + std::to_string(offset) +
                            ", expected " + std::to_string(expected_offset));
    }
    expected_offset += nbytes;
  }
  if (expected_offset > payload_size) {
    throw FormatError(ErrorCode::format_truncated,
                      "checkpoint: payload has " + std::to_string(payload_size) + " bytes, index needs " +
                          std::to_string(expected_offset));
  }
  if (expected_offset < payload_size) {
    throw FormatError(ErrorCode::format_index,
                      "checkpoint: " + std::to_string(payload_size - expected_offset) +
                          " trailing bytes after the last tensor");
  }

  for (const auto& [name, shape, dt, offset, nbytes, group] : index) {
    const char* p = bytes.data() + payload_begin + offset;
    std::vector<double> data(nbytes / dtype_size(dt));
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (dt == DType::f32) {
        float f;
        std::memcpy(&f, p + 4 * i, 4);
        data[i] = f;
      } else {
        std::memcpy(&data[i], p + 8 * i, 8);
      }
    }
    try {
      m.params.add(name, Tensor::from(shape, std::move(data), dt), group);
    } catch (const Error& e) {
      throw FormatError(ErrorCode::format_index, std::string("checkpoint: ") + e.what());
    }
  }
  try {
    m.config.validate();
  } catch (const ConfigError& e) {
    header_error(e.what());
  }
  return m;
}

void write_checkpoint(const std::string& path, const Model& model, std::optional<DType> force_dtype) {
  const auto bytes = serialize_checkpoint(model, force_dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write to '" + path + "' failed");
}

Model read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.code(), path + ": " + e.what());
  }
}

}  // namespace ttc
