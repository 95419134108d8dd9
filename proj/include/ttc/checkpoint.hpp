// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers little-endian):
//
//   bytes 0..7    "TTTCKPT1"
//   bytes 8..15   u64 header length L
//   next L bytes  UTF-8 JSON header
//   payloads      raw tensors in index order, offsets relative to the
//                 first payload byte
//
// Header fields: magic, format_version, config, arch, ttt, tensors[] with
// {name, shape, dtype ("f32" | "f64"), offset, nbytes, group}.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ttc/model.hpp"

namespace ttc {

inline constexpr char kCheckpointMagic[] = "TTTCKPT1";
inline constexpr int kCheckpointVersion = 1;

std::vector<char> serialize_checkpoint(const Model& model,
                                       std::optional<DType> force_dtype = std::nullopt);
Model deserialize_checkpoint(const std::vector<char>& bytes);

/// Tensors are written in their own precision unless force_dtype is set.
void write_checkpoint(const std::string& path, const Model& model,
                      std::optional<DType> force_dtype = std::nullopt);
Model read_checkpoint(const std::string& path);

}  // namespace ttc
