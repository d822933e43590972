// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "dvx/model.hpp"

namespace dvx {

/// Binary checkpoint, magic "DVXF". Layout (all integers little-endian
/// uint32): magic, version, record count, then per record: name length, name
/// bytes, rank, dims, float32 little-endian payload. Records cover learnable
/// parameters, BatchNorm running statistics, and (optionally) the EMA shadow
/// under an "ema/" prefix.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, Model& model,
                     const std::map<std::string, Tensor>* ema_shadow = nullptr);

struct LoadedCheckpoint {
    std::map<std::string, Tensor> records;
    std::map<std::string, Tensor> ema_shadow;  // "ema/" records, prefix stripped
};

LoadedCheckpoint read_checkpoint(const std::string& path);

/// Applies parameter and buffer records to the model; throws on missing
/// records or shape mismatches.
void load_checkpoint(const std::string& path, Model& model,
                     std::map<std::string, Tensor>* ema_shadow = nullptr);

}  // namespace dvx
