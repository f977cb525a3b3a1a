#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fmm/model.hpp"

namespace fmm {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Checkpoint container, format version 1:
///   "FMMCKPT1" | u32 version | u64 header length | header (JSON text)
///   then per tensor: u32 name length | name | u64 count | count x f64
/// All integers and floats little-endian. `extra` is stored under the
/// header's "extra" key (config hash, provenance).
std::string encode_checkpoint(const ModelCheckpoint& model, const nlohmann::json& extra = {});
ModelCheckpoint decode_checkpoint(const std::string& bytes, nlohmann::json* extra = nullptr);

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = {});
ModelCheckpoint load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace fmm
