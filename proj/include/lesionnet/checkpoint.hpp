#pragma once

#include <filesystem>
#include <string>

#include "lesionnet/model.hpp"

namespace lesionnet {

// Checkpoint layout:
//   bytes 0..7   magic "LSNCKPT1"
//   bytes 8..11  little-endian uint32 N
//   next N bytes UTF-8 JSON: config, class catalog, frozen flags, init seed,
//                per-tensor shapes
//   remainder    parameters as little-endian float32, tensors concatenated in
//                ModelState order, each row-major
inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'N', 'C', 'K', 'P', 'T', '1'};

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ModelState& model);
ModelState decode_checkpoint(const std::string& bytes);

// Architecture documents use the same JSON schema as the checkpoint's
// "config" member.
std::string arch_to_json(const ArchConfig& config);
ArchConfig arch_from_json(const std::string& text);

}  // namespace lesionnet
