#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quantdemoire/model.hpp"
#include "quantdemoire/tensor_io.hpp"

namespace qdm {

/// Ordered map of uniquely named QDT1 blobs.
///
/// File layout: "QDCK", u32 entry count, then per entry a u16 name length, the UTF-8
/// name, and the embedded QDT1 blob.
struct Checkpoint {
    std::vector<std::pair<std::string, TensorBlob>> entries;

    const TensorBlob* find(const std::string& name) const noexcept;
    const TensorBlob& at(const std::string& name) const;
    /// Inserts or replaces.
    void put(const std::string& name, TensorBlob blob);
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Packs a mixed-precision weight as raw bytes: codes, per-channel bounds and zero points,
/// thresholds, u32 outlier count, then (u32 index, binary16 value) pairs.
std::vector<std::uint8_t> encode_mixed_weight(const MixedWeight& mw);
MixedWeight decode_mixed_weight(std::span<const std::uint8_t> bytes);

Checkpoint to_checkpoint(const ModelGraph& model);
ModelGraph model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace qdm
