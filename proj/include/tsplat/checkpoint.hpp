// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tsplat/deformation.hpp"
#include "tsplat/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace tsplat {

inline constexpr char kCheckpointMagic[8] = {'T', 'S', 'P', 'L', 'A', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kShConvention = "real-sh-condon-shortley+0.5";

/// Everything the replay pipeline needs from a training run.
struct Checkpoint {
    GaussianCloud<float> cloud;
    DeformationModel<float> deformation;
    Mode mode = Mode::TissueOnly;
    nlohmann::json train_config = nlohmann::json::object();  // echo of the run configuration
    std::string created;                                      // filled on save when empty

    void validate() const;
};

/// Writes the single-file format described in docs/checkpoint-format.md.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws MissingFile, MalformedCheckpoint, VersionMismatch, TruncatedPayload
/// or DirectoryMismatch.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parsed header only; useful for tooling.
[[nodiscard]] nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

} // namespace tsplat
