#pragma once

#include "sid/bank.hpp"
#include "sid/probe.hpp"

#include <vector>

namespace sid {

struct FusionSource {
    EmbeddingBank bank;
    /// Scale this source's vectors to unit L2 norm before concatenation.
    bool l2_normalize = false;
};

struct FusionSpec {
    std::vector<FusionSource> sources;
    /// Permit repeated backbone ids (e.g. two checkpoints of one method).
    bool allow_duplicate_backbones = false;
};

/// Record-wise concatenation of the sources in spec order, aligned by id.
/// Record order follows the first source; backbone_id joins the sources'
/// ids with '+'.
EmbeddingBank fuse_banks(const FusionSpec& spec);

/// Column offset of each source inside a fused vector, plus the total dim
/// as the final entry.
std::vector<std::uint32_t> source_offsets(const FusionSpec& spec);

/// fuse_banks followed by train_probe; input_backbones lists the sources.
LinearProbe train_fused(const FusionSpec& spec, const TrainConfig& config);

}  // namespace sid
