#include "sid/fusion.hpp"

#include "sid/error.hpp"

#include <unordered_map>
#include <unordered_set>

namespace sid {

namespace {

void check_spec(const FusionSpec& spec) {
    if (spec.sources.size() < 2) {
        throw ValidationError("fusion needs at least 2 banks, got " + std::to_string(spec.sources.size()));
    }
    if (!spec.allow_duplicate_backbones) {
        std::unordered_set<std::string> seen;
        for (const auto& s : spec.sources) {
            if (!seen.insert(s.bank.backbone_id).second) {
                throw ValidationError("backbone '" + s.bank.backbone_id +
                                      "' appears twice; pass allow-duplicates to fuse it with itself");
            }
        }
    }
    for (const auto& s : spec.sources) validate(s.bank);
}

}  // namespace

std::vector<std::uint32_t> source_offsets(const FusionSpec& spec) {
    std::vector<std::uint32_t> offsets{0};
    std::uint64_t total = 0;
    for (const auto& s : spec.sources) {
        total += s.bank.dim;
        if (total > UINT32_MAX) throw ValidationError("fused dim overflows 32 bits");
        offsets.push_back(static_cast<std::uint32_t>(total));
    }
    return offsets;
}

EmbeddingBank fuse_banks(const FusionSpec& spec) {
    check_spec(spec);
    const auto offsets = source_offsets(spec);
    const EmbeddingBank& first = spec.sources.front().bank;

    EmbeddingBank fused;
    fused.dim = offsets.back();
    for (std::size_t s = 0; s < spec.sources.size(); ++s) {
        if (s > 0) fused.backbone_id += "+";
        fused.backbone_id += spec.sources[s].bank.backbone_id;
    }
    fused.records.reserve(first.size());
    for (const auto& r : first.records) {
        fused.records.push_back({r.id, r.label, r.generator_tag, std::vector<float>(fused.dim)});
    }

    for (std::size_t s = 0; s < spec.sources.size(); ++s) {
        const EmbeddingBank source = spec.sources[s].l2_normalize ? l2_normalized(spec.sources[s].bank)
                                                                  : spec.sources[s].bank;
        std::unordered_map<std::string, std::size_t> index;
        index.reserve(source.size());
        for (std::size_t i = 0; i < source.size(); ++i) index.emplace(source.records[i].id, i);

        for (auto& out : fused.records) {
            const auto it = index.find(out.id);
            if (it == index.end()) {
                throw ValidationError("id mismatch: '" + out.id + "' is missing from bank " + std::to_string(s) +
                                      " ('" + source.backbone_id + "')");
            }
            const auto& r = source.records[it->second];
            if (r.label != out.label || r.generator_tag != out.generator_tag) {
                throw ValidationError("record '" + out.id + "' has conflicting label or generator_tag in bank " +
                                      std::to_string(s) + " ('" + source.backbone_id + "')");
            }
            std::copy(r.vector.begin(), r.vector.end(), out.vector.begin() + offsets[s]);
        }
        if (source.size() != first.size()) {
            // Same size ids all matched, so a larger source has an id the first lacks.
            std::unordered_set<std::string> first_ids;
            for (const auto& r : first.records) first_ids.insert(r.id);
            for (const auto& r : source.records) {
                if (!first_ids.contains(r.id)) {
                    throw ValidationError("id mismatch: '" + r.id + "' from bank " + std::to_string(s) + " ('" +
                                          source.backbone_id + "') is missing from bank 0");
                }
            }
        }
    }
    return fused;
}

LinearProbe train_fused(const FusionSpec& spec, const TrainConfig& config) {
    const EmbeddingBank fused = fuse_banks(spec);
    LinearProbe probe = train_probe(fused, std::nullopt, config).probe;
    probe.input_backbones.clear();
    for (const auto& s : spec.sources) probe.input_backbones.push_back(s.bank.backbone_id);
    return probe;
}

}  // namespace sid
