#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace sid {

enum class Label : std::uint8_t { Real = 0, Fake = 1 };

inline const char* to_string(Label label) { return label == Label::Real ? "real" : "fake"; }

inline int to_int(Label label) { return static_cast<int>(label); }

struct EmbeddingRecord {
    std::string id;
    Label label = Label::Real;
    std::string generator_tag;
    std::vector<float> vector;

    bool operator==(const EmbeddingRecord&) const = default;
};

/// A labeled, generator-tagged collection of fixed-dimension feature vectors
/// produced by one backbone (or several, after fusion).
struct EmbeddingBank {
    std::string backbone_id;
    std::uint32_t dim = 0;
    std::vector<EmbeddingRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    bool operator==(const EmbeddingBank&) const = default;
};

/// Throws ValidationError naming the first violated invariant
/// (dim > 0, vector lengths, finite components, unique ids).
void validate(const EmbeddingBank& bank);

/// Bit-exact comparison; unlike operator== this distinguishes -0.0f from 0.0f
/// and treats identical NaN payloads as equal.
bool bitwise_equal(const EmbeddingBank& a, const EmbeddingBank& b);

// EBANK container, little-endian:
//   "EBNK" | u16 version=1 | u32 dim | u64 record_count | u16 len + backbone_id
//   record_count x ( u16 len + id | u8 label | u16 len + generator_tag | dim x f32 )
inline constexpr char kBankMagic[4] = {'E', 'B', 'N', 'K'};
inline constexpr std::uint16_t kBankVersion = 1;

std::vector<std::uint8_t> encode_bank(const EmbeddingBank& bank);
EmbeddingBank decode_bank(const std::vector<std::uint8_t>& bytes);

/// Validates, then writes. An invalid bank leaves no file behind.
void write_bank(const EmbeddingBank& bank, const std::filesystem::path& path);
EmbeddingBank read_bank(const std::filesystem::path& path);

/// Records whose generator_tag is in `tags`, original order preserved.
EmbeddingBank filter_by_generator(const EmbeddingBank& bank, const std::set<std::string>& tags);

/// Distinct generator tags in order of first appearance.
std::vector<std::string> generator_tags(const EmbeddingBank& bank);

/// Stratified split by (label, generator_tag). Each stratum contributes
/// floor or ceil of fraction * size to the first bank, using cumulative
/// rounding across strata so the total is round(fraction * n).
std::pair<EmbeddingBank, EmbeddingBank> split(const EmbeddingBank& bank, double train_fraction,
                                              std::uint64_t seed);

/// Copy of the bank with every vector scaled to unit L2 norm. Zero vectors
/// are rejected.
EmbeddingBank l2_normalized(const EmbeddingBank& bank);

/// Uniform sample of `count` records, stratified by label with largest
/// remainder allocation; original record order is kept.
EmbeddingBank sample_stratified(const EmbeddingBank& bank, std::size_t count, std::uint64_t seed);

struct SynthCluster {
    Label label = Label::Real;
    std::string generator_tag;
    std::vector<double> mean;
    double stddev = 1.0;
    std::size_t count = 0;
};

struct SynthSpec {
    std::uint32_t dim = 0;
    std::uint64_t seed = 0;
    std::string backbone_id = "synthetic";
    std::vector<SynthCluster> clusters;
};

void validate(const SynthSpec& spec);

/// Isotropic Gaussian clusters; record ids are "c<cluster>_<index>".
EmbeddingBank synth_bank(const SynthSpec& spec);

}  // namespace sid
