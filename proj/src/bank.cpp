#include "sid/bank.hpp"

#include "sid/error.hpp"
#include "sid/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <unordered_set>

namespace sid {

namespace {

constexpr std::size_t kMaxShortString = 0xFFFF;

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }

    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void str(const std::string& s) {
        u16(static_cast<std::uint16_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    // `where` names the structure being read when the payload runs out.
    void need(std::size_t n, const std::string& where) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(FormatErrorKind::Truncated,
                              "payload ends inside " + where + " at byte offset " + std::to_string(pos_));
        }
    }

    std::uint8_t u8(const std::string& where) {
        need(1, where);
        return bytes_[pos_++];
    }
    std::uint16_t u16(const std::string& where) { return static_cast<std::uint16_t>(le(2, where)); }
    std::uint32_t u32(const std::string& where) { return static_cast<std::uint32_t>(le(4, where)); }
    std::uint64_t u64(const std::string& where) { return le(8, where); }
    float f32(const std::string& where) { return std::bit_cast<float>(u32(where)); }

    std::string str(const std::string& where) {
        const std::size_t len = u16(where);
        need(len, where);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::uint64_t le(int n, const std::string& where) {
        need(static_cast<std::size_t>(n), where);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void check_short_string(const std::string& s, const std::string& what) {
    if (s.size() > kMaxShortString) {
        throw ValidationError(what + " longer than 65535 bytes");
    }
}

}  // namespace

void validate(const EmbeddingBank& bank) {
    if (bank.dim == 0) throw ValidationError("bank dim must be positive");
    check_short_string(bank.backbone_id, "backbone_id");
    std::unordered_set<std::string> seen;
    seen.reserve(bank.records.size());
    for (std::size_t i = 0; i < bank.records.size(); ++i) {
        const auto& r = bank.records[i];
        if (r.vector.size() != bank.dim) {
            throw ValidationError("record " + std::to_string(i) + " ('" + r.id + "') has length " +
                                  std::to_string(r.vector.size()) + ", bank dim is " + std::to_string(bank.dim));
        }
        if (r.label != Label::Real && r.label != Label::Fake) {
            throw ValidationError("record '" + r.id + "' has an invalid label");
        }
        for (float v : r.vector) {
            if (!std::isfinite(v)) throw ValidationError("record '" + r.id + "' has a non-finite component");
        }
        check_short_string(r.id, "record id");
        check_short_string(r.generator_tag, "generator_tag");
        if (!seen.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    }
}

bool bitwise_equal(const EmbeddingBank& a, const EmbeddingBank& b) {
    if (a.backbone_id != b.backbone_id || a.dim != b.dim || a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const auto& ra = a.records[i];
        const auto& rb = b.records[i];
        if (ra.id != rb.id || ra.label != rb.label || ra.generator_tag != rb.generator_tag ||
            ra.vector.size() != rb.vector.size()) {
            return false;
        }
        for (std::size_t j = 0; j < ra.vector.size(); ++j) {
            if (std::bit_cast<std::uint32_t>(ra.vector[j]) != std::bit_cast<std::uint32_t>(rb.vector[j])) return false;
        }
    }
    return true;
}

std::vector<std::uint8_t> encode_bank(const EmbeddingBank& bank) {
    validate(bank);
    ByteWriter w;
    for (char c : kBankMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u16(kBankVersion);
    w.u32(bank.dim);
    w.u64(bank.records.size());
    w.str(bank.backbone_id);
    for (const auto& r : bank.records) {
        w.str(r.id);
        w.u8(static_cast<std::uint8_t>(r.label));
        w.str(r.generator_tag);
        for (float v : r.vector) w.f32(v);
    }
    return w.take();
}

EmbeddingBank decode_bank(const std::vector<std::uint8_t>& bytes) {
    ByteReader in(bytes);
    in.need(4, "header");
    for (char c : kBankMagic) {
        if (in.u8("header") != static_cast<std::uint8_t>(c)) {
            throw FormatError(FormatErrorKind::BadMagic, "expected \"EBNK\"");
        }
    }
    const auto version = in.u16("header");
    if (version != kBankVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, "version " + std::to_string(version));
    }

    EmbeddingBank bank;
    bank.dim = in.u32("header");
    if (bank.dim == 0) throw FormatError(FormatErrorKind::DimMismatch, "declared dim is 0");
    const auto count = in.u64("header");
    bank.backbone_id = in.str("header");

    // Every record needs at least 5 length/label bytes plus its floats.
    const std::uint64_t min_record = 5 + 4ull * bank.dim;
    bank.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, in.remaining() / min_record)));

    std::unordered_set<std::string> seen;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string where = "record " + std::to_string(i);
        EmbeddingRecord r;
        r.id = in.str(where);
        const auto label = in.u8(where);
        if (label > 1) {
            throw FormatError(FormatErrorKind::Invalid, where + " has label byte " + std::to_string(label));
        }
        r.label = static_cast<Label>(label);
        r.generator_tag = in.str(where);
        in.need(4ull * bank.dim, where);
        r.vector.resize(bank.dim);
        for (auto& v : r.vector) {
            v = in.f32(where);
            if (!std::isfinite(v)) throw FormatError(FormatErrorKind::NonFinite, where + " ('" + r.id + "')");
        }
        if (!seen.insert(r.id).second) {
            throw FormatError(FormatErrorKind::Invalid, "duplicate record id '" + r.id + "'");
        }
        bank.records.push_back(std::move(r));
    }
    if (in.remaining() != 0) {
        throw FormatError(FormatErrorKind::DimMismatch,
                          std::to_string(in.remaining()) + " trailing bytes after " + std::to_string(count) +
                              " records of dim " + std::to_string(bank.dim));
    }
    return bank;
}

void write_bank(const EmbeddingBank& bank, const std::filesystem::path& path) {
    const auto bytes = encode_bank(bank);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

EmbeddingBank read_bank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read from '" + path.string() + "' failed");
    return decode_bank(bytes);
}

EmbeddingBank filter_by_generator(const EmbeddingBank& bank, const std::set<std::string>& tags) {
    EmbeddingBank out{bank.backbone_id, bank.dim, {}};
    for (const auto& r : bank.records) {
        if (tags.contains(r.generator_tag)) out.records.push_back(r);
    }
    return out;
}

std::vector<std::string> generator_tags(const EmbeddingBank& bank) {
    std::vector<std::string> tags;
    std::unordered_set<std::string> seen;
    for (const auto& r : bank.records) {
        if (seen.insert(r.generator_tag).second) tags.push_back(r.generator_tag);
    }
    return tags;
}

std::pair<EmbeddingBank, EmbeddingBank> split(const EmbeddingBank& bank, double train_fraction,
                                              std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("train fraction must lie in (0, 1), got " + std::to_string(train_fraction));
    }
    if (bank.empty()) throw ValidationError("cannot split an empty bank");

    // Strata in order of first appearance.
    std::map<std::pair<Label, std::string>, std::size_t> stratum_of;
    std::vector<std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < bank.records.size(); ++i) {
        const auto key = std::make_pair(bank.records[i].label, bank.records[i].generator_tag);
        auto [it, inserted] = stratum_of.try_emplace(key, strata.size());
        if (inserted) strata.emplace_back();
        strata[it->second].push_back(i);
    }

    Rng rng(seed);
    std::vector<bool> to_train(bank.records.size(), false);
    std::size_t cumulative = 0;
    std::size_t assigned = 0;
    for (auto& members : strata) {
        cumulative += members.size();
        const auto target = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(cumulative) + 0.5));
        const std::size_t take = target - assigned;
        assigned = target;
        rng.shuffle(std::span(members));
        for (std::size_t k = 0; k < take; ++k) to_train[members[k]] = true;
    }

    EmbeddingBank train{bank.backbone_id, bank.dim, {}};
    EmbeddingBank rest{bank.backbone_id, bank.dim, {}};
    for (std::size_t i = 0; i < bank.records.size(); ++i) {
        (to_train[i] ? train : rest).records.push_back(bank.records[i]);
    }
    return {std::move(train), std::move(rest)};
}

EmbeddingBank l2_normalized(const EmbeddingBank& bank) {
    EmbeddingBank out = bank;
    for (auto& r : out.records) {
        double sq = 0.0;
        for (float v : r.vector) sq += static_cast<double>(v) * v;
        if (sq == 0.0) throw ValidationError("record '" + r.id + "' is a zero vector and cannot be L2-normalized");
        const double inv = 1.0 / std::sqrt(sq);
        for (float& v : r.vector) v = static_cast<float>(v * inv);
    }
    return out;
}

EmbeddingBank sample_stratified(const EmbeddingBank& bank, std::size_t count, std::uint64_t seed) {
    if (count == 0) throw ValidationError("sample size must be positive");
    if (count > bank.size()) {
        throw ValidationError("sample size " + std::to_string(count) + " exceeds the bank's " +
                              std::to_string(bank.size()) + " records");
    }
    std::vector<std::size_t> by_label[2];
    for (std::size_t i = 0; i < bank.size(); ++i) by_label[to_int(bank.records[i].label)].push_back(i);

    // Largest remainder; ties go to the real class.
    const double n = static_cast<double>(bank.size());
    std::size_t quota[2];
    double remainder[2];
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(count) * static_cast<double>(by_label[c].size()) / n;
        quota[c] = static_cast<std::size_t>(std::floor(exact));
        remainder[c] = exact - static_cast<double>(quota[c]);
    }
    if (quota[0] + quota[1] < count) ++quota[remainder[1] > remainder[0] ? 1 : 0];

    Rng rng(seed);
    std::vector<bool> keep(bank.size(), false);
    for (int c = 0; c < 2; ++c) {
        rng.shuffle(std::span(by_label[c]));
        for (std::size_t k = 0; k < quota[c]; ++k) keep[by_label[c][k]] = true;
    }
    EmbeddingBank out{bank.backbone_id, bank.dim, {}};
    for (std::size_t i = 0; i < bank.size(); ++i) {
        if (keep[i]) out.records.push_back(bank.records[i]);
    }
    return out;
}

void validate(const SynthSpec& spec) {
    if (spec.dim == 0) throw ValidationError("synth spec: dim must be positive");
    if (spec.clusters.empty()) throw ValidationError("synth spec: no clusters");
    for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
        const auto& cl = spec.clusters[c];
        const std::string name = "synth spec: cluster " + std::to_string(c);
        if (cl.count == 0) throw ValidationError(name + " has count 0");
        if (!(cl.stddev > 0.0) || !std::isfinite(cl.stddev)) {
            throw ValidationError(name + " has non-positive stddev " + std::to_string(cl.stddev));
        }
        if (cl.mean.size() != spec.dim) {
            throw ValidationError(name + " mean has length " + std::to_string(cl.mean.size()) + ", expected " +
                                  std::to_string(spec.dim));
        }
        for (double m : cl.mean) {
            if (!std::isfinite(m)) throw ValidationError(name + " mean has a non-finite component");
        }
    }
}

EmbeddingBank synth_bank(const SynthSpec& spec) {
    validate(spec);
    EmbeddingBank bank{spec.backbone_id, spec.dim, {}};
    Rng rng(spec.seed);
    for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
        const auto& cl = spec.clusters[c];
        for (std::size_t i = 0; i < cl.count; ++i) {
            EmbeddingRecord r;
            r.id = "c" + std::to_string(c) + "_" + std::to_string(i);
            r.label = cl.label;
            r.generator_tag = cl.generator_tag;
            r.vector.resize(spec.dim);
            for (std::uint32_t d = 0; d < spec.dim; ++d) {
                r.vector[d] = static_cast<float>(cl.mean[d] + cl.stddev * rng.normal());
            }
            bank.records.push_back(std::move(r));
        }
    }
    return bank;
}

}  // namespace sid
