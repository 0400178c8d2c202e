#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "erpkit/common.hpp"
#include "erpkit/domain.hpp"
#include "erpkit/synth.hpp"
#include "erpkit/vae.hpp"

namespace erpkit {

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t len) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return digest_hex(fnv1a64_bytes(buf.data(), buf.size()));
}

namespace detail {

// All binary formats are little-endian with fixed-width fields.
struct BinaryWriter {
    std::ofstream out;

    explicit BinaryWriter(const std::filesystem::path& path)
        : out(path, std::ios::binary | std::ios::trunc) {
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
    }

    void bytes(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) {
        std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xff),
                                       static_cast<unsigned char>((v >> 8) & 0xff),
                                       static_cast<unsigned char>((v >> 16) & 0xff),
                                       static_cast<unsigned char>((v >> 24) & 0xff)};
        bytes(b.data(), 4);
    }
    void u64(std::uint64_t v) {
        u32(static_cast<std::uint32_t>(v & 0xffffffffULL));
        u32(static_cast<std::uint32_t>(v >> 32));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
};

struct BinaryReader {
    std::ifstream in;
    std::filesystem::path path;

    explicit BinaryReader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p.string());
    }

    void bytes(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), n);
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw TruncationError("unexpected end of file in " + path.string());
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::array<unsigned char, 4> b;
        bytes(b.data(), 4);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (std::uint64_t(u32()) << 32);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    bool at_eof() {
        in.peek();
        return in.eof();
    }
};

} // namespace detail

// ---- Dataset file: magic "EEGD", version, count, then fixed-size records.

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetRecord {
    std::uint32_t participant_id = 0;
    LabelVector labels;
    ErpImage image;
};

struct Dataset {
    std::vector<DatasetRecord> records;
};

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    detail::BinaryWriter w(path);
    w.bytes("EEGD", 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.records.size()));
    for (const auto& rec : ds.records) {
        w.u32(rec.participant_id);
        const auto slots = rec.labels.encode();
        w.bytes(slots.data(), slots.size());
        w.u8(static_cast<std::uint8_t>(rec.image.source));
        for (double v : rec.image.values) {
            require(v >= 0.0 && v <= 1.0, "dataset values must lie in [0, 1]");
            w.f32(static_cast<float>(v));
        }
    }
}

inline Dataset read_dataset(const std::filesystem::path& path) {
    detail::BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "EEGD", 4) != 0)
        throw BadMagicError("not a dataset file: " + path.string());
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw UnsupportedVersionError("dataset version " + std::to_string(version) +
                                      " unsupported in " + path.string());
    const std::uint32_t count = r.u32();
    Dataset ds;
    ds.records.resize(count);
    for (auto& rec : ds.records) {
        rec.participant_id = r.u32();
        std::array<std::uint8_t, kLabelSlots> slots;
        r.bytes(slots.data(), slots.size());
        rec.labels = LabelVector::decode(slots);
        rec.image.source = static_cast<ImageSource>(r.u8());
        for (auto& v : rec.image.values) {
            v = r.f32();
            require(v >= 0.0 && v <= 1.0, "dataset value outside [0, 1] in " + path.string());
        }
    }
    if (!r.at_eof()) throw SchemaError("trailing bytes after declared records in " + path.string());
    return ds;
}

inline std::vector<ErpImage> dataset_images(const Dataset& ds) {
    std::vector<ErpImage> out;
    out.reserve(ds.records.size());
    for (const auto& rec : ds.records) out.push_back(rec.image);
    return out;
}

// ---- Checkpoint file: u32 JSON header length, JSON header, raw f32 blob.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
    std::vector<float> blob(ckpt.parameters.begin(), ckpt.parameters.end());
    const std::size_t blob_bytes = blob.size() * sizeof(float);

    nlohmann::json trace = nlohmann::json::array();
    for (const auto& e : ckpt.trace)
        trace.push_back({{"step", e.step},
                         {"recon", e.recon},
                         {"kl_prior", e.kl_prior},
                         {"kl_ground", e.kl_ground},
                         {"total", e.total}});
    nlohmann::json header{
        {"format_version", kCheckpointVersion},
        {"architecture", ckpt.architecture},
        {"mode", ckpt.mode},
        {"beta", ckpt.beta},
        {"seed", ckpt.seed},
        {"step", ckpt.step},
        {"blob_bytes", blob_bytes},
        {"digest", digest_hex(fnv1a64_bytes(blob.data(), blob_bytes))},
        {"trace", std::move(trace)},
    };
    const std::string header_str = header.dump();

    detail::BinaryWriter w(path);
    w.bytes("EEGC", 4);
    w.u32(static_cast<std::uint32_t>(header_str.size()));
    w.bytes(header_str.data(), header_str.size());
    w.bytes(blob.data(), blob_bytes);
}

template <typename T = float>
Checkpoint<T> read_checkpoint(const std::filesystem::path& path) {
    detail::BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "EEGC", 4) != 0)
        throw BadMagicError("not a checkpoint file: " + path.string());
    const std::uint32_t header_len = r.u32();
    std::string header_str(header_len, '\0');
    r.bytes(header_str.data(), header_len);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format_version", 0u) != kCheckpointVersion)
        throw UnsupportedVersionError("checkpoint version unsupported in " + path.string());

    Checkpoint<T> ckpt;
    ckpt.architecture = header.at("architecture").get<std::string>();
    ckpt.mode = header.at("mode").get<std::string>();
    ckpt.beta = header.at("beta").get<double>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.step = header.at("step").get<long long>();
    for (const auto& e : header.at("trace"))
        ckpt.trace.push_back({e.at("step").get<long long>(), e.at("recon").get<double>(),
                              e.at("kl_prior").get<double>(), e.at("kl_ground").get<double>(),
                              e.at("total").get<double>()});

    const std::size_t blob_bytes = header.at("blob_bytes").get<std::size_t>();
    require(blob_bytes % sizeof(float) == 0, "blob byte count not a multiple of 4");
    std::vector<float> blob(blob_bytes / sizeof(float));
    r.bytes(blob.data(), blob_bytes);
    const std::string digest = digest_hex(fnv1a64_bytes(blob.data(), blob_bytes));
    if (digest != header.at("digest").get<std::string>())
        throw DigestMismatchError("parameter blob digest mismatch in " + path.string());

    ckpt.parameters.assign(blob.begin(), blob.end());
    return ckpt;
}

// ---- Raw session file: magic "EEGR"; input format of the preprocess step.

inline constexpr std::uint32_t kSessionsVersion = 1;

struct RecordedSession {
    std::uint32_t participant_id = 0;
    LabelVector labels;
    std::vector<SessionTrial> trials;
};

inline void write_sessions(const std::filesystem::path& path,
                           const std::vector<RecordedSession>& sessions) {
    detail::BinaryWriter w(path);
    w.bytes("EEGR", 4);
    w.u32(kSessionsVersion);
    w.u32(static_cast<std::uint32_t>(sessions.size()));
    for (const auto& s : sessions) {
        w.u32(s.participant_id);
        const auto slots = s.labels.encode();
        w.bytes(slots.data(), slots.size());
        w.u32(static_cast<std::uint32_t>(s.trials.size()));
        for (const auto& st : s.trials) {
            w.u8(static_cast<std::uint8_t>(st.trial.condition));
            w.u8(st.artifact ? static_cast<std::uint8_t>(*st.artifact) + 1 : 0);
            w.u32(static_cast<std::uint32_t>(st.trial.event_index));
            w.u32(static_cast<std::uint32_t>(st.trial.length()));
            for (const auto& ch : st.trial.channels)
                for (double v : ch) w.f32(static_cast<float>(v));
        }
    }
}

inline std::vector<RecordedSession> read_sessions(const std::filesystem::path& path) {
    detail::BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "EEGR", 4) != 0)
        throw BadMagicError("not a session file: " + path.string());
    if (r.u32() != kSessionsVersion)
        throw UnsupportedVersionError("session file version unsupported in " + path.string());
    std::vector<RecordedSession> sessions(r.u32());
    for (auto& s : sessions) {
        s.participant_id = r.u32();
        std::array<std::uint8_t, kLabelSlots> slots;
        r.bytes(slots.data(), slots.size());
        s.labels = LabelVector::decode(slots);
        s.trials.resize(r.u32());
        for (auto& st : s.trials) {
            st.trial.condition = static_cast<Condition>(r.u8());
            const std::uint8_t art = r.u8();
            if (art > 0) st.artifact = static_cast<ArtifactKind>(art - 1);
            st.trial.event_index = static_cast<int>(r.u32());
            const std::uint32_t len = r.u32();
            st.trial.participant_id = static_cast<int>(s.participant_id);
            for (auto& ch : st.trial.channels) {
                ch.resize(len);
                for (auto& v : ch) v = r.f32();
            }
        }
    }
    return sessions;
}

// ---- CSV emission with a stable header and fixed float formatting.

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
        : out_(path, std::ios::trunc), path_(path) {
        if (!out_) throw IoError("cannot open " + path.string() + " for writing");
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i) out_ << ',';
            out_ << header[i];
        }
        out_ << '\n';
        columns_ = header.size();
    }

    CsvWriter& field(const std::string& v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(std::uint64_t v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(long long v) {
        sep();
        out_ << v;
        return *this;
    }
    CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
    CsvWriter& field(std::size_t v) { return field(static_cast<std::uint64_t>(v)); }
    CsvWriter& field(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        sep();
        out_ << buf;
        return *this;
    }

    void end_row() {
        require(col_ == columns_, "CSV row width mismatch in " + path_.string());
        out_ << '\n';
        col_ = 0;
    }

private:
    void sep() {
        if (col_) out_ << ',';
        ++col_;
    }

    std::ofstream out_;
    std::filesystem::path path_;
    std::size_t columns_ = 0;
    std::size_t col_ = 0;
};

// ---- Run manifest: inputs/outputs with digests, seeds, timing.

struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<std::pair<std::string, std::string>> inputs;  // (path, digest)
    std::vector<std::pair<std::string, std::string>> outputs; // (path, digest)
    double wall_time_s = 0.0;

    void add_input(const std::filesystem::path& p) { inputs.emplace_back(p.string(), file_digest(p)); }
    void add_output(const std::filesystem::path& p) {
        outputs.emplace_back(p.string(), file_digest(p));
    }

    void write(const std::filesystem::path& path) const {
        nlohmann::json j{{"command", command},
                         {"seed", seed},
                         {"config", config},
                         {"wall_time_s", wall_time_s}};
        j["inputs"] = nlohmann::json::array();
        for (const auto& [p, d] : inputs) j["inputs"].push_back({{"path", p}, {"digest", d}});
        j["outputs"] = nlohmann::json::array();
        for (const auto& [p, d] : outputs) j["outputs"].push_back({{"path", p}, {"digest", d}});
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out << j.dump(2) << '\n';
    }
};

} // namespace erpkit
