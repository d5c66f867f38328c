#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "intra/config.hpp"
#include "intra/errors.hpp"
#include "intra/model.hpp"
#include "intra/scoring.hpp"
#include "intra/tensor.hpp"

namespace intra {

inline constexpr char kCheckpointMagic[4] = {'I', 'N', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr const char* kReferenceTensor = "reference.diff";

/// Everything needed to score images: the run configuration, the trained
/// parameters and (after training) the reference diff map.
struct Checkpoint {
    RunConfig config;
    std::size_t channels = 3;
    std::map<std::string, Tensor<float>> parameters;
    std::optional<ReferenceDiff> reference;

    ModelConfig model_config() const { return config.model(channels); }

    IntraModel<float> model() const { return IntraModel<float>(model_config(), parameters); }

    const ReferenceDiff& require_reference() const {
        if (!reference) throw ValueError("checkpoint has no '" + std::string(kReferenceTensor) + "' section (reference diff map); rerun training");
        return *reference;
    }

    static Checkpoint from(const RunConfig& config, const IntraModel<float>& model, std::optional<ReferenceDiff> reference = std::nullopt) {
        return {config, model.config().channels, model.named_parameters(), std::move(reference)};
    }
};

namespace detail {

class ByteWriter {
   public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float f) {
        std::uint32_t v;
        std::memcpy(&v, &f, 4);
        u32(v);
    }
    void str(const std::string& s) {
        if (s.size() > UINT32_MAX) throw ValueError("checkpoint: string too long");
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<unsigned char>& buffer() const { return buf_; }

   private:
    std::vector<unsigned char> buf_;
};

class ByteReader {
   public:
    explicit ByteReader(const std::vector<unsigned char>& buf) : buf_(buf) {}
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == buf_.size(); }

    void need(std::size_t n, const char* what) const {
        if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void f32s(float* out, std::size_t n, const char* what) {
        if (n > (buf_.size() - pos_) / 4) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t v = 0;
            for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(buf_[pos_ + b]) << (8 * b);
            std::memcpy(out + i, &v, 4);
            pos_ += 4;
        }
    }

   private:
    const std::vector<unsigned char>& buf_;
    std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.u8(kDtypeF32);
    for (float v : t.vec()) w.f32(v);
}

}  // namespace detail

/// Configuration text stored in a checkpoint: the run configuration plus
/// the keys that only make sense for a trained artifact.
inline std::string checkpoint_config_text(const Checkpoint& c) {
    std::string text = c.config.to_text();
    text += "channels = " + std::to_string(c.channels) + "\n";
    if (c.reference) text += "reference_count = " + std::to_string(c.reference->count) + "\n";
    return text;
}

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(checkpoint_config_text(c));
    // std::map iterates in byte-lexicographic order; the reference joins it.
    std::map<std::string, const Tensor<float>*> all;
    for (const auto& [name, t] : c.parameters) all[name] = &t;
    Tensor<float> ref_tensor;
    if (c.reference) {
        const Image& m = c.reference->map;
        if (m.channels != 1) throw ShapeError("checkpoint: reference map must have one channel");
        ref_tensor = Tensor<float>({m.height, m.width}, m.data);
        all[kReferenceTensor] = &ref_tensor;
    }
    w.u32(static_cast<std::uint32_t>(all.size()));
    for (const auto& [name, t] : all) detail::write_tensor(w, name, *t);
    return w.buffer();
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& buf) {
    detail::ByteReader r(buf);
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
    r.u32("magic");
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);

    const std::size_t text_at = r.offset();
    const std::string text = r.str("config text");
    Checkpoint c;
    std::string run_text;
    std::optional<std::size_t> reference_count;
    {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            const std::string key = RunConfig::trim(eq == std::string::npos ? line : line.substr(0, eq));
            const std::string value = eq == std::string::npos ? "" : RunConfig::trim(line.substr(eq + 1));
            try {
                if (key == "channels") c.channels = detail::parse_number<std::size_t>(key, value);
                else if (key == "reference_count") reference_count = detail::parse_number<std::size_t>(key, value);
                else run_text += line + "\n";
            } catch (const ConfigError& e) {
                throw FormatError(std::string("checkpoint config: ") + e.what(), text_at);
            }
        }
    }
    try {
        c.config = RunConfig::parse(run_text, "checkpoint config");
    } catch (const ConfigError& e) {
        throw FormatError(e.what(), text_at);
    }

    const std::uint32_t count = r.u32("tensor count");
    std::string previous;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_at = r.offset();
        std::string name = r.str("tensor name");
        if (i > 0 && !(previous < name)) throw FormatError("tensor '" + name + "' out of order or duplicated", entry_at);
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank), entry_at);
        Shape shape(rank);
        std::uint64_t numel = 1;
        for (auto& d : shape) {
            const std::uint64_t e = r.u64("tensor extent");
            if (e != 0 && numel > buf.size() / e) throw FormatError("tensor '" + name + "' larger than the file", entry_at);
            numel *= e;
            d = static_cast<std::size_t>(e);
        }
        const std::size_t dtype_at = r.offset();
        if (const auto dt = r.u8("dtype"); dt != kDtypeF32) throw FormatError("tensor '" + name + "' has unknown dtype " + std::to_string(dt), dtype_at);
        std::vector<float> data(static_cast<std::size_t>(numel));
        r.f32s(data.data(), data.size(), "tensor data");
        if (name == kReferenceTensor) {
            if (rank != 2) throw FormatError("reference map must be rank 2", entry_at);
            ReferenceDiff ref;
            ref.map = Image(shape[0], shape[1], 1);
            ref.map.data = std::move(data);
            ref.count = reference_count.value_or(1);
            c.reference = std::move(ref);
        } else {
            c.parameters.emplace(name, Tensor<float>(shape, std::move(data)));
        }
        previous = std::move(name);
    }
    if (!r.done()) throw FormatError("trailing bytes after last tensor", r.offset());
    return c;
}

/// Writes to a sibling temporary file and renames it into place, so a
/// failed write never leaves a partial checkpoint at `path`.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    const auto bytes = encode_checkpoint(c);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into '" + path.string() + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf);
}

}  // namespace intra
