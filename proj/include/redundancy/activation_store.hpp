#pragma once

#include "redundancy/error.hpp"
#include "redundancy/linalg.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace redundancy {

/// Per-layer activations of one input batch. layers[0] is the output of
/// transformer block 1; the feature-extractor output is never stored.
struct ActivationDump {
    std::vector<Mat> layers;
    std::optional<std::vector<std::uint32_t>> labels;
    std::optional<std::uint32_t> class_count;

    std::size_t num_layers() const noexcept { return layers.size(); }
    Eigen::Index num_samples() const noexcept { return layers.empty() ? 0 : layers.front().rows(); }
    Eigen::Index dim() const noexcept { return layers.empty() ? 0 : layers.front().cols(); }

    /// Throws ValidationError describing the first violated invariant.
    void validate() const {
        if (layers.size() < 2)
            throw ValidationError("activation dump needs at least 2 layers, got " +
                                  std::to_string(layers.size()));
        const auto n = num_samples();
        const auto d = dim();
        if (n < 1 || d < 1) throw ValidationError("activation dump has an empty layer");
        validate_shape(n, d);
    }

    /// As validate(), but against a declared (n, d) as read from a header.
    void validate_shape(Eigen::Index n, Eigen::Index d) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].rows() != n || layers[i].cols() != d)
                throw ValidationError("layer " + std::to_string(i) + " is " +
                                      std::to_string(layers[i].rows()) + "x" +
                                      std::to_string(layers[i].cols()) + ", expected " +
                                      std::to_string(n) + "x" + std::to_string(d));
            if (!layers[i].allFinite())
                throw ValidationError("layer " + std::to_string(i) + " contains non-finite values");
        }
        if (class_count && *class_count == 0) throw ValidationError("class_count must be positive");
        if (labels) {
            if (static_cast<Eigen::Index>(labels->size()) != n)
                throw ValidationError("label count " + std::to_string(labels->size()) +
                                      " does not match sample count " + std::to_string(n));
            if (class_count)
                for (std::size_t l = 0; l < labels->size(); ++l)
                    if ((*labels)[l] >= *class_count)
                        throw ValidationError("label " + std::to_string((*labels)[l]) + " of sample " +
                                              std::to_string(l) + " exceeds class_count " +
                                              std::to_string(*class_count));
        }
    }

    friend bool operator==(const ActivationDump& a, const ActivationDump& b) {
        if (a.labels != b.labels || a.class_count != b.class_count) return false;
        if (a.layers.size() != b.layers.size()) return false;
        for (std::size_t i = 0; i < a.layers.size(); ++i) {
            if (a.layers[i].rows() != b.layers[i].rows() || a.layers[i].cols() != b.layers[i].cols())
                return false;
            if (a.layers[i] != b.layers[i]) return false;
        }
        return true;
    }
};

namespace rsd {

inline constexpr std::array<unsigned char, 4> kMagic{0x52, 0x53, 0x44, 0x31}; // "RSD1"
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kFlagLabels = 1u << 0;
inline constexpr std::uint32_t kFlagClassCount = 1u << 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t checked_u32(Eigen::Index v, const char* what) {
    if (v < 0 || static_cast<std::uint64_t>(v) > 0xffffffffULL)
        throw ValidationError(std::string(what) + " does not fit the RSD1 u32 field");
    return static_cast<std::uint32_t>(v);
}

// Reads exactly `count` bytes or reports how many were available.
inline std::size_t read_bytes(std::istream& in, unsigned char* dst, std::size_t count) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count));
    return static_cast<std::size_t>(in.gcount());
}

} // namespace detail
} // namespace rsd

/// Serializes `dump` as RSD1. Output is a pure function of the dump.
inline void write_dump(const ActivationDump& dump, std::ostream& out) {
    using namespace rsd::detail;
    dump.validate();
    const auto n = dump.num_samples();
    const auto d = dump.dim();

    std::string buf;
    buf.reserve(24 + (dump.labels ? dump.labels->size() * 4 : 0) +
                dump.num_layers() * static_cast<std::size_t>(n * d) * 4);
    buf.append(reinterpret_cast<const char*>(rsd::kMagic.data()), rsd::kMagic.size());
    put_u32(buf, rsd::kVersion);
    put_u32(buf, checked_u32(static_cast<Eigen::Index>(dump.num_layers()), "layer count"));
    put_u32(buf, checked_u32(n, "sample count"));
    put_u32(buf, checked_u32(d, "dimension"));
    std::uint32_t flags = 0;
    if (dump.labels) flags |= rsd::kFlagLabels;
    if (dump.class_count) flags |= rsd::kFlagClassCount;
    put_u32(buf, flags);
    if (dump.class_count) put_u32(buf, *dump.class_count);
    if (dump.labels)
        for (auto label : *dump.labels) put_u32(buf, label);
    for (const auto& layer : dump.layers)
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index c = 0; c < d; ++c)
                put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(layer(r, c))));

    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed to write activation dump");
}

inline void write_dump(const ActivationDump& dump, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_dump(dump, out);
    out.flush();
    if (!out) throw IoError("failed to write " + path.string());
}

inline ActivationDump read_dump(std::istream& in) {
    using namespace rsd::detail;

    std::array<unsigned char, 4> magic{};
    if (read_bytes(in, magic.data(), 4) != 4 || magic != rsd::kMagic)
        throw BadMagicError("not an RSD1 activation dump (bad magic)");

    std::array<unsigned char, 20> header{};
    if (read_bytes(in, header.data(), header.size()) != header.size())
        throw TruncatedError("activation dump truncated inside the header", -1);
    const auto version = get_u32(header.data());
    if (version != rsd::kVersion)
        throw VersionMismatchError("unsupported RSD1 version " + std::to_string(version), version);
    const std::uint32_t num_layers = get_u32(header.data() + 4);
    const std::uint32_t n = get_u32(header.data() + 8);
    const std::uint32_t d = get_u32(header.data() + 12);
    const std::uint32_t flags = get_u32(header.data() + 16);
    if ((flags & ~(rsd::kFlagLabels | rsd::kFlagClassCount)) != 0)
        throw FormatError("unknown RSD1 flag bits " + std::to_string(flags));
    if (num_layers < 2 || n == 0 || d == 0)
        throw ValidationError("RSD1 header declares L=" + std::to_string(num_layers) +
                              ", n=" + std::to_string(n) + ", d=" + std::to_string(d));

    ActivationDump dump;
    unsigned char word[4];
    if (flags & rsd::kFlagClassCount) {
        if (read_bytes(in, word, 4) != 4) throw TruncatedError("activation dump truncated at class_count", -1);
        dump.class_count = get_u32(word);
    }
    if (flags & rsd::kFlagLabels) {
        std::vector<unsigned char> raw(static_cast<std::size_t>(n) * 4);
        if (read_bytes(in, raw.data(), raw.size()) != raw.size())
            throw TruncatedError("activation dump truncated inside the label block", -1);
        std::vector<std::uint32_t> labels(n);
        for (std::uint32_t l = 0; l < n; ++l) labels[l] = get_u32(raw.data() + 4 * l);
        dump.labels = std::move(labels);
    }

    const std::size_t layer_bytes = static_cast<std::size_t>(n) * d * 4;
    std::vector<unsigned char> raw(layer_bytes);
    dump.layers.reserve(num_layers);
    for (std::uint32_t i = 0; i < num_layers; ++i) {
        if (read_bytes(in, raw.data(), layer_bytes) != layer_bytes)
            throw TruncatedError("activation dump truncated inside layer " + std::to_string(i),
                                 static_cast<long>(i));
        Mat layer(n, d);
        for (std::size_t e = 0; e < static_cast<std::size_t>(n) * d; ++e)
            layer.data()[e] = static_cast<double>(std::bit_cast<float>(get_u32(raw.data() + 4 * e)));
        dump.layers.push_back(std::move(layer));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after RSD1 payload");

    dump.validate_shape(n, d);
    return dump;
}

inline ActivationDump read_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_dump(in);
}

/// Column-centered copy of a layer matrix. Only `center` constructs one, so
/// holding a CenteredView is proof the columns have zero mean.
class CenteredView {
public:
    const Mat& matrix() const noexcept { return m_; }
    Eigen::Index rows() const noexcept { return m_.rows(); }
    Eigen::Index cols() const noexcept { return m_.cols(); }
    auto row(Eigen::Index r) const { return m_.row(r); }

private:
    explicit CenteredView(Mat m) : m_(std::move(m)) {}
    friend CenteredView center(const Eigen::Ref<const Mat>& a);
    Mat m_;
};

inline CenteredView center(const Eigen::Ref<const Mat>& a) {
    const RowVec mean = a.colwise().mean();
    Mat out = a.rowwise() - mean;
    return CenteredView(std::move(out));
}

} // namespace redundancy
