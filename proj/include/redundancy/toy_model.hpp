#pragma once

#include "redundancy/activation_store.hpp"
#include "redundancy/dataset.hpp"
#include "redundancy/error.hpp"
#include "redundancy/network.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace redundancy {

struct ToyConfig {
    int num_blocks = 8;
    int dim = 32;
    int heads = 4;
    int ff_dim = 64;
    int frames = 32;
    int input_dim = 8;
    int classes = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_blocks < 1 || dim < 1 || heads < 1 || ff_dim < 1 || frames < 1 || input_dim < 1 || classes < 2)
            throw ConfigError("toy config dimensions must be positive (and classes >= 2)");
        if (dim % heads != 0)
            throw ConfigError("model dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                              " heads");
    }

    DatasetShape dataset_shape() const { return {frames, input_dim, classes}; }

    friend bool operator==(const ToyConfig&, const ToyConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ToyConfig& c) {
    j = nlohmann::json{{"num_blocks", c.num_blocks}, {"dim", c.dim},         {"heads", c.heads},
                       {"ff_dim", c.ff_dim},         {"frames", c.frames},   {"input_dim", c.input_dim},
                       {"classes", c.classes},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ToyConfig& c) {
    ToyConfig d;
    c.num_blocks = j.value("num_blocks", d.num_blocks);
    c.dim = j.value("dim", d.dim);
    c.heads = j.value("heads", d.heads);
    c.ff_dim = j.value("ff_dim", d.ff_dim);
    c.frames = j.value("frames", d.frames);
    c.input_dim = j.value("input_dim", d.input_dim);
    c.classes = j.value("classes", d.classes);
    c.seed = j.value("seed", d.seed);
}

/// Toy encoder classifier. `block_ids` holds the original 1-based index of
/// every surviving block, so pruned models keep their provenance.
struct ToyTransformer {
    ToyConfig config;
    Network net;
    std::vector<int> block_ids;

    std::size_t num_blocks() const noexcept { return net.layers.size(); }

    static ToyTransformer create(const ToyConfig& config) {
        config.validate();
        ToyTransformer m;
        m.config = config;
        Rng rng(derive_seed(config.seed, "model/init"));
        m.net.extractor = nn::FeatureExtractor(config.input_dim, config.dim, config.frames, rng);
        for (int b = 0; b < config.num_blocks; ++b) {
            m.net.layers.emplace_back(nn::TransformerBlock(config.dim, config.heads, config.ff_dim, rng));
            m.block_ids.push_back(b + 1);
        }
        m.net.head = nn::Affine(config.dim, config.classes, rng);
        return m;
    }
};

/// Parameters of one block: two norms, four attention projections, two
/// feedforward projections.
constexpr std::size_t block_param_count(std::size_t d, std::size_t ff) {
    return 2 * (2 * d) + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d);
}

inline std::size_t count_params(const ToyTransformer& m) { return m.net.num_params(); }

/// Log-probabilities of a single T x D input.
inline RowVec forward(const ToyTransformer& m, const Mat& input) {
    if (input.rows() != m.config.frames || input.cols() != m.config.input_dim)
        throw ValidationError("input is " + std::to_string(input.rows()) + "x" + std::to_string(input.cols()) +
                              ", expected " + std::to_string(m.config.frames) + "x" +
                              std::to_string(m.config.input_dim));
    return m.net.log_probs(input).row(0);
}

inline constexpr std::size_t kActivationBatch = 64;

/// Mean-pooled output of every surviving block for the first `count` samples
/// (all when zero), labels attached.
inline ActivationDump forward_with_activations(const ToyTransformer& m, const SynthDataset& data,
                                               std::size_t count = 0) {
    const std::size_t n = count == 0 ? data.size() : std::min(count, data.size());
    if (n == 0) throw ValidationError("no samples to extract activations from");
    if (data.input_dim() != m.config.input_dim || data.frames != m.config.frames)
        throw ValidationError("dataset shape does not match the model");
    ActivationDump dump;
    dump.layers.assign(m.num_blocks(), Mat(static_cast<Eigen::Index>(n), m.config.dim));
    for (std::size_t start = 0; start < n; start += kActivationBatch) {
        const std::size_t stop = std::min(n, start + kActivationBatch);
        const Mat batch = data.inputs.middleRows(static_cast<Eigen::Index>(start) * data.frames,
                                                 static_cast<Eigen::Index>(stop - start) * data.frames);
        const auto pooled = m.net.pooled_outputs(batch);
        for (std::size_t i = 0; i < pooled.size(); ++i)
            dump.layers[i].middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
                pooled[i];
    }
    std::vector<std::uint32_t> labels(n);
    for (std::size_t l = 0; l < n; ++l) labels[l] = static_cast<std::uint32_t>(data.labels[l]);
    dump.labels = std::move(labels);
    dump.class_count = static_cast<std::uint32_t>(m.config.classes);
    dump.validate();
    return dump;
}

// Checkpoints: "RTC1" magic, u32 version, u64 value count, then every
// parameter as a little-endian IEEE-754 double in for_each_param order. The
// config and surviving block ids live in a JSON sidecar (<path>.json).
namespace checkpoint {
inline constexpr std::array<char, 4> kMagic{'R', 'T', 'C', '1'};
inline constexpr std::uint32_t kVersion = 1;

inline std::filesystem::path sidecar(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}
} // namespace checkpoint

inline void save_checkpoint(const ToyTransformer& m, const std::filesystem::path& path) {
    std::string buf(checkpoint::kMagic.begin(), checkpoint::kMagic.end());
    auto put = [&](std::uint64_t v, int bytes) {
        for (int b = 0; b < bytes; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
    };
    put(checkpoint::kVersion, 4);
    put(count_params(m), 8);
    m.net.for_each_param([&](const nn::Param& p, ParamGroup) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) put(std::bit_cast<std::uint64_t>(p.value.data()[i]), 8);
    });
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("failed to write " + path.string());
    }
    nlohmann::json side{{"format", "toy-transformer-checkpoint"},
                        {"version", checkpoint::kVersion},
                        {"config", m.config},
                        {"block_ids", m.block_ids}};
    std::ofstream out(checkpoint::sidecar(path), std::ios::trunc);
    if (!out) throw IoError("cannot open " + checkpoint::sidecar(path).string() + " for writing");
    out << side.dump(2) << '\n';
    if (!out) throw IoError("failed to write " + checkpoint::sidecar(path).string());
}

inline ToyTransformer load_checkpoint(const std::filesystem::path& path) {
    std::ifstream side_in(checkpoint::sidecar(path));
    if (!side_in) throw IoError("cannot open " + checkpoint::sidecar(path).string());
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(side_in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint sidecar: " + std::string(e.what()));
    }
    if (side.value("version", 0u) != checkpoint::kVersion)
        throw VersionMismatchError("unsupported checkpoint version", side.value("version", 0u));

    ToyConfig config = side.at("config").get<ToyConfig>();
    ToyTransformer m = ToyTransformer::create(config);
    const auto ids = side.at("block_ids").get<std::vector<int>>();
    std::vector<FrameLayer> kept;
    for (int id : ids) {
        if (id < 1 || id > config.num_blocks) throw FormatError("checkpoint names block " + std::to_string(id));
        kept.push_back(m.net.layers[static_cast<std::size_t>(id - 1)]);
    }
    m.net.layers = std::move(kept);
    m.block_ids = ids;

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() < 16 || !std::equal(checkpoint::kMagic.begin(), checkpoint::kMagic.end(), raw.begin()))
        throw BadMagicError(path.string() + " is not a toy-transformer checkpoint");
    auto get = [&](std::size_t at, int bytes) {
        std::uint64_t v = 0;
        for (int b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[at + b])) << (8 * b);
        return v;
    };
    if (get(4, 4) != checkpoint::kVersion)
        throw VersionMismatchError("unsupported checkpoint version", static_cast<unsigned>(get(4, 4)));
    const std::uint64_t count = get(8, 8);
    if (count != count_params(m))
        throw FormatError("checkpoint holds " + std::to_string(count) + " values, model needs " +
                          std::to_string(count_params(m)));
    if (raw.size() != 16 + 8 * count) throw TruncatedError("checkpoint payload has the wrong length", -1);
    std::size_t at = 16;
    m.net.for_each_param([&](nn::Param& p, ParamGroup) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i, at += 8) p.value.data()[i] = std::bit_cast<double>(get(at, 8));
        p.zero_grad();
    });
    return m;
}

} // namespace redundancy
