#pragma once

// Mimicking networks: the teacher's feature extractor (frozen) followed by
// one or two small per-frame layers and a fresh classifier. Training runs in
// two phases: an MSE phase that regresses the teacher's mean-pooled block
// representations (final block, plus block i for two-layer mimics), then an
// NLL adaptation phase on the task labels.

#include "redundancy/error.hpp"
#include "redundancy/pruning.hpp"
#include "redundancy/similarity.hpp"
#include "redundancy/timing.hpp"
#include "redundancy/toy_model.hpp"
#include "redundancy/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace redundancy {

enum class MimicLayerType { linear_mimic, transformer };

inline std::string_view to_string(MimicLayerType t) {
    return t == MimicLayerType::linear_mimic ? "linear_mimic" : "transformer";
}

inline MimicLayerType parse_layer_type(std::string_view s) {
    if (s == "linear_mimic" || s == "linear" || s == "L") return MimicLayerType::linear_mimic;
    if (s == "transformer" || s == "T") return MimicLayerType::transformer;
    throw ConfigError("unknown mimic layer type '" + std::string(s) + "'");
}

struct MimicConfig {
    MimicLayerType layer_type = MimicLayerType::linear_mimic;
    int num_layers = 1;
    int z = 64;
    bool mimicking = true;
    std::optional<int> intermediate_layer; // teacher block i, 1-based
    bool nonlinearity = true;              // linear_mimic only

    void validate(int teacher_blocks) const {
        if (num_layers != 1 && num_layers != 2) throw ConfigError("mimic networks have 1 or 2 layers");
        if (z < 1) throw ConfigError("mimic bottleneck z must be positive");
        if (intermediate_layer && (*intermediate_layer < 1 || *intermediate_layer >= teacher_blocks))
            throw ConfigError("intermediate layer " + std::to_string(*intermediate_layer) + " must lie in 1.." +
                              std::to_string(teacher_blocks - 1));
    }

    friend bool operator==(const MimicConfig&, const MimicConfig&) = default;
};

inline void to_json(nlohmann::json& j, const MimicConfig& c) {
    j = nlohmann::json{{"layer_type", to_string(c.layer_type)},
                       {"num_layers", c.num_layers},
                       {"z", c.z},
                       {"mimicking", c.mimicking},
                       {"nonlinearity", c.nonlinearity}};
    j["intermediate_layer"] = c.intermediate_layer ? nlohmann::json(*c.intermediate_layer) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, MimicConfig& c) {
    c = MimicConfig{};
    c.layer_type = parse_layer_type(j.value("layer_type", std::string("linear_mimic")));
    c.num_layers = j.value("num_layers", 1);
    c.z = j.value("z", 64);
    c.mimicking = j.value("mimicking", true);
    c.nonlinearity = j.value("nonlinearity", true);
    if (j.contains("intermediate_layer") && !j.at("intermediate_layer").is_null())
        c.intermediate_layer = j.at("intermediate_layer").get<int>();
}

struct MimicNetwork {
    MimicConfig config;
    Network net;
    bool classifier_only = false;
};

/// Split point of the teacher's mutual-kNN similarity structure; the last
/// block of the first detected block is the default intermediate target.
inline int detect_intermediate_layer(const ActivationDump& teacher_dump, int k = kDefaultNeighbors) {
    return detect_blocks(similarity_matrix(teacher_dump, Metric::mutual_knn, k));
}

/// Fresh mimic layers and classifier on top of a copy of the teacher's
/// feature extractor. A two-layer config without an intermediate layer takes
/// it from block detection on `teacher_dump`.
inline MimicNetwork build_mimic(const ToyTransformer& teacher, MimicConfig config, std::uint64_t seed,
                                const ActivationDump* teacher_dump = nullptr) {
    const int blocks = static_cast<int>(teacher.num_blocks());
    config.validate(blocks);
    if (config.num_layers == 2 && !config.intermediate_layer) {
        if (!teacher_dump) throw ConfigError("two-layer mimic needs an intermediate layer or a teacher dump");
        config.intermediate_layer = detect_intermediate_layer(*teacher_dump);
        config.validate(blocks);
    }
    if (config.num_layers == 1) config.intermediate_layer.reset();

    MimicNetwork m;
    m.config = config;
    Rng rng(derive_seed(seed, "mimic/init"));
    const auto d = teacher.config.dim;
    m.net.extractor = teacher.net.extractor;
    for (int l = 0; l < config.num_layers; ++l) {
        if (config.layer_type == MimicLayerType::transformer)
            m.net.layers.emplace_back(nn::TransformerBlock(d, teacher.config.heads, config.z, rng));
        else
            m.net.layers.emplace_back(nn::LinearMimicLayer(d, config.z, rng, config.nonlinearity));
    }
    m.net.head = nn::Affine(d, teacher.config.classes, rng);
    return m;
}

/// Frozen teacher extractor plus a fresh affine classifier, no mimic layer.
inline MimicNetwork build_classifier_only(const ToyTransformer& teacher, std::uint64_t seed) {
    MimicNetwork m;
    m.classifier_only = true;
    m.config.mimicking = false;
    m.config.num_layers = 0;
    m.config.z = 0;
    Rng rng(derive_seed(seed, "mimic/init"));
    m.net.extractor = teacher.net.extractor;
    m.net.head = nn::Affine(teacher.config.dim, teacher.config.classes, rng);
    return m;
}

struct PhaseOptions {
    std::size_t epochs = 0;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t validation_subset = 256;
    std::size_t evals_per_epoch = 1;
    std::uint64_t seed = 0;
};

inline PhaseOptions default_mimic_phase() { return {50, 32, 1e-3, 256, 1, 0}; }
inline PhaseOptions default_adaptation_phase() { return {30, 32, 1e-3, 256, 1, 0}; }

/// Teacher representations regressed by the mimic layers, row-aligned with `data`.
inline RepresentationTargets mimic_targets(const ToyTransformer& teacher, const MimicConfig& config,
                                           const SynthDataset& data) {
    const auto dump = forward_with_activations(teacher, data);
    RepresentationTargets t;
    if (config.num_layers == 2) t.taps.emplace_back(0, dump.layers.at(static_cast<std::size_t>(*config.intermediate_layer - 1)));
    t.taps.emplace_back(static_cast<std::size_t>(config.num_layers - 1), dump.layers.back());
    return t;
}

namespace detail {
inline TrainOptions to_train_options(const PhaseOptions& p, std::size_t train_size) {
    TrainOptions o;
    o.steps = steps_for_epochs(p.epochs, train_size, p.batch_size);
    o.batch_size = p.batch_size;
    o.learning_rate = p.learning_rate;
    o.validation_subset = p.validation_subset;
    const std::size_t per_epoch = (train_size + p.batch_size - 1) / p.batch_size;
    o.eval_every = std::max<std::size_t>(1, per_epoch / std::max<std::size_t>(1, p.evals_per_epoch));
    o.seed = p.seed;
    o.train_extractor = false;
    return o;
}
} // namespace detail

/// Step 1: MSE between the mimic layers' pooled outputs and the teacher's
/// block representations. Only the mimic layers are updated.
inline TrainResult mimic_phase(MimicNetwork& network, const ToyTransformer& teacher, const SynthDataset& train_data,
                               const SynthDataset& validation_data, const PhaseOptions& options = default_mimic_phase()) {
    if (network.classifier_only || !network.config.mimicking)
        throw ConfigError("mimic phase requested for a network configured without mimicking");
    const auto train_targets = mimic_targets(teacher, network.config, train_data);
    const auto val_targets = mimic_targets(teacher, network.config, validation_data);
    TrainOptions o = detail::to_train_options(options, train_data.size());
    o.train_head = false;
    return train(network.net, train_data, validation_data, Objective::mse_to_targets, o, &train_targets, &val_targets);
}

/// Step 2: NLL fine-tuning of mimic layers and classifier; the extractor stays frozen.
inline TrainResult adaptation_phase(MimicNetwork& network, const SynthDataset& train_data,
                                    const SynthDataset& validation_data,
                                    const PhaseOptions& options = default_adaptation_phase()) {
    TrainOptions o = detail::to_train_options(options, train_data.size());
    return train(network.net, train_data, validation_data, Objective::nll, o);
}

enum class NetworkType { original, mimicker, non_mimicker, classifier_only };

inline std::string_view to_string(NetworkType t) {
    switch (t) {
    case NetworkType::original: return "Original";
    case NetworkType::mimicker: return "Mimicker";
    case NetworkType::non_mimicker: return "Non-mimicker";
    case NetworkType::classifier_only: return "ClassifierOnly";
    }
    return "?";
}

struct ComparisonRow {
    NetworkType network_type = NetworkType::original;
    std::string layer_type; // "T", "L" or "-"
    int num_layers = 0;
    std::optional<int> z;
    std::size_t num_params = 0;
    double normalized_time = 1.0;
    double accuracy = 0.0;
    double accuracy_se = 0.0;
    std::optional<MimicConfig> config;
};

struct CompareOptions {
    PhaseOptions mimic = default_mimic_phase();
    PhaseOptions adaptation = default_adaptation_phase();
    std::size_t warmup_steps = kDefaultWarmupSteps;
    std::size_t timing_runs = 256;
    std::uint64_t seed = 0;
};

struct CompareData {
    const SynthDataset& train;
    const SynthDataset& validation;
    const SynthDataset& test;
};

/// Trains every config (both phases, or adaptation only for non-mimickers)
/// and evaluates it against the teacher. Rows: Original, one per config in
/// order, ClassifierOnly.
inline std::vector<ComparisonRow> compare(const ToyTransformer& teacher, const std::vector<MimicConfig>& configs,
                                          const CompareData& data, const CompareOptions& options = {}) {
    const int L = static_cast<int>(teacher.num_blocks());
    for (const auto& c : configs) c.validate(L);
    std::optional<ActivationDump> teacher_dump;
    for (const auto& c : configs)
        if (c.num_layers == 2 && !c.intermediate_layer && !teacher_dump)
            teacher_dump = forward_with_activations(teacher, data.validation);

    std::vector<ComparisonRow> rows;
    const TimingReport reference = time_inference(teacher.net, data.test, options.warmup_steps, nullptr, options.timing_runs);
    {
        const auto ev = evaluate(teacher.net, data.test);
        rows.push_back({NetworkType::original, "T", L, std::nullopt, count_params(teacher), 1.0, ev.accuracy,
                        ev.standard_error, std::nullopt});
    }

    auto finish = [&](const MimicNetwork& m, NetworkType type) {
        const auto ev = evaluate(m.net, data.test);
        const auto timing = time_inference(m.net, data.test, options.warmup_steps, &reference, options.timing_runs);
        ComparisonRow row;
        row.network_type = type;
        row.num_params = m.net.num_params();
        row.normalized_time = timing.normalized_time;
        row.accuracy = ev.accuracy;
        row.accuracy_se = ev.standard_error;
        if (type == NetworkType::classifier_only) {
            row.layer_type = "-";
        } else {
            row.layer_type = m.config.layer_type == MimicLayerType::transformer ? "T" : "L";
            row.num_layers = m.config.num_layers;
            row.z = m.config.z;
            row.config = m.config;
        }
        rows.push_back(std::move(row));
    };

    for (std::size_t c = 0; c < configs.size(); ++c) {
        const std::uint64_t seed = derive_seed(options.seed, "mimic/config/" + std::to_string(c));
        MimicNetwork m = build_mimic(teacher, configs[c], seed, teacher_dump ? &*teacher_dump : nullptr);
        if (m.config.mimicking) {
            PhaseOptions p = options.mimic;
            p.seed = derive_seed(seed, "phase/mimic");
            mimic_phase(m, teacher, data.train, data.validation, p);
        }
        PhaseOptions p = options.adaptation;
        p.seed = derive_seed(seed, "phase/adaptation");
        adaptation_phase(m, data.train, data.validation, p);
        finish(m, m.config.mimicking ? NetworkType::mimicker : NetworkType::non_mimicker);
    }

    {
        const std::uint64_t seed = derive_seed(options.seed, "mimic/classifier-only");
        MimicNetwork m = build_classifier_only(teacher, seed);
        PhaseOptions p = options.adaptation;
        p.seed = derive_seed(seed, "phase/adaptation");
        adaptation_phase(m, data.train, data.validation, p);
        finish(m, NetworkType::classifier_only);
    }
    return rows;
}

/// Largest parameter count first; ties keep their input order.
inline void sort_by_params(std::vector<ComparisonRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) { return a.num_params > b.num_params; });
}

inline const char* kComparisonHeader =
    "network_type,layer_type,num_layers,z,num_parameters,inference_time_normalized,accuracy,accuracy_se\n";

inline void write_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << kComparisonHeader;
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%s,%zu,%.4g,%.6g,%.6g\n", std::string(to_string(r.network_type)).c_str(),
                      r.layer_type.c_str(), r.num_layers, r.z ? std::to_string(*r.z).c_str() : "-", r.num_params,
                      r.normalized_time, r.accuracy, r.accuracy_se);
        out << buf;
    }
}

inline nlohmann::json to_json(const std::vector<ComparisonRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j{{"network_type", to_string(r.network_type)},
                         {"layer_type", r.layer_type},
                         {"num_layers", r.num_layers},
                         {"num_parameters", r.num_params},
                         {"inference_time_normalized", r.normalized_time},
                         {"accuracy", r.accuracy},
                         {"accuracy_se", r.accuracy_se}};
        j["z"] = r.z ? nlohmann::json(*r.z) : nlohmann::json(nullptr);
        j["config"] = r.config ? nlohmann::json(*r.config) : nlohmann::json(nullptr);
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<MimicConfig> sweep_from_json(const nlohmann::json& j) {
    try {
        const auto& list = j.is_array() ? j : j.at("configs");
        return list.get<std::vector<MimicConfig>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed mimic sweep: " + std::string(e.what()));
    }
}

} // namespace redundancy
