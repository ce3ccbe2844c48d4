#pragma once

// Experiment stages driven by a JSON manifest. Each stage reads and writes
// plain files in one output directory so stages can be rerun independently.

#include "redundancy/activation_store.hpp"
#include "redundancy/dataset.hpp"
#include "redundancy/error.hpp"
#include "redundancy/mimic.hpp"
#include "redundancy/pruning.hpp"
#include "redundancy/similarity.hpp"
#include "redundancy/toy_model.hpp"
#include "redundancy/training.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace redundancy {

namespace fs = std::filesystem;

struct DatasetSpec {
    std::size_t train = 2048;
    std::size_t validation = 512;
    std::size_t test = 1024;
    double noise = 0.5;
};

struct TeacherTraining {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double layer_drop = 0.0;
    std::size_t validation_subset = 0;
};

struct MimicSweep {
    std::vector<MimicConfig> configs;
    std::size_t mimic_epochs = 50;
    std::size_t adaptation_epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t validation_subset = 256;
    std::size_t warmup_steps = kDefaultWarmupSteps;
    std::size_t timing_runs = 256;
};

struct ExperimentManifest {
    std::uint64_t seed = 0;
    ToyConfig toy;
    DatasetSpec dataset;
    TeacherTraining training;
    std::vector<Metric> metrics{Metric::cosine, Metric::cka, Metric::mutual_knn};
    int k = kDefaultNeighbors;
    std::size_t dump_samples = 512; // drawn from the validation split
    std::vector<Heuristic> heuristics{Heuristic::forward, Heuristic::backward, Heuristic::bi, Heuristic::knn_bi};
    MimicSweep mimic;
    fs::path output_dir = "out";

    SynthData data() const {
        return generate_dataset(toy.dataset_shape(), SplitSizes{dataset.train, dataset.validation, dataset.test}, seed,
                                DatasetOptions{dataset.noise, 0});
    }

    CompareOptions compare_options() const {
        CompareOptions o;
        o.mimic = {mimic.mimic_epochs, mimic.batch_size, mimic.learning_rate, mimic.validation_subset, 1, 0};
        o.adaptation = {mimic.adaptation_epochs, mimic.batch_size, mimic.learning_rate, mimic.validation_subset, 1, 0};
        o.warmup_steps = mimic.warmup_steps;
        o.timing_runs = mimic.timing_runs;
        o.seed = derive_seed(seed, "stage/mimic");
        return o;
    }
};

inline nlohmann::json to_json(const ExperimentManifest& m) {
    nlohmann::json metrics = nlohmann::json::array(), heuristics = nlohmann::json::array();
    for (auto x : m.metrics) metrics.push_back(to_string(x));
    for (auto h : m.heuristics) heuristics.push_back(to_string(h));
    nlohmann::json toy = m.toy;
    toy.erase("seed");
    return nlohmann::json{
        {"seed", m.seed},
        {"toy", toy},
        {"dataset",
         {{"train", m.dataset.train}, {"validation", m.dataset.validation}, {"test", m.dataset.test}, {"noise", m.dataset.noise}}},
        {"training",
         {{"epochs", m.training.epochs},
          {"batch_size", m.training.batch_size},
          {"learning_rate", m.training.learning_rate},
          {"optimizer", to_string(m.training.optimizer)},
          {"layer_drop", m.training.layer_drop},
          {"validation_subset", m.training.validation_subset}}},
        {"metrics", metrics},
        {"k", m.k},
        {"dump_samples", m.dump_samples},
        {"heuristics", heuristics},
        {"mimic",
         {{"configs", m.mimic.configs},
          {"mimic_epochs", m.mimic.mimic_epochs},
          {"adaptation_epochs", m.mimic.adaptation_epochs},
          {"batch_size", m.mimic.batch_size},
          {"learning_rate", m.mimic.learning_rate},
          {"validation_subset", m.mimic.validation_subset},
          {"warmup_steps", m.mimic.warmup_steps},
          {"timing_runs", m.mimic.timing_runs}}},
        {"output_dir", m.output_dir.generic_string()}};
}

inline ExperimentManifest manifest_from_json(const nlohmann::json& j) {
    ExperimentManifest m;
    try {
        if (!j.contains("seed") || j.at("seed").is_null()) throw ConfigError("manifest has no seed");
        m.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("toy")) m.toy = j.at("toy").get<ToyConfig>();
        m.toy.seed = m.seed;
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            m.dataset.train = d.value("train", m.dataset.train);
            m.dataset.validation = d.value("validation", m.dataset.validation);
            m.dataset.test = d.value("test", m.dataset.test);
            m.dataset.noise = d.value("noise", m.dataset.noise);
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            m.training.epochs = t.value("epochs", m.training.epochs);
            m.training.batch_size = t.value("batch_size", m.training.batch_size);
            m.training.learning_rate = t.value("learning_rate", m.training.learning_rate);
            m.training.optimizer = parse_optimizer(t.value("optimizer", std::string("adam")));
            m.training.layer_drop = t.value("layer_drop", m.training.layer_drop);
            m.training.validation_subset = t.value("validation_subset", m.training.validation_subset);
        }
        if (j.contains("metrics")) {
            m.metrics.clear();
            for (const auto& s : j.at("metrics")) m.metrics.push_back(parse_metric(s.get<std::string>()));
        }
        m.k = j.value("k", m.k);
        m.dump_samples = j.value("dump_samples", m.dump_samples);
        if (j.contains("heuristics")) {
            m.heuristics.clear();
            for (const auto& s : j.at("heuristics")) m.heuristics.push_back(parse_heuristic(s.get<std::string>()));
        }
        if (j.contains("mimic")) {
            const auto& s = j.at("mimic");
            if (s.contains("configs")) m.mimic.configs = sweep_from_json(s.at("configs"));
            m.mimic.mimic_epochs = s.value("mimic_epochs", m.mimic.mimic_epochs);
            m.mimic.adaptation_epochs = s.value("adaptation_epochs", m.mimic.adaptation_epochs);
            m.mimic.batch_size = s.value("batch_size", m.mimic.batch_size);
            m.mimic.learning_rate = s.value("learning_rate", m.mimic.learning_rate);
            m.mimic.validation_subset = s.value("validation_subset", m.mimic.validation_subset);
            m.mimic.warmup_steps = s.value("warmup_steps", m.mimic.warmup_steps);
            m.mimic.timing_runs = s.value("timing_runs", m.mimic.timing_runs);
        }
        m.output_dir = j.value("output_dir", std::string("out"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed manifest: " + std::string(e.what()));
    }
    m.toy.validate();
    if (m.dump_samples == 0 || m.dump_samples > m.dataset.validation)
        throw ConfigError("dump_samples must lie in 1..validation split size");
    for (const auto& c : m.mimic.configs) c.validate(m.toy.num_blocks);
    return m;
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline ExperimentManifest load_manifest(const fs::path& path) { return manifest_from_json(read_json(path)); }

namespace artifacts {
inline const std::string manifest = "manifest.json";
inline const std::string checkpoint = "teacher.rtc";
inline const std::string checkpoint_sidecar = "teacher.rtc.json";
inline const std::string teacher_metrics = "teacher_metrics.json";
inline const std::string dump = "activations.rsd";
inline const std::string block_structure = "block_structure.json";
inline const std::string block_influence = "block_influence.json";
inline const std::string comparison_csv = "mimic_comparison.csv";
inline const std::string comparison_json = "mimic_comparison.json";
inline const std::string bundle = "bundle.json";

inline std::string similarity_csv(Metric m) { return "similarity_" + std::string(to_string(m)) + ".csv"; }
inline std::string similarity_json(Metric m) { return "similarity_" + std::string(to_string(m)) + ".json"; }
inline std::string plan(Heuristic h) { return "plan_" + std::string(to_string(h)) + ".json"; }
inline std::string retention(Heuristic h) { return "retention_" + std::string(to_string(h)) + ".csv"; }

/// Every file a complete run leaves behind, in bundle order.
inline std::vector<std::string> expected(const ExperimentManifest& m) {
    std::vector<std::string> out{manifest, checkpoint, checkpoint_sidecar, teacher_metrics, dump};
    for (auto metric : m.metrics) {
        out.push_back(similarity_csv(metric));
        out.push_back(similarity_json(metric));
    }
    out.push_back(block_structure);
    out.push_back(block_influence);
    for (auto h : m.heuristics) {
        out.push_back(plan(h));
        out.push_back(retention(h));
    }
    out.push_back(comparison_csv);
    out.push_back(comparison_json);
    return out;
}
} // namespace artifacts

inline void require_directory(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("output directory " + dir.string() + " does not exist");
}

template <class Writer>
void write_file(const fs::path& path, Writer&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    writer(out);
    if (!out) throw IoError("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    write_file(path, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

inline std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

inline std::string manifest_hash(const ExperimentManifest& m) { return sha256_hex(to_json(m).dump()); }

struct TeacherReport {
    double test_accuracy = 0.0;
    double test_standard_error = 0.0;
    double test_nll = 0.0;
    double best_validation_loss = 0.0;
    std::size_t best_step = 0;
    std::size_t steps = 0;
    std::size_t num_params = 0;
};

inline nlohmann::json to_json(const TeacherReport& r) {
    return nlohmann::json{{"test_accuracy", r.test_accuracy}, {"test_standard_error", r.test_standard_error},
                          {"test_nll", r.test_nll},           {"best_validation_loss", r.best_validation_loss},
                          {"best_step", r.best_step},         {"steps", r.steps},
                          {"num_params", r.num_params}};
}

/// Trains the teacher, then writes the resolved manifest, checkpoint and
/// test metrics into the output directory.
inline TeacherReport cmd_train_teacher(const ExperimentManifest& m) {
    require_directory(m.output_dir);
    const auto data = m.data();
    auto teacher = ToyTransformer::create(m.toy);
    TrainOptions o;
    o.steps = steps_for_epochs(m.training.epochs, data.train.size(), m.training.batch_size);
    o.batch_size = m.training.batch_size;
    o.learning_rate = m.training.learning_rate;
    o.optimizer = m.training.optimizer;
    o.validation_subset = m.training.validation_subset;
    o.layer_drop = m.training.layer_drop;
    o.seed = derive_seed(m.seed, "stage/teacher");
    const auto trained = train(teacher.net, data.train, data.validation, Objective::nll, o);
    const auto ev = evaluate(teacher.net, data.test);

    TeacherReport r{ev.accuracy, ev.standard_error, ev.mean_nll, trained.best_validation_loss,
                    trained.best_step, trained.steps, count_params(teacher)};
    write_json(m.output_dir / artifacts::manifest, to_json(m));
    save_checkpoint(teacher, m.output_dir / artifacts::checkpoint);
    write_json(m.output_dir / artifacts::teacher_metrics, to_json(r));
    return r;
}

/// Mean-pooled block outputs of the teacher on the first `dump_samples`
/// validation inputs, labels attached.
inline ActivationDump cmd_extract(const ExperimentManifest& m, const fs::path& checkpoint, const fs::path& out) {
    const auto teacher = load_checkpoint(checkpoint);
    const auto data = m.data();
    auto dump = forward_with_activations(teacher, data.validation, m.dump_samples);
    write_dump(dump, out);
    return dump;
}

/// One CSV and JSON matrix per metric plus the detected split of each.
inline std::vector<SimilarityMatrix> cmd_similarity(const fs::path& dump_path, const std::vector<Metric>& metrics,
                                                    std::optional<int> k, const fs::path& out_dir) {
    require_directory(out_dir);
    const auto dump = read_dump(dump_path);
    std::vector<SimilarityMatrix> out;
    nlohmann::json blocks = nlohmann::json::object();
    for (auto metric : metrics) {
        auto s = similarity_matrix(dump, metric, metric == Metric::mutual_knn ? k : std::nullopt);
        write_file(out_dir / artifacts::similarity_csv(metric), [&](std::ostream& o) { write_csv(s, o); });
        write_json(out_dir / artifacts::similarity_json(metric), to_json(s));
        if (s.size() >= 3) blocks[std::string(to_string(metric))] = detect_blocks(s);
        out.push_back(std::move(s));
    }
    write_json(out_dir / artifacts::block_structure, blocks);
    return out;
}

/// Block influence scores, one plan and one retention curve per heuristic,
/// evaluated on the test split.
inline std::vector<RetentionCurve> cmd_prune(const ExperimentManifest& m, const fs::path& checkpoint,
                                             const fs::path& dump_path, const std::vector<Heuristic>& heuristics,
                                             const fs::path& out_dir) {
    require_directory(out_dir);
    const auto teacher = load_checkpoint(checkpoint);
    const auto dump = read_dump(dump_path);
    if (dump.num_layers() != teacher.num_blocks())
        throw ValidationError("dump has " + std::to_string(dump.num_layers()) + " layers, checkpoint has " +
                              std::to_string(teacher.num_blocks()) + " blocks");
    const auto data = m.data();
    const auto cos_bi = block_influence(dump, BiVariant::cosine_bi);
    const auto knn_bi = block_influence(dump, BiVariant::knn_bi, m.k);
    write_json(out_dir / artifacts::block_influence,
               nlohmann::json{{"bi", cos_bi.scores}, {"knn_bi", knn_bi.scores}, {"k", *knn_bi.k}, {"first_block", 2}});

    std::vector<RetentionCurve> curves;
    const int L = static_cast<int>(teacher.num_blocks());
    for (auto h : heuristics) {
        const auto plan = prune_order(h, h == Heuristic::knn_bi ? &knn_bi : &cos_bi, L);
        write_json(out_dir / artifacts::plan(h), to_json(plan));
        auto curve = retention_curve(teacher, plan, data.test);
        write_file(out_dir / artifacts::retention(h), [&](std::ostream& o) { write_csv(curve, o); });
        curves.push_back(std::move(curve));
    }
    return curves;
}

/// Trains and compares the sweep against the teacher; rows sorted by
/// parameter count, largest first.
inline std::vector<ComparisonRow> cmd_mimic(const ExperimentManifest& m, const fs::path& checkpoint,
                                            const std::vector<MimicConfig>& sweep, const fs::path& out_dir) {
    require_directory(out_dir);
    const auto teacher = load_checkpoint(checkpoint);
    const auto data = m.data();
    auto rows = compare(teacher, sweep, CompareData{data.train, data.validation, data.test}, m.compare_options());
    sort_by_params(rows);
    write_file(out_dir / artifacts::comparison_csv, [&](std::ostream& o) { write_csv(rows, o); });
    write_json(out_dir / artifacts::comparison_json, to_json(rows));
    return rows;
}

struct ReportResult {
    nlohmann::json bundle;
    std::vector<std::string> missing;
    bool complete() const { return missing.empty(); }
};

/// Collects every expected artifact into bundle.json: JSON files inline,
/// CSV files as text, binaries by hash. Missing files are listed.
inline ReportResult cmd_report(const fs::path& out_dir, const std::optional<ExperimentManifest>& manifest = std::nullopt) {
    require_directory(out_dir);
    ExperimentManifest m;
    if (manifest)
        m = *manifest;
    else if (fs::exists(out_dir / artifacts::manifest))
        m = load_manifest(out_dir / artifacts::manifest);
    else
        throw IoError("no manifest given and none found in " + out_dir.string());

    ReportResult r;
    nlohmann::json files = nlohmann::json::object();
    for (const auto& name : artifacts::expected(m)) {
        const auto path = out_dir / name;
        if (!fs::exists(path)) {
            r.missing.push_back(name);
            continue;
        }
        const std::string bytes = read_bytes(path);
        nlohmann::json entry{{"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}};
        if (path.extension() == ".json")
            entry["content"] = nlohmann::json::parse(bytes);
        else if (path.extension() == ".csv")
            entry["text"] = bytes;
        files[name] = std::move(entry);
    }
    r.bundle = nlohmann::json{{"manifest", to_json(m)},
                              {"manifest_sha256", manifest_hash(m)},
                              {"artifacts", files},
                              {"missing", r.missing},
                              {"complete", r.complete()}};
    write_json(out_dir / artifacts::bundle, r.bundle);
    return r;
}

} // namespace redundancy
