// redundancy: command-line front end for the toy teacher experiments.
//
//   redundancy train-teacher --manifest configs/default.json --out runs/a
//   redundancy extract       --out runs/a
//   redundancy similarity    --out runs/a [--metric cka] [--k 8]
//   redundancy prune         --out runs/a [--heuristic bi]
//   redundancy mimic         --out runs/a [--sweep configs/sweep.json]
//   redundancy report        --out runs/a
//   redundancy run           --manifest configs/default.json --out runs/a
//
// Exit status: 0 ok, 2 invalid input or configuration, 3 training failure,
// 4 filesystem failure or incomplete report, 1 anything else.

#include "redundancy/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace redundancy;

namespace {

enum Exit { ok = 0, other = 1, validation = 2, training = 3, io = 4 };

struct Common {
    std::string manifest;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--manifest", c.manifest, "experiment manifest (JSON)");
    cmd->add_option("--seed", c.seed, "override the manifest seed");
    cmd->add_option("--out", c.out, "output directory (must exist)");
}

ExperimentManifest resolve(const Common& c) {
    ExperimentManifest m;
    if (!c.manifest.empty()) {
        m = load_manifest(c.manifest);
    } else if (!c.out.empty() && fs::exists(fs::path(c.out) / artifacts::manifest)) {
        m = load_manifest(fs::path(c.out) / artifacts::manifest);
    } else {
        throw ConfigError("no --manifest given and no manifest.json in the output directory");
    }
    if (c.seed) {
        m.seed = *c.seed;
        m.toy.seed = *c.seed;
    }
    if (!c.out.empty()) m.output_dir = c.out;
    return m;
}

fs::path or_default(const std::string& given, const fs::path& dir, const std::string& name) {
    return given.empty() ? dir / name : fs::path(given);
}

void print_teacher(const TeacherReport& r) {
    std::printf("teacher: %zu params, test accuracy %.4f +- %.4f (best step %zu of %zu)\n", r.num_params,
                r.test_accuracy, r.test_standard_error, r.best_step, r.steps);
}

void print_curves(const std::vector<RetentionCurve>& curves) {
    for (const auto& c : curves) {
        std::printf("%-8s", std::string(to_string(c.heuristic)).c_str());
        for (const auto& p : c.points) std::printf(" %.3f", p.accuracy);
        std::printf("   (%d blocks removable at 95%% retention)\n", c.max_pruned_at(0.95));
    }
}

void print_rows(const std::vector<ComparisonRow>& rows) { write_csv(rows, std::cout); }

int report(const fs::path& dir, const std::optional<ExperimentManifest>& m) {
    const auto r = cmd_report(dir, m);
    std::printf("wrote %s\n", (dir / artifacts::bundle).string().c_str());
    if (r.complete()) return ok;
    for (const auto& name : r.missing) std::fprintf(stderr, "missing: %s\n", name.c_str());
    return io;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer redundancy analysis, pruning and mimicking on a toy transformer"};
    app.require_subcommand(1);

    Common common;
    std::string checkpoint, dump, sweep;
    std::vector<std::string> metric_names, heuristic_names;
    std::optional<int> k;

    auto* train_cmd = app.add_subcommand("train-teacher", "train the toy teacher and write its checkpoint");
    add_common(train_cmd, common);

    auto* extract_cmd = app.add_subcommand("extract", "write the teacher's per-block activations (RSD1)");
    add_common(extract_cmd, common);
    extract_cmd->add_option("--checkpoint", checkpoint, "teacher checkpoint (default <out>/teacher.rtc)");
    extract_cmd->add_option("--dump", dump, "dump path (default <out>/activations.rsd)");

    auto* sim_cmd = app.add_subcommand("similarity", "layer-by-layer similarity matrices");
    add_common(sim_cmd, common);
    sim_cmd->add_option("--dump", dump, "activation dump (default <out>/activations.rsd)");
    sim_cmd->add_option("--metric", metric_names, "cosine, cka, mutual_knn (repeatable)");
    sim_cmd->add_option("--k", k, "neighbors for mutual_knn");

    auto* prune_cmd = app.add_subcommand("prune", "pruning plans and retention curves");
    add_common(prune_cmd, common);
    prune_cmd->add_option("--checkpoint", checkpoint, "teacher checkpoint (default <out>/teacher.rtc)");
    prune_cmd->add_option("--dump", dump, "activation dump (default <out>/activations.rsd)");
    prune_cmd->add_option("--heuristic", heuristic_names, "forward, backward, bi, knn_bi (repeatable)");

    auto* mimic_cmd = app.add_subcommand("mimic", "train mimicking networks and compare them with the teacher");
    add_common(mimic_cmd, common);
    mimic_cmd->add_option("--checkpoint", checkpoint, "teacher checkpoint (default <out>/teacher.rtc)");
    mimic_cmd->add_option("--sweep", sweep, "JSON list of mimic configs (default: the manifest's)");

    auto* report_cmd = app.add_subcommand("report", "bundle every artifact into bundle.json");
    add_common(report_cmd, common);

    auto* run_cmd = app.add_subcommand("run", "every stage in order");
    add_common(run_cmd, common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_cmd->parsed()) {
            if (common.out.empty()) throw ConfigError("report needs --out");
            std::optional<ExperimentManifest> m;
            if (!common.manifest.empty()) m = resolve(common);
            return report(common.out, m);
        }

        const ExperimentManifest m = resolve(common);
        const fs::path dir = m.output_dir;
        const fs::path ckpt = or_default(checkpoint, dir, artifacts::checkpoint);
        const fs::path dump_path = or_default(dump, dir, artifacts::dump);

        std::vector<Metric> metrics = m.metrics;
        if (!metric_names.empty()) {
            metrics.clear();
            for (const auto& s : metric_names) metrics.push_back(parse_metric(s));
        }
        std::vector<Heuristic> heuristics = m.heuristics;
        if (!heuristic_names.empty()) {
            heuristics.clear();
            for (const auto& s : heuristic_names) heuristics.push_back(parse_heuristic(s));
        }

        if (train_cmd->parsed()) {
            print_teacher(cmd_train_teacher(m));
        } else if (extract_cmd->parsed()) {
            const auto d = cmd_extract(m, ckpt, dump_path);
            std::printf("wrote %s: L=%zu n=%zu d=%zu\n", dump_path.string().c_str(), d.num_layers(), d.num_samples(),
                        d.dim());
        } else if (sim_cmd->parsed()) {
            for (const auto& s : cmd_similarity(dump_path, metrics, k.value_or(m.k), dir))
                std::printf("%s: %td x %td\n", std::string(to_string(s.metric)).c_str(), s.size(), s.size());
        } else if (prune_cmd->parsed()) {
            print_curves(cmd_prune(m, ckpt, dump_path, heuristics, dir));
        } else if (mimic_cmd->parsed()) {
            const auto configs = sweep.empty() ? m.mimic.configs : sweep_from_json(read_json(sweep));
            print_rows(cmd_mimic(m, ckpt, configs, dir));
        } else if (run_cmd->parsed()) {
            print_teacher(cmd_train_teacher(m));
            cmd_extract(m, ckpt, dump_path);
            cmd_similarity(dump_path, metrics, m.k, dir);
            print_curves(cmd_prune(m, ckpt, dump_path, heuristics, dir));
            print_rows(cmd_mimic(m, ckpt, m.mimic.configs, dir));
            return report(dir, m);
        }
        return ok;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "training failed: %s\n", e.what());
        return training;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return io;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "invalid input: %s\n", e.what());
        return validation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return other;
    }
}
