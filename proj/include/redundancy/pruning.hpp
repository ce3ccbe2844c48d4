#pragma once

#include "redundancy/activation_store.hpp"
#include "redundancy/error.hpp"
#include "redundancy/similarity.hpp"
#include "redundancy/toy_model.hpp"
#include "redundancy/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace redundancy {

enum class BiVariant { cosine_bi, knn_bi };

/// scores[i] is the influence of block i + 2 (blocks are 1-based; block 1
/// has no predecessor and is never pruned).
struct BlockInfluence {
    BiVariant variant = BiVariant::cosine_bi;
    std::optional<int> k;
    std::vector<double> scores;

    double of_block(int block) const { return scores.at(static_cast<std::size_t>(block - 2)); }
};

/// BI(i) = 1 - S(i-1, i) on centered consecutive layers, for i = 2..L.
inline BlockInfluence block_influence(const ActivationDump& dump, BiVariant variant, std::optional<int> k = std::nullopt) {
    dump.validate();
    BlockInfluence bi;
    bi.variant = variant;
    std::vector<CenteredView> centered;
    for (const auto& layer : dump.layers) centered.push_back(center(layer));
    std::vector<NeighborSets> neighbors;
    if (variant == BiVariant::knn_bi) {
        bi.k = k.value_or(kDefaultNeighbors);
        for (std::size_t i = 0; i < centered.size(); ++i) {
            try {
                neighbors.push_back(knn_sets(centered[i], *bi.k));
            } catch (const ParameterError& e) {
                throw ParameterError(std::string(e.what()) + " (layer " + std::to_string(i) + ")");
            }
        }
    }
    for (std::size_t i = 1; i < centered.size(); ++i) {
        double s = 0.0;
        try {
            s = variant == BiVariant::cosine_bi ? cosine_similarity(centered[i - 1], centered[i])
                                                : neighbor_overlap(neighbors[i - 1], neighbors[i], *bi.k);
        } catch (const Error& e) {
            throw LayerPairError(std::string(e.what()) + " at block " + std::to_string(i + 1), i - 1, i);
        }
        bi.scores.push_back(1.0 - s);
    }
    return bi;
}

enum class Heuristic { forward, backward, bi, knn_bi };

inline std::string_view to_string(Heuristic h) {
    switch (h) {
    case Heuristic::forward: return "forward";
    case Heuristic::backward: return "backward";
    case Heuristic::bi: return "bi";
    case Heuristic::knn_bi: return "knn_bi";
    }
    return "?";
}

inline Heuristic parse_heuristic(std::string_view s) {
    if (s == "forward") return Heuristic::forward;
    if (s == "backward") return Heuristic::backward;
    if (s == "bi") return Heuristic::bi;
    if (s == "knn_bi") return Heuristic::knn_bi;
    throw ParameterError("unknown pruning heuristic '" + std::string(s) + "'");
}

/// Deletion order over 1-based block indices.
struct PrunePlan {
    Heuristic heuristic = Heuristic::forward;
    std::vector<int> order;

    void validate(int num_blocks) const {
        if (order.size() > static_cast<std::size_t>(std::max(0, num_blocks - 1)))
            throw PlanError("plan deletes more blocks than can be pruned");
        std::set<int> seen;
        for (int b : order) {
            if (b == 1) throw PlanError("block 1 is never pruned");
            if (b < 2 || b > num_blocks)
                throw PlanError("block " + std::to_string(b) + " out of range 2.." + std::to_string(num_blocks));
            if (!seen.insert(b).second) throw PlanError("block " + std::to_string(b) + " listed twice");
        }
    }

    friend bool operator==(const PrunePlan&, const PrunePlan&) = default;
};

inline PrunePlan prune_order(Heuristic heuristic, const BlockInfluence* bi, int num_blocks) {
    if (num_blocks < 1) throw ParameterError("model needs at least one block");
    PrunePlan plan{heuristic, {}};
    switch (heuristic) {
    case Heuristic::forward:
        for (int b = 2; b <= num_blocks; ++b) plan.order.push_back(b);
        break;
    case Heuristic::backward:
        for (int b = num_blocks; b >= 2; --b) plan.order.push_back(b);
        break;
    case Heuristic::bi:
    case Heuristic::knn_bi: {
        const auto want = heuristic == Heuristic::bi ? BiVariant::cosine_bi : BiVariant::knn_bi;
        if (!bi) throw ParameterError(std::string(to_string(heuristic)) + " pruning needs block influence scores");
        if (bi->variant != want) throw ParameterError("block influence variant does not match the heuristic");
        if (bi->scores.size() != static_cast<std::size_t>(num_blocks - 1))
            throw ParameterError("expected " + std::to_string(num_blocks - 1) + " block influence scores, got " +
                                 std::to_string(bi->scores.size()));
        for (int b = 2; b <= num_blocks; ++b) plan.order.push_back(b);
        std::stable_sort(plan.order.begin(), plan.order.end(),
                         [&](int a, int b) { return bi->of_block(a) < bi->of_block(b); });
        break;
    }
    }
    return plan;
}

/// Removes the named blocks (original 1-based ids) and stitches the survivors
/// together in their original order. Weights are copied unchanged.
inline ToyTransformer apply_prune(const ToyTransformer& model, std::span<const int> deleted) {
    std::set<int> drop;
    for (int b : deleted) {
        if (b == 1) throw PlanError("block 1 is never pruned");
        if (std::find(model.block_ids.begin(), model.block_ids.end(), b) == model.block_ids.end())
            throw PlanError("block " + std::to_string(b) + " is not present in the model");
        drop.insert(b);
    }
    ToyTransformer out;
    out.config = model.config;
    out.net.extractor = model.net.extractor;
    out.net.head = model.net.head;
    for (std::size_t i = 0; i < model.block_ids.size(); ++i) {
        if (drop.count(model.block_ids[i])) continue;
        out.net.layers.push_back(model.net.layers[i]);
        out.block_ids.push_back(model.block_ids[i]);
    }
    return out;
}

inline ToyTransformer apply_prune(const ToyTransformer& model, std::initializer_list<int> deleted) {
    return apply_prune(model, std::span<const int>(deleted.begin(), deleted.size()));
}

struct RetentionPoint {
    int num_pruned = 0;
    double accuracy = 0.0;
};

struct RetentionCurve {
    Heuristic heuristic = Heuristic::forward;
    int num_blocks = 0;
    double chance_level = 0.0;
    std::vector<RetentionPoint> points;

    double base_accuracy() const { return points.empty() ? 0.0 : points.front().accuracy; }
    double retention(std::size_t i) const {
        return base_accuracy() > 0.0 ? points.at(i).accuracy / base_accuracy() : 0.0;
    }

    /// Largest prefix length whose every point keeps at least `threshold` of
    /// the unpruned accuracy.
    int max_pruned_at(double threshold) const {
        int best = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (retention(i) < threshold) break;
            best = points[i].num_pruned;
        }
        return best;
    }

    /// First prefix length whose retention drops below `threshold`.
    std::optional<int> first_below(double threshold) const {
        for (std::size_t i = 0; i < points.size(); ++i)
            if (retention(i) < threshold) return points[i].num_pruned;
        return std::nullopt;
    }
};

/// Accuracy after cumulatively deleting each prefix of `plan`, from the
/// intact model (prefix 0) to the full plan.
inline RetentionCurve retention_curve(const ToyTransformer& model, const PrunePlan& plan, const SynthDataset& eval) {
    plan.validate(static_cast<int>(model.config.num_blocks));
    RetentionCurve curve;
    curve.heuristic = plan.heuristic;
    curve.num_blocks = static_cast<int>(model.num_blocks());
    curve.chance_level = 1.0 / static_cast<double>(model.config.classes);
    for (std::size_t len = 0; len <= plan.order.size(); ++len) {
        const auto pruned = apply_prune(model, std::span<const int>(plan.order.data(), len));
        curve.points.push_back({static_cast<int>(len), evaluate(pruned.net, eval).accuracy});
    }
    return curve;
}

/// Best single split into layers 1..s and s+1..L (1-based), maximizing the
/// mean off-diagonal within-block similarity minus the mean cross-block
/// similarity. Exhaustive over s in 2..L-1; ties go to the smallest s.
inline int detect_blocks(const SimilarityMatrix& s) {
    const auto L = s.size();
    if (L < 3) throw ParameterError("block detection needs at least 3 layers");
    int best_split = 2;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index split = 2; split <= L - 1; ++split) {
        double within = 0.0, cross = 0.0;
        std::size_t nw = 0, nc = 0;
        for (Eigen::Index i = 0; i < L; ++i)
            for (Eigen::Index j = 0; j < L; ++j) {
                if (i == j) continue;
                const bool same = (i < split) == (j < split);
                if (same) {
                    within += s(i, j);
                    ++nw;
                } else {
                    cross += s(i, j);
                    ++nc;
                }
            }
        const double score = within / static_cast<double>(nw) - cross / static_cast<double>(nc);
        if (score > best_score) {
            best_score = score;
            best_split = static_cast<int>(split);
        }
    }
    return best_split;
}

inline nlohmann::json to_json(const PrunePlan& plan) {
    return nlohmann::json{{"heuristic", to_string(plan.heuristic)}, {"order", plan.order}};
}

inline PrunePlan plan_from_json(const nlohmann::json& j) {
    try {
        return PrunePlan{parse_heuristic(j.at("heuristic").get<std::string>()), j.at("order").get<std::vector<int>>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed prune plan: " + std::string(e.what()));
    }
}

/// num_pruned, fraction_pruned, accuracy, retention_ratio.
inline void write_csv(const RetentionCurve& curve, std::ostream& out) {
    out << "num_pruned,fraction_pruned,accuracy,retention_ratio\n";
    char buf[128];
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        const auto& p = curve.points[i];
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", p.num_pruned,
                      static_cast<double>(p.num_pruned) / curve.num_blocks, p.accuracy, curve.retention(i));
        out << buf;
    }
}

} // namespace redundancy
