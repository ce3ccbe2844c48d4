#pragma once

#include "redundancy/activation_store.hpp"
#include "redundancy/error.hpp"
#include "redundancy/linalg.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace redundancy {

enum class Metric { cosine, cka, mutual_knn };

inline constexpr int kDefaultNeighbors = 8;

inline std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::cosine: return "cosine";
    case Metric::cka: return "cka";
    case Metric::mutual_knn: return "mutual_knn";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "cka") return Metric::cka;
    if (s == "mutual_knn" || s == "knn") return Metric::mutual_knn;
    throw ParameterError("unknown similarity metric '" + std::string(s) + "'");
}

struct SimilarityMatrix {
    Metric metric = Metric::cosine;
    std::optional<int> k;
    Mat values;

    Eigen::Index size() const noexcept { return values.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return values(i, j); }
};

/// For every sample, the indices of its k nearest other samples, sorted
/// ascending. Self is excluded; distance ties go to the lower index.
using NeighborSets = std::vector<std::vector<Eigen::Index>>;

inline constexpr double kDegenerateNorm = 1e-12;

/// Mean over rows of the row-wise cosine between two centered layers.
inline double cosine_similarity(const CenteredView& a, const CenteredView& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ParameterError("cosine similarity needs equal shapes");
    const auto n = a.rows();
    if (n == 0) throw ParameterError("cosine similarity of empty matrices");
    double total = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
        const double na = a.row(l).norm();
        const double nb = b.row(l).norm();
        if (na < kDegenerateNorm)
            throw DegenerateInputError("zero-norm row " + std::to_string(l) + " in first operand", 0, l);
        if (nb < kDegenerateNorm)
            throw DegenerateInputError("zero-norm row " + std::to_string(l) + " in second operand", 1, l);
        total += a.row(l).dot(b.row(l)) / (na * nb);
    }
    return total / static_cast<double>(n);
}

/// Linear CKA. The column counts of `a` and `b` may differ.
inline double cka(const CenteredView& a, const CenteredView& b) {
    if (a.rows() != b.rows()) throw ParameterError("CKA needs equal sample counts");
    const double cross = (b.matrix().transpose() * a.matrix()).squaredNorm();
    const double self_a = (a.matrix().transpose() * a.matrix()).norm();
    const double self_b = (b.matrix().transpose() * b.matrix()).norm();
    if (self_a == 0.0) throw DegenerateInputError("CKA of an all-zero first operand", 0, -1);
    if (self_b == 0.0) throw DegenerateInputError("CKA of an all-zero second operand", 1, -1);
    return cross / (self_a * self_b);
}

inline NeighborSets knn_sets(const CenteredView& a, int k) {
    const auto n = a.rows();
    if (k < 1) throw ParameterError("k must be positive, got " + std::to_string(k));
    if (k >= n)
        throw ParameterError("k=" + std::to_string(k) + " must be smaller than the sample count n=" +
                             std::to_string(n));
    const Mat& m = a.matrix();

    NeighborSets sets(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n - 1));
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Eigen::Index l = 0; l < n; ++l) {
        for (Eigen::Index o = 0; o < n; ++o)
            dist[static_cast<std::size_t>(o)] = (m.row(l) - m.row(o)).squaredNorm();
        std::size_t w = 0;
        for (Eigen::Index o = 0; o < n; ++o)
            if (o != l) order[w++] = o;
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index x, Eigen::Index y) {
            const double dx = dist[static_cast<std::size_t>(x)];
            const double dy = dist[static_cast<std::size_t>(y)];
            return dx < dy || (dx == dy && x < y);
        });
        auto& out = sets[static_cast<std::size_t>(l)];
        out.assign(order.begin(), order.begin() + k);
        std::sort(out.begin(), out.end());
    }
    return sets;
}

/// Mean fractional overlap of two neighbor-set families over the same samples.
inline double neighbor_overlap(const NeighborSets& a, const NeighborSets& b, int k) {
    if (a.size() != b.size()) throw ParameterError("neighbor sets cover different sample counts");
    double total = 0.0;
    std::vector<Eigen::Index> common;
    for (std::size_t l = 0; l < a.size(); ++l) {
        common.clear();
        std::set_intersection(a[l].begin(), a[l].end(), b[l].begin(), b[l].end(), std::back_inserter(common));
        total += static_cast<double>(common.size()) / k;
    }
    return total / static_cast<double>(a.size());
}

inline double mutual_knn(const CenteredView& a, const CenteredView& b, int k = kDefaultNeighbors) {
    if (a.rows() != b.rows()) throw ParameterError("mutual kNN needs equal sample counts");
    return neighbor_overlap(knn_sets(a, k), knn_sets(b, k), k);
}

/// Error from a pairwise metric inside similarity_matrix, tagged with the
/// (0-based) layer pair it came from.
class LayerPairError : public ValidationError {
public:
    LayerPairError(const std::string& what, std::size_t i, std::size_t j)
        : ValidationError(what), i_(i), j_(j) {}
    std::size_t first() const noexcept { return i_; }
    std::size_t second() const noexcept { return j_; }

private:
    std::size_t i_, j_;
};

/// L x L similarity of all layer pairs (0-based layer indices, layers
/// centered first). Only the upper triangle is computed; the result is
/// exactly symmetric.
inline SimilarityMatrix similarity_matrix(const ActivationDump& dump, Metric metric,
                                          std::optional<int> k = std::nullopt) {
    dump.validate();
    const std::size_t L = dump.num_layers();

    std::vector<CenteredView> centered;
    centered.reserve(L);
    for (const auto& layer : dump.layers) centered.push_back(center(layer));

    SimilarityMatrix out;
    out.metric = metric;
    if (metric == Metric::mutual_knn) out.k = k.value_or(kDefaultNeighbors);
    out.values = Mat::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));

    std::vector<NeighborSets> neighbors;
    if (metric == Metric::mutual_knn) {
        for (std::size_t i = 0; i < L; ++i) {
            try {
                neighbors.push_back(knn_sets(centered[i], *out.k));
            } catch (const ParameterError& e) {
                throw ParameterError(std::string(e.what()) + " (layer " + std::to_string(i) + ")");
            }
        }
    }

    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = i; j < L; ++j) {
            double s = 0.0;
            try {
                switch (metric) {
                case Metric::cosine: s = cosine_similarity(centered[i], centered[j]); break;
                case Metric::cka: s = cka(centered[i], centered[j]); break;
                case Metric::mutual_knn: s = neighbor_overlap(neighbors[i], neighbors[j], *out.k); break;
                }
            } catch (const Error& e) {
                throw LayerPairError(std::string(e.what()) + " at layer pair (" + std::to_string(i) + ", " +
                                         std::to_string(j) + ")",
                                     i, j);
            }
            const auto ii = static_cast<Eigen::Index>(i);
            const auto jj = static_cast<Eigen::Index>(j);
            out.values(ii, jj) = s;
            out.values(jj, ii) = s;
        }
    }
    return out;
}

/// L lines of L comma-separated values, 9 significant digits.
inline void write_csv(const SimilarityMatrix& s, std::ostream& out) {
    char buf[32];
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", s(i, j));
            if (j) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

inline nlohmann::json to_json(const SimilarityMatrix& s) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < s.size(); ++j) row.push_back(s(i, j));
        rows.push_back(std::move(row));
    }
    nlohmann::json j{{"metric", to_string(s.metric)}, {"num_layers", s.size()}, {"values", std::move(rows)}};
    j["k"] = s.k ? nlohmann::json(*s.k) : nlohmann::json(nullptr);
    return j;
}

} // namespace redundancy
