#pragma once

// Hand-rolled generators shared by the property tests.

#include "redundancy/redundancy.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing_support {

using redundancy::Mat;
using redundancy::Rng;

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Entries are small multiples of 1/8, so sums over up to 2^k rows and
/// division by a power-of-two row count are exact in double.
inline Mat dyadic(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_int(rng, -64, 64) / 8.0;
    return m;
}

/// Values that survive a round trip through float unchanged.
inline Mat float_exact(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Mat m = redundancy::random_normal(rows, cols, rng, 3.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    return m;
}

/// Haar-ish random orthogonal matrix via QR of a Gaussian matrix.
inline Mat random_orthogonal(Eigen::Index d, Rng& rng) {
    const Mat g = redundancy::random_normal(d, d, rng);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ();
    return q;
}

inline redundancy::ActivationDump random_dump(Rng& rng, int max_layers = 5, int max_n = 12, int max_d = 6) {
    redundancy::ActivationDump d;
    const int L = uniform_int(rng, 2, max_layers);
    const int n = uniform_int(rng, 1, max_n);
    const int dim = uniform_int(rng, 1, max_d);
    for (int l = 0; l < L; ++l) d.layers.push_back(float_exact(n, dim, rng));
    const int mode = uniform_int(rng, 0, 3);
    if (mode & 1) d.class_count = static_cast<std::uint32_t>(uniform_int(rng, 1, 5));
    if (mode & 2) {
        std::vector<std::uint32_t> labels;
        const int classes = d.class_count ? static_cast<int>(*d.class_count) : 9;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<std::uint32_t>(uniform_int(rng, 0, classes - 1)));
        d.labels = labels;
    }
    return d;
}

/// A pair of layers over the same samples plus a valid neighbor count.
struct MetricInstance {
    Mat a, b;
    int k;
};

inline MetricInstance random_metric_instance(Rng& rng, bool same_dim = true) {
    const int n = uniform_int(rng, 3, 16);
    const int da = uniform_int(rng, 1, 8);
    const int db = same_dim ? da : uniform_int(rng, 1, 8);
    Mat a = redundancy::random_normal(n, da, rng, uniform(rng, 0.5, 4.0));
    Mat b = redundancy::random_normal(n, db, rng);
    if (same_dim && uniform_int(rng, 0, 1)) b = 0.7 * a + 0.3 * b; // correlated pairs too
    return {a, b, uniform_int(rng, 1, n - 1)};
}

// Fresh layers start with unit gains and zero biases; randomize everything
// so no gradient is checked only at a symmetric point.
template <class Fragment>
inline void jitter(Fragment& f, Rng& rng) {
    f.for_each_param([&](redundancy::nn::Param& p) { p.value += redundancy::random_normal(p.value.rows(), p.value.cols(), rng, 0.3); });
}

struct Shape {
    Eigen::Index batch, frames, dim, hidden;
    int heads;
};

inline Shape random_shape(Rng& rng) {
    const int heads = uniform_int(rng, 1, 3);
    return {uniform_int(rng, 1, 3), uniform_int(rng, 1, 5), heads * uniform_int(rng, 1, 3), uniform_int(rng, 1, 6), heads};
}

/// Fresh empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("redundancy_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing_support
