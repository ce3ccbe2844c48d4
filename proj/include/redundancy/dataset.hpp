#pragma once

#include "redundancy/error.hpp"
#include "redundancy/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace redundancy {

enum class Split { train, validation, test };

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    }
    return "?";
}

/// m samples of T x D frames, stacked frame-major into an (m*T) x D matrix.
struct SynthDataset {
    Split split = Split::train;
    Eigen::Index frames = 0;
    int classes = 0;
    Mat inputs;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    Eigen::Index input_dim() const noexcept { return inputs.cols(); }

    Mat sample(std::size_t i) const { return inputs.middleRows(static_cast<Eigen::Index>(i) * frames, frames); }

    /// The samples at `indices`, in that order.
    SynthDataset subset(const std::vector<std::size_t>& indices) const {
        SynthDataset out{split, frames, classes, Mat(static_cast<Eigen::Index>(indices.size()) * frames, inputs.cols()), {}};
        out.labels.reserve(indices.size());
        for (std::size_t b = 0; b < indices.size(); ++b) {
            out.inputs.middleRows(static_cast<Eigen::Index>(b) * frames, frames) = sample(indices[b]);
            out.labels.push_back(labels[indices[b]]);
        }
        return out;
    }

    SynthDataset head(std::size_t count) const {
        std::vector<std::size_t> idx(std::min(count, size()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return subset(idx);
    }
};

struct DatasetShape {
    Eigen::Index frames = 32;
    Eigen::Index input_dim = 8;
    int classes = 8;
};

struct DatasetOptions {
    double noise = 0.5;
    Eigen::Index window = 0; // template length in frames; 0 selects frames / 4
};

struct SplitSizes {
    std::size_t train = 0, validation = 0, test = 0;
};

/// Class templates plus the three disjoint splits drawn from them.
struct SynthData {
    std::vector<Mat> templates; // one window x D pattern per class
    SynthDataset train, validation, test;

    const SynthDataset& get(Split s) const {
        switch (s) {
        case Split::train: return train;
        case Split::validation: return validation;
        case Split::test: return test;
        }
        return test;
    }
};

namespace detail {

// Per channel, a sum of sinusoids with integer period counts over the window,
// so every channel of a template has zero mean over time. Scaled to unit RMS.
inline Mat make_template(Eigen::Index window, Eigen::Index input_dim, Rng& rng) {
    std::normal_distribution<double> amp(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    Mat t = Mat::Zero(window, input_dim);
    for (Eigen::Index ch = 0; ch < input_dim; ++ch)
        for (int f = 1; f <= 2; ++f) {
            const double a = amp(rng);
            const double p = phase(rng);
            for (Eigen::Index s = 0; s < window; ++s)
                t(s, ch) += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(s) /
                                             static_cast<double>(window) + p);
        }
    return t * (std::sqrt(static_cast<double>(t.size())) / t.norm());
}

inline SynthDataset make_split(Split split, std::size_t count, const DatasetShape& shape, const std::vector<Mat>& templates,
                               double noise, Rng& rng) {
    const Eigen::Index window = templates.front().rows();
    SynthDataset ds{split, shape.frames, shape.classes, Mat(static_cast<Eigen::Index>(count) * shape.frames, shape.input_dim), {}};
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) ds.labels[i] = static_cast<int>(i % static_cast<std::size_t>(shape.classes));
    std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<Eigen::Index> offset(0, shape.frames - window);
    for (std::size_t i = 0; i < count; ++i) {
        auto block = ds.inputs.middleRows(static_cast<Eigen::Index>(i) * shape.frames, shape.frames);
        for (Eigen::Index r = 0; r < block.rows(); ++r)
            for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = noise * gauss(rng);
        block.middleRows(offset(rng), window) += templates[static_cast<std::size_t>(ds.labels[i])];
    }
    return ds;
}

} // namespace detail

/// Template-plus-noise classification data. Each sample is Gaussian noise of
/// standard deviation `noise` with its class template added at a uniformly
/// random frame offset. Labels are balanced to within one per class. The
/// templates and each split use their own sub-stream of `seed`.
inline SynthData generate_dataset(const DatasetShape& shape, const SplitSizes& sizes, std::uint64_t seed,
                                  const DatasetOptions& options = {}) {
    if (shape.frames < 1 || shape.input_dim < 1 || shape.classes < 2)
        throw ConfigError("dataset needs positive frames and input dim and at least 2 classes");
    const auto classes = static_cast<std::size_t>(shape.classes);
    if (sizes.train < classes || sizes.validation < classes || sizes.test < classes)
        throw ConfigError("every split needs at least one sample per class");
    const Eigen::Index window = options.window > 0 ? options.window : std::max<Eigen::Index>(1, shape.frames / 4);
    if (window > shape.frames) throw ConfigError("template window longer than the sample");
    if (options.noise < 0.0) throw ConfigError("noise level must be non-negative");

    SynthData data;
    Rng template_rng(derive_seed(seed, "dataset/templates"));
    for (int c = 0; c < shape.classes; ++c)
        data.templates.push_back(detail::make_template(window, shape.input_dim, template_rng));

    Rng train_rng(derive_seed(seed, "dataset/train"));
    Rng val_rng(derive_seed(seed, "dataset/validation"));
    Rng test_rng(derive_seed(seed, "dataset/test"));
    data.train = detail::make_split(Split::train, sizes.train, shape, data.templates, options.noise, train_rng);
    data.validation = detail::make_split(Split::validation, sizes.validation, shape, data.templates, options.noise, val_rng);
    data.test = detail::make_split(Split::test, sizes.test, shape, data.templates, options.noise, test_rng);
    return data;
}

inline SynthData generate_dataset(const DatasetShape& shape, std::size_t m_per_split, std::uint64_t seed,
                                  const DatasetOptions& options = {}) {
    return generate_dataset(shape, SplitSizes{m_per_split, m_per_split, m_per_split}, seed, options);
}

} // namespace redundancy
