#pragma once

#include "redundancy/nn.hpp"

#include <optional>
#include <utility>
#include <variant>
#include <vector>

namespace redundancy {

using FrameLayer = std::variant<nn::TransformerBlock, nn::LinearMimicLayer>;

enum class ParamGroup { extractor, layers, head };

/// Feature extractor -> stack of frame layers -> mean-pool -> affine head
/// -> log-softmax. Both the toy teacher and the mimicking networks are
/// instances; they differ only in what sits in `layers`.
class Network {
public:
    nn::FeatureExtractor extractor;
    std::vector<FrameLayer> layers;
    nn::Affine head;

    struct Trace {
        Mat input;
        Mat embedded;
        std::vector<Mat> outputs; // output of every frame layer
        std::vector<std::variant<std::monostate, nn::TransformerBlock::Cache, nn::LinearMimicLayer::Cache>> caches;
        Mat pooled;
        Mat logprobs;
    };

    Eigen::Index frames() const noexcept { return extractor.frames(); }
    Eigen::Index dim() const noexcept { return head.in_dim(); }
    Eigen::Index classes() const noexcept { return head.out_dim(); }

    /// Log-probabilities for a stacked batch, (B*T) x D -> B x C.
    Mat log_probs(const Mat& input) const {
        Mat x = extractor.forward(input);
        for (const auto& layer : layers)
            x = std::visit([&](const auto& l) { return l.forward(x, frames(), nullptr); }, layer);
        return nn::log_softmax(head.forward(nn::mean_pool(x, frames())));
    }

    /// Mean-pooled output of every frame layer, one B x d matrix per layer.
    std::vector<Mat> pooled_outputs(const Mat& input) const {
        std::vector<Mat> out;
        Mat x = extractor.forward(input);
        for (const auto& layer : layers) {
            x = std::visit([&](const auto& l) { return l.forward(x, frames(), nullptr); }, layer);
            out.push_back(nn::mean_pool(x, frames()));
        }
        return out;
    }

    /// Training forward pass. Layers flagged in `skip` act as the identity
    /// (layer drop); the monostate cache marks them for backward.
    void forward(const Mat& input, Trace& t, const std::vector<char>* skip = nullptr) const {
        t.input = input;
        t.embedded = extractor.forward(input);
        t.outputs.clear();
        t.caches.clear();
        const Mat* x = &t.embedded;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& layer = layers[i];
            if (skip && (*skip)[i]) {
                t.caches.emplace_back(std::monostate{});
                t.outputs.push_back(*x);
                x = &t.outputs.back();
                continue;
            }
            std::visit(
                [&](const auto& l) {
                    using Cache = typename std::decay_t<decltype(l)>::Cache;
                    t.caches.emplace_back(Cache{});
                    t.outputs.push_back(l.forward(*x, frames(), &std::get<Cache>(t.caches.back())));
                },
                layer);
            x = &t.outputs.back();
        }
        t.pooled = nn::mean_pool(*x, frames());
        t.logprobs = nn::log_softmax(head.forward(t.pooled));
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the
    /// raw input. `dlogprobs` may be absent (pure representation losses);
    /// `taps` pairs a layer index with the gradient w.r.t. that layer's
    /// mean-pooled output.
    Mat backward(const Trace& t, const std::optional<Mat>& dlogprobs,
                  const std::vector<std::pair<std::size_t, Mat>>& taps, bool extractor_trainable) {
        const Eigen::Index rows = t.embedded.rows();
        Mat grad = Mat::Zero(rows, dim());
        if (dlogprobs) {
            const Mat dlogits = nn::log_softmax_backward(t.logprobs, *dlogprobs);
            grad = nn::mean_pool_backward(head.backward(t.pooled, dlogits), frames());
        }
        for (std::size_t i = layers.size(); i-- > 0;) {
            for (const auto& [index, dpooled] : taps)
                if (index == i) grad += nn::mean_pool_backward(dpooled, frames());
            if (std::holds_alternative<std::monostate>(t.caches[i])) continue;
            grad = std::visit(
                [&](auto& l) {
                    using Cache = typename std::decay_t<decltype(l)>::Cache;
                    return l.backward(grad, std::get<Cache>(t.caches[i]));
                },
                layers[i]);
        }
        if (extractor_trainable) return extractor.backward(t.input, grad);
        return grad * extractor.projection.weight.value.transpose();
    }

    template <class F>
    void for_each_param(F&& f) {
        extractor.for_each_param([&](nn::Param& p) { f(p, ParamGroup::extractor); });
        for (auto& layer : layers)
            std::visit([&](auto& l) { l.for_each_param([&](nn::Param& p) { f(p, ParamGroup::layers); }); }, layer);
        head.for_each_param([&](nn::Param& p) { f(p, ParamGroup::head); });
    }

    template <class F>
    void for_each_param(F&& f) const {
        extractor.for_each_param([&](const nn::Param& p) { f(p, ParamGroup::extractor); });
        for (const auto& layer : layers)
            std::visit([&](const auto& l) { l.for_each_param([&](const nn::Param& p) { f(p, ParamGroup::layers); }); },
                       layer);
        head.for_each_param([&](const nn::Param& p) { f(p, ParamGroup::head); });
    }

    void zero_grad() {
        for_each_param([](nn::Param& p, ParamGroup) { p.zero_grad(); });
    }

    std::size_t num_params() const {
        std::size_t total = 0;
        for_each_param([&](const nn::Param& p, ParamGroup) { total += static_cast<std::size_t>(p.size()); });
        return total;
    }
};

inline std::size_t num_params(const FrameLayer& layer) {
    return std::visit([](const auto& l) { return l.num_params(); }, layer);
}

/// Row-stacks the samples at `indices` of a frame-major input tensor.
inline Mat gather_samples(const Mat& inputs, Eigen::Index frames, const std::vector<std::size_t>& indices) {
    Mat out(static_cast<Eigen::Index>(indices.size()) * frames, inputs.cols());
    for (std::size_t b = 0; b < indices.size(); ++b)
        out.middleRows(static_cast<Eigen::Index>(b) * frames, frames) =
            inputs.middleRows(static_cast<Eigen::Index>(indices[b]) * frames, frames);
    return out;
}

} // namespace redundancy
