#pragma once

// Finite-difference validation of the hand-written backward passes.
//
// A fragment is anything providing
//   Mat forward(const Mat& x) const;                      // inference
//   Mat forward_backward(const Mat& x, const Mat& dy);    // fills .grad, returns dx
//   void for_each_param(F);
// The scalar under test is sum(R .* forward(x)) for a fixed random R, so the
// analytic gradient is forward_backward(x, R).

#include "redundancy/network.hpp"
#include "redundancy/nn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace redundancy {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0; // parameters plus input entries
};

// Central differences carry round-off near 1e-10 at epsilon 1e-5, so
// gradients that are structurally zero (key biases under softmax) need a
// floor well above that.
inline constexpr double kGradientFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradientFloor});
    return std::abs(analytic - numeric) / scale;
}

template <class Fragment>
GradCheckResult gradient_check(Fragment& fragment, const Mat& input, double epsilon = 1e-5, std::uint64_t seed = 0) {
    Rng rng(derive_seed(seed, "gradcheck/projection"));
    const Mat probe = fragment.forward(input);
    const Mat weights = random_normal(probe.rows(), probe.cols(), rng);
    auto objective = [&](const Mat& x) { return (fragment.forward(x).array() * weights.array()).sum(); };

    fragment.for_each_param([](nn::Param& p) { p.zero_grad(); });
    const Mat dx = fragment.forward_backward(input, weights);

    GradCheckResult res;
    fragment.for_each_param([&](nn::Param& p) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double& w = p.value.data()[i];
            const double saved = w;
            w = saved + epsilon;
            const double up = objective(input);
            w = saved - epsilon;
            const double down = objective(input);
            w = saved;
            res.max_relative_error =
                std::max(res.max_relative_error, relative_error(p.grad.data()[i], (up - down) / (2.0 * epsilon)));
            ++res.checked;
        }
    });
    Mat x = input;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + epsilon;
        const double up = objective(x);
        x.data()[i] = saved - epsilon;
        const double down = objective(x);
        x.data()[i] = saved;
        res.max_relative_error = std::max(res.max_relative_error, relative_error(dx.data()[i], (up - down) / (2.0 * epsilon)));
        ++res.checked;
    }
    return res;
}

namespace fragments {

struct AffineFragment {
    nn::Affine layer;
    Mat forward(const Mat& x) const { return layer.forward(x); }
    Mat forward_backward(const Mat& x, const Mat& dy) { return layer.backward(x, dy); }
    template <class F>
    void for_each_param(F&& f) { layer.for_each_param(f); }
};

struct LayerNormFragment {
    nn::LayerNorm layer;
    Mat forward(const Mat& x) const { return layer.forward(x, nullptr); }
    Mat forward_backward(const Mat& x, const Mat& dy) {
        nn::LayerNorm::Cache c;
        layer.forward(x, &c);
        return layer.backward(dy, c);
    }
    template <class F>
    void for_each_param(F&& f) { layer.for_each_param(f); }
};

struct GeluFragment {
    Mat forward(const Mat& x) const { return nn::gelu(x); }
    Mat forward_backward(const Mat& x, const Mat& dy) { return nn::gelu_backward(x, dy); }
    template <class F>
    void for_each_param(F&&) {}
};

/// Any frame layer with a Cache (attention, feedforward, blocks, mimic layers).
template <class Layer>
struct FrameFragment {
    Layer layer;
    Eigen::Index frames = 1;

    Mat forward(const Mat& x) const {
        if constexpr (requires { layer.forward(x, frames, nullptr); })
            return layer.forward(x, frames, nullptr);
        else
            return layer.forward(x, nullptr);
    }
    Mat forward_backward(const Mat& x, const Mat& dy) {
        typename Layer::Cache c;
        if constexpr (requires { layer.forward(x, frames, &c); })
            layer.forward(x, frames, &c);
        else
            layer.forward(x, &c);
        return layer.backward(dy, c);
    }
    template <class F>
    void for_each_param(F&& f) { layer.for_each_param(f); }
};

struct ExtractorFragment {
    nn::FeatureExtractor layer;
    Mat forward(const Mat& x) const { return layer.forward(x); }
    Mat forward_backward(const Mat& x, const Mat& dy) {
        layer.backward(x, dy);
        return dy * layer.projection.weight.value.transpose();
    }
    template <class F>
    void for_each_param(F&& f) { layer.for_each_param(f); }
};

/// Mean-pool, affine head, log-softmax and mean NLL over the batch; the
/// output is the 1 x 1 loss.
struct ClassifierNllFragment {
    nn::Affine head;
    Eigen::Index frames = 1;
    std::vector<int> labels;

    Mat forward(const Mat& x) const {
        const Mat lp = nn::log_softmax(head.forward(nn::mean_pool(x, frames)));
        double loss = 0.0;
        for (std::size_t b = 0; b < labels.size(); ++b) loss -= lp(static_cast<Eigen::Index>(b), labels[b]);
        return Mat::Constant(1, 1, loss / static_cast<double>(labels.size()));
    }
    Mat forward_backward(const Mat& x, const Mat& dy) {
        const Mat pooled = nn::mean_pool(x, frames);
        const Mat lp = nn::log_softmax(head.forward(pooled));
        Mat dlp = Mat::Zero(lp.rows(), lp.cols());
        for (std::size_t b = 0; b < labels.size(); ++b)
            dlp(static_cast<Eigen::Index>(b), labels[b]) = -dy(0, 0) / static_cast<double>(labels.size());
        return nn::mean_pool_backward(head.backward(pooled, nn::log_softmax_backward(lp, dlp)), frames);
    }
    template <class F>
    void for_each_param(F&& f) { head.for_each_param(f); }
};

/// Whole network, NLL objective, 1 x 1 loss output.
struct NetworkNllFragment {
    Network net;
    std::vector<int> labels;

    Mat forward(const Mat& x) const {
        const Mat lp = net.log_probs(x);
        double loss = 0.0;
        for (std::size_t b = 0; b < labels.size(); ++b) loss -= lp(static_cast<Eigen::Index>(b), labels[b]);
        return Mat::Constant(1, 1, loss / static_cast<double>(labels.size()));
    }
    Mat forward_backward(const Mat& x, const Mat& dy) {
        Network::Trace t;
        net.forward(x, t);
        Mat dlp = Mat::Zero(t.logprobs.rows(), t.logprobs.cols());
        for (std::size_t b = 0; b < labels.size(); ++b)
            dlp(static_cast<Eigen::Index>(b), labels[b]) = -dy(0, 0) / static_cast<double>(labels.size());
        return net.backward(t, dlp, {}, true);
    }
    template <class F>
    void for_each_param(F&& f) {
        net.for_each_param([&](nn::Param& p, ParamGroup) { f(p); });
    }
};

} // namespace fragments
} // namespace redundancy
