#pragma once

// Layers used by the toy teacher and the mimicking networks. Activations are
// stacked frame-major: a batch of B samples with T frames each is a (B*T) x d
// matrix whose rows s*T .. s*T+T-1 belong to sample s. Every layer exposes
//
//   Mat forward(const Mat& x, Eigen::Index frames, Cache* cache) const;
//   Mat backward(const Mat& dy, const Cache& cache);   // accumulates .grad
//
// and for_each_param(f). A null cache selects the inference path.

#include "redundancy/error.hpp"
#include "redundancy/linalg.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace redundancy::nn {

struct Param {
    Mat value;
    Mat grad;

    explicit Param(Mat v = {}) : value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const noexcept { return value.size(); }
};

/// y = x W + b, applied row-wise.
struct Affine {
    Param weight; // in x out
    Param bias;   // 1 x out

    Affine() = default;
    Affine(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 1.0)
        : weight(random_normal(in, out, rng, gain / std::sqrt(static_cast<double>(in)))),
          bias(Mat::Zero(1, out)) {}

    Eigen::Index in_dim() const noexcept { return weight.value.rows(); }
    Eigen::Index out_dim() const noexcept { return weight.value.cols(); }

    Mat forward(const Mat& x) const {
        Mat y = x * weight.value;
        y.rowwise() += bias.value.row(0);
        return y;
    }

    Mat backward(const Mat& x, const Mat& dy) {
        weight.grad.noalias() += x.transpose() * dy;
        bias.grad += dy.colwise().sum();
        return dy * weight.value.transpose();
    }

    template <class F>
    void for_each_param(F&& f) {
        f(weight);
        f(bias);
    }
    template <class F>
    void for_each_param(F&& f) const {
        f(weight);
        f(bias);
    }

    std::size_t num_params() const noexcept { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

struct LayerNorm {
    static constexpr double kEps = 1e-5;
    Param gain;
    Param offset;

    struct Cache {
        Mat xhat;
        Eigen::VectorXd inv_std;
    };

    LayerNorm() = default;
    explicit LayerNorm(Eigen::Index dim) : gain(Mat::Ones(1, dim)), offset(Mat::Zero(1, dim)) {}

    Mat forward(const Mat& x, Cache* cache) const {
        const Eigen::VectorXd mean = x.rowwise().mean();
        Mat xhat = x.colwise() - mean;
        const Eigen::VectorXd var = xhat.rowwise().squaredNorm() / static_cast<double>(x.cols());
        const Eigen::VectorXd inv_std = (var.array() + kEps).rsqrt();
        xhat = inv_std.asDiagonal() * xhat;
        Mat y = xhat.array().rowwise() * gain.value.row(0).array();
        y.rowwise() += offset.value.row(0);
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = inv_std;
        }
        return y;
    }

    Mat backward(const Mat& dy, const Cache& c) {
        gain.grad += (dy.array() * c.xhat.array()).colwise().sum().matrix();
        offset.grad += dy.colwise().sum();
        const Mat dxhat = dy.array().rowwise() * gain.value.row(0).array();
        const double inv_d = 1.0 / static_cast<double>(dy.cols());
        const Eigen::VectorXd mean_dxhat = dxhat.rowwise().sum() * inv_d;
        const Eigen::VectorXd mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() * inv_d;
        Mat dx = dxhat.colwise() - mean_dxhat;
        dx -= (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
        return c.inv_std.asDiagonal() * dx;
    }

    template <class F>
    void for_each_param(F&& f) {
        f(gain);
        f(offset);
    }
    template <class F>
    void for_each_param(F&& f) const {
        f(gain);
        f(offset);
    }

    std::size_t num_params() const noexcept { return static_cast<std::size_t>(gain.size() + offset.size()); }
};

// Exact (erf) GELU.
inline Mat gelu(const Mat& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
}

inline Mat gelu_backward(const Mat& x, const Mat& dy) {
    constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const Mat slope = x.unaryExpr([](double v) {
        return 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    return dy.cwiseProduct(slope);
}

inline void check_frames(const Mat& x, Eigen::Index frames) {
    if (frames <= 0 || x.rows() % frames != 0)
        throw ValidationError("activation rows " + std::to_string(x.rows()) + " not a multiple of frame count " +
                              std::to_string(frames));
}

/// Mean over the frames of each sample: (B*T) x d -> B x d.
inline Mat mean_pool(const Mat& x, Eigen::Index frames) {
    check_frames(x, frames);
    const Eigen::Index batch = x.rows() / frames;
    Mat out(batch, x.cols());
    for (Eigen::Index s = 0; s < batch; ++s) out.row(s) = x.middleRows(s * frames, frames).colwise().mean();
    return out;
}

inline Mat mean_pool_backward(const Mat& dpooled, Eigen::Index frames) {
    Mat dx(dpooled.rows() * frames, dpooled.cols());
    const double scale = 1.0 / static_cast<double>(frames);
    for (Eigen::Index s = 0; s < dpooled.rows(); ++s)
        dx.middleRows(s * frames, frames).rowwise() = dpooled.row(s) * scale;
    return dx;
}

inline Mat log_softmax(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        out.row(r) = logits.row(r).array() - lse;
    }
    return out;
}

/// Gradient w.r.t. logits given the gradient w.r.t. log-probabilities.
inline Mat log_softmax_backward(const Mat& logprobs, const Mat& dlogprobs) {
    const Mat probs = logprobs.array().exp();
    const Eigen::VectorXd total = dlogprobs.rowwise().sum();
    return dlogprobs - Mat(probs.array().colwise() * total.array());
}

/// Bidirectional multi-head self-attention within each sample's frames.
struct MultiHeadAttention {
    int heads = 1;
    Affine query, key, value, output;

    struct Cache {
        Mat x, q, k, v, mixed;
        std::vector<Mat> probs; // per (sample, head), T x T
    };

    MultiHeadAttention() = default;
    MultiHeadAttention(Eigen::Index dim, int num_heads, Rng& rng)
        : heads(num_heads), query(dim, dim, rng), key(dim, dim, rng), value(dim, dim, rng), output(dim, dim, rng) {
        if (num_heads <= 0 || dim % num_heads != 0)
            throw ConfigError("model dim " + std::to_string(dim) + " not divisible by " +
                              std::to_string(num_heads) + " heads");
    }

    Eigen::Index dim() const noexcept { return query.in_dim(); }

    Mat forward(const Mat& x, Eigen::Index frames, Cache* cache) const {
        check_frames(x, frames);
        const Eigen::Index batch = x.rows() / frames;
        const Eigen::Index dh = dim() / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Mat q = query.forward(x);
        Mat k = key.forward(x);
        Mat v = value.forward(x);
        Mat mixed(x.rows(), dim());
        if (cache) cache->probs.resize(static_cast<std::size_t>(batch * heads));
        for (Eigen::Index s = 0; s < batch; ++s) {
            for (int h = 0; h < heads; ++h) {
                const auto qs = q.block(s * frames, h * dh, frames, dh);
                const auto ks = k.block(s * frames, h * dh, frames, dh);
                const auto vs = v.block(s * frames, h * dh, frames, dh);
                Mat p = (qs * ks.transpose()) * scale;
                for (Eigen::Index r = 0; r < frames; ++r) {
                    const double mx = p.row(r).maxCoeff();
                    p.row(r) = (p.row(r).array() - mx).exp();
                    p.row(r) /= p.row(r).sum();
                }
                mixed.block(s * frames, h * dh, frames, dh).noalias() = p * vs;
                if (cache) cache->probs[static_cast<std::size_t>(s * heads + h)] = std::move(p);
            }
        }
        Mat y = output.forward(mixed);
        if (cache) {
            cache->x = x;
            cache->q = std::move(q);
            cache->k = std::move(k);
            cache->v = std::move(v);
            cache->mixed = std::move(mixed);
        }
        return y;
    }

    Mat backward(const Mat& dy, const Cache& c) {
        const Eigen::Index frames = c.probs.empty() ? 1 : c.probs.front().rows();
        const Eigen::Index batch = c.x.rows() / frames;
        const Eigen::Index dh = dim() / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const Mat dmixed = output.backward(c.mixed, dy);
        Mat dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
        for (Eigen::Index s = 0; s < batch; ++s) {
            for (int h = 0; h < heads; ++h) {
                const Mat& p = c.probs[static_cast<std::size_t>(s * heads + h)];
                const auto dout = dmixed.block(s * frames, h * dh, frames, dh);
                const auto qs = c.q.block(s * frames, h * dh, frames, dh);
                const auto ks = c.k.block(s * frames, h * dh, frames, dh);
                const auto vs = c.v.block(s * frames, h * dh, frames, dh);
                const Mat dp = dout * vs.transpose();
                dv.block(s * frames, h * dh, frames, dh).noalias() = p.transpose() * dout;
                const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
                const Mat dscores = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
                dq.block(s * frames, h * dh, frames, dh).noalias() = dscores * ks;
                dk.block(s * frames, h * dh, frames, dh).noalias() = dscores.transpose() * qs;
            }
        }
        Mat dx = query.backward(c.x, dq);
        dx += key.backward(c.x, dk);
        dx += value.backward(c.x, dv);
        return dx;
    }

    template <class F>
    void for_each_param(F&& f) {
        query.for_each_param(f);
        key.for_each_param(f);
        value.for_each_param(f);
        output.for_each_param(f);
    }
    template <class F>
    void for_each_param(F&& f) const {
        query.for_each_param(f);
        key.for_each_param(f);
        value.for_each_param(f);
        output.for_each_param(f);
    }

    std::size_t num_params() const noexcept {
        return query.num_params() + key.num_params() + value.num_params() + output.num_params();
    }
};

/// GELU MLP applied per frame: d -> hidden -> d.
struct FeedForward {
    Affine expand, contract;

    struct Cache {
        Mat x, pre, act;
    };

    FeedForward() = default;
    FeedForward(Eigen::Index dim, Eigen::Index hidden, Rng& rng) : expand(dim, hidden, rng), contract(hidden, dim, rng) {}

    Mat forward(const Mat& x, Cache* cache) const {
        Mat pre = expand.forward(x);
        Mat act = gelu(pre);
        Mat y = contract.forward(act);
        if (cache) {
            cache->x = x;
            cache->pre = std::move(pre);
            cache->act = std::move(act);
        }
        return y;
    }

    Mat backward(const Mat& dy, const Cache& c) {
        const Mat dact = contract.backward(c.act, dy);
        return expand.backward(c.x, gelu_backward(c.pre, dact));
    }

    template <class F>
    void for_each_param(F&& f) {
        expand.for_each_param(f);
        contract.for_each_param(f);
    }
    template <class F>
    void for_each_param(F&& f) const {
        expand.for_each_param(f);
        contract.for_each_param(f);
    }

    std::size_t num_params() const noexcept { return expand.num_params() + contract.num_params(); }
};

/// Pre-norm encoder block: h = x + attn(ln1(x)); y = h + ff(ln2(h)).
struct TransformerBlock {
    LayerNorm norm1;
    MultiHeadAttention attention;
    LayerNorm norm2;
    FeedForward feedforward;

    struct Cache {
        LayerNorm::Cache norm1;
        MultiHeadAttention::Cache attention;
        LayerNorm::Cache norm2;
        FeedForward::Cache feedforward;
    };

    TransformerBlock() = default;
    TransformerBlock(Eigen::Index dim, int heads, Eigen::Index hidden, Rng& rng)
        : norm1(dim), attention(dim, heads, rng), norm2(dim), feedforward(dim, hidden, rng) {}

    Eigen::Index dim() const noexcept { return attention.dim(); }

    Mat forward(const Mat& x, Eigen::Index frames, Cache* cache) const {
        Mat h = x + attention.forward(norm1.forward(x, cache ? &cache->norm1 : nullptr), frames,
                                      cache ? &cache->attention : nullptr);
        Mat n2 = norm2.forward(h, cache ? &cache->norm2 : nullptr);
        h += feedforward.forward(n2, cache ? &cache->feedforward : nullptr);
        return h;
    }

    Mat backward(const Mat& dy, const Cache& c) {
        Mat dh = dy + norm2.backward(feedforward.backward(dy, c.feedforward), c.norm2);
        return dh + norm1.backward(attention.backward(dh, c.attention), c.norm1);
    }

    template <class F>
    void for_each_param(F&& f) {
        norm1.for_each_param(f);
        attention.for_each_param(f);
        norm2.for_each_param(f);
        feedforward.for_each_param(f);
    }
    template <class F>
    void for_each_param(F&& f) const {
        norm1.for_each_param(f);
        attention.for_each_param(f);
        norm2.for_each_param(f);
        feedforward.for_each_param(f);
    }

    std::size_t num_params() const noexcept {
        return norm1.num_params() + attention.num_params() + norm2.num_params() + feedforward.num_params();
    }
};

/// Per-frame bottleneck d -> z -> d with an optional GELU between the
/// projections. Weights are shared over the time axis.
struct LinearMimicLayer {
    Affine down, up;
    bool nonlinear = true;

    struct Cache {
        Mat x, pre, act;
    };

    LinearMimicLayer() = default;
    LinearMimicLayer(Eigen::Index dim, Eigen::Index bottleneck, Rng& rng, bool with_nonlinearity = true)
        : down(dim, bottleneck, rng), up(bottleneck, dim, rng), nonlinear(with_nonlinearity) {}

    Mat forward(const Mat& x, Eigen::Index /*frames*/, Cache* cache) const {
        Mat pre = down.forward(x);
        Mat act = nonlinear ? gelu(pre) : pre;
        Mat y = up.forward(act);
        if (cache) {
            cache->x = x;
            cache->pre = std::move(pre);
            cache->act = std::move(act);
        }
        return y;
    }

    Mat backward(const Mat& dy, const Cache& c) {
        Mat dact = up.backward(c.act, dy);
        return down.backward(c.x, nonlinear ? gelu_backward(c.pre, dact) : dact);
    }

    template <class F>
    void for_each_param(F&& f) {
        down.for_each_param(f);
        up.for_each_param(f);
    }
    template <class F>
    void for_each_param(F&& f) const {
        down.for_each_param(f);
        up.for_each_param(f);
    }

    std::size_t num_params() const noexcept { return down.num_params() + up.num_params(); }
};

/// Standard sinusoidal position signal, frames x dim.
inline Mat sinusoidal_positions(Eigen::Index frames, Eigen::Index dim) {
    Mat pos(frames, dim);
    for (Eigen::Index t = 0; t < frames; ++t)
        for (Eigen::Index c = 0; c < dim; ++c) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(dim));
            pos(t, c) = (c % 2 == 0) ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
        }
    return pos;
}

/// Per-frame affine embedding D -> d plus a fixed position signal.
struct FeatureExtractor {
    Affine projection;
    Mat positions; // frames x d, not trained

    FeatureExtractor() = default;
    FeatureExtractor(Eigen::Index input_dim, Eigen::Index dim, Eigen::Index frames, Rng& rng)
        : projection(input_dim, dim, rng), positions(sinusoidal_positions(frames, dim)) {}

    Eigen::Index frames() const noexcept { return positions.rows(); }

    Mat forward(const Mat& x) const {
        check_frames(x, frames());
        if (x.cols() != projection.in_dim())
            throw ValidationError("input has " + std::to_string(x.cols()) + " features per frame, expected " +
                                  std::to_string(projection.in_dim()));
        Mat y = projection.forward(x);
        const Eigen::Index batch = x.rows() / frames();
        for (Eigen::Index s = 0; s < batch; ++s) y.middleRows(s * frames(), frames()) += positions;
        return y;
    }

    Mat backward(const Mat& x, const Mat& dy) { return projection.backward(x, dy); }

    template <class F>
    void for_each_param(F&& f) {
        projection.for_each_param(f);
    }
    template <class F>
    void for_each_param(F&& f) const {
        projection.for_each_param(f);
    }

    std::size_t num_params() const noexcept { return projection.num_params(); }
};

} // namespace redundancy::nn
