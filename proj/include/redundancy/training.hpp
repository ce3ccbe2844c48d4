#pragma once

#include "redundancy/dataset.hpp"
#include "redundancy/error.hpp"
#include "redundancy/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

namespace redundancy {

enum class Objective { nll, mse_to_targets };
enum class Optimizer { sgd, adam };

inline std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

inline Optimizer parse_optimizer(std::string_view s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

/// Representation targets for the mse objective: for each tapped layer, an
/// m x d matrix of mean-pooled target representations, row-aligned with the
/// dataset.
struct RepresentationTargets {
    std::vector<std::pair<std::size_t, Mat>> taps;
};

struct TrainOptions {
    std::size_t steps = 0;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    std::size_t eval_every = 0;        // 0: once per pass over the training set
    std::size_t validation_subset = 0; // 0: the whole validation split
    std::uint64_t seed = 0;
    bool train_extractor = true;
    bool train_layers = true;
    bool train_head = true;
    double layer_drop = 0.0; // per-step probability of skipping each frame layer
};

inline std::size_t steps_for_epochs(std::size_t epochs, std::size_t train_size, std::size_t batch_size) {
    return epochs * ((train_size + batch_size - 1) / batch_size);
}

struct LossRecord {
    std::size_t step = 0;
    double total = 0.0;
    std::vector<double> components; // one per MSE tap, or the single NLL
};

struct TrainResult {
    std::vector<LossRecord> train_trace;
    std::vector<LossRecord> validation_trace; // includes the step-0 evaluation
    double best_validation_loss = std::numeric_limits<double>::infinity();
    std::size_t best_step = 0;
    std::size_t steps = 0;
};

namespace detail {

class Adam {
public:
    Adam(double lr, Optimizer kind) : lr_(lr), kind_(kind) {}

    void step(Network& net, const TrainOptions& opt) {
        ++t_;
        std::size_t slot = 0;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        net.for_each_param([&](nn::Param& p, ParamGroup g) {
            const bool active = (g == ParamGroup::extractor && opt.train_extractor) ||
                                (g == ParamGroup::layers && opt.train_layers) ||
                                (g == ParamGroup::head && opt.train_head);
            if (slot == m_.size()) {
                m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
                v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
            }
            if (active) {
                if (kind_ == Optimizer::sgd) {
                    p.value -= lr_ * p.grad;
                } else {
                    m_[slot] = beta1 * m_[slot] + (1.0 - beta1) * p.grad;
                    v_[slot] = beta2 * v_[slot] + (1.0 - beta2) * p.grad.cwiseAbs2();
                    p.value.array() -= lr_ * (m_[slot].array() / c1) / ((v_[slot].array() / c2).sqrt() + eps);
                }
            }
            ++slot;
        });
    }

private:
    static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double lr_;
    Optimizer kind_;
    std::size_t t_ = 0;
    std::vector<Mat> m_, v_;
};

inline Mat gather_rows(const Mat& m, const std::vector<std::size_t>& idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t b = 0; b < idx.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = m.row(static_cast<Eigen::Index>(idx[b]));
    return out;
}

// Loss and, when `grad` is set, the matching backward pass for one batch.
inline LossRecord batch_loss(Network& net, const SynthDataset& data, const std::vector<std::size_t>& idx,
                             Objective objective, const RepresentationTargets* targets, bool grad,
                             bool extractor_trainable, const std::vector<char>* skip = nullptr) {
    LossRecord rec;
    const Mat input = gather_samples(data.inputs, data.frames, idx);
    const double batch = static_cast<double>(idx.size());
    Network::Trace trace;
    if (objective == Objective::nll) {
        Mat logprobs;
        if (grad) {
            net.forward(input, trace, skip);
            logprobs = trace.logprobs;
        } else {
            logprobs = net.log_probs(input);
        }
        Mat dlogprobs = Mat::Zero(logprobs.rows(), logprobs.cols());
        double loss = 0.0;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const int y = data.labels[idx[b]];
            loss -= logprobs(static_cast<Eigen::Index>(b), y);
            dlogprobs(static_cast<Eigen::Index>(b), y) = -1.0 / batch;
        }
        rec.total = loss / batch;
        rec.components = {rec.total};
        if (grad) net.backward(trace, dlogprobs, {}, extractor_trainable);
        return rec;
    }

    if (!targets || targets->taps.empty()) throw ConfigError("mse objective needs representation targets");
    std::vector<Mat> pooled;
    if (grad) {
        net.forward(input, trace, skip);
        for (const auto& out : trace.outputs) pooled.push_back(nn::mean_pool(out, net.frames()));
    } else {
        pooled = net.pooled_outputs(input);
    }
    std::vector<std::pair<std::size_t, Mat>> taps;
    for (const auto& [layer, target] : targets->taps) {
        if (layer >= pooled.size()) throw ConfigError("mse target names a missing layer");
        const Mat diff = pooled[layer] - gather_rows(target, idx);
        const double scale = 1.0 / static_cast<double>(diff.size());
        const double loss = diff.squaredNorm() * scale;
        rec.components.push_back(loss);
        rec.total += loss;
        if (grad) taps.emplace_back(layer, diff * (2.0 * scale));
    }
    if (grad) net.backward(trace, std::nullopt, taps, extractor_trainable);
    return rec;
}

inline LossRecord dataset_loss(Network& net, const SynthDataset& data, const std::vector<std::size_t>& indices,
                               Objective objective, const RepresentationTargets* targets) {
    constexpr std::size_t chunk = 128;
    LossRecord acc;
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
        const std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                           indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + chunk)));
        const LossRecord part = batch_loss(net, data, idx, objective, targets, false, false);
        const double w = static_cast<double>(idx.size()) / static_cast<double>(indices.size());
        if (acc.components.empty()) acc.components.assign(part.components.size(), 0.0);
        for (std::size_t c = 0; c < part.components.size(); ++c) acc.components[c] += w * part.components[c];
        acc.total += w * part.total;
    }
    return acc;
}

} // namespace detail

/// Mini-batch training with a fixed learning rate. Validation runs before the
/// first step, every `eval_every` steps and after the last step; the network
/// is left holding the weights with the lowest validation loss seen.
inline TrainResult train(Network& net, const SynthDataset& train_data, const SynthDataset& validation_data,
                         Objective objective, const TrainOptions& opt,
                         const RepresentationTargets* train_targets = nullptr,
                         const RepresentationTargets* validation_targets = nullptr) {
    if (opt.batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(opt.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (train_data.size() == 0 || validation_data.size() == 0) throw ConfigError("empty training or validation split");
    if (objective == Objective::mse_to_targets && (!train_targets || !validation_targets))
        throw ConfigError("mse objective needs training and validation targets");

    Rng rng(derive_seed(opt.seed, "train/batches"));
    std::vector<std::size_t> val_idx(validation_data.size());
    std::iota(val_idx.begin(), val_idx.end(), 0);
    if (opt.validation_subset > 0 && opt.validation_subset < val_idx.size()) {
        Rng pick(derive_seed(opt.seed, "train/validation-subset"));
        std::shuffle(val_idx.begin(), val_idx.end(), pick);
        val_idx.resize(opt.validation_subset);
        std::sort(val_idx.begin(), val_idx.end());
    }
    const std::size_t steps_per_epoch = (train_data.size() + opt.batch_size - 1) / opt.batch_size;
    const std::size_t eval_every = opt.eval_every > 0 ? opt.eval_every : steps_per_epoch;

    TrainResult result;
    auto validate = [&](std::size_t step) {
        LossRecord rec = detail::dataset_loss(net, validation_data, val_idx, objective, validation_targets);
        rec.step = step;
        if (!std::isfinite(rec.total)) throw TrainingError("validation loss is not finite at step " + std::to_string(step), step);
        return rec;
    };

    result.validation_trace.push_back(validate(0));
    result.best_validation_loss = result.validation_trace.back().total;
    if (opt.steps == 0) return result;

    Network best = net;
    detail::Adam optimizer(opt.learning_rate, opt.optimizer);
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    result.train_trace.reserve(opt.steps);
    if (opt.layer_drop < 0.0 || opt.layer_drop >= 1.0) throw ConfigError("layer drop must be in [0, 1)");
    std::bernoulli_distribution drop(opt.layer_drop);
    std::vector<char> skip(net.layers.size(), 0);

    for (std::size_t step = 1; step <= opt.steps; ++step) {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::size_t stop = std::min(order.size(), cursor + opt.batch_size);
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
        cursor = stop;

        net.zero_grad();
        const std::vector<char>* skip_ptr = nullptr;
        if (opt.layer_drop > 0.0) {
            for (auto& s : skip) s = static_cast<char>(drop(rng));
            skip_ptr = &skip;
        }
        LossRecord rec =
            detail::batch_loss(net, train_data, idx, objective, train_targets, true, opt.train_extractor, skip_ptr);
        rec.step = step;
        if (!std::isfinite(rec.total)) throw TrainingError("training loss diverged at step " + std::to_string(step), step);
        result.train_trace.push_back(std::move(rec));
        optimizer.step(net, opt);

        if (step % eval_every == 0 || step == opt.steps) {
            result.validation_trace.push_back(validate(step));
            if (result.validation_trace.back().total < result.best_validation_loss) {
                result.best_validation_loss = result.validation_trace.back().total;
                result.best_step = step;
                best = net;
            }
        }
    }
    result.steps = opt.steps;
    net = std::move(best);
    net.zero_grad();
    return result;
}

struct EvalResult {
    double accuracy = 0.0;
    double standard_error = 0.0; // of the per-sample 0/1 correctness
    double mean_nll = 0.0;
    std::vector<int> predictions;
};

inline constexpr std::size_t kEvalBatch = 64;

inline EvalResult evaluate(const Network& net, const SynthDataset& data) {
    if (data.size() == 0) throw ValidationError("cannot evaluate on an empty split");
    EvalResult r;
    r.predictions.resize(data.size());
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
        const std::size_t stop = std::min(data.size(), start + kEvalBatch);
        const Mat lp = net.log_probs(data.inputs.middleRows(static_cast<Eigen::Index>(start) * data.frames,
                                                            static_cast<Eigen::Index>(stop - start) * data.frames));
        for (std::size_t i = start; i < stop; ++i) {
            Eigen::Index arg = 0;
            lp.row(static_cast<Eigen::Index>(i - start)).maxCoeff(&arg);
            r.predictions[i] = static_cast<int>(arg);
            correct += (arg == data.labels[i]);
            r.mean_nll -= lp(static_cast<Eigen::Index>(i - start), data.labels[i]);
        }
    }
    const double n = static_cast<double>(data.size());
    r.accuracy = static_cast<double>(correct) / n;
    r.mean_nll /= n;
    r.standard_error = data.size() > 1 ? std::sqrt(r.accuracy * (1.0 - r.accuracy) / (n - 1.0)) : 0.0;
    return r;
}

} // namespace redundancy
