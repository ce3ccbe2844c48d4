#include "support.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace redundancy;
using namespace testing_support;

namespace {

ToyConfig tiny_config(std::uint64_t seed = 1) {
    ToyConfig c;
    c.num_blocks = 2;
    c.dim = 8;
    c.heads = 2;
    c.ff_dim = 16;
    c.frames = 8;
    c.input_dim = 4;
    c.classes = 4;
    c.seed = seed;
    return c;
}

SynthData tiny_data(std::uint64_t seed = 1) {
    return generate_dataset(tiny_config().dataset_shape(), SplitSizes{256, 64, 128}, seed);
}

TrainOptions options(std::size_t steps, std::uint64_t seed = 1) {
    TrainOptions o;
    o.steps = steps;
    o.batch_size = 16;
    o.learning_rate = 3e-3;
    o.eval_every = 8;
    o.seed = seed;
    return o;
}

std::vector<double> weights(const Network& net, std::optional<ParamGroup> only = std::nullopt) {
    std::vector<double> w;
    net.for_each_param([&](const nn::Param& p, ParamGroup g) {
        if (!only || g == *only) w.insert(w.end(), p.value.data(), p.value.data() + p.size());
    });
    return w;
}

} // namespace

TEST(Train, ReducesLossAndBeatsChance) {
    const auto data = tiny_data();
    auto m = ToyTransformer::create(tiny_config());
    const auto r = train(m.net, data.train, data.validation, Objective::nll, options(160));
    ASSERT_GE(r.validation_trace.size(), 2u);
    EXPECT_EQ(r.validation_trace.front().step, 0u);
    EXPECT_LT(r.best_validation_loss, r.validation_trace.front().total);
    EXPECT_GT(evaluate(m.net, data.test).accuracy, 0.25 + 0.1);
}

TEST(Train, KeepsBestValidationWeights) {
    const auto data = tiny_data(2);
    auto m = ToyTransformer::create(tiny_config(2));
    const auto r = train(m.net, data.train, data.validation, Objective::nll, options(64, 2));
    double best = r.validation_trace.front().total;
    for (const auto& v : r.validation_trace) best = std::min(best, v.total);
    EXPECT_EQ(r.best_validation_loss, best);
    std::vector<std::size_t> all(data.validation.size());
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(detail::dataset_loss(m.net, data.validation, all, Objective::nll, nullptr).total, r.best_validation_loss);
}

TEST(Train, IsDeterministic) {
    const auto data = tiny_data(3);
    auto a = ToyTransformer::create(tiny_config(3));
    auto b = ToyTransformer::create(tiny_config(3));
    auto o = options(40, 3);
    o.layer_drop = 0.3;
    const auto ra = train(a.net, data.train, data.validation, Objective::nll, o);
    const auto rb = train(b.net, data.train, data.validation, Objective::nll, o);
    ASSERT_EQ(ra.train_trace.size(), rb.train_trace.size());
    for (std::size_t i = 0; i < ra.train_trace.size(); ++i) EXPECT_EQ(ra.train_trace[i].total, rb.train_trace[i].total);
    EXPECT_EQ(weights(a.net), weights(b.net));
}

TEST(Train, FrozenGroupsStayBitIdentical) {
    const auto data = tiny_data(4);
    auto m = ToyTransformer::create(tiny_config(4));
    const auto extractor = weights(m.net, ParamGroup::extractor);
    const auto head = weights(m.net, ParamGroup::head);
    const auto layers = weights(m.net, ParamGroup::layers);
    auto o = options(24, 4);
    o.train_extractor = false;
    o.train_head = false;
    train(m.net, data.train, data.validation, Objective::nll, o);
    EXPECT_EQ(weights(m.net, ParamGroup::extractor), extractor);
    EXPECT_EQ(weights(m.net, ParamGroup::head), head);
    EXPECT_NE(weights(m.net, ParamGroup::layers), layers);
}

TEST(Train, SgdAlsoLearns) {
    const auto data = tiny_data(5);
    auto m = ToyTransformer::create(tiny_config(5));
    auto o = options(80, 5);
    o.optimizer = Optimizer::sgd;
    o.learning_rate = 0.05;
    const auto r = train(m.net, data.train, data.validation, Objective::nll, o);
    EXPECT_LT(r.best_validation_loss, r.validation_trace.front().total);
}

TEST(Train, NonFiniteLossRaisesTrainingError) {
    auto data = tiny_data(6);
    data.train.inputs(3, 1) = std::numeric_limits<double>::quiet_NaN();
    auto m = ToyTransformer::create(tiny_config(6));
    auto o = options(64, 6);
    o.batch_size = 256; // every step sees the poisoned sample
    try {
        train(m.net, data.train, data.validation, Objective::nll, o);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.step(), 1u);
    }
}

TEST(Train, RejectsBadOptions) {
    const auto data = tiny_data();
    auto m = ToyTransformer::create(tiny_config());
    auto o = options(4);
    o.batch_size = 0;
    EXPECT_THROW(train(m.net, data.train, data.validation, Objective::nll, o), ConfigError);
    o = options(4);
    o.learning_rate = 0.0;
    EXPECT_THROW(train(m.net, data.train, data.validation, Objective::nll, o), ConfigError);
    o = options(4);
    o.layer_drop = 1.0;
    EXPECT_THROW(train(m.net, data.train, data.validation, Objective::nll, o), ConfigError);
    EXPECT_THROW(train(m.net, data.train, data.validation, Objective::mse_to_targets, options(4)), ConfigError);
}

TEST(Train, MseRecordsOneComponentPerTarget) {
    const auto data = tiny_data(7);
    auto m = ToyTransformer::create(tiny_config(7));
    Rng rng(7);
    RepresentationTargets one{{{1, random_normal(256, 8, rng)}}};
    RepresentationTargets one_val{{{1, random_normal(64, 8, rng)}}};
    auto r = train(m.net, data.train, data.validation, Objective::mse_to_targets, options(8), &one, &one_val);
    for (const auto& rec : r.train_trace) EXPECT_EQ(rec.components.size(), 1u);
    RepresentationTargets two{{{0, random_normal(256, 8, rng)}, {1, random_normal(256, 8, rng)}}};
    RepresentationTargets two_val{{{0, random_normal(64, 8, rng)}, {1, random_normal(64, 8, rng)}}};
    r = train(m.net, data.train, data.validation, Objective::mse_to_targets, options(8), &two, &two_val);
    for (const auto& rec : r.validation_trace) EXPECT_EQ(rec.components.size(), 2u);
}

TEST(Train, EpochsToSteps) {
    EXPECT_EQ(steps_for_epochs(10, 2048, 32), 640u);
    EXPECT_EQ(steps_for_epochs(1, 33, 32), 2u);
    EXPECT_EQ(steps_for_epochs(0, 33, 32), 0u);
}

TEST(Evaluate, AccuracyIgnoresSampleOrder) {
    const auto data = tiny_data(8);
    auto m = ToyTransformer::create(tiny_config(8));
    train(m.net, data.train, data.validation, Objective::nll, options(32, 8));
    std::vector<std::size_t> perm(data.test.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(8);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = evaluate(m.net, data.test), b = evaluate(m.net, data.test.subset(perm));
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_NEAR(a.mean_nll, b.mean_nll, 1e-12);
}

TEST(Evaluate, StandardErrorOfCorrectness) {
    const auto data = tiny_data(9);
    auto m = ToyTransformer::create(tiny_config(9));
    const auto r = evaluate(m.net, data.test);
    const double n = static_cast<double>(data.test.size());
    double correct = 0.0;
    for (std::size_t i = 0; i < data.test.size(); ++i) correct += r.predictions[i] == data.test.labels[i];
    const double p = correct / n;
    EXPECT_DOUBLE_EQ(r.accuracy, p);
    // Sample standard deviation of the 0/1 outcomes over sqrt(n).
    const double var = (correct * (1 - p) * (1 - p) + (n - correct) * p * p) / (n - 1);
    EXPECT_NEAR(r.standard_error, std::sqrt(var / n), 1e-12);
}

TEST(Timing, DeeperNetworksTakeLonger) {
    const auto data = tiny_data(10);
    ToyConfig deep = tiny_config(10);
    deep.num_blocks = 12;
    const auto shallow_model = ToyTransformer::create(tiny_config(10));
    const auto deep_model = ToyTransformer::create(deep);
    const auto ref = time_inference(deep_model.net, data.test, 20, nullptr, 64);
    const auto small = time_inference(shallow_model.net, data.test, 20, &ref, 64);
    EXPECT_EQ(ref.normalized_time, 1.0);
    EXPECT_EQ(ref.measured_runs, 64u);
    EXPECT_EQ(ref.warmup_steps, 20u);
    EXPECT_GT(ref.mean_seconds, 0.0);
    EXPECT_LT(small.normalized_time, 1.0);
    EXPECT_DOUBLE_EQ(small.normalized_time, small.mean_seconds / ref.mean_seconds);
    EXPECT_DOUBLE_EQ(normalize(small, small).normalized_time, 1.0);
}

TEST(Timing, RejectsEmptySamples) {
    const auto m = ToyTransformer::create(tiny_config());
    EXPECT_THROW(time_inference(m.net, SynthDataset{}, 1), ValidationError);
}
