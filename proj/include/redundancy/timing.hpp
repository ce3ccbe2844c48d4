#pragma once

#include "redundancy/dataset.hpp"
#include "redundancy/network.hpp"

#include <chrono>
#include <cmath>
#include <vector>

namespace redundancy {

inline constexpr std::size_t kDefaultWarmupSteps = 300;

struct TimingReport {
    std::size_t warmup_steps = 0;
    std::size_t measured_runs = 0;
    double mean_seconds = 0.0;
    double standard_error = 0.0;
    double normalized_time = 1.0; // mean / reference mean; 1 without a reference
};

/// Times single-sample forward passes on the calling thread. The first
/// `warmup_steps` passes (cycling through `samples`) are discarded, then each
/// of `runs` samples (all when zero) is timed individually.
inline TimingReport time_inference(const Network& net, const SynthDataset& samples, std::size_t warmup_steps,
                                   const TimingReport* reference = nullptr, std::size_t runs = 0) {
    if (samples.size() == 0) throw ValidationError("no samples to time");
    const std::size_t measured = runs == 0 ? samples.size() : runs;
    std::vector<Mat> inputs;
    inputs.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) inputs.push_back(samples.sample(i));

    volatile double sink = 0.0;
    for (std::size_t w = 0; w < warmup_steps; ++w) sink = sink + net.log_probs(inputs[w % inputs.size()])(0, 0);

    std::vector<double> seconds(measured);
    for (std::size_t r = 0; r < measured; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const Mat out = net.log_probs(inputs[r % inputs.size()]);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + out(0, 0);
        seconds[r] = std::chrono::duration<double>(t1 - t0).count();
    }

    TimingReport rep;
    rep.warmup_steps = warmup_steps;
    rep.measured_runs = measured;
    double sum = 0.0;
    for (double s : seconds) sum += s;
    rep.mean_seconds = sum / static_cast<double>(measured);
    if (measured > 1) {
        double ss = 0.0;
        for (double s : seconds) ss += (s - rep.mean_seconds) * (s - rep.mean_seconds);
        rep.standard_error = std::sqrt(ss / static_cast<double>(measured - 1) / static_cast<double>(measured));
    }
    rep.normalized_time = reference ? rep.mean_seconds / reference->mean_seconds : 1.0;
    return rep;
}

/// Re-expresses `report` relative to `reference`.
inline TimingReport normalize(TimingReport report, const TimingReport& reference) {
    report.normalized_time = report.mean_seconds / reference.mean_seconds;
    return report;
}

} // namespace redundancy
