#pragma once

#include <vector>

#include "gridlight/controllers.hpp"
#include "gridlight/imputation.hpp"

namespace gridlight {

// Harvests reward-model training data by running the IDQN-Fix controller for
// `epochs` episodes and recording (state, action, reward) at every decision
// step of every observed intersection. Returns the seeded 80/20 split.
inline PretrainDataset collect_pretrain_samples(const RoadNetwork& net, const FlowSpec& flow,
                                                const ObservationMask& mask, int epochs,
                                                int horizon, std::uint64_t rng_seed,
                                                const ControllerConfig& cfg = ControllerConfig{}) {
    if (epochs < 1) throw std::invalid_argument("collect_pretrain_samples: epochs must be >= 1");

    Controller ctrl(net, mask, StrategyId::IdqnFix, cfg, rng_seed);
    if (!mask.unobserved.empty()) ctrl.calibrate_fixed_plan(flow, horizon);

    std::vector<PretrainSample> samples;
    const ObservedSampleSink sink = [&](NodeId, const StateVector& s, int action, double reward) {
        samples.push_back({s, action, reward});
    };
    for (int e = 0; e < epochs; ++e) ctrl.train_episode(flow, horizon, sink);
    return PretrainDataset::split(std::move(samples), rng_seed);
}

}  // namespace gridlight
