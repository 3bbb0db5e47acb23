#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include "gridlight/rng.hpp"
#include "gridlight/traffic_sim.hpp"

namespace gridlight {

// Partition of intersections into observed (N_o) and unobserved (N_m).
// Masking hides lane counts and rewards; the controller always knows every
// intersection's current phase because it sets the signals itself.
struct ObservationMask {
    std::set<NodeId> observed;
    std::set<NodeId> unobserved;

    bool is_observed(NodeId i) const { return observed.count(i) != 0; }

    static ObservationMask from_unobserved(const RoadNetwork& net,
                                           const std::vector<NodeId>& missing) {
        ObservationMask mask;
        for (const Intersection& inter : net.intersections) mask.observed.insert(inter.id);
        for (NodeId k : missing) {
            if (!mask.observed.erase(k))
                throw std::invalid_argument("mask: unknown or duplicate intersection id " +
                                            std::to_string(k));
            mask.unobserved.insert(k);
        }
        return mask;
    }

    double missing_rate(const RoadNetwork& net) const {
        return static_cast<double>(unobserved.size()) /
               static_cast<double>(net.intersections.size());
    }
};

// Uniformly sample n_missing unobserved intersections. With
// allow_adjacent=false no two sampled intersections may be grid neighbors;
// with allow_adjacent=true and n_missing >= 2 at least one sampled pair must
// be adjacent. Rejection-samples up to a bounded number of retries.
inline ObservationMask sample_mask(const RoadNetwork& net, int n_missing, bool allow_adjacent,
                                   std::uint64_t rng_seed) {
    const int n = static_cast<int>(net.intersections.size());
    if (n_missing < 0 || n_missing >= n)
        throw std::invalid_argument("sample_mask: n_missing must be in [0, |intersections|)");

    Rng rng(rng_seed);
    constexpr int kMaxRetries = 100000;
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        // Partial Fisher-Yates over node ids.
        std::vector<NodeId> ids(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < n_missing; ++i)
            std::swap(ids[static_cast<std::size_t>(i)],
                      ids[static_cast<std::size_t>(i + rng.uniform_int(n - i))]);
        std::vector<NodeId> pick(ids.begin(), ids.begin() + n_missing);

        bool has_adjacent = false;
        for (std::size_t a = 0; a < pick.size() && !has_adjacent; ++a) {
            const Intersection& inter = net.intersection(pick[a]);
            for (std::size_t b = a + 1; b < pick.size(); ++b) {
                for (int d = 0; d < 4; ++d)
                    if (inter.neighbor[d] == pick[b]) {
                        has_adjacent = true;
                        break;
                    }
                if (has_adjacent) break;
            }
        }
        if (!allow_adjacent && has_adjacent) continue;
        if (allow_adjacent && n_missing >= 2 && !has_adjacent) continue;
        return ObservationMask::from_unobserved(net, pick);
    }
    throw std::runtime_error("sample_mask: constraint infeasible after bounded retries (n_missing=" +
                             std::to_string(n_missing) + ", allow_adjacent=" +
                             (allow_adjacent ? std::string("true") : std::string("false")) + ")");
}

// 64-dim padded state for the neighboring-concatenation baseline: the four
// arm slots in [N,E,S,W] order, 16 values each. Absent arms and unobserved
// neighbors contribute zeros.
inline std::vector<double> neighbor_concat_state(const SimState& sim, const ObservationMask& mask,
                                                 NodeId k) {
    if (mask.is_observed(k))
        throw std::invalid_argument("neighbor_concat_state: intersection " + std::to_string(k) +
                                    " is observed");
    const Intersection& inter = sim.network().intersection(k);
    std::vector<double> out(64, 0.0);
    for (int d = 0; d < 4; ++d) {
        const NodeId nb = inter.neighbor[d];
        if (nb == kBoundary || !mask.is_observed(nb)) continue;
        const auto flat = sim.local_state(nb).flat();
        std::copy(flat.begin(), flat.end(), out.begin() + d * 16);
    }
    return out;
}

// Sum of environment rewards over k's observed neighbors; 0 when none.
inline double neighbor_reward_sum(const SimState& sim, const ObservationMask& mask, NodeId k) {
    double sum = 0.0;
    for (NodeId nb : sim.network().neighbors(k))
        if (mask.is_observed(nb)) sum += sim.local_reward(nb);
    return sum;
}

}  // namespace gridlight
