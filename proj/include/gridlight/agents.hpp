#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gridlight/nn.hpp"
#include "gridlight/rng.hpp"
#include "gridlight/traffic_sim.hpp"

namespace gridlight {

// ---------------------------------------------------------------------------
// Fixed-time control

struct FixedTimePlan {
    // (phase id, duration in decision intervals), cycled in order.
    std::vector<std::pair<int, int>> phase_durations;

    int cycle_length() const {
        int n = 0;
        for (const auto& [p, d] : phase_durations) n += d;
        return n;
    }

    static FixedTimePlan uniform(int duration) {
        FixedTimePlan plan;
        for (int p = 0; p < kNumPhases; ++p) plan.phase_durations.push_back({p, duration});
        return plan;
    }
};

inline int fixed_time_act(const FixedTimePlan& plan, int decision_index) {
    const int cycle = plan.cycle_length();
    if (cycle <= 0) throw std::invalid_argument("fixed_time_act: empty plan");
    int pos = decision_index % cycle;
    for (const auto& [phase, duration] : plan.phase_durations) {
        if (pos < duration) return phase;
        pos -= duration;
    }
    throw std::logic_error("fixed_time_act: cycle accounting error");
}

// Webster-style calibration collapsed to a grid search: evaluate each
// uniform cyclic plan over one open-loop episode and keep the duration with
// the lowest average travel time (ties go to the shorter cycle).
inline FixedTimePlan tune_fixed_plan(const RoadNetwork& net, const FlowSpec& flow, int horizon,
                                     int decision_interval,
                                     const std::vector<int>& candidate_durations) {
    if (candidate_durations.empty())
        throw std::invalid_argument("tune_fixed_plan: no candidate durations");
    double best_tt = std::numeric_limits<double>::infinity();
    int best_duration = 0;
    for (int duration : candidate_durations) {
        if (duration < 1) throw std::invalid_argument("tune_fixed_plan: duration must be >= 1");
        const FixedTimePlan plan = FixedTimePlan::uniform(duration);
        SimState sim(net, flow);
        std::vector<int> signals(net.intersections.size(), 0);
        int decision_index = -1;
        for (int step = 0; step < horizon; ++step) {
            if (step % decision_interval == 0) {
                ++decision_index;
                std::fill(signals.begin(), signals.end(), fixed_time_act(plan, decision_index));
            }
            sim.advance(signals);
        }
        const double tt = sim.episode_metrics(horizon).avg_travel_time;
        if (tt < best_tt || (tt == best_tt && duration < best_duration)) {
            best_tt = tt;
            best_duration = duration;
        }
    }
    return FixedTimePlan::uniform(best_duration);
}

// ---------------------------------------------------------------------------
// MaxPressure

// Pressure of a phase is the sum over its movements of (incoming count -
// outgoing count); ties break toward the lowest phase id. Inputs are indexed
// [phase][movement]; boundary exits should be passed as 0 (infinite sink).
inline int max_pressure_act(const std::vector<std::vector<double>>& in_counts,
                            const std::vector<std::vector<double>>& out_counts) {
    if (in_counts.empty() || in_counts.size() != out_counts.size())
        throw std::invalid_argument("max_pressure_act: phase tables must match");
    int best = 0;
    double best_pressure = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < in_counts.size(); ++p) {
        if (in_counts[p].size() != out_counts[p].size())
            throw std::invalid_argument("max_pressure_act: movement tables must match");
        double pressure = 0.0;
        for (std::size_t m = 0; m < in_counts[p].size(); ++m)
            pressure += in_counts[p][m] - out_counts[p][m];
        if (pressure > best_pressure) {
            best_pressure = pressure;
            best = static_cast<int>(p);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// DQN pieces

enum class Source { Observed, Imputed };

struct Experience {
    std::vector<double> state;
    int action = 0;
    double reward = 0.0;
    std::vector<double> next_state;
    Source source = Source::Observed;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 10000) : capacity_(capacity) {
        if (capacity_ == 0) throw std::invalid_argument("replay buffer capacity must be >= 1");
    }

    void push(Experience e) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(e));
        } else {
            items_[head_] = std::move(e);
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return items_.size(); }

    // Uniform sampling with replacement, optionally restricted by source tag.
    std::vector<Experience> sample(std::size_t batch_size, Rng& rng,
                                   std::optional<Source> source_filter = std::nullopt) const {
        if (items_.empty()) throw std::runtime_error("replay_sample: buffer is empty");
        std::vector<std::size_t> pool;
        if (source_filter) {
            for (std::size_t i = 0; i < items_.size(); ++i)
                if (items_[i].source == *source_filter) pool.push_back(i);
            if (pool.empty())
                throw std::runtime_error("replay_sample: no experiences match the source filter");
        }
        std::vector<Experience> out;
        out.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            const std::size_t idx =
                source_filter
                    ? pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))]
                    : static_cast<std::size_t>(rng.uniform_int(static_cast<int>(items_.size())));
            out.push_back(items_[idx]);
        }
        return out;
    }

    std::size_t count(Source s) const {
        std::size_t n = 0;
        for (const Experience& e : items_)
            if (e.source == s) ++n;
        return n;
    }

    // Oldest-first view, for eviction audits.
    std::vector<const Experience*> in_order() const {
        std::vector<const Experience*> out;
        out.reserve(items_.size());
        for (std::size_t i = 0; i < items_.size(); ++i)
            out.push_back(&items_[(head_ + i) % items_.size()]);
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Experience> items_;
};

struct EpsilonSchedule {
    double epsilon = 0.1;
    double epsilon_min = 0.01;
    double decay = 0.995;  // multiplicative, applied per episode

    double value() const { return std::max(epsilon_min, epsilon); }
    void decay_episode() { epsilon = std::max(epsilon_min, epsilon * decay); }
};

inline constexpr double kDefaultGamma = 0.95;

inline int argmax_action(const std::vector<double>& q) {
    int best = 0;
    for (std::size_t i = 1; i < q.size(); ++i)
        if (q[i] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

// Epsilon-greedy over Q(state, .); greedy ties break toward the lowest id.
inline int dqn_act(const Mlp& q, std::span<const double> state, double epsilon, Rng& rng) {
    if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.uniform_int(q.output_dim());
    return argmax_action(q.forward(state));
}

// One regression step of Q(s,a) toward r + gamma * max_a' target_q(s',a').
// Returns the pre-step batch loss.
inline double dqn_update(Mlp& q, const Mlp& target_q, const std::vector<Experience>& batch,
                         double gamma, const AdamConfig& opt) {
    if (batch.empty()) throw std::invalid_argument("dqn_update: empty batch");
    std::vector<std::vector<double>> inputs;
    std::vector<int> actions;
    std::vector<double> targets;
    inputs.reserve(batch.size());
    actions.reserve(batch.size());
    targets.reserve(batch.size());
    for (const Experience& e : batch) {
        inputs.push_back(e.state);
        actions.push_back(e.action);
        double y = e.reward;
        if (gamma != 0.0) {
            const auto next_q = target_q.forward(e.next_state);
            y += gamma * *std::max_element(next_q.begin(), next_q.end());
        }
        if (!std::isfinite(y))
            throw std::runtime_error("dqn_update: non-finite Bellman target");
        targets.push_back(y);
    }
    return q.train_step_indexed(inputs, actions, targets, opt);
}

// Q-network shape used everywhere a 16-dim local state drives 4 phases.
inline Mlp make_q_network(int input_dim, std::uint64_t seed) {
    return Mlp::init({input_dim, 64, 64, 32, kNumPhases}, seed);
}

}  // namespace gridlight
