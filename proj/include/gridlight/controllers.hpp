#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridlight/agents.hpp"
#include "gridlight/imputation.hpp"
#include "gridlight/observation.hpp"
#include "gridlight/traffic_sim.hpp"

namespace gridlight {

enum class StrategyId {
    FixFix,
    IdqnFix,
    IdqnNeighboring,
    IdqnMaxp,
    SdqnTransferred,
    IdqnIdqn,
    SdqnAll,
    SdqnModelBased,
};

inline const char* strategy_name(StrategyId s) {
    switch (s) {
        case StrategyId::FixFix: return "FixFix";
        case StrategyId::IdqnFix: return "IdqnFix";
        case StrategyId::IdqnNeighboring: return "IdqnNeighboring";
        case StrategyId::IdqnMaxp: return "IdqnMaxp";
        case StrategyId::SdqnTransferred: return "SdqnTransferred";
        case StrategyId::IdqnIdqn: return "IdqnIdqn";
        case StrategyId::SdqnAll: return "SdqnAll";
        case StrategyId::SdqnModelBased: return "SdqnModelBased";
    }
    throw std::logic_error("bad StrategyId");
}

inline StrategyId parse_strategy(const std::string& name) {
    static const std::map<std::string, StrategyId> table = {
        {"FixFix", StrategyId::FixFix},
        {"IdqnFix", StrategyId::IdqnFix},
        {"IdqnNeighboring", StrategyId::IdqnNeighboring},
        {"IdqnMaxp", StrategyId::IdqnMaxp},
        {"SdqnTransferred", StrategyId::SdqnTransferred},
        {"IdqnIdqn", StrategyId::IdqnIdqn},
        {"SdqnAll", StrategyId::SdqnAll},
        {"SdqnModelBased", StrategyId::SdqnModelBased},
    };
    const auto it = table.find(name);
    if (it == table.end()) throw std::invalid_argument("unknown strategy '" + name + "'");
    return it->second;
}

inline std::vector<StrategyId> all_strategies() {
    return {StrategyId::FixFix,          StrategyId::IdqnFix,  StrategyId::IdqnNeighboring,
            StrategyId::IdqnMaxp,        StrategyId::SdqnTransferred,
            StrategyId::IdqnIdqn,        StrategyId::SdqnAll,  StrategyId::SdqnModelBased};
}

inline bool strategy_uses_shared_network(StrategyId s) {
    return s == StrategyId::SdqnTransferred || s == StrategyId::SdqnAll ||
           s == StrategyId::SdqnModelBased;
}

inline bool strategy_needs_reward_model(StrategyId s) {
    return s == StrategyId::IdqnIdqn || s == StrategyId::SdqnAll ||
           s == StrategyId::SdqnModelBased;
}

inline bool strategy_uses_sfm(StrategyId s) {
    return s == StrategyId::IdqnMaxp || s == StrategyId::SdqnTransferred ||
           s == StrategyId::IdqnIdqn || s == StrategyId::SdqnAll ||
           s == StrategyId::SdqnModelBased;
}

struct ControllerConfig {
    int decision_interval = 10;  // simulator steps per signal decision
    double gamma = kDefaultGamma;
    // Laptop-scale default. Full-scale runs (100 episodes x 3600 steps) use
    // 1e-4; with 20 x 600 there are too few updates per agent for that rate.
    double q_learning_rate = 1e-3;
    double reward_model_learning_rate = 1e-3;
    EpsilonSchedule epsilon{};
    std::size_t replay_capacity = 10000;
    int batch_size = 32;
    int warmup = 100;  // experiences before Q updates begin
    int target_sync_episodes = 5;
    int rollout_rounds = 5;
    int rollout_batch = 32;
    // Ablation only: feed stored environment rewards into the imaginary
    // rollout instead of re-inferred ones.
    bool rollout_use_true_rewards = false;
    std::vector<int> fixed_plan_candidates = {1, 2, 3, 4};
};

// Called for every completed observed experience during training; used to
// harvest reward-model pretraining data.
using ObservedSampleSink =
    std::function<void(NodeId, const StateVector&, int action, double reward)>;

// Binds one of the eight control strategies to a network + observation mask
// and owns all mutable training state: per-intersection or shared Q-networks,
// replay buffers, the SFM cache, the exploration schedule, and for the
// model-based variant the online reward model.
class Controller {
public:
    Controller(const RoadNetwork& net, const ObservationMask& mask, StrategyId strategy,
               const ControllerConfig& cfg, std::uint64_t seed,
               std::optional<RewardModel> reward_model = std::nullopt)
        : net_(&net), mask_(&mask), strategy_(strategy), cfg_(cfg), master_(Rng(seed)),
          reward_model_(std::move(reward_model)), eps_(cfg.epsilon) {
        if (strategy_needs_reward_model(strategy_) && !reward_model_)
            throw std::invalid_argument(std::string("strategy ") + strategy_name(strategy_) +
                                        " requires a pretrained reward model");
        for (const Intersection& inter : net.intersections) {
            explore_rngs_.emplace(inter.id, master_.stream(1000 + static_cast<std::uint32_t>(inter.id)));
        }
        if (strategy_uses_shared_network(strategy_)) {
            shared_ = std::make_unique<AgentNet>(make_agent(16, 2998, 3999));
        } else if (strategy_ != StrategyId::FixFix) {
            for (const Intersection& inter : net.intersections) {
                const bool unobserved = !mask.is_observed(inter.id);
                if (strategy_ == StrategyId::IdqnFix && unobserved) continue;
                if (strategy_ == StrategyId::IdqnMaxp && unobserved) continue;
                const int input_dim =
                    (strategy_ == StrategyId::IdqnNeighboring && unobserved) ? 64 : 16;
                agents_.emplace(inter.id,
                                make_agent(input_dim, 2000 + static_cast<std::uint32_t>(inter.id),
                                           3000 + static_cast<std::uint32_t>(inter.id)));
            }
        }
        rollout_rng_ = std::make_unique<Rng>(master_.stream(5000));
        // Reward imputation only engages when something is actually missing;
        // with a full observation mask every SDQN variant collapses to plain
        // shared DQN.
        reward_imputation_active_ = strategy_needs_reward_model(strategy_) && !mask.unobserved.empty();
    }

    StrategyId strategy() const { return strategy_; }
    const ControllerConfig& config() const { return cfg_; }
    double epsilon() const { return eps_.value(); }
    int episodes_trained() const { return episodes_trained_; }
    int imputation_fallbacks() const { return imputation_fallbacks_; }

    // Calibrates the shared fixed-time plan (FixFix, and the fixed half of
    // IdqnFix). Must run before episodes for those strategies.
    void calibrate_fixed_plan(const FlowSpec& flow, int horizon) {
        plan_ = tune_fixed_plan(*net_, flow, horizon, cfg_.decision_interval,
                                cfg_.fixed_plan_candidates);
    }
    void set_fixed_plan(const FixedTimePlan& plan) { plan_ = plan; }
    const std::optional<FixedTimePlan>& fixed_plan() const { return plan_; }

    // Signal decision at a boundary (sim.step() % decision_interval == 0).
    // Returned vector is indexed by intersection id. Advances the
    // controller's decision bookkeeping; during training use train_episode,
    // which calls this internally.
    std::vector<int> control_step(const SimState& sim) { return decide(sim, eps_.value()).signals; }

    // One training episode over a fresh simulation of `flow`.
    Metrics train_episode(const FlowSpec& flow, int horizon,
                          const ObservedSampleSink& sink = nullptr) {
        return run_episode(flow, horizon, true, eps_.value(), sink);
    }

    // Greedy evaluation episode: no exploration, no learning.
    Metrics eval_episode(const FlowSpec& flow, int horizon) {
        return run_episode(flow, horizon, false, 0.0, nullptr);
    }

    // Dyna-style extra Q updates on replayed transitions with rewards
    // re-inferred by the current reward model; environment rewards are never
    // consulted. Returns the mean pre-update loss, or nullopt when skipped.
    std::optional<double> imaginary_rollout(int rollout_rounds, int batch_size) {
        if (strategy_ != StrategyId::SdqnModelBased)
            throw std::logic_error("imaginary_rollout: strategy is not SdqnModelBased");
        if (rollout_rounds <= 0) return std::nullopt;
        AgentNet& agent = *shared_;
        if (agent.buffer.size() < static_cast<std::size_t>(cfg_.warmup)) return std::nullopt;
        double total = 0.0;
        int rounds = 0;
        for (int c = 0; c < rollout_rounds; ++c) {
            std::vector<Experience> batch =
                agent.buffer.sample(static_cast<std::size_t>(batch_size), *rollout_rng_);
            for (Experience& e : batch) {
                if (!cfg_.rollout_use_true_rewards)
                    e.reward = infer_reward(*reward_model_, e.state, e.action);
            }
            total += dqn_update(agent.online, agent.target, batch, cfg_.gamma, q_opt());
            ++rounds;
        }
        return total / rounds;
    }

    const ReplayBuffer* shared_buffer() const { return shared_ ? &shared_->buffer : nullptr; }
    const ReplayBuffer* agent_buffer(NodeId i) const {
        const auto it = agents_.find(i);
        return it == agents_.end() ? nullptr : &it->second.buffer;
    }
    const Mlp* shared_network() const { return shared_ ? &shared_->online : nullptr; }
    const Mlp* agent_network(NodeId i) const {
        const auto it = agents_.find(i);
        return it == agents_.end() ? nullptr : &it->second.online;
    }
    Mlp* mutable_shared_network() { return shared_ ? &shared_->online : nullptr; }
    ReplayBuffer* mutable_shared_buffer() { return shared_ ? &shared_->buffer : nullptr; }
    const RewardModel* reward_model() const {
        return reward_model_ ? &*reward_model_ : nullptr;
    }

    // Checkpointing: shared network or per-node networks, one file per net.
    void save_checkpoints(const std::string& dir_prefix) const {
        if (shared_) shared_->online.save_file(dir_prefix + "qnet_shared.txt");
        for (const auto& [node, agent] : agents_)
            agent.online.save_file(dir_prefix + "qnet_node" + std::to_string(node) + ".txt");
        if (reward_model_) reward_model_->net.save_file(dir_prefix + "reward_model.txt");
    }
    void load_checkpoints(const std::string& dir_prefix) {
        if (shared_) {
            shared_->online = Mlp::load_file(dir_prefix + "qnet_shared.txt");
            shared_->target.copy_params_from(shared_->online);
        }
        for (auto& [node, agent] : agents_) {
            agent.online = Mlp::load_file(dir_prefix + "qnet_node" + std::to_string(node) + ".txt");
            agent.target.copy_params_from(agent.online);
        }
    }

private:
    struct AgentNet {
        Mlp online;
        Mlp target;
        ReplayBuffer buffer;
        Rng replay_rng;
    };

    struct Pending {
        std::vector<double> input;
        StateVector sv;   // meaningful for observed and SFM-imputed inputs
        int action = 0;
        double inferred_reward = 0.0;  // unobserved + reward model: g(s_hat, a) at action time
        bool has_inferred = false;
        bool valid = false;
    };

    struct Decision {
        std::vector<int> signals;
        std::map<NodeId, StateVector> observed_now;
        std::map<NodeId, StateVector> imputed_now;
        std::map<NodeId, std::vector<double>> inputs;  // network inputs used to act
    };

    AgentNet make_agent(int input_dim, std::uint32_t init_tag, std::uint32_t replay_tag) {
        Rng derive = master_.stream(init_tag);
        const std::uint64_t net_seed =
            (static_cast<std::uint64_t>(derive.next_u32()) << 32) | derive.next_u32();
        AgentNet a{make_q_network(input_dim, net_seed), Mlp(),
                   ReplayBuffer(cfg_.replay_capacity), master_.stream(replay_tag)};
        a.target = a.online;
        return a;
    }

    AdamConfig q_opt() const {
        AdamConfig opt;
        opt.learning_rate = cfg_.q_learning_rate;
        return opt;
    }

    void require_plan() const {
        if (!plan_)
            throw std::logic_error(std::string(strategy_name(strategy_)) +
                                   ": fixed plan not calibrated");
    }

    // Assemble the MaxPressure in/out tables for unobserved intersection k
    // from imputed own counts and neighbor counts (observed where available,
    // imputed otherwise, 0 for boundary sinks). Imputed values are rounded so
    // pressures stay integer-comparable.
    int max_pressure_on_imputed(NodeId k, const Decision& d) const {
        const Intersection& inter = net_->intersection(k);
        const StateVector& own = d.imputed_now.at(k);
        std::vector<std::vector<double>> in_counts(kNumPhases), out_counts(kNumPhases);
        for (int p = 0; p < kNumPhases; ++p) {
            for (const Movement& mv : inter.phases[static_cast<std::size_t>(p)].movements) {
                const Lane& in_lane = net_->lane(mv.in_lane);
                const int in_idx =
                    static_cast<int>(in_lane.approach_dir) * 3 + static_cast<int>(in_lane.turn);
                in_counts[static_cast<std::size_t>(p)].push_back(
                    std::round(own.lane_counts[in_idx]));
                const Lane& out_lane = net_->lane(mv.out_lane);
                double out_val = 0.0;
                if (!out_lane.is_exit()) {
                    const NodeId j = out_lane.to;
                    const int out_idx = static_cast<int>(out_lane.approach_dir) * 3 +
                                        static_cast<int>(out_lane.turn);
                    if (mask_->is_observed(j))
                        out_val = d.observed_now.at(j).lane_counts[out_idx];
                    else if (d.imputed_now.count(j))
                        out_val = std::round(d.imputed_now.at(j).lane_counts[out_idx]);
                }
                out_counts[static_cast<std::size_t>(p)].push_back(out_val);
            }
        }
        return max_pressure_act(in_counts, out_counts);
    }

    Decision decide(const SimState& sim, double epsilon) {
        if (sim.step() % cfg_.decision_interval != 0)
            throw std::logic_error("control_step: called off a decision boundary (step " +
                                   std::to_string(sim.step()) + ")");
        Decision d;
        d.signals.assign(net_->intersections.size(), 0);

        for (NodeId j : mask_->observed) d.observed_now.emplace(j, sim.local_state(j));

        if (strategy_uses_sfm(strategy_)) {
            for (NodeId k : mask_->unobserved) {
                std::vector<StateVector> nbrs;
                if (have_prev_snapshot_) {
                    for (NodeId nb : net_->neighbors(k))
                        if (mask_->is_observed(nb)) nbrs.push_back(prev_observed_.at(nb));
                }
                StateVector imputed;
                if (!nbrs.empty()) {
                    imputed = sfm_impute(nbrs, sim.current_phase(k));
                } else if (imputed_prev_.count(k)) {
                    imputed = imputed_prev_.at(k);  // hold previous imputation
                    imputed.phase = sim.current_phase(k);
                    ++imputation_fallbacks_;
                } else {
                    imputed.phase = sim.current_phase(k);  // zeros at t=0
                    ++imputation_fallbacks_;
                }
                d.imputed_now.emplace(k, imputed);
            }
        }

        for (const Intersection& inter : net_->intersections) {
            const NodeId i = inter.id;
            const bool observed = mask_->is_observed(i);
            int action = 0;
            switch (strategy_) {
                case StrategyId::FixFix:
                    require_plan();
                    action = fixed_time_act(*plan_, decision_index_);
                    break;
                case StrategyId::IdqnFix:
                    if (observed) {
                        d.inputs[i] = flat_vec(d.observed_now.at(i));
                        action = dqn_act(agents_.at(i).online, d.inputs[i], epsilon,
                                         explore_rngs_.at(i));
                    } else {
                        require_plan();
                        action = fixed_time_act(*plan_, decision_index_);
                    }
                    break;
                case StrategyId::IdqnNeighboring:
                    d.inputs[i] = observed ? flat_vec(d.observed_now.at(i))
                                           : neighbor_concat_state(sim, *mask_, i);
                    action = dqn_act(agents_.at(i).online, d.inputs[i], epsilon,
                                     explore_rngs_.at(i));
                    break;
                case StrategyId::IdqnMaxp:
                    if (observed) {
                        d.inputs[i] = flat_vec(d.observed_now.at(i));
                        action = dqn_act(agents_.at(i).online, d.inputs[i], epsilon,
                                         explore_rngs_.at(i));
                    } else {
                        action = max_pressure_on_imputed(i, d);
                    }
                    break;
                case StrategyId::IdqnIdqn:
                case StrategyId::SdqnTransferred:
                case StrategyId::SdqnAll:
                case StrategyId::SdqnModelBased: {
                    d.inputs[i] = observed ? flat_vec(d.observed_now.at(i))
                                           : flat_vec(d.imputed_now.at(i));
                    Mlp& net = strategy_uses_shared_network(strategy_) ? shared_->online
                                                                       : agents_.at(i).online;
                    action = dqn_act(net, d.inputs[i], epsilon, explore_rngs_.at(i));
                    break;
                }
            }
            d.signals[static_cast<std::size_t>(i)] = action;
        }
        ++decision_index_;
        return d;
    }

    bool node_learns(NodeId i) const {
        const bool observed = mask_->is_observed(i);
        switch (strategy_) {
            case StrategyId::FixFix: return false;
            case StrategyId::IdqnFix: return observed;
            case StrategyId::IdqnMaxp: return observed;
            case StrategyId::IdqnNeighboring: return true;
            case StrategyId::SdqnTransferred: return observed;
            case StrategyId::IdqnIdqn:
            case StrategyId::SdqnAll:
            case StrategyId::SdqnModelBased: return observed || reward_imputation_active_;
        }
        return false;
    }

    AgentNet& owning_agent(NodeId i) {
        return strategy_uses_shared_network(strategy_) ? *shared_ : agents_.at(i);
    }

    void q_update_after_push(AgentNet& agent) {
        if (agent.buffer.size() < static_cast<std::size_t>(cfg_.warmup)) return;
        const auto batch =
            agent.buffer.sample(static_cast<std::size_t>(cfg_.batch_size), agent.replay_rng);
        dqn_update(agent.online, agent.target, batch, cfg_.gamma, q_opt());
    }

    Metrics run_episode(const FlowSpec& flow, int horizon, bool learn, double epsilon,
                        const ObservedSampleSink& sink) {
        if (strategy_ == StrategyId::FixFix ||
            (strategy_ == StrategyId::IdqnFix && !mask_->unobserved.empty()))
            require_plan();
        SimState sim(*net_, flow);
        decision_index_ = 0;
        have_prev_snapshot_ = false;
        prev_observed_.clear();
        imputed_prev_.clear();
        pending_.clear();

        if (learn && episodes_trained_ > 0 &&
            episodes_trained_ % cfg_.target_sync_episodes == 0)
            sync_targets();

        std::vector<int> signals(net_->intersections.size(), 0);
        for (int step = 0; step < horizon; ++step) {
            if (step % cfg_.decision_interval == 0) {
                signals = boundary(sim, learn, epsilon, sink);
            }
            sim.advance(signals);
        }
        if (horizon % cfg_.decision_interval == 0)
            finish_pending(sim, learn, sink);  // close the last interval's experiences

        if (learn) {
            eps_.decay_episode();
            ++episodes_trained_;
        }
        return sim.episode_metrics(horizon);
    }

    // Everything that happens at one decision boundary: act, then complete
    // the previous interval's experiences and learn from them.
    std::vector<int> boundary(const SimState& sim, bool learn, double epsilon,
                              const ObservedSampleSink& sink) {
        Decision d = decide(sim, epsilon);

        if (learn) {
            complete_pending(sim, d, sink);
            if (strategy_ == StrategyId::SdqnModelBased && reward_imputation_active_)
                model_based_extras(sim);
        }

        // Stash this boundary's (input, action) pairs for completion at the
        // next boundary.
        pending_.clear();
        if (learn) {
            for (const Intersection& inter : net_->intersections) {
                const NodeId i = inter.id;
                if (!node_learns(i)) continue;
                Pending p;
                p.valid = true;
                p.action = d.signals[static_cast<std::size_t>(i)];
                p.input = d.inputs.at(i);
                if (mask_->is_observed(i)) {
                    p.sv = d.observed_now.at(i);
                } else if (d.imputed_now.count(i)) {
                    p.sv = d.imputed_now.at(i);
                    if (reward_imputation_active_) {
                        p.inferred_reward = infer_reward(*reward_model_, p.sv, p.action);
                        p.has_inferred = true;
                    }
                }
                pending_.emplace(i, std::move(p));
            }
        }

        prev_observed_ = std::move(d.observed_now);
        for (const auto& [k, s] : d.imputed_now) imputed_prev_[k] = s;
        have_prev_snapshot_ = true;
        return d.signals;
    }

    void complete_pending(const SimState& sim, const Decision& d, const ObservedSampleSink& sink) {
        for (auto& [i, p] : pending_) {
            if (!p.valid) continue;
            Experience e;
            e.state = p.input;
            e.action = p.action;
            const bool observed = mask_->is_observed(i);
            if (observed) {
                e.reward = sim.local_reward(i);
                e.next_state = flat_vec(d.observed_now.at(i));
                e.source = Source::Observed;
                if (sink) sink(i, p.sv, p.action, e.reward);
            } else if (strategy_ == StrategyId::IdqnNeighboring) {
                e.reward = neighbor_reward_sum(sim, *mask_, i);
                e.next_state = neighbor_concat_state(sim, *mask_, i);
                e.source = Source::Observed;
            } else {
                e.reward = p.has_inferred
                               ? p.inferred_reward
                               : infer_reward(*reward_model_, p.sv, p.action);
                e.next_state = flat_vec(d.imputed_now.at(i));
                e.source = Source::Imputed;
            }
            AgentNet& agent = owning_agent(i);
            agent.buffer.push(std::move(e));
            q_update_after_push(agent);
        }
    }

    // Final boundary at step == horizon: complete experiences, no new action.
    void finish_pending(const SimState& sim, bool learn, const ObservedSampleSink& sink) {
        if (!learn || pending_.empty()) return;
        Decision d;
        for (NodeId j : mask_->observed) d.observed_now.emplace(j, sim.local_state(j));
        if (strategy_uses_sfm(strategy_)) {
            for (NodeId k : mask_->unobserved) {
                std::vector<StateVector> nbrs;
                for (NodeId nb : net_->neighbors(k))
                    if (mask_->is_observed(nb)) nbrs.push_back(prev_observed_.at(nb));
                StateVector imputed;
                if (!nbrs.empty()) imputed = sfm_impute(nbrs, sim.current_phase(k));
                else if (imputed_prev_.count(k)) imputed = imputed_prev_.at(k);
                imputed.phase = sim.current_phase(k);
                d.imputed_now.emplace(k, imputed);
            }
        }
        complete_pending(sim, d, sink);
        pending_.clear();
    }

    // Model-based extras, once per decision boundary: refresh the reward
    // model on this boundary's observed experiences, then run the imaginary
    // rollout.
    void model_based_extras(const SimState& sim) {
        std::vector<PretrainSample> batch;
        for (const auto& [i, p] : pending_) {
            if (!p.valid || !mask_->is_observed(i)) continue;
            batch.push_back({p.sv, p.action, sim.local_reward(i)});
        }
        update_reward_model(*reward_model_, batch, cfg_.reward_model_learning_rate);
        imaginary_rollout(cfg_.rollout_rounds, cfg_.rollout_batch);
    }

    void sync_targets() {
        if (shared_) shared_->target.copy_params_from(shared_->online);
        for (auto& [node, agent] : agents_) agent.target.copy_params_from(agent.online);
    }

    static std::vector<double> flat_vec(const StateVector& s) {
        const auto f = s.flat();
        return {f.begin(), f.end()};
    }

    const RoadNetwork* net_;
    const ObservationMask* mask_;
    StrategyId strategy_;
    ControllerConfig cfg_;
    Rng master_;
    std::optional<RewardModel> reward_model_;
    std::optional<FixedTimePlan> plan_;
    std::map<NodeId, AgentNet> agents_;
    std::unique_ptr<AgentNet> shared_;
    std::map<NodeId, Rng> explore_rngs_;
    std::unique_ptr<Rng> rollout_rng_;
    EpsilonSchedule eps_;
    bool reward_imputation_active_ = false;

    int decision_index_ = 0;
    int episodes_trained_ = 0;
    int imputation_fallbacks_ = 0;
    bool have_prev_snapshot_ = false;
    std::map<NodeId, StateVector> prev_observed_;
    std::map<NodeId, StateVector> imputed_prev_;
    std::map<NodeId, Pending> pending_;
};

}  // namespace gridlight
