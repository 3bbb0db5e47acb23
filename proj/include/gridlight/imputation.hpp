#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gridlight/nn.hpp"
#include "gridlight/traffic_sim.hpp"

namespace gridlight {

// Store-and-forward state imputation: componentwise mean of the observed
// neighbors' lane counts at the previous step. The phase slot is never
// averaged; the controller knows the imputed intersection's own phase. The
// mean is clamped to the componentwise [min, max] of the inputs so the
// bounds identity holds exactly in floating point.
inline StateVector sfm_impute(const std::vector<StateVector>& neighbor_states_prev,
                              int own_phase) {
    if (neighbor_states_prev.empty())
        throw std::runtime_error("sfm_impute: no observed neighbor states available");
    StateVector out;
    out.phase = own_phase;
    std::vector<double> vals(neighbor_states_prev.size());
    for (int c = 0; c < 12; ++c) {
        for (std::size_t i = 0; i < neighbor_states_prev.size(); ++i)
            vals[i] = neighbor_states_prev[i].lane_counts[c];
        // Sorted accumulation makes the mean independent of neighbor order.
        std::sort(vals.begin(), vals.end());
        double sum = 0.0;
        for (double v : vals) sum += v;
        out.lane_counts[c] =
            std::clamp(sum / static_cast<double>(vals.size()), vals.front(), vals.back());
    }
    return out;
}

// Predicts the environment reward from a 16-dim state and a
// one-hot action. Four weight layers: 20 -> 64 -> 64 -> 32 -> 1.
struct RewardModel {
    Mlp net;

    static constexpr int kInputDim = 20;

    static RewardModel init(std::uint64_t seed) {
        return RewardModel{Mlp::init({kInputDim, 64, 64, 32, 1}, seed)};
    }

    static std::vector<double> encode(std::span<const double> state_flat, int action) {
        if (state_flat.size() != 16)
            throw std::invalid_argument("reward model: state must be 16-dim");
        if (action < 0 || action >= kNumPhases)
            throw std::invalid_argument("reward model: bad action id");
        std::vector<double> in(kInputDim, 0.0);
        std::copy(state_flat.begin(), state_flat.end(), in.begin());
        in[static_cast<std::size_t>(16 + action)] = 1.0;
        return in;
    }
};

inline double infer_reward(const RewardModel& model, const StateVector& state, int action) {
    const auto flat = state.flat();
    const auto out = model.net.forward(RewardModel::encode(flat, action));
    return out[0];
}

inline double infer_reward(const RewardModel& model, std::span<const double> state_flat,
                           int action) {
    return model.net.forward(RewardModel::encode(state_flat, action))[0];
}

struct PretrainSample {
    StateVector state;
    int action = 0;
    double reward = 0.0;
};

// Samples recorded at observed intersections, shuffled and split 80/20.
struct PretrainDataset {
    std::vector<PretrainSample> train;
    std::vector<PretrainSample> test;

    static PretrainDataset split(std::vector<PretrainSample> samples, std::uint64_t rng_seed) {
        Rng rng(rng_seed);
        for (std::size_t i = samples.size(); i > 1; --i)
            std::swap(samples[i - 1], samples[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
        PretrainDataset data;
        const std::size_t n_train = samples.size() * 8 / 10;
        data.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_train));
        data.test.assign(samples.begin() + static_cast<std::ptrdiff_t>(n_train), samples.end());
        return data;
    }

    void save(std::ostream& os) const {
        os << "gridlight-pretrain v1\n" << std::setprecision(17);
        auto dump = [&](const std::vector<PretrainSample>& part, const char* tag) {
            for (const PretrainSample& s : part) {
                os << tag << " " << s.action << " " << s.reward << " " << s.state.phase;
                for (double c : s.state.lane_counts) os << " " << c;
                os << "\n";
            }
        };
        dump(train, "train");
        dump(test, "test");
    }

    static PretrainDataset load(std::istream& is) {
        std::string header;
        std::getline(is, header);
        if (header != "gridlight-pretrain v1")
            throw std::runtime_error("pretrain file: unsupported header '" + header + "'");
        PretrainDataset data;
        std::string tag;
        while (is >> tag) {
            PretrainSample s;
            is >> s.action >> s.reward >> s.state.phase;
            for (double& c : s.state.lane_counts) is >> c;
            if (!is) throw std::runtime_error("pretrain file: truncated record");
            if (tag == "train") data.train.push_back(s);
            else if (tag == "test") data.test.push_back(s);
            else throw std::runtime_error("pretrain file: unknown tag '" + tag + "'");
        }
        return data;
    }
};

struct PretrainConfig {
    int batch_size = 32;
    double learning_rate = 1e-3;
    int max_passes = 50;
    int patience = 5;  // early stop when test MSE stops improving
    std::uint64_t seed = 0;
};

struct PretrainResult {
    RewardModel model;
    double test_mse = 0.0;
    double test_variance = 0.0;
    int passes_run = 0;
};

namespace detail {

inline double dataset_mse(const RewardModel& model, const std::vector<PretrainSample>& part) {
    double mse = 0.0;
    for (const PretrainSample& s : part) {
        const double d = infer_reward(model, s.state, s.action) - s.reward;
        mse += d * d;
    }
    return part.empty() ? 0.0 : mse / static_cast<double>(part.size());
}

inline double reward_variance(const std::vector<PretrainSample>& part) {
    if (part.empty()) return 0.0;
    double mean = 0.0;
    for (const PretrainSample& s : part) mean += s.reward;
    mean /= static_cast<double>(part.size());
    double var = 0.0;
    for (const PretrainSample& s : part) var += (s.reward - mean) * (s.reward - mean);
    return var / static_cast<double>(part.size());
}

}  // namespace detail

// Minimizes (1/n) sum (g(s,a) - r)^2 over the train split with
// minibatch Adam; reports held-out MSE. Throws if the held-out MSE cannot
// beat predicting the mean reward.
inline PretrainResult pretrain_reward_model(const PretrainDataset& data,
                                            const PretrainConfig& cfg = PretrainConfig{}) {
    if (data.train.empty() || data.test.empty())
        throw std::invalid_argument("pretrain_reward_model: empty dataset");

    PretrainResult result;
    result.model = RewardModel::init(cfg.seed);
    result.test_variance = detail::reward_variance(data.test);

    AdamConfig opt;
    opt.learning_rate = cfg.learning_rate;
    Rng rng(cfg.seed, 1);

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_test = std::numeric_limits<double>::infinity();
    Mlp best_params = result.model.net;
    int stall = 0;
    for (int pass = 0; pass < cfg.max_passes; ++pass) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::vector<double>> inputs;
            std::vector<std::vector<double>> targets;
            inputs.reserve(end - start);
            targets.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const PretrainSample& s = data.train[order[i]];
                inputs.push_back(RewardModel::encode(s.state.flat(), s.action));
                targets.push_back({s.reward});
            }
            const double loss = result.model.net.train_step_mse(inputs, targets, opt);
            if (!std::isfinite(loss))
                throw std::runtime_error("pretrain_reward_model: divergence at pass " +
                                         std::to_string(pass));
        }
        result.passes_run = pass + 1;
        const double test_mse = detail::dataset_mse(result.model, data.test);
        if (test_mse < best_test - 1e-12) {
            best_test = test_mse;
            best_params = result.model.net;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    result.model.net = best_params;
    result.test_mse = best_test;
    if (result.test_variance > 1e-12 && result.test_mse >= result.test_variance)
        throw std::runtime_error(
            "pretrain_reward_model: held-out MSE " + std::to_string(result.test_mse) +
            " does not beat the mean-prediction baseline " + std::to_string(result.test_variance));
    return result;
}

// One gradient step of the reward-model loss on a batch of observed
// (state, action, reward) triples; returns the pre-step batch loss, or
// nullopt for an empty batch.
inline std::optional<double> update_reward_model(RewardModel& model,
                                                 const std::vector<PretrainSample>& batch,
                                                 double learning_rate) {
    if (batch.empty()) return std::nullopt;
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> targets;
    inputs.reserve(batch.size());
    targets.reserve(batch.size());
    for (const PretrainSample& s : batch) {
        inputs.push_back(RewardModel::encode(s.state.flat(), s.action));
        targets.push_back({s.reward});
    }
    AdamConfig opt;
    opt.learning_rate = learning_rate;
    return model.net.train_step_mse(inputs, targets, opt);
}

}  // namespace gridlight
