#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridlight/controllers.hpp"
#include "gridlight/pretrain.hpp"

namespace gridlight {

struct NetworkSpec {
    std::string file;  // when set, wins over the grid parameters
    int rows = 4;
    int cols = 4;
    LaneParams lane_params;
};

struct FlowSpecConfig {
    std::string file;
    double mean_rate = 6.0;
    double std_rate = 2.0;
    TurnProbs turn_probs;
    std::uint64_t seed = 7;
};

struct MaskSpec {
    std::vector<NodeId> ids;  // explicit unobserved intersections, wins when set
    int n_missing = 0;
    bool allow_adjacent = false;
    std::uint64_t seed = 11;
};

struct RewardModelSpec {
    std::string checkpoint;   // load when set
    int pretrain_epochs = 12; // otherwise pretrain with IDQN-Fix
    std::uint64_t pretrain_seed = 5;
};

struct ExperimentConfig {
    NetworkSpec network;
    FlowSpecConfig flow;
    std::string strategy = "FixFix";
    MaskSpec mask;
    int episodes = 20;   // laptop-scale default; full-scale profile uses 100
    int horizon = 600;   // laptop-scale default; full-scale profile uses 3600
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    ControllerConfig rl;
    RewardModelSpec reward_model;
    std::string out_dir = "out";

    std::vector<std::string> validate() const {
        std::vector<std::string> bad;
        if (network.file.empty()) {
            if (network.rows < 1) bad.push_back("network.rows must be >= 1");
            if (network.cols < 1) bad.push_back("network.cols must be >= 1");
            if (!(network.lane_params.length_m > 0)) bad.push_back("network.lane_params.length_m must be positive");
            if (network.lane_params.free_flow_steps < 1) bad.push_back("network.lane_params.free_flow_steps must be >= 1");
            if (network.lane_params.capacity < 1) bad.push_back("network.lane_params.capacity must be >= 1");
            if (network.lane_params.sat_flow < 1) bad.push_back("network.lane_params.sat_flow must be >= 1");
        }
        if (flow.file.empty()) {
            if (!(flow.mean_rate > 0)) bad.push_back("flow.mean_rate must be > 0");
            if (flow.std_rate < 0) bad.push_back("flow.std_rate must be >= 0");
            const double psum = flow.turn_probs.left + flow.turn_probs.through + flow.turn_probs.right;
            if (std::abs(psum - 1.0) > 1e-9) bad.push_back("flow.turn_probs must sum to 1");
        }
        try {
            const StrategyId s = parse_strategy(strategy);
            if (strategy_needs_reward_model(s) && reward_model.checkpoint.empty() &&
                reward_model.pretrain_epochs < 1)
                bad.push_back("strategy " + strategy +
                              " requires reward_model.checkpoint or reward_model.pretrain_epochs >= 1");
        } catch (const std::exception&) {
            bad.push_back("unknown strategy '" + strategy + "'");
        }
        if (episodes < 1) bad.push_back("episodes must be >= 1");
        if (horizon < 1) bad.push_back("horizon must be >= 1");
        if (seeds.empty()) bad.push_back("seeds must be non-empty");
        if (mask.n_missing < 0) bad.push_back("mask.n_missing must be >= 0");
        if (rl.decision_interval < 1) bad.push_back("rl.decision_interval must be >= 1");
        if (!(rl.q_learning_rate > 0)) bad.push_back("rl.learning_rate must be > 0");
        if (rl.gamma < 0 || rl.gamma > 1) bad.push_back("rl.gamma must be in [0,1]");
        if (rl.epsilon.epsilon < 0 || rl.epsilon.epsilon > 1) bad.push_back("rl.epsilon must be in [0,1]");
        if (rl.epsilon.epsilon_min < 0 || rl.epsilon.epsilon_min > rl.epsilon.epsilon)
            bad.push_back("rl.epsilon_min must be in [0, epsilon]");
        if (rl.epsilon.decay <= 0 || rl.epsilon.decay > 1) bad.push_back("rl.epsilon_decay must be in (0,1]");
        if (out_dir.empty()) bad.push_back("out_dir must be set");
        return bad;
    }

    void validate_or_throw() const {
        const auto bad = validate();
        if (bad.empty()) return;
        std::string msg = "invalid experiment config:";
        for (const std::string& b : bad) msg += "\n  - " + b;
        throw std::invalid_argument(msg);
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig cfg;
        if (j.contains("network")) {
            const auto& n = j.at("network");
            cfg.network.file = n.value("file", std::string());
            cfg.network.rows = n.value("rows", cfg.network.rows);
            cfg.network.cols = n.value("cols", cfg.network.cols);
            if (n.contains("lane_params")) {
                const auto& lp = n.at("lane_params");
                cfg.network.lane_params.length_m = lp.value("length_m", cfg.network.lane_params.length_m);
                cfg.network.lane_params.free_flow_steps =
                    lp.value("free_flow_steps", cfg.network.lane_params.free_flow_steps);
                cfg.network.lane_params.capacity = lp.value("capacity", cfg.network.lane_params.capacity);
                cfg.network.lane_params.sat_flow = lp.value("sat_flow", cfg.network.lane_params.sat_flow);
            }
        }
        if (j.contains("flow")) {
            const auto& f = j.at("flow");
            cfg.flow.file = f.value("file", std::string());
            cfg.flow.mean_rate = f.value("mean_rate", cfg.flow.mean_rate);
            cfg.flow.std_rate = f.value("std_rate", cfg.flow.std_rate);
            cfg.flow.seed = f.value("seed", cfg.flow.seed);
            if (f.contains("turn_probs")) {
                const auto& tp = f.at("turn_probs");
                cfg.flow.turn_probs.left = tp.at(0).get<double>();
                cfg.flow.turn_probs.through = tp.at(1).get<double>();
                cfg.flow.turn_probs.right = tp.at(2).get<double>();
            }
        }
        cfg.strategy = j.value("strategy", cfg.strategy);
        if (j.contains("mask")) {
            const auto& m = j.at("mask");
            if (m.contains("ids")) cfg.mask.ids = m.at("ids").get<std::vector<NodeId>>();
            cfg.mask.n_missing = m.value("n_missing", cfg.mask.n_missing);
            cfg.mask.allow_adjacent = m.value("allow_adjacent", cfg.mask.allow_adjacent);
            cfg.mask.seed = m.value("seed", cfg.mask.seed);
        }
        cfg.episodes = j.value("episodes", cfg.episodes);
        cfg.horizon = j.value("horizon", cfg.horizon);
        if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("rl")) {
            const auto& r = j.at("rl");
            cfg.rl.decision_interval = r.value("decision_interval", cfg.rl.decision_interval);
            cfg.rl.gamma = r.value("gamma", cfg.rl.gamma);
            cfg.rl.q_learning_rate = r.value("learning_rate", cfg.rl.q_learning_rate);
            cfg.rl.reward_model_learning_rate =
                r.value("reward_model_learning_rate", cfg.rl.reward_model_learning_rate);
            cfg.rl.epsilon.epsilon = r.value("epsilon", cfg.rl.epsilon.epsilon);
            cfg.rl.epsilon.epsilon_min = r.value("epsilon_min", cfg.rl.epsilon.epsilon_min);
            cfg.rl.epsilon.decay = r.value("epsilon_decay", cfg.rl.epsilon.decay);
            cfg.rl.replay_capacity = r.value("replay_capacity", cfg.rl.replay_capacity);
            cfg.rl.batch_size = r.value("batch_size", cfg.rl.batch_size);
            cfg.rl.warmup = r.value("warmup", cfg.rl.warmup);
            cfg.rl.target_sync_episodes = r.value("target_sync_episodes", cfg.rl.target_sync_episodes);
            cfg.rl.rollout_rounds = r.value("rollout_rounds", cfg.rl.rollout_rounds);
            cfg.rl.rollout_batch = r.value("rollout_batch", cfg.rl.rollout_batch);
            cfg.rl.rollout_use_true_rewards =
                r.value("rollout_use_true_rewards", cfg.rl.rollout_use_true_rewards);
            if (r.contains("fixed_plan_candidates"))
                cfg.rl.fixed_plan_candidates = r.at("fixed_plan_candidates").get<std::vector<int>>();
        }
        if (j.contains("reward_model")) {
            const auto& rm = j.at("reward_model");
            cfg.reward_model.checkpoint = rm.value("checkpoint", std::string());
            cfg.reward_model.pretrain_epochs = rm.value("pretrain_epochs", cfg.reward_model.pretrain_epochs);
            cfg.reward_model.pretrain_seed = rm.value("pretrain_seed", cfg.reward_model.pretrain_seed);
        }
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        return cfg;
    }

    static ExperimentConfig load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot read config file " + path);
        nlohmann::json j;
        is >> j;
        return from_json(j);
    }
};

struct ResultRow {
    std::string strategy;
    double missing_rate_pct = 0.0;
    std::uint64_t seed = 0;
    int episode = 0;  // 1-based
    double avg_travel_time = 0.0;
    int throughput = 0;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    double final_mean = 0.0;                 // mean avg_travel_time at final episode
    std::optional<double> final_std;         // present with >= 2 seeds
    ObservationMask mask;
    std::string results_csv;
};

namespace detail {

inline std::string fmt(double v, int prec = 6) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Loads or builds every experiment input from a validated config.
struct ExperimentInputs {
    RoadNetwork net;
    FlowSpec flow;
    ObservationMask mask;
    std::optional<RewardModel> reward_model;
    std::optional<FixedTimePlan> fixed_plan;

    static ExperimentInputs prepare(const ExperimentConfig& cfg) {
        cfg.validate_or_throw();
        ExperimentInputs in;
        in.net = cfg.network.file.empty()
                     ? RoadNetwork::build_grid(cfg.network.rows, cfg.network.cols, cfg.network.lane_params)
                     : RoadNetwork::load_file(cfg.network.file);
        in.flow = cfg.flow.file.empty()
                      ? generate_gaussian_flow(in.net, cfg.flow.mean_rate, cfg.flow.std_rate,
                                               cfg.horizon, cfg.flow.turn_probs, cfg.flow.seed)
                      : FlowSpec::load_file(cfg.flow.file);
        if (!cfg.mask.ids.empty()) {
            in.mask = ObservationMask::from_unobserved(in.net, cfg.mask.ids);
        } else if (cfg.mask.n_missing > 0) {
            in.mask = sample_mask(in.net, cfg.mask.n_missing, cfg.mask.allow_adjacent, cfg.mask.seed);
        } else {
            in.mask = ObservationMask::from_unobserved(in.net, {});
        }

        const StrategyId strat = parse_strategy(cfg.strategy);
        if (strategy_needs_reward_model(strat)) {
            if (!cfg.reward_model.checkpoint.empty()) {
                RewardModel m;
                m.net = Mlp::load_file(cfg.reward_model.checkpoint);
                in.reward_model = std::move(m);
            } else {
                const PretrainDataset data = collect_pretrain_samples(
                    in.net, in.flow, in.mask, cfg.reward_model.pretrain_epochs, cfg.horizon,
                    cfg.reward_model.pretrain_seed, cfg.rl);
                PretrainConfig pcfg;
                pcfg.learning_rate = cfg.rl.reward_model_learning_rate;
                pcfg.seed = cfg.reward_model.pretrain_seed;
                in.reward_model = pretrain_reward_model(data, pcfg).model;
            }
        }
        if (strat == StrategyId::FixFix ||
            (strat == StrategyId::IdqnFix && !in.mask.unobserved.empty())) {
            in.fixed_plan = tune_fixed_plan(in.net, in.flow, cfg.horizon, cfg.rl.decision_interval,
                                            cfg.rl.fixed_plan_candidates);
        }
        return in;
    }
};

// Runs `episodes` training episodes per seed and writes results.csv,
// delay_by_intersection.csv, epsilon_log.csv, and checkpoints under
// cfg.out_dir. Rows stream to disk as they complete; a crashed run leaves an
// "# INCOMPLETE" footer in results.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentInputs in = ExperimentInputs::prepare(cfg);
    const StrategyId strat = parse_strategy(cfg.strategy);
    const double missing_pct = 100.0 * in.mask.missing_rate(in.net);

    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir + "/checkpoints");

    ExperimentResult result;
    result.mask = in.mask;
    result.results_csv = cfg.out_dir + "/results.csv";

    std::ofstream res(result.results_csv);
    std::ofstream eps_log(cfg.out_dir + "/epsilon_log.csv");
    std::ofstream delay(cfg.out_dir + "/delay_by_intersection.csv");
    if (!res || !eps_log || !delay)
        throw std::runtime_error("cannot write outputs under " + cfg.out_dir);
    res << "strategy,missing_rate,seed,episode,avg_travel_time,throughput\n";
    eps_log << "seed,episode,epsilon\n";
    delay << "seed,intersection,row,col,mean_queue_delay,vehicle_visits\n";

    std::vector<double> final_tts;
    try {
        for (const std::uint64_t seed : cfg.seeds) {
            Controller ctrl(in.net, in.mask, strat, cfg.rl, seed, in.reward_model);
            if (in.fixed_plan) ctrl.set_fixed_plan(*in.fixed_plan);

            Metrics last;
            for (int ep = 1; ep <= cfg.episodes; ++ep) {
                last = ctrl.train_episode(in.flow, cfg.horizon);
                result.rows.push_back({cfg.strategy, missing_pct, seed, ep, last.avg_travel_time,
                                       last.throughput});
                res << cfg.strategy << "," << detail::fmt(missing_pct, 4) << "," << seed << ","
                    << ep << "," << detail::fmt(last.avg_travel_time) << "," << last.throughput
                    << "\n";
                eps_log << seed << "," << ep << "," << detail::fmt(ctrl.epsilon(), 8) << "\n";
            }
            final_tts.push_back(last.avg_travel_time);

            for (const Intersection& inter : in.net.intersections)
                delay << seed << "," << inter.id << "," << inter.row << "," << inter.col << ","
                      << detail::fmt(last.per_intersection_delay[static_cast<std::size_t>(inter.id)])
                      << "," << last.per_intersection_visits[static_cast<std::size_t>(inter.id)]
                      << "\n";

            if (strat != StrategyId::FixFix) {
                const std::string prefix =
                    cfg.out_dir + "/checkpoints/seed" + std::to_string(seed) + "_";
                ctrl.save_checkpoints(prefix);
            }
        }
    } catch (const std::exception& e) {
        res << "# INCOMPLETE: " << e.what() << "\n";
        throw;
    }

    result.final_mean = detail::mean_of(final_tts);
    if (final_tts.size() >= 2) result.final_std = detail::stddev_of(final_tts);
    return result;
}

// Greedy evaluation of previously trained checkpoints: one epsilon=0 episode
// per seed, no learning. Writes eval_results.csv next to the checkpoints.
inline std::vector<ResultRow> run_eval(const ExperimentConfig& cfg) {
    ExperimentInputs in = ExperimentInputs::prepare(cfg);
    const StrategyId strat = parse_strategy(cfg.strategy);
    const double missing_pct = 100.0 * in.mask.missing_rate(in.net);

    std::ofstream out(cfg.out_dir + "/eval_results.csv");
    if (!out) throw std::runtime_error("cannot write outputs under " + cfg.out_dir);
    out << "strategy,missing_rate,seed,avg_travel_time,throughput\n";

    std::vector<ResultRow> rows;
    for (const std::uint64_t seed : cfg.seeds) {
        Controller ctrl(in.net, in.mask, strat, cfg.rl, seed, in.reward_model);
        if (in.fixed_plan) ctrl.set_fixed_plan(*in.fixed_plan);
        if (strat != StrategyId::FixFix)
            ctrl.load_checkpoints(cfg.out_dir + "/checkpoints/seed" + std::to_string(seed) + "_");
        const Metrics m = ctrl.eval_episode(in.flow, cfg.horizon);
        rows.push_back({cfg.strategy, missing_pct, seed, 0, m.avg_travel_time, m.throughput});
        out << cfg.strategy << "," << detail::fmt(missing_pct, 4) << "," << seed << ","
            << detail::fmt(m.avg_travel_time) << "," << m.throughput << "\n";
    }
    return rows;
}

struct SweepCell {
    std::string strategy;
    double rate = 0.0;  // fraction of intersections unobserved
    bool allow_adjacent = false;
    int n_missing = 0;
    bool feasible = true;
    std::string error;
    double mean = 0.0;
    double stddev = 0.0;
    double median = 0.0;
    std::vector<double> per_seed;
};

// Cartesian sweep over (rate x adjacency x strategy x seed). Emits a
// Table-1-shaped CSV (mean +- std per cell, FixFix baseline column) and a
// decrease-vs-FixFix CSV. Infeasible adjacency cells are marked rather than
// aborting the sweep.
inline std::vector<SweepCell> sweep_missing_rates(const ExperimentConfig& base,
                                                  const std::vector<double>& rates,
                                                  const std::vector<bool>& adjacency_modes,
                                                  const std::vector<std::string>& strategies) {
    base.validate_or_throw();
    const RoadNetwork probe_net =
        base.network.file.empty()
            ? RoadNetwork::build_grid(base.network.rows, base.network.cols, base.network.lane_params)
            : RoadNetwork::load_file(base.network.file);
    const int n_nodes = static_cast<int>(probe_net.intersections.size());

    for (double rate : rates) {
        const double n = rate * n_nodes;
        if (std::abs(n - std::round(n)) > 1e-9)
            throw std::invalid_argument("sweep: rate " + detail::fmt(rate, 6) +
                                        " is not an integral number of intersections");
    }

    namespace fs = std::filesystem;
    fs::create_directories(base.out_dir);

    // FixFix baseline once: it is open-loop, so the mask cannot matter.
    ExperimentConfig fix_cfg = base;
    fix_cfg.strategy = "FixFix";
    fix_cfg.mask = MaskSpec{};
    fix_cfg.episodes = 1;
    fix_cfg.out_dir = base.out_dir + "/cells/fixfix_baseline";
    const double fixfix_tt = run_experiment(fix_cfg).final_mean;

    std::vector<SweepCell> cells;
    int cell_index = 0;
    for (const std::string& strategy : strategies) {
        for (const bool adjacent : adjacency_modes) {
            for (const double rate : rates) {
                SweepCell cell;
                cell.strategy = strategy;
                cell.rate = rate;
                cell.allow_adjacent = adjacent;
                cell.n_missing = static_cast<int>(std::lround(rate * n_nodes));
                ++cell_index;
                if (adjacent && cell.n_missing < 2) {
                    cell.feasible = false;
                    cell.error = "adjacent pair impossible with n_missing < 2";
                    cells.push_back(cell);
                    continue;
                }
                ExperimentConfig cfg = base;
                cfg.strategy = strategy;
                cfg.mask.ids.clear();
                cfg.mask.n_missing = cell.n_missing;
                cfg.mask.allow_adjacent = adjacent;
                cfg.mask.seed = base.mask.seed + static_cast<std::uint64_t>(cell_index);
                std::ostringstream dir;
                dir << base.out_dir << "/cells/" << strategy << "_n" << cell.n_missing
                    << (adjacent ? "_adj" : "_nonadj");
                cfg.out_dir = dir.str();
                try {
                    const ExperimentResult r = run_experiment(cfg);
                    for (const ResultRow& row : r.rows)
                        if (row.episode == cfg.episodes) cell.per_seed.push_back(row.avg_travel_time);
                    cell.mean = detail::mean_of(cell.per_seed);
                    cell.stddev = cell.per_seed.size() >= 2 ? detail::stddev_of(cell.per_seed) : 0.0;
                    cell.median = detail::median_of(cell.per_seed);
                } catch (const std::exception& e) {
                    cell.feasible = false;
                    cell.error = e.what();
                }
                cells.push_back(cell);
            }
        }
    }

    std::ofstream table(base.out_dir + "/sweep_table.csv");
    std::ofstream decrease(base.out_dir + "/sweep_decrease.csv");
    table << "strategy,missing_rate,adjacent,n_missing,mean_avg_travel_time,std_avg_travel_time,"
             "median_avg_travel_time,fixfix_avg_travel_time,status\n";
    decrease << "strategy,missing_rate,adjacent,decrease_vs_fixfix\n";
    auto emit = [&](const SweepCell& c) {
        const std::string status = c.feasible ? "ok" : "unavailable";
        table << c.strategy << "," << detail::fmt(100.0 * c.rate, 4) << ","
              << (c.allow_adjacent ? 1 : 0) << "," << c.n_missing << ","
              << (c.feasible ? detail::fmt(c.mean) : "") << ","
              << (c.feasible && c.per_seed.size() >= 2 ? detail::fmt(c.stddev) : "") << ","
              << (c.feasible ? detail::fmt(c.median) : "") << "," << detail::fmt(fixfix_tt) << ","
              << status << "\n";
        decrease << c.strategy << "," << detail::fmt(100.0 * c.rate, 4) << ","
                 << (c.allow_adjacent ? 1 : 0) << ","
                 << (c.feasible ? detail::fmt(c.mean - fixfix_tt) : "") << "\n";
    };
    // FixFix row: zero decrease by definition.
    SweepCell fix_cell;
    fix_cell.strategy = "FixFix";
    fix_cell.per_seed = {fixfix_tt};
    fix_cell.mean = fix_cell.median = fixfix_tt;
    emit(fix_cell);
    for (const SweepCell& c : cells) emit(c);
    return cells;
}

}  // namespace gridlight
