// Command-line front end: network/flow generation, reward-model pretraining,
// training, greedy evaluation, and missing-rate sweeps.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gridlight/experiment.hpp"

namespace {

using namespace gridlight;

// Shared --config plumbing: subcommands start from the config file (or
// defaults) and apply flag overrides on top.
struct ConfigArgs {
    std::string config_path;
    std::string out_dir;
    std::string strategy;
    std::string net_file;
    std::string flow_file;
    std::string reward_checkpoint;
    std::vector<std::uint64_t> seeds;
    std::vector<int> mask_ids;
    int episodes = -1;
    int horizon = -1;
    int n_missing = -1;
    int mask_allow_adjacent = -1;
    std::uint64_t mask_seed = 0;
    bool mask_seed_set = false;
    double learning_rate = -1.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--strategy", strategy,
                        "FixFix|IdqnFix|IdqnNeighboring|IdqnMaxp|SdqnTransferred|IdqnIdqn|"
                        "SdqnAll|SdqnModelBased");
        cmd->add_option("--net", net_file, "network file (from gen-net)");
        cmd->add_option("--flow", flow_file, "flow file (from gen-flow)");
        cmd->add_option("--reward-model", reward_checkpoint, "reward model checkpoint");
        cmd->add_option("--seeds", seeds, "training seeds")->delimiter(',');
        cmd->add_option("--mask-ids", mask_ids, "explicit unobserved intersection ids")
            ->delimiter(',');
        cmd->add_option("--episodes", episodes, "training episodes per seed");
        cmd->add_option("--horizon", horizon, "steps per episode");
        cmd->add_option("--n-missing", n_missing, "number of unobserved intersections");
        cmd->add_option("--allow-adjacent", mask_allow_adjacent,
                        "1: require an adjacent unobserved pair; 0: forbid adjacency");
        cmd->add_option("--mask-seed", mask_seed, "mask sampling seed")
            ->each([this](const std::string&) { mask_seed_set = true; });
        cmd->add_option("--lr", learning_rate, "Q-network learning rate");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{}
                                                   : ExperimentConfig::load_file(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!strategy.empty()) cfg.strategy = strategy;
        if (!net_file.empty()) cfg.network.file = net_file;
        if (!flow_file.empty()) cfg.flow.file = flow_file;
        if (!reward_checkpoint.empty()) cfg.reward_model.checkpoint = reward_checkpoint;
        if (!seeds.empty()) cfg.seeds = seeds;
        if (!mask_ids.empty()) cfg.mask.ids.assign(mask_ids.begin(), mask_ids.end());
        if (episodes >= 0) cfg.episodes = episodes;
        if (horizon >= 0) cfg.horizon = horizon;
        if (n_missing >= 0) cfg.mask.n_missing = n_missing;
        if (mask_allow_adjacent >= 0) cfg.mask.allow_adjacent = mask_allow_adjacent != 0;
        if (mask_seed_set) cfg.mask.seed = mask_seed;
        if (learning_rate > 0) cfg.rl.q_learning_rate = learning_rate;
        return cfg;
    }
};

int cmd_gen_net(int rows, int cols, const LaneParams& params, const std::string& out) {
    const RoadNetwork net = RoadNetwork::build_grid(rows, cols, params);
    net.save_file(out);
    std::cout << "wrote " << out << " (" << net.intersections.size() << " intersections, "
              << net.lanes.size() << " lanes)\n";
    return 0;
}

int cmd_gen_flow(const std::string& net_file, double mean, double stddev, int horizon,
                 const std::vector<double>& turn_probs, std::uint64_t seed,
                 const std::string& out) {
    const RoadNetwork net = RoadNetwork::load_file(net_file);
    TurnProbs tp;
    if (!turn_probs.empty()) {
        if (turn_probs.size() != 3)
            throw std::invalid_argument("--turn-probs needs exactly three values (L,T,R)");
        tp = {turn_probs[0], turn_probs[1], turn_probs[2]};
    }
    const FlowSpec flow = generate_gaussian_flow(net, mean, stddev, horizon, tp, seed);
    flow.save_file(out);
    std::cout << "wrote " << out << " (" << flow.arrivals.size() << " vehicles over " << horizon
              << " steps)\n";
    return 0;
}

int cmd_pretrain(const ConfigArgs& args, int epochs, std::uint64_t seed,
                 const std::string& model_out, const std::string& dataset_out) {
    ExperimentConfig cfg = args.resolve();
    if (epochs >= 1) cfg.reward_model.pretrain_epochs = epochs;
    cfg.reward_model.pretrain_seed = seed;
    cfg.strategy = "IdqnFix";  // data collection policy
    cfg.validate_or_throw();

    const RoadNetwork net =
        cfg.network.file.empty()
            ? RoadNetwork::build_grid(cfg.network.rows, cfg.network.cols, cfg.network.lane_params)
            : RoadNetwork::load_file(cfg.network.file);
    const FlowSpec flow =
        cfg.flow.file.empty()
            ? generate_gaussian_flow(net, cfg.flow.mean_rate, cfg.flow.std_rate, cfg.horizon,
                                     cfg.flow.turn_probs, cfg.flow.seed)
            : FlowSpec::load_file(cfg.flow.file);
    const ObservationMask mask =
        !cfg.mask.ids.empty()
            ? ObservationMask::from_unobserved(net, cfg.mask.ids)
            : (cfg.mask.n_missing > 0
                   ? sample_mask(net, cfg.mask.n_missing, cfg.mask.allow_adjacent, cfg.mask.seed)
                   : ObservationMask::from_unobserved(net, {}));

    const PretrainDataset data = collect_pretrain_samples(
        net, flow, mask, cfg.reward_model.pretrain_epochs, cfg.horizon,
        cfg.reward_model.pretrain_seed, cfg.rl);
    if (!dataset_out.empty()) {
        std::ofstream os(dataset_out);
        if (!os) throw std::runtime_error("cannot write " + dataset_out);
        data.save(os);
    }
    PretrainConfig pcfg;
    pcfg.learning_rate = cfg.rl.reward_model_learning_rate;
    pcfg.seed = cfg.reward_model.pretrain_seed;
    const PretrainResult result = pretrain_reward_model(data, pcfg);
    result.model.net.save_file(model_out);
    std::cout << "wrote " << model_out << " (train " << data.train.size() << ", test "
              << data.test.size() << ", held-out MSE " << result.test_mse << ", reward variance "
              << result.test_variance << ")\n";
    return 0;
}

int cmd_train(const ConfigArgs& args) {
    const ExperimentConfig cfg = args.resolve();
    const ExperimentResult result = run_experiment(cfg);
    std::cout << "strategy " << cfg.strategy << ": final avg travel time "
              << detail::fmt(result.final_mean, 2);
    if (result.final_std) std::cout << " +- " << detail::fmt(*result.final_std, 2);
    std::cout << " s over " << cfg.seeds.size() << " seed(s); results in " << result.results_csv
              << "\n";
    return 0;
}

int cmd_eval(const ConfigArgs& args) {
    const ExperimentConfig cfg = args.resolve();
    const auto rows = run_eval(cfg);
    for (const ResultRow& r : rows)
        std::cout << cfg.strategy << " seed " << r.seed << ": avg travel time "
                  << detail::fmt(r.avg_travel_time, 2) << " s, throughput " << r.throughput << "\n";
    return 0;
}

int cmd_sweep(const ConfigArgs& args, std::vector<double> rates, const std::string& adjacency,
              std::vector<std::string> strategies) {
    const ExperimentConfig cfg = args.resolve();
    if (rates.empty()) rates = {0.0625, 0.125, 0.1875, 0.25};
    if (strategies.empty())
        strategies = {"IdqnFix", "IdqnMaxp", "SdqnTransferred", "SdqnAll", "SdqnModelBased"};
    std::vector<bool> modes;
    if (adjacency == "nonadjacent") modes = {false};
    else if (adjacency == "adjacent") modes = {true};
    else if (adjacency == "both") modes = {false, true};
    else throw std::invalid_argument("--adjacency must be nonadjacent|adjacent|both");

    const auto cells = sweep_missing_rates(cfg, rates, modes, strategies);
    int ok = 0, unavailable = 0;
    for (const SweepCell& c : cells) (c.feasible ? ok : unavailable)++;
    std::cout << "sweep finished: " << ok << " cells ok, " << unavailable
              << " unavailable; tables in " << cfg.out_dir << "/sweep_table.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"grid traffic-signal RL under missing observations"};
    app.require_subcommand(1);

    // gen-net
    auto* gen_net = app.add_subcommand("gen-net", "write a grid network file");
    int rows = 4, cols = 4;
    LaneParams lane_params;
    std::string net_out = "net.txt";
    gen_net->add_option("--rows", rows)->required();
    gen_net->add_option("--cols", cols)->required();
    gen_net->add_option("--length", lane_params.length_m, "lane length in meters");
    gen_net->add_option("--free-flow-steps", lane_params.free_flow_steps);
    gen_net->add_option("--capacity", lane_params.capacity);
    gen_net->add_option("--sat-flow", lane_params.sat_flow);
    gen_net->add_option("--out", net_out);

    // gen-flow
    auto* gen_flow = app.add_subcommand("gen-flow", "write a Gaussian demand flow file");
    std::string flow_net, flow_out = "flow.txt";
    double mean = 6.0, stddev = 2.0;
    int flow_horizon = 600;
    std::uint64_t flow_seed = 7;
    std::vector<double> turn_probs;
    gen_flow->add_option("--net", flow_net)->required();
    gen_flow->add_option("--mean", mean, "vehicles/min per entry arm");
    gen_flow->add_option("--std", stddev, "std of vehicles/min per entry arm");
    gen_flow->add_option("--horizon", flow_horizon);
    gen_flow->add_option("--turn-probs", turn_probs, "left,through,right")->delimiter(',');
    gen_flow->add_option("--seed", flow_seed);
    gen_flow->add_option("--out", flow_out);

    // pretrain-reward
    auto* pretrain = app.add_subcommand("pretrain-reward", "pretrain the reward model g(s,a)");
    ConfigArgs pretrain_args;
    pretrain_args.attach(pretrain);
    int pretrain_epochs = -1;
    std::uint64_t pretrain_seed = 5;
    std::string model_out = "reward_model.txt", dataset_out;
    pretrain->add_option("--epochs", pretrain_epochs, "IDQN-Fix data-collection episodes");
    pretrain->add_option("--seed", pretrain_seed);
    pretrain->add_option("--model-out", model_out);
    pretrain->add_option("--dataset-out", dataset_out, "also dump the 80/20 sample file");

    // train / eval / sweep
    auto* train = app.add_subcommand("train", "run training episodes and write CSV results");
    ConfigArgs train_args;
    train_args.attach(train);

    auto* eval = app.add_subcommand("eval", "greedy evaluation of saved checkpoints");
    ConfigArgs eval_args;
    eval_args.attach(eval);

    auto* sweep = app.add_subcommand("sweep", "missing-rate x adjacency x strategy sweep");
    ConfigArgs sweep_args;
    sweep_args.attach(sweep);
    std::vector<double> sweep_rates;
    std::vector<std::string> sweep_strategies;
    std::string adjacency = "nonadjacent";
    sweep->add_option("--rates", sweep_rates, "missing-rate fractions")->delimiter(',');
    sweep->add_option("--strategies", sweep_strategies)->delimiter(',');
    sweep->add_option("--adjacency", adjacency, "nonadjacent|adjacent|both");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen_net->parsed()) return cmd_gen_net(rows, cols, lane_params, net_out);
        if (gen_flow->parsed())
            return cmd_gen_flow(flow_net, mean, stddev, flow_horizon, turn_probs, flow_seed,
                                flow_out);
        if (pretrain->parsed())
            return cmd_pretrain(pretrain_args, pretrain_epochs, pretrain_seed, model_out,
                                dataset_out);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_rates, adjacency, sweep_strategies);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
