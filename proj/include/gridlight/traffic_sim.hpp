#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridlight/rng.hpp"
#include "gridlight/road_network.hpp"

namespace gridlight {

// Local observation of one intersection: vehicle counts on the 12 incoming
// lanes in [N,E,S,W]x[L,T,R] order plus the current phase. Counts are
// real-valued so imputed states fit the same type.
struct StateVector {
    std::array<double, 12> lane_counts{};
    int phase = 0;

    std::array<double, 16> flat() const {
        std::array<double, 16> v{};
        for (int i = 0; i < 12; ++i) v[i] = lane_counts[i];
        v[12 + phase] = 1.0;
        return v;
    }
};

struct Arrival {
    int entry_step = 0;
    LaneId entry_lane = -1;
    std::vector<LaneId> route;  // entry lane first, boundary exit lane last
};

struct FlowSpec {
    std::vector<Arrival> arrivals;  // sorted by entry_step

    void save(std::ostream& os) const {
        os << "gridlight-flow v1\n";
        for (const Arrival& a : arrivals) {
            os << a.entry_step << " " << a.entry_lane << " ";
            for (std::size_t i = 0; i < a.route.size(); ++i) {
                if (i) os << ",";
                os << a.route[i];
            }
            os << "\n";
        }
    }

    static FlowSpec load(std::istream& is) {
        std::string header;
        std::getline(is, header);
        if (header != "gridlight-flow v1")
            throw std::runtime_error("flow file: unsupported header '" + header + "'");
        FlowSpec flow;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            Arrival a;
            std::string route_field;
            if (!(ls >> a.entry_step >> a.entry_lane >> route_field))
                throw std::runtime_error("flow file: malformed line '" + line + "'");
            std::istringstream rs(route_field);
            std::string tok;
            while (std::getline(rs, tok, ','))
                a.route.push_back(static_cast<LaneId>(std::stol(tok)));
            flow.arrivals.push_back(std::move(a));
        }
        std::stable_sort(flow.arrivals.begin(), flow.arrivals.end(),
                         [](const Arrival& a, const Arrival& b) { return a.entry_step < b.entry_step; });
        return flow;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write flow file " + path);
        save(os);
    }

    static FlowSpec load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot read flow file " + path);
        return load(is);
    }
};

struct TurnProbs {
    double left = 0.1;
    double through = 0.6;
    double right = 0.3;
};

// Gaussian demand per boundary entry arm: for every 60-step window each arm
// draws round(max(0, N(mean, std))) vehicles, arrival steps uniform in the
// window. Turns (including the first, which picks the entry lane) are
// sampled from turn_probs; the route follows lane discipline until it leaves
// the grid and ends on the exit link's through lane.
inline FlowSpec generate_gaussian_flow(const RoadNetwork& net, double mean_rate_per_min,
                                       double std_rate_per_min, int horizon,
                                       const TurnProbs& turn_probs, std::uint64_t rng_seed) {
    if (!(mean_rate_per_min > 0.0))
        throw std::invalid_argument("generate_gaussian_flow: mean_rate must be > 0");
    if (horizon <= 0) throw std::invalid_argument("generate_gaussian_flow: horizon must be > 0");
    const double psum = turn_probs.left + turn_probs.through + turn_probs.right;
    if (std::abs(psum - 1.0) > 1e-9)
        throw std::invalid_argument("generate_gaussian_flow: turn_probs must sum to 1");

    Rng rng(rng_seed);
    auto sample_turn = [&]() {
        const double u = rng.uniform();
        if (u < turn_probs.left) return Turn::Left;
        if (u < turn_probs.left + turn_probs.through) return Turn::Through;
        return Turn::Right;
    };

    // Entry arms in deterministic order: intersections by id, arms [N,E,S,W].
    struct EntryArm {
        NodeId node;
        Dir arm;
    };
    std::vector<EntryArm> arms;
    for (const Intersection& inter : net.intersections)
        for (int d = 0; d < 4; ++d)
            if (inter.neighbor[d] == kBoundary) arms.push_back({inter.id, static_cast<Dir>(d)});

    FlowSpec flow;
    const int window = 60;
    for (int w0 = 0; w0 < horizon; w0 += window) {
        const int wlen = std::min(window, horizon - w0);
        for (const EntryArm& arm : arms) {
            const double raw = rng.normal(mean_rate_per_min, std_rate_per_min);
            const int count = static_cast<int>(std::lround(std::max(0.0, raw)));
            for (int i = 0; i < count; ++i) {
                Arrival a;
                a.entry_step = w0 + rng.uniform_int(wlen);
                // Walk the grid until a turn leads off the boundary.
                NodeId node = arm.node;
                Dir approach = arm.arm;
                Turn turn = sample_turn();
                a.entry_lane = net.intersection(node)
                                   .incoming[static_cast<int>(approach)][static_cast<int>(turn)];
                a.route.push_back(a.entry_lane);
                while (true) {
                    const Intersection& inter = net.intersection(node);
                    const Dir out_dir = turn_direction(approach, turn);
                    const NodeId next = inter.neighbor[static_cast<int>(out_dir)];
                    if (next == kBoundary) {
                        a.route.push_back(inter.outgoing[static_cast<int>(out_dir)]
                                                        [static_cast<int>(Turn::Through)]);
                        break;
                    }
                    approach = opposite(out_dir);
                    turn = sample_turn();
                    a.route.push_back(net.intersection(next)
                                          .incoming[static_cast<int>(approach)][static_cast<int>(turn)]);
                    node = next;
                }
                flow.arrivals.push_back(std::move(a));
            }
        }
    }
    std::stable_sort(flow.arrivals.begin(), flow.arrivals.end(),
                     [](const Arrival& a, const Arrival& b) { return a.entry_step < b.entry_step; });
    return flow;
}

struct Vehicle {
    int id = -1;
    std::vector<LaneId> route;
    int route_index = 0;
    int entry_step = 0;   // scheduled entry, even if blocked at the gate
    int exit_step = -1;   // -1 while incomplete
    bool on_network = false;
    bool completed = false;
    bool queued = false;
    int remaining = 0;    // travel steps left while not queued
};

struct Metrics {
    double avg_travel_time = 0.0;  // seconds; 1 step = 1 s
    int throughput = 0;
    std::vector<double> per_intersection_delay;  // mean total queue per step
    std::vector<long long> per_intersection_visits;
    std::vector<int> per_step_queue_log;  // network-wide queued vehicles after each step
    int injected = 0;
    int blocked_events = 0;
    bool degenerate = false;  // no vehicles were due before the horizon
};

// Deterministic point-queue simulator. One advance() is one second: inject,
// travel, then discharge queues under the commanded phases.
class SimState {
public:
    SimState(const RoadNetwork& net, const FlowSpec& flow)
        : net_(&net),
          phase_(net.intersections.size(), 0),
          lane_rt_(net.lanes.size()),
          queue_delay_sum_(net.intersections.size(), 0.0),
          visits_(net.intersections.size(), 0) {
        vehicles_.reserve(flow.arrivals.size());
        for (const Arrival& a : flow.arrivals) {
            Vehicle v;
            v.id = static_cast<int>(vehicles_.size());
            v.route = a.route;
            v.entry_step = a.entry_step;
            vehicles_.push_back(std::move(v));
        }
    }

    int step() const { return step_; }
    const RoadNetwork& network() const { return *net_; }
    int current_phase(NodeId i) const { return phase_[check_node(i)]; }

    // One simulation tick under the given per-intersection phases.
    void advance(const std::vector<int>& signals) {
        if (signals.size() != phase_.size())
            throw std::invalid_argument("advance: signals must cover every intersection");
        for (std::size_t i = 0; i < signals.size(); ++i) {
            if (signals[i] < 0 || signals[i] >= kNumPhases)
                throw std::invalid_argument("advance: unknown phase id " +
                                            std::to_string(signals[i]) + " at intersection " +
                                            std::to_string(i));
            phase_[i] = signals[i];
        }

        // Travelers move before injection: a vehicle spends exactly
        // free_flow_steps ticks traveling on a lane after the tick that put
        // it there, so an unobstructed vehicle on an 11-step entry lane
        // reaches the stop line and exits at step 12.
        move_travelers();
        inject_arrivals();
        discharge_queues();
        ++step_;

        int network_queue = 0;
        for (std::size_t i = 0; i < net_->intersections.size(); ++i) {
            const int q = total_queue(static_cast<NodeId>(i));
            queue_delay_sum_[i] += static_cast<double>(q);
            network_queue += q;
        }
        queue_log_.push_back(network_queue);
    }

    StateVector local_state(NodeId i) const {
        const Intersection& inter = net_->intersection(i);
        StateVector s;
        for (int d = 0; d < 4; ++d)
            for (int t = 0; t < 3; ++t)
                s.lane_counts[d * 3 + t] =
                    static_cast<double>(occupancy(inter.incoming[d][t]));
        s.phase = phase_[static_cast<std::size_t>(i)];
        return s;
    }

    // Negated number of queued vehicles over the 12 incoming lanes.
    double local_reward(NodeId i) const { return -static_cast<double>(total_queue(i)); }

    Metrics episode_metrics(int horizon) const {
        Metrics m;
        m.per_intersection_delay.resize(net_->intersections.size(), 0.0);
        m.per_intersection_visits = visits_;
        m.per_step_queue_log = queue_log_;
        m.injected = attempted_;
        m.blocked_events = blocked_events_;
        double total_time = 0.0;
        int counted = 0;
        for (const Vehicle& v : vehicles_) {
            if (v.id >= next_arrival_) continue;  // never became due
            if (v.completed) {
                total_time += static_cast<double>(v.exit_step - v.entry_step);
                ++m.throughput;
                ++counted;
            } else {
                // still en route, or due-but-blocked at the gate: censored time
                total_time += static_cast<double>(horizon - v.entry_step);
                ++counted;
            }
        }
        if (counted == 0) {
            m.degenerate = true;
            m.avg_travel_time = 0.0;
        } else {
            m.avg_travel_time = total_time / counted;
        }
        const double steps = std::max(1, step_);
        for (std::size_t i = 0; i < queue_delay_sum_.size(); ++i)
            m.per_intersection_delay[i] = queue_delay_sum_[i] / steps;
        return m;
    }

    // --- introspection (tests, audits, acceptance checks) ---

    int occupancy(LaneId l) const {
        const LaneRt& rt = lane_rt_[check_lane(l)];
        return static_cast<int>(rt.traveling.size() + rt.queue.size());
    }
    int queued_count(LaneId l) const {
        return static_cast<int>(lane_rt_[check_lane(l)].queue.size());
    }
    std::vector<int> queue_ids(LaneId l) const {
        const LaneRt& rt = lane_rt_[check_lane(l)];
        return {rt.queue.begin(), rt.queue.end()};
    }
    int total_queue(NodeId i) const {
        const Intersection& inter = net_->intersection(i);
        int q = 0;
        for (int d = 0; d < 4; ++d)
            for (int t = 0; t < 3; ++t) q += queued_count(inter.incoming[d][t]);
        return q;
    }
    const std::vector<Vehicle>& vehicles() const { return vehicles_; }
    int active_count() const { return active_; }
    int completed_count() const { return completed_; }
    int blocked_pending_count() const { return static_cast<int>(blocked_.size()); }
    // Arrivals consumed from the flow so far (on network, completed, or blocked).
    int attempted_count() const { return attempted_; }

private:
    struct LaneRt {
        std::vector<std::pair<int, int>> traveling;  // (vehicle id, remaining), insertion order
        std::deque<int> queue;                       // vehicle ids, FIFO
    };

    std::size_t check_node(NodeId i) const {
        if (i < 0 || static_cast<std::size_t>(i) >= phase_.size())
            throw std::out_of_range("unknown intersection id " + std::to_string(i));
        return static_cast<std::size_t>(i);
    }
    std::size_t check_lane(LaneId l) const {
        if (l < 0 || static_cast<std::size_t>(l) >= lane_rt_.size())
            throw std::out_of_range("unknown lane id " + std::to_string(l));
        return static_cast<std::size_t>(l);
    }

    void place_on_lane(Vehicle& v, LaneId lane) {
        v.queued = false;
        v.remaining = net_->lane(lane).free_flow_steps;
        lane_rt_[static_cast<std::size_t>(lane)].traveling.emplace_back(v.id, v.remaining);
    }

    void inject_arrivals() {
        // Blocked arrivals retry first, in their original order.
        std::deque<int> still_blocked;
        auto try_enter = [&](int vid) {
            Vehicle& v = vehicles_[static_cast<std::size_t>(vid)];
            const LaneId entry = v.route.front();
            if (occupancy(entry) < net_->lane(entry).capacity) {
                v.on_network = true;
                place_on_lane(v, entry);
                ++active_;
                return true;
            }
            ++blocked_events_;
            return false;
        };
        while (!blocked_.empty()) {
            const int vid = blocked_.front();
            blocked_.pop_front();
            if (!try_enter(vid)) still_blocked.push_back(vid);
        }
        while (next_arrival_ < static_cast<int>(vehicles_.size()) &&
               vehicles_[static_cast<std::size_t>(next_arrival_)].entry_step <= step_) {
            const int vid = next_arrival_++;
            ++attempted_;
            if (!try_enter(vid)) still_blocked.push_back(vid);
        }
        blocked_ = std::move(still_blocked);
    }

    void move_travelers() {
        for (LaneRt& rt : lane_rt_) {
            std::size_t keep = 0;
            for (std::size_t i = 0; i < rt.traveling.size(); ++i) {
                auto [vid, remaining] = rt.traveling[i];
                Vehicle& v = vehicles_[static_cast<std::size_t>(vid)];
                --remaining;
                v.remaining = remaining;
                if (remaining <= 0) {
                    v.queued = true;
                    rt.queue.push_back(vid);
                } else {
                    rt.traveling[keep++] = {vid, remaining};
                }
            }
            rt.traveling.resize(keep);
        }
    }

    void discharge_queues() {
        for (const Intersection& inter : net_->intersections) {
            const int p = phase_[static_cast<std::size_t>(inter.id)];
            for (int d = 0; d < 4; ++d) {
                for (int t = 0; t < 3; ++t) {
                    const LaneId in = inter.incoming[d][t];
                    const Lane& in_lane = net_->lane(in);
                    if (!lane_active_in_phase(in_lane, p)) continue;
                    LaneRt& rt = lane_rt_[static_cast<std::size_t>(in)];
                    int budget = in_lane.sat_flow;
                    while (budget > 0 && !rt.queue.empty()) {
                        const int vid = rt.queue.front();
                        Vehicle& v = vehicles_[static_cast<std::size_t>(vid)];
                        if (v.route_index + 1 >= static_cast<int>(v.route.size()))
                            throw std::runtime_error("route ends on a non-exit lane (vehicle " +
                                                     std::to_string(vid) + ")");
                        const LaneId next = v.route[static_cast<std::size_t>(v.route_index) + 1];
                        const Lane& next_lane = net_->lane(next);
                        const Dir out_dir = turn_direction(in_lane.approach_dir, in_lane.turn);
                        if (inter.outgoing[static_cast<int>(out_dir)][static_cast<int>(next_lane.turn)] != next)
                            throw std::runtime_error(
                                "inconsistent route: lane " + std::to_string(next) +
                                " is not reachable from lane " + std::to_string(in));
                        if (next_lane.is_exit()) {
                            rt.queue.pop_front();
                            v.route_index += 1;
                            v.queued = false;
                            v.completed = true;
                            v.on_network = false;
                            v.exit_step = step_ + 1;
                            --active_;
                            ++completed_;
                            ++visits_[static_cast<std::size_t>(inter.id)];
                            --budget;
                        } else if (occupancy(next) < next_lane.capacity) {
                            rt.queue.pop_front();
                            v.route_index += 1;
                            place_on_lane(v, next);
                            ++visits_[static_cast<std::size_t>(inter.id)];
                            --budget;
                        } else {
                            break;  // head-of-line blocked by downstream capacity
                        }
                    }
                }
            }
        }
    }

    const RoadNetwork* net_;
    int step_ = 0;
    std::vector<int> phase_;
    std::vector<LaneRt> lane_rt_;
    std::vector<Vehicle> vehicles_;
    std::deque<int> blocked_;
    int next_arrival_ = 0;
    int attempted_ = 0;
    int active_ = 0;
    int completed_ = 0;
    int blocked_events_ = 0;
    std::vector<double> queue_delay_sum_;
    std::vector<int> queue_log_;
    std::vector<long long> visits_;
};

}  // namespace gridlight
