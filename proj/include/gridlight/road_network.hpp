#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridlight {

using NodeId = std::int32_t;
using LaneId = std::int32_t;

inline constexpr NodeId kBoundary = -1;

// Arm order is fixed everywhere: state vectors, neighbor lists, movement
// enumeration all use [N, E, S, W].
enum class Dir : int { North = 0, East = 1, South = 2, West = 3 };
enum class Turn : int { Left = 0, Through = 1, Right = 2 };

inline Dir opposite(Dir d) {
    switch (d) {
        case Dir::North: return Dir::South;
        case Dir::East: return Dir::West;
        case Dir::South: return Dir::North;
        case Dir::West: return Dir::East;
    }
    throw std::logic_error("bad Dir");
}

// Outgoing direction for a vehicle that approaches from arm `approach` and
// makes `turn`. A vehicle approaching from the north arm heads south; its
// left is east.
inline Dir turn_direction(Dir approach, Turn turn) {
    if (turn == Turn::Through) return opposite(approach);
    static constexpr Dir kLeft[4] = {Dir::East, Dir::South, Dir::West, Dir::North};
    const int a = static_cast<int>(approach);
    if (turn == Turn::Left) return kLeft[a];
    return opposite(kLeft[a]);  // right
}

inline const char* dir_name(Dir d) {
    static constexpr const char* names[4] = {"N", "E", "S", "W"};
    return names[static_cast<int>(d)];
}

inline const char* turn_name(Turn t) {
    static constexpr const char* names[3] = {"L", "T", "R"};
    return names[static_cast<int>(t)];
}

struct LaneParams {
    double length_m = 300.0;
    int free_flow_steps = 11;  // ~30 km/h over 300 m at 1 s steps
    int capacity = 40;
    int sat_flow = 2;
};

struct Lane {
    LaneId id = -1;
    NodeId from = kBoundary;  // upstream intersection, or kBoundary for entry lanes
    NodeId to = kBoundary;    // downstream intersection, or kBoundary for exit lanes
    double length_m = 0.0;
    int free_flow_steps = 1;
    int capacity = 1;
    int sat_flow = 1;
    // For lanes feeding an intersection: the arm of `to` they approach from.
    // For boundary exit lanes: the arm of `from` they leave through.
    Dir approach_dir = Dir::North;
    Turn turn = Turn::Through;

    bool is_entry() const { return from == kBoundary; }
    bool is_exit() const { return to == kBoundary; }
};

struct Movement {
    LaneId in_lane = -1;
    LaneId out_lane = -1;
};

struct Phase {
    int id = 0;
    std::vector<Movement> movements;
};

// Fixed acyclic 4-phase scheme; right turns run in every phase.
enum : int {
    kPhaseNsThrough = 0,
    kPhaseEwThrough = 1,
    kPhaseNsLeft = 2,
    kPhaseEwLeft = 3,
};
inline constexpr int kNumPhases = 4;
inline constexpr int kLanesPerIntersection = 12;

struct Intersection {
    NodeId id = -1;
    int row = 0;
    int col = 0;
    // [arm][turn], arm in [N,E,S,W], turn in [L,T,R].
    std::array<std::array<LaneId, 3>, 4> incoming{};
    // Lanes departing toward each direction (the downstream link's lanes).
    std::array<std::array<LaneId, 3>, 4> outgoing{};
    std::vector<Phase> phases;
    std::array<NodeId, 4> neighbor{kBoundary, kBoundary, kBoundary, kBoundary};
};

class RoadNetwork {
public:
    int rows = 0;
    int cols = 0;
    LaneParams lane_params;
    std::vector<Intersection> intersections;
    std::vector<Lane> lanes;
    std::vector<LaneId> entry_lanes;

    static RoadNetwork build_grid(int rows, int cols, const LaneParams& params = LaneParams{});

    NodeId node_at(int row, int col) const { return static_cast<NodeId>(row * cols + col); }

    const Intersection& intersection(NodeId id) const {
        if (id < 0 || id >= static_cast<NodeId>(intersections.size()))
            throw std::out_of_range("unknown intersection id " + std::to_string(id));
        return intersections[static_cast<std::size_t>(id)];
    }

    const Lane& lane(LaneId id) const {
        if (id < 0 || id >= static_cast<LaneId>(lanes.size()))
            throw std::out_of_range("unknown lane id " + std::to_string(id));
        return lanes[static_cast<std::size_t>(id)];
    }

    // Grid-adjacent intersections in fixed [N,E,S,W] order, absent arms omitted.
    std::vector<NodeId> neighbors(NodeId k) const {
        const Intersection& inter = intersection(k);
        std::vector<NodeId> out;
        out.reserve(4);
        for (int d = 0; d < 4; ++d)
            if (inter.neighbor[d] != kBoundary) out.push_back(inter.neighbor[d]);
        return out;
    }

    // Human-readable lane label for logs and flow files.
    std::string lane_label(LaneId id) const {
        const Lane& l = lane(id);
        std::ostringstream oss;
        oss << "lane" << id << "[" << l.from << "->" << l.to << " " << dir_name(l.approach_dir)
            << turn_name(l.turn) << "]";
        return oss.str();
    }

    void save(std::ostream& os) const;
    static RoadNetwork load(std::istream& is);
    void save_file(const std::string& path) const;
    static RoadNetwork load_file(const std::string& path);
};

namespace detail {

inline void validate_lane_params(const LaneParams& p) {
    auto bad = [](const std::string& field) {
        throw std::invalid_argument("invalid lane_params: " + field + " must be positive");
    };
    if (!(p.length_m > 0.0)) bad("length_m");
    if (p.free_flow_steps < 1) bad("free_flow_steps");
    if (p.capacity < 1) bad("capacity");
    if (p.sat_flow < 1) bad("sat_flow");
}

}  // namespace detail

inline RoadNetwork RoadNetwork::build_grid(int rows, int cols, const LaneParams& params) {
    if (rows < 1 || cols < 1)
        throw std::invalid_argument("build_grid: rows and cols must be >= 1");
    detail::validate_lane_params(params);

    RoadNetwork net;
    net.rows = rows;
    net.cols = cols;
    net.lane_params = params;
    net.intersections.resize(static_cast<std::size_t>(rows) * cols);

    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            Intersection& inter = net.intersections[static_cast<std::size_t>(r) * cols + c];
            inter.id = net.node_at(r, c);
            inter.row = r;
            inter.col = c;
            if (r > 0) inter.neighbor[static_cast<int>(Dir::North)] = net.node_at(r - 1, c);
            if (c < cols - 1) inter.neighbor[static_cast<int>(Dir::East)] = net.node_at(r, c + 1);
            if (r < rows - 1) inter.neighbor[static_cast<int>(Dir::South)] = net.node_at(r + 1, c);
            if (c > 0) inter.neighbor[static_cast<int>(Dir::West)] = net.node_at(r, c - 1);
        }
    }

    auto make_lane = [&](NodeId from, NodeId to, Dir approach, Turn turn) {
        Lane l;
        l.id = static_cast<LaneId>(net.lanes.size());
        l.from = from;
        l.to = to;
        l.length_m = params.length_m;
        l.free_flow_steps = params.free_flow_steps;
        l.capacity = params.capacity;
        l.sat_flow = params.sat_flow;
        l.approach_dir = approach;
        l.turn = turn;
        net.lanes.push_back(l);
        return l.id;
    };

    // Incoming links first: every intersection owns the three lanes arriving
    // through each of its four arms (from the grid neighbor, or from the
    // boundary).
    for (Intersection& inter : net.intersections) {
        for (int d = 0; d < 4; ++d) {
            const NodeId upstream = inter.neighbor[d];
            for (int t = 0; t < 3; ++t) {
                const LaneId id =
                    make_lane(upstream, inter.id, static_cast<Dir>(d), static_cast<Turn>(t));
                inter.incoming[d][t] = id;
                if (upstream == kBoundary) net.entry_lanes.push_back(id);
            }
        }
    }
    // Exit links for boundary arms.
    for (Intersection& inter : net.intersections) {
        for (int d = 0; d < 4; ++d) {
            if (inter.neighbor[d] != kBoundary) continue;
            for (int t = 0; t < 3; ++t)
                inter.outgoing[d][t] =
                    make_lane(inter.id, kBoundary, static_cast<Dir>(d), static_cast<Turn>(t));
        }
    }
    // Internal outgoing lanes are the downstream neighbor's incoming lanes:
    // the link toward direction d approaches the neighbor from its opposite arm.
    for (Intersection& inter : net.intersections) {
        for (int d = 0; d < 4; ++d) {
            const NodeId nb = inter.neighbor[d];
            if (nb == kBoundary) continue;
            const Intersection& down = net.intersections[static_cast<std::size_t>(nb)];
            const int arm = static_cast<int>(opposite(static_cast<Dir>(d)));
            inter.outgoing[d] = down.incoming[arm];
        }
    }

    // Movements and phases. Each incoming lane connects to all three lanes of
    // its turn's downstream link; a phase holds the movements of its two
    // through/left approaches plus every right-turn movement.
    for (Intersection& inter : net.intersections) {
        inter.phases.resize(kNumPhases);
        for (int p = 0; p < kNumPhases; ++p) inter.phases[p].id = p;

        auto add_movements = [&](Phase& phase, Dir arm, Turn turn) {
            const LaneId in = inter.incoming[static_cast<int>(arm)][static_cast<int>(turn)];
            const Dir out_dir = turn_direction(arm, turn);
            for (int t = 0; t < 3; ++t)
                phase.movements.push_back({in, inter.outgoing[static_cast<int>(out_dir)][t]});
        };

        for (int p = 0; p < kNumPhases; ++p) {
            Phase& phase = inter.phases[p];
            switch (p) {
                case kPhaseNsThrough:
                    add_movements(phase, Dir::North, Turn::Through);
                    add_movements(phase, Dir::South, Turn::Through);
                    break;
                case kPhaseEwThrough:
                    add_movements(phase, Dir::East, Turn::Through);
                    add_movements(phase, Dir::West, Turn::Through);
                    break;
                case kPhaseNsLeft:
                    add_movements(phase, Dir::North, Turn::Left);
                    add_movements(phase, Dir::South, Turn::Left);
                    break;
                case kPhaseEwLeft:
                    add_movements(phase, Dir::East, Turn::Left);
                    add_movements(phase, Dir::West, Turn::Left);
                    break;
            }
            for (int d = 0; d < 4; ++d)
                add_movements(phase, static_cast<Dir>(d), Turn::Right);
        }
    }
    return net;
}

// Whether the incoming lane's turn class has green under phase `p`.
inline bool lane_active_in_phase(const Lane& lane, int p) {
    if (lane.turn == Turn::Right) return true;
    const bool ns = lane.approach_dir == Dir::North || lane.approach_dir == Dir::South;
    if (lane.turn == Turn::Through) return p == (ns ? kPhaseNsThrough : kPhaseEwThrough);
    return p == (ns ? kPhaseNsLeft : kPhaseEwLeft);
}

inline void RoadNetwork::save(std::ostream& os) const {
    os << "gridlight-net v1\n";
    os << "rows = " << rows << "\n";
    os << "cols = " << cols << "\n";
    os << "length_m = " << lane_params.length_m << "\n";
    os << "free_flow_steps = " << lane_params.free_flow_steps << "\n";
    os << "capacity = " << lane_params.capacity << "\n";
    os << "sat_flow = " << lane_params.sat_flow << "\n";
}

inline RoadNetwork RoadNetwork::load(std::istream& is) {
    std::string header;
    std::getline(is, header);
    if (header != "gridlight-net v1")
        throw std::runtime_error("network file: unsupported header '" + header + "'");
    int rows = 0, cols = 0;
    LaneParams p;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (eq != "=") throw std::runtime_error("network file: malformed line '" + line + "'");
        if (key == "rows") ls >> rows;
        else if (key == "cols") ls >> cols;
        else if (key == "length_m") ls >> p.length_m;
        else if (key == "free_flow_steps") ls >> p.free_flow_steps;
        else if (key == "capacity") ls >> p.capacity;
        else if (key == "sat_flow") ls >> p.sat_flow;
        else throw std::runtime_error("network file: unknown key '" + key + "'");
        if (!ls) throw std::runtime_error("network file: bad value in '" + line + "'");
    }
    return build_grid(rows, cols, p);
}

inline void RoadNetwork::save_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write network file " + path);
    save(os);
}

inline RoadNetwork RoadNetwork::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read network file " + path);
    return load(is);
}

}  // namespace gridlight
