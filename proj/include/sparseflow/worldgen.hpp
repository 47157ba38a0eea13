#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparseflow/rng.hpp"

namespace sparseflow {

struct Segment {
    double x1, y1, x2, y2; // endpoints, km
    double length;         // km
    int u, v;              // intersection node ids
    double heading_deg;    // direction of (x1,y1)->(x2,y2) in [0,360)
};

struct RoadMap {
    enum class Kind { Grid, Graph };
    Kind kind = Kind::Grid;

    // grid
    int height = 0;
    int width = 0;
    double cell_km = 0.0;

    // graph
    std::vector<Segment> segments;
    std::vector<std::vector<int>> adjacency;     // segment -> adjacent segments
    std::vector<std::pair<double, double>> nodes; // intersection coordinates
    std::vector<std::vector<int>> node_segments;  // node -> incident segments

    int region_count() const;
    double extent_x() const;
    double extent_y() const;

    // BFS hop distances from a region; -1 beyond max_hops. Grid regions are
    // 4-neighbor adjacent; graph regions use segment adjacency.
    std::vector<int> hop_distances(int source, int max_hops) const;

    // CRC-32 of a canonical textual description; ties data files to the map.
    std::uint32_t digest() const;
};

struct SpeedField {
    int T = 0;
    int R = 0;
    double step_minutes = 1.0;
    std::uint32_t map_digest = 0;
    std::vector<float> values; // T x R row-major

    float at(int t, int r) const { return values[static_cast<std::size_t>(t) * R + r]; }
    float& at(int t, int r) { return values[static_cast<std::size_t>(t) * R + r]; }
};

struct CongestionEvent {
    int epicenter = 0;
    int onset = 0;
    int rise = 1;
    int decay = 1;
    double drop_kmh = 0.0;
    int radius_hops = 0;
};

struct PvdRecord {
    std::string vehicle_id;
    int t = 0;
    double x_km = 0.0;
    double y_km = 0.0;
    double heading_deg = 0.0;
    double speed_kmh = 0.0;
};

struct DiurnalProfile {
    double t_am = 60.0;   // step index of the morning peak (08:30 for a 07:30 start)
    double t_pm = 630.0;  // evening peak (18:00)
    double width = 45.0;  // Gaussian bump width, steps
    double a_am = 0.40;
    double a_pm = 0.45;
};

struct WorldParams {
    double v_max = 120.0;
    double v_free_min = 40.0;
    double v_free_max = 90.0;
    double rho = 0.5;        // congestion decay per hop
    double smooth = 0.9;     // low-pass coefficient for temporal noise
    DiurnalProfile diurnal;
};

RoadMap build_grid_map(int height, int width, double cell_km);
RoadMap build_graph_map(int rows, int cols, double block_km);

double diurnal_factor(double t, const DiurnalProfile& profile);

SpeedField gen_ideal_field(const RoadMap& map, int T, double step_minutes,
                           const std::vector<CongestionEvent>& events, double noise_sigma,
                           std::uint64_t seed, const WorldParams& params = {});

std::vector<PvdRecord> simulate_probes(const RoadMap& map, const SpeedField& field,
                                       int n_vehicles, double obs_sigma, std::uint64_t seed);

} // namespace sparseflow
