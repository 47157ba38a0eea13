#include "sparseflow/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <stdexcept>

#include <zlib.h>

namespace sparseflow {

namespace {
constexpr double kPi = 3.14159265358979323846;

double wrap_deg(double d) {
    d = std::fmod(d, 360.0);
    if (d < 0) d += 360.0;
    return d;
}
} // namespace

int RoadMap::region_count() const {
    return kind == Kind::Grid ? height * width : static_cast<int>(segments.size());
}

double RoadMap::extent_x() const {
    if (kind == Kind::Grid) return width * cell_km;
    double m = 0;
    for (const auto& s : segments) m = std::max({m, s.x1, s.x2});
    return m;
}

double RoadMap::extent_y() const {
    if (kind == Kind::Grid) return height * cell_km;
    double m = 0;
    for (const auto& s : segments) m = std::max({m, s.y1, s.y2});
    return m;
}

std::vector<int> RoadMap::hop_distances(int source, int max_hops) const {
    int r = region_count();
    std::vector<int> dist(r, -1);
    std::deque<int> queue;
    dist[source] = 0;
    queue.push_back(source);
    while (!queue.empty()) {
        int cur = queue.front();
        queue.pop_front();
        if (dist[cur] >= max_hops) continue;
        if (kind == Kind::Grid) {
            int row = cur / width, col = cur % width;
            const int dr[4] = {-1, 1, 0, 0};
            const int dc[4] = {0, 0, -1, 1};
            for (int i = 0; i < 4; ++i) {
                int nr = row + dr[i], nc = col + dc[i];
                if (nr < 0 || nr >= height || nc < 0 || nc >= width) continue;
                int nxt = nr * width + nc;
                if (dist[nxt] < 0) {
                    dist[nxt] = dist[cur] + 1;
                    queue.push_back(nxt);
                }
            }
        } else {
            for (int nxt : adjacency[cur]) {
                if (dist[nxt] < 0) {
                    dist[nxt] = dist[cur] + 1;
                    queue.push_back(nxt);
                }
            }
        }
    }
    return dist;
}

std::uint32_t RoadMap::digest() const {
    std::string desc;
    char buf[160];
    if (kind == Kind::Grid) {
        std::snprintf(buf, sizeof buf, "grid %d %d %.9g", height, width, cell_km);
        desc = buf;
    } else {
        desc = "graph";
        for (const auto& s : segments) {
            std::snprintf(buf, sizeof buf, " %.9g %.9g %.9g %.9g", s.x1, s.y1, s.x2, s.y2);
            desc += buf;
        }
    }
    return static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(desc.data()), static_cast<uInt>(desc.size())));
}

RoadMap build_grid_map(int height, int width, double cell_km) {
    if (height < 1 || width < 1) throw std::invalid_argument("build_grid_map: dimensions must be >= 1");
    if (cell_km <= 0) throw std::invalid_argument("build_grid_map: cell_km must be > 0");
    RoadMap m;
    m.kind = RoadMap::Kind::Grid;
    m.height = height;
    m.width = width;
    m.cell_km = cell_km;
    return m;
}

RoadMap build_graph_map(int rows, int cols, double block_km) {
    if (rows < 2 || cols < 2) throw std::invalid_argument("build_graph_map: rows and cols must be >= 2");
    if (block_km <= 0) throw std::invalid_argument("build_graph_map: block_km must be > 0");
    RoadMap m;
    m.kind = RoadMap::Kind::Graph;
    m.nodes.resize(static_cast<std::size_t>(rows) * cols);
    auto node_id = [cols](int i, int j) { return i * cols + j; };
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            m.nodes[node_id(i, j)] = {j * block_km, i * block_km};

    auto add_segment = [&](int u, int v) {
        Segment s;
        s.u = u;
        s.v = v;
        s.x1 = m.nodes[u].first;
        s.y1 = m.nodes[u].second;
        s.x2 = m.nodes[v].first;
        s.y2 = m.nodes[v].second;
        s.length = std::hypot(s.x2 - s.x1, s.y2 - s.y1);
        s.heading_deg = wrap_deg(std::atan2(s.y2 - s.y1, s.x2 - s.x1) * 180.0 / kPi);
        m.segments.push_back(s);
    };
    // horizontal edges first, then vertical
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j + 1 < cols; ++j) add_segment(node_id(i, j), node_id(i, j + 1));
    for (int i = 0; i + 1 < rows; ++i)
        for (int j = 0; j < cols; ++j) add_segment(node_id(i, j), node_id(i + 1, j));

    m.node_segments.resize(m.nodes.size());
    for (int s = 0; s < static_cast<int>(m.segments.size()); ++s) {
        m.node_segments[m.segments[s].u].push_back(s);
        m.node_segments[m.segments[s].v].push_back(s);
    }
    m.adjacency.resize(m.segments.size());
    for (const auto& incident : m.node_segments)
        for (int a : incident)
            for (int b : incident)
                if (a != b) m.adjacency[a].push_back(b);
    for (auto& nbrs : m.adjacency) {
        std::sort(nbrs.begin(), nbrs.end());
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    }
    return m;
}

double diurnal_factor(double t, const DiurnalProfile& p) {
    auto bump = [&](double center) {
        double d = (t - center) / p.width;
        return std::exp(-0.5 * d * d);
    };
    double f = 1.0 - p.a_am * bump(p.t_am) - p.a_pm * bump(p.t_pm);
    return std::max(f, 0.1);
}

namespace {
double event_intensity_at(const CongestionEvent& e, int t) {
    if (t <= e.onset) return 0.0;
    int since = t - e.onset;
    if (since <= e.rise) return static_cast<double>(since) / e.rise;
    int into_decay = since - e.rise;
    if (into_decay >= e.decay) return 0.0;
    return 1.0 - static_cast<double>(into_decay) / e.decay;
}
} // namespace

SpeedField gen_ideal_field(const RoadMap& map, int T, double step_minutes,
                           const std::vector<CongestionEvent>& events, double noise_sigma,
                           std::uint64_t seed, const WorldParams& params) {
    if (T < 1) throw std::invalid_argument("gen_ideal_field: T must be >= 1");
    int R = map.region_count();
    for (const auto& e : events) {
        if (e.epicenter < 0 || e.epicenter >= R)
            throw std::invalid_argument("gen_ideal_field: event epicenter out of range");
        if (e.rise < 1 || e.decay < 1)
            throw std::invalid_argument("gen_ideal_field: event durations must be >= 1");
        if (e.drop_kmh < 0) throw std::invalid_argument("gen_ideal_field: event drop must be >= 0");
    }

    Rng base_rng(mix_seed(seed, 0));
    std::vector<double> v_free(R);
    for (int r = 0; r < R; ++r)
        v_free[r] = base_rng.uniform(params.v_free_min, params.v_free_max);

    // iid draws are spatially white; two neighbor-averaging passes give the
    // baseline the neighborhood similarity real road networks show
    auto neighbors_of = [&](int r) {
        std::vector<int> nbrs;
        if (map.kind == RoadMap::Kind::Grid) {
            int row = r / map.width, col = r % map.width;
            if (row > 0) nbrs.push_back(r - map.width);
            if (row + 1 < map.height) nbrs.push_back(r + map.width);
            if (col > 0) nbrs.push_back(r - 1);
            if (col + 1 < map.width) nbrs.push_back(r + 1);
        } else {
            nbrs = map.adjacency[static_cast<std::size_t>(r)];
        }
        return nbrs;
    };
    for (int pass = 0; pass < 2; ++pass) {
        std::vector<double> next(v_free);
        for (int r = 0; r < R; ++r) {
            auto nbrs = neighbors_of(r);
            if (nbrs.empty()) continue;
            double acc = 0.0;
            for (int n : nbrs) acc += v_free[static_cast<std::size_t>(n)];
            next[r] = 0.5 * v_free[r] + 0.5 * acc / static_cast<double>(nbrs.size());
        }
        v_free.swap(next);
    }

    // spatial footprint per event: drop * rho^hop within the radius
    std::vector<std::vector<std::pair<int, double>>> footprint(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        auto hops = map.hop_distances(events[i].epicenter, events[i].radius_hops);
        for (int r = 0; r < R; ++r)
            if (hops[r] >= 0)
                footprint[i].push_back({r, events[i].drop_kmh * std::pow(params.rho, hops[r])});
    }

    SpeedField field;
    field.T = T;
    field.R = R;
    field.step_minutes = step_minutes;
    field.map_digest = map.digest();
    field.values.assign(static_cast<std::size_t>(T) * R, 0.0f);

    Rng noise_rng(mix_seed(seed, 1));
    std::vector<double> eta(R, 0.0);
    double fresh = std::sqrt(std::max(0.0, 1.0 - params.smooth * params.smooth));
    std::vector<double> drop(R);
    for (int t = 0; t < T; ++t) {
        double df = diurnal_factor(t, params.diurnal);
        std::fill(drop.begin(), drop.end(), 0.0);
        for (std::size_t i = 0; i < events.size(); ++i) {
            double w = event_intensity_at(events[i], t);
            if (w <= 0.0) continue;
            for (const auto& [r, d] : footprint[i]) drop[r] += w * d;
        }
        for (int r = 0; r < R; ++r) {
            if (noise_sigma > 0)
                eta[r] = params.smooth * eta[r] + fresh * noise_sigma * noise_rng.normal();
            double v = v_free[r] * df - drop[r] + eta[r];
            field.at(t, r) = static_cast<float>(std::clamp(v, 0.0, params.v_max));
        }
    }
    return field;
}

namespace {

struct GridVehicleState {
    double x, y, heading;
};

struct GraphVehicleState {
    int seg;
    double offset; // km from (x1,y1)
    int dir;       // +1 toward (x2,y2)
};

int grid_region(const RoadMap& map, double x, double y) {
    int col = std::clamp(static_cast<int>(std::floor(x / map.cell_km)), 0, map.width - 1);
    int row = std::clamp(static_cast<int>(std::floor(y / map.cell_km)), 0, map.height - 1);
    return row * map.width + col;
}

std::string vehicle_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "v%06d", i);
    return buf;
}

} // namespace

std::vector<PvdRecord> simulate_probes(const RoadMap& map, const SpeedField& field,
                                       int n_vehicles, double obs_sigma, std::uint64_t seed) {
    if (n_vehicles < 0) throw std::invalid_argument("simulate_probes: n_vehicles must be >= 0");
    if (field.R != map.region_count())
        throw std::invalid_argument("simulate_probes: field does not match map");

    std::vector<PvdRecord> records;
    records.reserve(static_cast<std::size_t>(n_vehicles) * field.T);
    double dt_hours = field.step_minutes / 60.0;

    for (int vi = 0; vi < n_vehicles; ++vi) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(vi) + 17));
        std::string name = vehicle_name(vi);

        if (map.kind == RoadMap::Kind::Grid) {
            double ex = map.extent_x(), ey = map.extent_y();
            GridVehicleState st{rng.uniform(0.0, ex), rng.uniform(0.0, ey),
                                rng.uniform(0.0, 360.0)};
            for (int t = 0; t < field.T; ++t) {
                int region = grid_region(map, st.x, st.y);
                double v_true = field.at(t, region);
                PvdRecord rec;
                rec.vehicle_id = name;
                rec.t = t;
                rec.x_km = st.x;
                rec.y_km = st.y;
                rec.heading_deg = st.heading;
                rec.speed_kmh = std::max(0.0, v_true + (obs_sigma > 0 ? rng.normal(0.0, obs_sigma) : 0.0));
                records.push_back(std::move(rec));

                double dist = v_true * dt_hours;
                double rad = st.heading * kPi / 180.0;
                st.x += dist * std::cos(rad);
                st.y += dist * std::sin(rad);
                if (st.x < 0) { st.x = -st.x; st.heading = wrap_deg(180.0 - st.heading); }
                if (st.x > ex) { st.x = 2 * ex - st.x; st.heading = wrap_deg(180.0 - st.heading); }
                if (st.y < 0) { st.y = -st.y; st.heading = wrap_deg(-st.heading); }
                if (st.y > ey) { st.y = 2 * ey - st.y; st.heading = wrap_deg(-st.heading); }
                st.x = std::clamp(st.x, 0.0, ex - 1e-9);
                st.y = std::clamp(st.y, 0.0, ey - 1e-9);
                st.heading = wrap_deg(st.heading + rng.normal(0.0, 15.0));
            }
        } else {
            GraphVehicleState st;
            st.seg = static_cast<int>(rng.uniform_index(map.segments.size()));
            st.offset = rng.uniform(0.0, map.segments[st.seg].length);
            st.dir = rng.uniform() < 0.5 ? 1 : -1;
            for (int t = 0; t < field.T; ++t) {
                const Segment& s = map.segments[st.seg];
                double frac = st.offset / s.length;
                PvdRecord rec;
                rec.vehicle_id = name;
                rec.t = t;
                rec.x_km = s.x1 + frac * (s.x2 - s.x1);
                rec.y_km = s.y1 + frac * (s.y2 - s.y1);
                rec.heading_deg = st.dir > 0 ? s.heading_deg : wrap_deg(s.heading_deg + 180.0);
                double v_true = field.at(t, st.seg);
                rec.speed_kmh = std::max(0.0, v_true + (obs_sigma > 0 ? rng.normal(0.0, obs_sigma) : 0.0));
                records.push_back(std::move(rec));

                double remaining = v_true * dt_hours;
                for (int hop = 0; hop < 16 && remaining > 0; ++hop) {
                    const Segment& cur = map.segments[st.seg];
                    double to_end = st.dir > 0 ? cur.length - st.offset : st.offset;
                    if (remaining < to_end) {
                        st.offset += st.dir * remaining;
                        remaining = 0;
                        break;
                    }
                    remaining -= to_end;
                    int node = st.dir > 0 ? cur.v : cur.u;
                    const auto& incident = map.node_segments[node];
                    int next;
                    if (incident.size() == 1) {
                        next = incident[0]; // dead end: turn around
                    } else {
                        do {
                            next = incident[rng.uniform_index(incident.size())];
                        } while (next == st.seg);
                    }
                    st.seg = next;
                    const Segment& ns = map.segments[st.seg];
                    if (ns.u == node) {
                        st.offset = 0;
                        st.dir = 1;
                    } else {
                        st.offset = ns.length;
                        st.dir = -1;
                    }
                }
            }
        }
    }
    return records;
}

} // namespace sparseflow
