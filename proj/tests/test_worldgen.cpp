#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sparseflow/rng.hpp"
#include "sparseflow/worldgen.hpp"

using namespace sparseflow;

TEST_CASE("grid map region counts") {
    CHECK(build_grid_map(80, 80, 0.25).region_count() == 6400);
    CHECK(build_grid_map(1, 1, 1.0).region_count() == 1);
    CHECK(build_grid_map(4, 5, 0.5).region_count() == 20);
    CHECK_THROWS(build_grid_map(0, 5, 0.5));
    CHECK_THROWS(build_grid_map(5, 5, -1.0));
}

TEST_CASE("graph map lattice edge counts and adjacency") {
    RoadMap sq = build_graph_map(2, 2, 0.5);
    CHECK(sq.region_count() == 4);
    // adjacency iff two segments share an intersection: each square edge
    // touches the two perpendicular edges but not the opposite one
    for (int s = 0; s < 4; ++s) {
        std::set<int> nbrs(sq.adjacency[static_cast<std::size_t>(s)].begin(),
                           sq.adjacency[static_cast<std::size_t>(s)].end());
        CHECK(nbrs.size() == 2);
        CHECK(!nbrs.count(s));
    }
    CHECK(!std::count(sq.adjacency[0].begin(), sq.adjacency[0].end(), 1));

    CHECK(build_graph_map(16, 17, 0.4).region_count() == 511); // 16*16 + 17*15
    CHECK(build_graph_map(2, 3, 1.0).region_count() == 7);     // 2*2 + 3*1
    CHECK_THROWS(build_graph_map(1, 3, 1.0));
}

TEST_CASE("graph segments have consistent geometry") {
    RoadMap m = build_graph_map(3, 4, 0.5);
    for (const auto& s : m.segments) {
        double len = std::hypot(s.x2 - s.x1, s.y2 - s.y1);
        CHECK(s.length == doctest::Approx(len));
        CHECK(s.length == doctest::Approx(0.5));
        CHECK(s.heading_deg >= 0.0);
        CHECK(s.heading_deg < 360.0);
    }
}

TEST_CASE("map digests separate different maps") {
    CHECK(build_grid_map(4, 4, 0.5).digest() == build_grid_map(4, 4, 0.5).digest());
    CHECK(build_grid_map(4, 4, 0.5).digest() != build_grid_map(4, 5, 0.5).digest());
    CHECK(build_grid_map(4, 4, 0.5).digest() != build_graph_map(2, 2, 0.5).digest());
}

TEST_CASE("diurnal factor examples") {
    DiurnalProfile prof; // defaults: morning peak at step 60, evening at 630
    CHECK(prof.t_am == 60.0);
    CHECK(prof.t_pm == 630.0);

    DiurnalProfile sym = prof;
    sym.a_am = 0.4;
    sym.a_pm = 0.4;
    CHECK(diurnal_factor(340.0, sym) == doctest::Approx(1.0).epsilon(1e-3));

    DiurnalProfile am_only = prof;
    am_only.a_am = 0.4;
    am_only.a_pm = 0.0;
    CHECK(diurnal_factor(am_only.t_am, am_only) == doctest::Approx(0.6));

    DiurnalProfile deep = prof;
    deep.a_am = 0.95;
    deep.a_pm = 0.0;
    CHECK(diurnal_factor(deep.t_am, deep) == doctest::Approx(0.1)); // clamp floor
}

namespace {

WorldParams flat_world() {
    WorldParams p;
    p.diurnal.a_am = 0.0;
    p.diurnal.a_pm = 0.0;
    return p;
}

} // namespace

TEST_CASE("ideal field with no events and no noise is constant per region") {
    RoadMap map = build_grid_map(4, 4, 0.5);
    SpeedField f = gen_ideal_field(map, 20, 1.0, {}, 0.0, 3, flat_world());
    for (int r = 0; r < map.region_count(); ++r) {
        float v0 = f.at(0, r);
        CHECK(v0 >= 40.0f);
        CHECK(v0 <= 90.0f);
        for (int t = 1; t < f.T; ++t) CHECK(f.at(t, r) == v0);
    }
}

TEST_CASE("congestion event drop decays geometrically with hops") {
    RoadMap map = build_grid_map(7, 7, 0.5);
    CongestionEvent e;
    e.epicenter = 3 * 7 + 3; // center cell
    e.onset = 5;
    e.rise = 5;
    e.decay = 5;
    e.drop_kmh = 30.0;
    e.radius_hops = 3;

    SpeedField base = gen_ideal_field(map, 20, 1.0, {}, 0.0, 3, flat_world());
    SpeedField with = gen_ideal_field(map, 20, 1.0, {e}, 0.0, 3, flat_world());

    int peak = e.onset + e.rise;
    CHECK(base.at(peak, e.epicenter) - with.at(peak, e.epicenter) == doctest::Approx(30.0));
    int hop2 = 1 * 7 + 3; // two rows above the epicenter
    CHECK(base.at(peak, hop2) - with.at(peak, hop2) == doctest::Approx(7.5)); // 30 * 0.5^2
    CHECK(base.at(0, e.epicenter) == with.at(0, e.epicenter)); // before onset

    CongestionEvent bad = e;
    bad.epicenter = map.region_count();
    CHECK_THROWS(gen_ideal_field(map, 20, 1.0, {bad}, 0.0, 3, flat_world()));
}

TEST_CASE("field values stay in [0, v_max] and are deterministic") {
    RoadMap map = build_grid_map(6, 6, 0.5);
    std::vector<CongestionEvent> events{{10, 5, 5, 10, 80.0, 4}};
    SpeedField a = gen_ideal_field(map, 60, 1.0, events, 5.0, 11);
    SpeedField b = gen_ideal_field(map, 60, 1.0, events, 5.0, 11);
    CHECK(a.values == b.values);
    for (float v : a.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 120.0f);
    }
    SpeedField c = gen_ideal_field(map, 60, 1.0, events, 5.0, 12);
    CHECK(a.values != c.values);
}

TEST_CASE("spatially adjacent regions are more similar than random pairs") {
    RoadMap map = build_grid_map(16, 16, 0.5);
    SpeedField f = gen_ideal_field(map, 120, 1.0,
                                   {{50, 10, 10, 30, 40.0, 4}, {200, 60, 10, 30, 35.0, 4}}, 2.0,
                                   21);
    Rng rng(77);
    double adj_sum = 0.0, rand_sum = 0.0;
    int n = 0;
    while (n < 1000) {
        int t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(f.T)));
        int row = static_cast<int>(rng.uniform_index(16));
        int col = static_cast<int>(rng.uniform_index(15));
        int r1 = row * 16 + col;
        int r2 = r1 + 1;
        int ra = static_cast<int>(rng.uniform_index(256));
        int rb = static_cast<int>(rng.uniform_index(256));
        if (ra == rb) continue;
        adj_sum += std::abs(f.at(t, r1) - f.at(t, r2));
        rand_sum += std::abs(f.at(t, ra) - f.at(t, rb));
        ++n;
    }
    CHECK(adj_sum / n < rand_sum / n);
}

TEST_CASE("per-region series have strong lag-1 autocorrelation") {
    RoadMap map = build_grid_map(6, 6, 0.5);
    SpeedField f = gen_ideal_field(map, 360, 1.0, {{14, 60, 15, 40, 30.0, 4}}, 2.0, 5);
    for (int r = 0; r < map.region_count(); ++r) {
        double mean = 0.0;
        for (int t = 0; t < f.T; ++t) mean += f.at(t, r);
        mean /= f.T;
        double num = 0.0, den = 0.0;
        for (int t = 0; t < f.T; ++t) {
            double d = f.at(t, r) - mean;
            den += d * d;
            if (t + 1 < f.T) num += d * (f.at(t + 1, r) - mean);
        }
        CHECK(num / den > 0.5);
    }
}

TEST_CASE("probe simulation: counts, bounds, ids, determinism") {
    RoadMap map = build_grid_map(5, 5, 0.5);
    SpeedField f = gen_ideal_field(map, 10, 1.0, {}, 0.0, 3, flat_world());

    CHECK(simulate_probes(map, f, 0, 1.0, 1).empty());

    auto recs = simulate_probes(map, f, 100, 1.0, 1);
    REQUIRE(recs.size() == 1000); // n_vehicles * T
    CHECK(recs[0].vehicle_id == "v000000");
    for (const auto& r : recs) {
        CHECK(r.x_km >= 0.0);
        CHECK(r.x_km < map.extent_x());
        CHECK(r.y_km >= 0.0);
        CHECK(r.y_km < map.extent_y());
        CHECK(r.speed_kmh >= 0.0);
        CHECK(r.heading_deg >= 0.0);
        CHECK(r.heading_deg < 360.0);
        CHECK(r.t >= 0);
        CHECK(r.t < 10);
    }

    auto again = simulate_probes(map, f, 100, 1.0, 1);
    REQUIRE(again.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(again[i].vehicle_id == recs[i].vehicle_id);
        CHECK(again[i].x_km == recs[i].x_km);
        CHECK(again[i].speed_kmh == recs[i].speed_kmh);
    }
}

TEST_CASE("noiseless probes on a single-region map report the field speed") {
    RoadMap map = build_grid_map(1, 1, 1.0);
    SpeedField f = gen_ideal_field(map, 8, 1.0, {}, 0.0, 9, flat_world());
    auto recs = simulate_probes(map, f, 5, 0.0, 2);
    REQUIRE(recs.size() == 40);
    for (const auto& r : recs)
        CHECK(r.speed_kmh == doctest::Approx(f.at(r.t, 0)));
}

TEST_CASE("graph probes stay on segments") {
    RoadMap map = build_graph_map(3, 3, 0.5);
    SpeedField f = gen_ideal_field(map, 12, 1.0, {}, 0.0, 4, flat_world());
    auto recs = simulate_probes(map, f, 50, 2.0, 6);
    REQUIRE(recs.size() == 50 * 12);
    for (const auto& r : recs) {
        // every point must lie within 1e-6 km of some segment
        double best = 1e9;
        for (const auto& s : map.segments) {
            double dx = s.x2 - s.x1, dy = s.y2 - s.y1;
            double tt = ((r.x_km - s.x1) * dx + (r.y_km - s.y1) * dy) / (dx * dx + dy * dy);
            tt = std::clamp(tt, 0.0, 1.0);
            best = std::min(best, std::hypot(r.x_km - (s.x1 + tt * dx),
                                             r.y_km - (s.y1 + tt * dy)));
        }
        CHECK(best < 1e-6);
    }
}

TEST_CASE("hop distances: grid uses 4-neighborhood, graph uses shared intersections") {
    RoadMap grid = build_grid_map(5, 5, 0.5);
    auto d = grid.hop_distances(12, 3); // center of 5x5
    CHECK(d[12] == 0);
    CHECK(d[11] == 1);
    CHECK(d[7] == 1);
    CHECK(d[2] == 2);
    CHECK(d[0] == -1); // hop distance 4 exceeds max_hops = 3

    RoadMap graph = build_graph_map(2, 2, 0.5);
    auto gd = graph.hop_distances(0, 2);
    CHECK(gd[0] == 0);
    CHECK(gd[1] == 2); // the opposite square edge shares no intersection
    CHECK(gd[2] == 1);
    CHECK(gd[3] == 1);
}
