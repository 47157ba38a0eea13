#include "sparseflow/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "sparseflow/rng.hpp"

namespace sparseflow {

namespace {

constexpr const char* kHeader = "vehicle_id,t,x_km,y_km,heading_deg,speed_kmh";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

double parse_double(const std::string& s, std::size_t line, const char* field) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty())
        throw PvdParseError(line, std::string("malformed ") + field + " value '" + s + "'");
    return v;
}

} // namespace

std::vector<PvdRecord> parse_pvd(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw PvdParseError(1, "empty input, expected header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader)
        throw PvdParseError(1, "unknown header '" + line + "', expected '" + kHeader + "'");

    std::vector<PvdRecord> records;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != 6)
            throw PvdParseError(lineno, "expected 6 fields, got " + std::to_string(fields.size()));
        PvdRecord rec;
        rec.vehicle_id = fields[0];
        if (rec.vehicle_id.empty()) throw PvdParseError(lineno, "empty vehicle_id");
        int t = 0;
        auto [p, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), t);
        if (ec != std::errc{} || p != fields[1].data() + fields[1].size())
            throw PvdParseError(lineno, "malformed t value '" + fields[1] + "'");
        if (t < 0) throw PvdParseError(lineno, "t must be >= 0");
        rec.t = t;
        rec.x_km = parse_double(fields[2], lineno, "x_km");
        rec.y_km = parse_double(fields[3], lineno, "y_km");
        rec.heading_deg = parse_double(fields[4], lineno, "heading_deg");
        if (rec.heading_deg < 0 || rec.heading_deg >= 360.0)
            throw PvdParseError(lineno, "heading_deg must be in [0,360)");
        rec.speed_kmh = parse_double(fields[5], lineno, "speed_kmh");
        if (rec.speed_kmh < 0) throw PvdParseError(lineno, "speed_kmh must be >= 0");
        records.push_back(std::move(rec));
    }
    return records;
}

void serialize_pvd(std::ostream& out, const std::vector<PvdRecord>& records) {
    out << kHeader << "\n";
    char buf[192];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%s,%d,%.9g,%.9g,%.9g,%.9g\n", r.vehicle_id.c_str(), r.t,
                      r.x_km, r.y_km, r.heading_deg, r.speed_kmh);
        out << buf;
    }
}

std::vector<PvdRecord> sparsify(const std::vector<PvdRecord>& records, double p,
                                std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("sparsify: p must be in [0,1]");
    if (p == 1.0) return records;
    // vehicles in first-appearance order so selection is input-deterministic
    std::vector<const std::string*> order;
    std::unordered_map<std::string, bool> selected;
    for (const auto& r : records)
        if (selected.emplace(r.vehicle_id, false).second) order.push_back(&r.vehicle_id);
    Rng rng(seed);
    for (const auto* id : order) selected[*id] = rng.uniform() < p;

    std::vector<PvdRecord> out;
    for (const auto& r : records)
        if (selected[r.vehicle_id]) out.push_back(r);
    return out;
}

namespace {

double point_segment_distance(double px, double py, const Segment& s) {
    double dx = s.x2 - s.x1, dy = s.y2 - s.y1;
    double len2 = dx * dx + dy * dy;
    double t = ((px - s.x1) * dx + (py - s.y1) * dy) / len2;
    t = std::clamp(t, 0.0, 1.0);
    double cx = s.x1 + t * dx, cy = s.y1 + t * dy;
    return std::hypot(px - cx, py - cy);
}

double heading_diff_mod180(double a, double b) {
    double d = std::fabs(std::fmod(a - b, 180.0));
    return std::min(d, 180.0 - d);
}

} // namespace

std::optional<int> match_region(const PvdRecord& record, const RoadMap& map,
                                const MatchParams& params) {
    if (map.kind == RoadMap::Kind::Grid) {
        int col = static_cast<int>(std::floor(record.x_km / map.cell_km));
        int row = static_cast<int>(std::floor(record.y_km / map.cell_km));
        if (col < 0 || col >= map.width || row < 0 || row >= map.height) return std::nullopt;
        return row * map.width + col;
    }
    int best = -1;
    double best_dist = params.radius_km;
    for (int i = 0; i < static_cast<int>(map.segments.size()); ++i) {
        const Segment& s = map.segments[i];
        if (heading_diff_mod180(record.heading_deg, s.heading_deg) >= params.heading_gate_deg)
            continue;
        double d = point_segment_distance(record.x_km, record.y_km, s);
        // strict improvement wins; the ascending scan keeps the lowest index on ties
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    if (best < 0) return std::nullopt;
    return best;
}

AggregateResult aggregate(const std::vector<PvdRecord>& records, const RoadMap& map, int T,
                          int window, const MatchParams& params) {
    if (window < 1) throw std::invalid_argument("aggregate: window must be >= 1");
    int R = map.region_count();
    AggregateResult out;
    InitialEstimate& est = out.estimate;
    est.T = T;
    est.R = R;
    est.map_digest = map.digest();
    std::size_t n = static_cast<std::size_t>(T) * R;
    est.values.assign(n, 0.0f);
    est.mask.assign(n, 0.0f);
    est.counts.assign(n, 0.0f);

    std::vector<double> sums(n, 0.0);
    for (const auto& rec : records) {
        if (rec.t >= T) throw std::invalid_argument("aggregate: record time beyond horizon");
        auto region = match_region(rec, map, params);
        if (!region) {
            ++out.unmatched;
            continue;
        }
        // a record at time t_rec enters the averaging window of estimates
        // at times [t_rec, t_rec + window - 1]
        int t_end = std::min(T - 1, rec.t + window - 1);
        for (int t = rec.t; t <= t_end; ++t) {
            std::size_t i = est.idx(t, *region);
            sums[i] += rec.speed_kmh;
            est.counts[i] += 1.0f;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (est.counts[i] >= 1.0f) {
            est.values[i] = static_cast<float>(sums[i] / est.counts[i]);
            est.mask[i] = 1.0f;
        }
    }
    return out;
}

} // namespace sparseflow
