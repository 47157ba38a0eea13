#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparseflow/worldgen.hpp"

namespace sparseflow {

struct InitialEstimate {
    int T = 0;
    int R = 0;
    double step_minutes = 1.0;
    std::uint32_t map_digest = 0;
    std::vector<float> values; // T x R, km/h, zero where unobserved
    std::vector<float> mask;   // 1 where at least one sample
    std::vector<float> counts; // sample counts

    std::size_t idx(int t, int r) const { return static_cast<std::size_t>(t) * R + r; }
    float value_at(int t, int r) const { return values[idx(t, r)]; }
    float mask_at(int t, int r) const { return mask[idx(t, r)]; }
    float count_at(int t, int r) const { return counts[idx(t, r)]; }
};

struct AggregateResult {
    InitialEstimate estimate;
    std::size_t unmatched = 0; // records that failed region matching (skipped)
};

class PvdParseError : public std::runtime_error {
public:
    PvdParseError(std::size_t line, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// CSV header: vehicle_id,t,x_km,y_km,heading_deg,speed_kmh
std::vector<PvdRecord> parse_pvd(std::istream& in);
void serialize_pvd(std::ostream& out, const std::vector<PvdRecord>& records);

// Samples vehicles (not records) with probability p; keeps record order.
std::vector<PvdRecord> sparsify(const std::vector<PvdRecord>& records, double p,
                                std::uint64_t seed);

struct MatchParams {
    double radius_km = 0.05;
    double heading_gate_deg = 45.0;
};

std::optional<int> match_region(const PvdRecord& record, const RoadMap& map,
                                const MatchParams& params = {});

AggregateResult aggregate(const std::vector<PvdRecord>& records, const RoadMap& map, int T,
                          int window, const MatchParams& params = {});

} // namespace sparseflow
