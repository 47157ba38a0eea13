#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparseflow/ingest.hpp"
#include "sparseflow/worldgen.hpp"

namespace sparseflow {

struct ErrorSummary {
    double mean = 0.0;
    double stddev = 0.0;
    double skewness = 0.0;
    std::vector<double> bin_edges; // 42 edges for 41 bins
    std::vector<std::size_t> bin_counts;
    std::size_t n = 0;
    bool with_missing = false;
};

double rmse(std::span<const float> a, std::span<const float> b,
            std::span<const float> mask = {});

// e(t, r) = ideal - initial; zero-filled misses show up as positive errors
ErrorSummary error_distribution(const SpeedField& ideal, const InitialEstimate& initial,
                                bool include_missing);

// (predicted sigma/sqrt(n), empirical std of `trials` sample means)
std::pair<double, double> clt_check(double sigma, int n_samples, int trials, std::uint64_t seed);

double coverage(const InitialEstimate& initial);

// One line of the sweep report CSV.
struct ReportRow {
    std::string run_id;
    double p = 0.0;
    std::uint64_t seed = 0;
    std::string variant;
    double rmse_initial = 0.0;
    double rmse_recovered = 0.0;
    double coverage = 0.0;
    double skew_with_missing = 0.0;
    double skew_without_missing = 0.0;
};

extern const char* kReportHeader;
std::string format_report_row(const ReportRow& row);
ReportRow parse_report_row(const std::string& line);

} // namespace sparseflow
