#include "sparseflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sparseflow/rng.hpp"

namespace sparseflow {

double rmse(std::span<const float> a, std::span<const float> b, std::span<const float> mask) {
    if (a.size() != b.size()) throw std::invalid_argument("rmse: shape mismatch");
    if (!mask.empty() && mask.size() != a.size())
        throw std::invalid_argument("rmse: mask shape mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask.empty() && mask[i] == 0.0f) continue;
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("rmse: empty selection");
    return std::sqrt(acc / static_cast<double>(n));
}

ErrorSummary error_distribution(const SpeedField& ideal, const InitialEstimate& initial,
                                bool include_missing) {
    if (ideal.T != initial.T || ideal.R != initial.R)
        throw std::invalid_argument("error_distribution: shape mismatch");

    std::vector<double> errors;
    errors.reserve(ideal.values.size());
    for (std::size_t i = 0; i < ideal.values.size(); ++i) {
        if (!include_missing && initial.mask[i] == 0.0f) continue;
        errors.push_back(static_cast<double>(ideal.values[i]) -
                         static_cast<double>(initial.values[i]));
    }
    if (errors.empty()) throw std::invalid_argument("error_distribution: no cells selected");

    ErrorSummary s;
    s.n = errors.size();
    s.with_missing = include_missing;
    double n = static_cast<double>(s.n);
    for (double e : errors) s.mean += e;
    s.mean /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double e : errors) {
        double d = e - s.mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    s.stddev = std::sqrt(m2);
    s.skewness = m2 > 0 ? m3 / (m2 * std::sqrt(m2)) : 0.0;

    // fixed layout: 41 uniform bins spanning +-5 std around the mean
    const int kBins = 41;
    double half = 5.0 * (s.stddev > 0 ? s.stddev : 1.0);
    double lo = s.mean - half, hi = s.mean + half;
    s.bin_edges.resize(kBins + 1);
    for (int i = 0; i <= kBins; ++i)
        s.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / kBins;
    s.bin_counts.assign(kBins, 0);
    for (double e : errors) {
        int bin = static_cast<int>(std::floor((e - lo) / (hi - lo) * kBins));
        bin = std::clamp(bin, 0, kBins - 1); // outliers land in the edge bins
        ++s.bin_counts[static_cast<std::size_t>(bin)];
    }
    return s;
}

std::pair<double, double> clt_check(double sigma, int n_samples, int trials, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("clt_check: n_samples must be >= 1");
    if (trials < 100) throw std::invalid_argument("clt_check: trials must be >= 100");
    Rng rng(seed);
    std::vector<double> means(static_cast<std::size_t>(trials));
    for (auto& m : means) {
        double acc = 0.0;
        for (int i = 0; i < n_samples; ++i) acc += rng.normal(0.0, sigma);
        m = acc / n_samples;
    }
    double mean = 0.0;
    for (double m : means) mean += m;
    mean /= trials;
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    var /= trials;
    return {sigma / std::sqrt(static_cast<double>(n_samples)), std::sqrt(var)};
}

double coverage(const InitialEstimate& initial) {
    if (initial.mask.empty()) return 0.0;
    double acc = 0.0;
    for (float m : initial.mask) acc += m;
    return acc / static_cast<double>(initial.mask.size());
}

const char* kReportHeader =
    "run_id,p,seed,variant,rmse_initial,rmse_recovered,coverage,skew_with_missing,"
    "skew_without_missing";

std::string format_report_row(const ReportRow& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%s,%.4f,%llu,%s,%.6f,%.6f,%.6f,%.6f,%.6f",
                  r.run_id.c_str(), r.p, static_cast<unsigned long long>(r.seed),
                  r.variant.c_str(), r.rmse_initial, r.rmse_recovered, r.coverage,
                  r.skew_with_missing, r.skew_without_missing);
    return buf;
}

ReportRow parse_report_row(const std::string& line) {
    ReportRow r;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            f.push_back(line.substr(start));
            break;
        }
        f.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (f.size() != 9) throw std::invalid_argument("report row: expected 9 fields");
    r.run_id = f[0];
    r.p = std::stod(f[1]);
    r.seed = std::stoull(f[2]);
    r.variant = f[3];
    r.rmse_initial = std::stod(f[4]);
    r.rmse_recovered = std::stod(f[5]);
    r.coverage = std::stod(f[6]);
    r.skew_with_missing = std::stod(f[7]);
    r.skew_without_missing = std::stod(f[8]);
    return r;
}

} // namespace sparseflow
