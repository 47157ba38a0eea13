#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparseflow/model.hpp"
#include "sparseflow/worldgen.hpp"

namespace sparseflow {

// exit code 1
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// exit code 2
class MissingInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridMapSpec {
    int height = 32;
    int width = 32;
    double cell_km = 0.25;
};

struct GraphMapSpec {
    int rows = 16;
    int cols = 17;
    double block_km = 0.4;
};

struct WorldConfig {
    std::optional<GridMapSpec> grid;
    std::optional<GraphMapSpec> graph;
    int t_per_day = 360;
    double step_minutes = 1.0;
    int days = 6;
    int events_per_day = 3;
    double noise_sigma = 2.0;
    double obs_sigma = 8.0;
    int n_vehicles = 2000;
    std::uint64_t seed = 42;
    double v_max = 120.0;
};

struct ModelSection {
    Temporal temporal = Temporal::Gru;
    int L = 8;
    int c1 = 8;
    int c2 = 16;
    int d_s = 64;
    int d_h = 64;
    int d_z = 16;
    double beta = 0.001;
    double v_scale = 120.0;
};

struct TrainSection {
    int epochs = 6;
    int batch = 16;
    double lr = 1e-3;
    int stride = 2;
};

struct ExperimentConfig {
    int version = 1;
    WorldConfig world;
    std::vector<double> sparsity{0.02, 0.05, 0.10, 0.20};
    int window = 1;
    ModelSection model;
    std::optional<ModelSection> model_grid;  // per-variant overrides
    std::optional<ModelSection> model_graph;
    TrainSection train;
    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "out";

    void validate() const;
    std::vector<Variant> variants() const;
    ModelSection model_for(Variant v) const;
    RoadMap build_map(Variant v) const;
    ModelConfig model_config(Variant v, const RoadMap& map) const;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    std::uint32_t digest() const;
};

// Per-command filters (from CLI flags); empty means "all configured".
struct RunFilter {
    std::optional<Variant> variant;
    std::optional<std::uint64_t> seed;
};

std::string run_id(Variant v, double p, std::uint64_t seed);
std::string format_p(double p);

void cmd_generate(const ExperimentConfig& cfg, const RunFilter& filter = {});
void cmd_sparsify(const ExperimentConfig& cfg, const RunFilter& filter = {});
void cmd_aggregate(const ExperimentConfig& cfg, const RunFilter& filter = {});
void cmd_train(const ExperimentConfig& cfg, const RunFilter& filter = {});
void cmd_evaluate(const ExperimentConfig& cfg, const RunFilter& filter = {});
void cmd_sweep(const ExperimentConfig& cfg, const RunFilter& filter = {});
void cmd_report(const std::string& out_dir);

} // namespace sparseflow
