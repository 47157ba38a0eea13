#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparseflow/nn.hpp"
#include "sparseflow/rng.hpp"
#include "sparseflow/tensor.hpp"

namespace sparseflow {

enum class Variant { GridCnn, GraphGcn };
enum class Temporal { Gru, Attention };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);
std::string temporal_name(Temporal t);
Temporal temporal_from_name(const std::string& s);

struct ModelConfig {
    Variant variant = Variant::GridCnn;
    Temporal temporal = Temporal::Gru;
    int L = 12;
    int c1 = 16;
    int c2 = 32;
    int d_s = 128;
    int d_h = 128;
    int d_z = 32;
    double beta = 0.001;
    double v_scale = 120.0;

    // spatial discretization the model was built for
    int height = 0;
    int width = 0;
    int n_nodes = 0;
    std::uint32_t map_digest = 0;

    int region_count() const { return variant == Variant::GridCnn ? height * width : n_nodes; }
    int spatial_flat_dim() const { return c2 * (height / 4) * (width / 4); }
    int spatial_out_dim() const { return variant == Variant::GridCnn ? d_s : c2; }
    // dimensionality of the condition vector produced by the temporal module
    int c_dim() const { return temporal == Temporal::Gru ? d_h : spatial_out_dim(); }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// One input frame: per-region mean speeds (km/h, zero-filled) plus mask
struct Frame {
    std::vector<float> values;
    std::vector<float> mask;
};

template <typename T>
class ModelT {
public:
    ModelT(ModelConfig cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStoreT<T>& params() { return params_; }
    const nn::ParamStoreT<T>& params() const { return params_; }

    // graph variant needs the road-graph adjacency before any forward pass
    void set_adjacency(std::vector<std::vector<int>> adj);
    const std::vector<std::vector<int>>& adjacency() const { return adjacency_; }

    struct EncodeOut {
        TensorT<T> c;      // (1 x c_dim) grid, (N x c_dim) graph
        TensorT<T> mu;     // (1 x d_z)
        TensorT<T> logvar; // (1 x d_z)
    };
    EncodeOut encode(const std::vector<const Frame*>& seq) const;

    // km/h frame of length R, linear output (no clamping)
    std::vector<float> decode(const TensorT<T>& z, const TensorT<T>& c) const;

    // deterministic inference: z = mu, output clamped to [0, v_scale]
    std::vector<float> infer(const std::vector<const Frame*>& seq) const;

    struct LossParts {
        double total = 0.0, recon = 0.0, kl = 0.0;
    };

    // forward with all caches retained; backward accumulates into params().grad
    struct Workspace;
    LossParts loss_forward(const std::vector<const Frame*>& seq, const std::vector<float>& ideal,
                           const TensorT<T>& eps, Workspace& ws) const;
    void loss_backward(Workspace& ws);

    Workspace make_workspace() const;

private:
    struct FrameCache;
    void build_params(std::uint64_t seed);
    TensorT<T> frame_input(const Frame& f) const;
    TensorT<T> spatial_forward(const Frame& f, FrameCache* cache) const;
    void encode_internal(const std::vector<const Frame*>& seq, Workspace& ws) const;

    ModelConfig cfg_;
    nn::ParamStoreT<T> params_;
    std::vector<std::vector<int>> adjacency_;
    nn::SparseAdjT<T> ahat_;
};

template <typename T>
typename ModelT<T>::LossParts model_loss(double recon, double kl, double beta) {
    typename ModelT<T>::LossParts p;
    p.recon = recon;
    p.kl = kl;
    p.total = recon + beta * kl;
    return p;
}

using Model = ModelT<float>;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Sliding-window dataset over (InitialEstimate, SpeedField) day pairs:
// input = L initial-estimate frames, target = ideal frame at the window end.
struct SeqDataset {
    int L = 0;
    int R = 0;
    std::vector<std::vector<Frame>> day_frames;
    std::vector<std::vector<std::vector<float>>> day_targets;
    std::vector<std::pair<int, int>> windows; // (day, t_end)

    std::size_t size() const { return windows.size(); }
    std::vector<const Frame*> seq_at(std::size_t i) const;
    const std::vector<float>& target_at(std::size_t i) const;
};

struct DayView {
    const float* init_values;
    const float* init_mask;
    const float* ideal_values;
    int T;
    int R;
};

SeqDataset make_dataset(const std::vector<DayView>& days, int L, int stride);

struct TrainOptions {
    int epochs = 10;
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct EpochStats {
    double total = 0.0, recon = 0.0, kl = 0.0;
    double val_total = -1.0; // -1 when no validation set
};
using TrainingHistory = std::vector<EpochStats>;

// Trains in place. With a validation set the model is left at the parameters
// of the best validation epoch.
template <typename T>
TrainingHistory train(ModelT<T>& model, const SeqDataset& dataset, const TrainOptions& opts,
                      const SeqDataset* validation = nullptr);

template <typename T>
double evaluate_loss(ModelT<T>& model, const SeqDataset& dataset);

// ---------------------------------------------------------------------------
// Checkpoints (float32 on disk)
// ---------------------------------------------------------------------------

struct TrainMeta {
    int epochs = 0;
    double final_total = 0.0, final_recon = 0.0, final_kl = 0.0;
    std::uint64_t seed = 0;
};

void save_checkpoint(const Model& model, const std::string& path, const TrainMeta& meta = {});
Model load_checkpoint(const std::string& path);

} // namespace sparseflow

#include "sparseflow/model_impl.hpp"
