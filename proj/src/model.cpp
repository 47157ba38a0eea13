#include "sparseflow/model.hpp"

#include <stdexcept>

#include "sparseflow/container.hpp"

namespace sparseflow {

std::string variant_name(Variant v) { return v == Variant::GridCnn ? "grid" : "graph"; }

Variant variant_from_name(const std::string& s) {
    if (s == "grid") return Variant::GridCnn;
    if (s == "graph") return Variant::GraphGcn;
    throw std::invalid_argument("unknown variant '" + s + "' (expected grid|graph)");
}

std::string temporal_name(Temporal t) { return t == Temporal::Gru ? "gru" : "attention"; }

Temporal temporal_from_name(const std::string& s) {
    if (s == "gru") return Temporal::Gru;
    if (s == "attention") return Temporal::Attention;
    throw std::invalid_argument("unknown temporal module '" + s + "' (expected gru|attention)");
}

void ModelConfig::validate() const {
    if (L < 1) throw std::invalid_argument("model config: L must be >= 1");
    if (c1 < 1 || c2 < 1 || d_s < 1 || d_h < 1 || d_z < 1)
        throw std::invalid_argument("model config: widths must be >= 1");
    if (beta < 0) throw std::invalid_argument("model config: beta must be >= 0");
    if (v_scale <= 0) throw std::invalid_argument("model config: v_scale must be > 0");
    if (variant == Variant::GridCnn) {
        if (height < 4 || width < 4 || height % 4 || width % 4)
            throw std::invalid_argument("model config: grid extents must be multiples of 4");
    } else {
        if (n_nodes < 1) throw std::invalid_argument("model config: n_nodes must be >= 1");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"variant", variant_name(variant)},
            {"temporal", temporal_name(temporal)},
            {"L", L},
            {"c1", c1},
            {"c2", c2},
            {"d_s", d_s},
            {"d_h", d_h},
            {"d_z", d_z},
            {"beta", beta},
            {"v_scale", v_scale},
            {"height", height},
            {"width", width},
            {"n_nodes", n_nodes},
            {"map_digest", map_digest}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.temporal = temporal_from_name(j.at("temporal").get<std::string>());
    c.L = j.at("L").get<int>();
    c.c1 = j.at("c1").get<int>();
    c.c2 = j.at("c2").get<int>();
    c.d_s = j.at("d_s").get<int>();
    c.d_h = j.at("d_h").get<int>();
    c.d_z = j.at("d_z").get<int>();
    c.beta = j.at("beta").get<double>();
    c.v_scale = j.at("v_scale").get<double>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.n_nodes = j.at("n_nodes").get<int>();
    c.map_digest = j.at("map_digest").get<std::uint32_t>();
    c.validate();
    return c;
}

void save_checkpoint(const Model& model, const std::string& path, const TrainMeta& meta) {
    const auto& store = model.params();
    std::vector<std::uint8_t> payload;
    nlohmann::json tensors = nlohmann::json::object();
    for (std::size_t i = 0; i < store.count(); ++i) {
        const auto& e = store.entry_at(i);
        std::size_t offset = payload.size();
        append_f32(payload, e.value.data.data(), e.value.size());
        tensors[e.name] = {{"shape", e.value.shape},
                           {"offset", offset},
                           {"length", e.value.size() * 4}};
    }
    nlohmann::json header = {{"version", 1},
                             {"config", model.config().to_json()},
                             {"tensors", tensors},
                             {"order", nlohmann::json::array()},
                             {"digest", crc32_of(payload)},
                             {"meta",
                              {{"epochs", meta.epochs},
                               {"final_total", meta.final_total},
                               {"final_recon", meta.final_recon},
                               {"final_kl", meta.final_kl},
                               {"seed", meta.seed}}}};
    for (std::size_t i = 0; i < store.count(); ++i)
        header["order"].push_back(store.entry_at(i).name);
    if (model.config().variant == Variant::GraphGcn)
        header["adjacency"] = model.adjacency();
    write_container(path, header, payload);
}

Model load_checkpoint(const std::string& path) {
    auto [header, payload] = read_container(path);
    int version = header.value("version", -1);
    if (version != 1)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    std::uint32_t expect = header.at("digest").get<std::uint32_t>();
    if (crc32_of(payload) != expect)
        throw std::runtime_error(path + ": checkpoint digest mismatch (corrupted payload)");

    ModelConfig cfg = ModelConfig::from_json(header.at("config"));
    Model model(cfg, 0);
    if (cfg.variant == Variant::GraphGcn)
        model.set_adjacency(header.at("adjacency").get<std::vector<std::vector<int>>>());

    const auto& tensors = header.at("tensors");
    auto& store = model.params();
    for (std::size_t i = 0; i < store.count(); ++i) {
        auto& e = store.entry_at(i);
        if (!tensors.contains(e.name))
            throw std::runtime_error(path + ": checkpoint missing tensor " + e.name);
        const auto& t = tensors.at(e.name);
        auto shape = t.at("shape").get<std::vector<std::size_t>>();
        if (shape != e.value.shape)
            throw std::runtime_error(path + ": tensor " + e.name + " has shape " +
                                     shape_str(shape) + ", expected " + shape_str(e.value.shape));
        std::size_t offset = t.at("offset").get<std::size_t>();
        read_f32(payload, offset, e.value.data.data(), e.value.size());
    }
    return model;
}

} // namespace sparseflow
