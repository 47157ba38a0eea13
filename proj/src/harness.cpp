#include "sparseflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sparseflow/container.hpp"
#include "sparseflow/ingest.hpp"
#include "sparseflow/rng.hpp"
#include "sparseflow/stats.hpp"

namespace fs = std::filesystem;

namespace sparseflow {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) {
            std::string path = where.empty() ? it.key() : where + "." + it.key();
            throw ConfigError("unknown config key '" + path + "'");
        }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("config field '") + key + "' has the wrong type");
        }
    }
}

ModelSection parse_model_section(const nlohmann::json& j, const ModelSection& base,
                                 const std::string& where) {
    reject_unknown(j, {"temporal", "L", "c1", "c2", "d_s", "d_h", "d_z", "beta", "v_scale",
                       "grid", "graph"},
                   where);
    ModelSection m = base;
    if (j.contains("temporal")) {
        try {
            m.temporal = temporal_from_name(j.at("temporal").get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config field '") + where + ".temporal': " + e.what());
        }
    }
    read_field(j, "L", m.L);
    read_field(j, "c1", m.c1);
    read_field(j, "c2", m.c2);
    read_field(j, "d_s", m.d_s);
    read_field(j, "d_h", m.d_h);
    read_field(j, "d_z", m.d_z);
    read_field(j, "beta", m.beta);
    read_field(j, "v_scale", m.v_scale);
    return m;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, {"version", "world", "sparsity", "window", "model", "train", "seeds",
                       "out_dir"},
                   "");
    ExperimentConfig cfg;
    if (!j.contains("version")) throw ConfigError("config field 'version' is required");
    read_field(j, "version", cfg.version);
    if (cfg.version != 1) throw ConfigError("config field 'version' must be 1");

    if (j.contains("world")) {
        const auto& w = j.at("world");
        reject_unknown(w, {"grid", "graph", "t_per_day", "step_minutes", "days",
                           "events_per_day", "noise_sigma", "obs_sigma", "n_vehicles", "seed",
                           "v_max"},
                       "world");
        if (w.contains("grid")) {
            reject_unknown(w.at("grid"), {"height", "width", "cell_km"}, "world.grid");
            GridMapSpec g;
            read_field(w.at("grid"), "height", g.height);
            read_field(w.at("grid"), "width", g.width);
            read_field(w.at("grid"), "cell_km", g.cell_km);
            cfg.world.grid = g;
        } else {
            cfg.world.grid.reset();
        }
        if (w.contains("graph")) {
            reject_unknown(w.at("graph"), {"rows", "cols", "block_km"}, "world.graph");
            GraphMapSpec g;
            read_field(w.at("graph"), "rows", g.rows);
            read_field(w.at("graph"), "cols", g.cols);
            read_field(w.at("graph"), "block_km", g.block_km);
            cfg.world.graph = g;
        } else {
            cfg.world.graph.reset();
        }
        read_field(w, "t_per_day", cfg.world.t_per_day);
        read_field(w, "step_minutes", cfg.world.step_minutes);
        read_field(w, "days", cfg.world.days);
        read_field(w, "events_per_day", cfg.world.events_per_day);
        read_field(w, "noise_sigma", cfg.world.noise_sigma);
        read_field(w, "obs_sigma", cfg.world.obs_sigma);
        read_field(w, "n_vehicles", cfg.world.n_vehicles);
        read_field(w, "seed", cfg.world.seed);
        read_field(w, "v_max", cfg.world.v_max);
    }

    read_field(j, "sparsity", cfg.sparsity);
    read_field(j, "window", cfg.window);
    if (j.contains("model")) {
        cfg.model = parse_model_section(j.at("model"), ModelSection{}, "model");
        if (j.at("model").contains("grid"))
            cfg.model_grid = parse_model_section(j.at("model").at("grid"), cfg.model, "model.grid");
        if (j.at("model").contains("graph"))
            cfg.model_graph =
                parse_model_section(j.at("model").at("graph"), cfg.model, "model.graph");
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, {"epochs", "batch", "lr", "stride"}, "train");
        read_field(t, "epochs", cfg.train.epochs);
        read_field(t, "batch", cfg.train.batch);
        read_field(t, "lr", cfg.train.lr);
        read_field(t, "stride", cfg.train.stride);
    }
    read_field(j, "seeds", cfg.seeds);
    read_field(j, "out_dir", cfg.out_dir);
    if (const char* env = std::getenv("SPARSEFLOW_OUT"); env && *env) cfg.out_dir = env;
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("config file not found: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::validate() const {
    if (!world.grid && !world.graph)
        throw ConfigError("config: at least one of world.grid / world.graph is required");
    if (world.grid) {
        if (world.grid->height < 1 || world.grid->width < 1)
            throw ConfigError("config field 'world.grid.height/width' must be >= 1");
        if (world.grid->cell_km <= 0)
            throw ConfigError("config field 'world.grid.cell_km' must be > 0");
    }
    if (world.graph && (world.graph->rows < 2 || world.graph->cols < 2))
        throw ConfigError("config field 'world.graph.rows/cols' must be >= 2");
    if (world.t_per_day < 1) throw ConfigError("config field 'world.t_per_day' must be >= 1");
    if (world.days < 1) throw ConfigError("config field 'world.days' must be >= 1");
    if (world.events_per_day < 0)
        throw ConfigError("config field 'world.events_per_day' must be >= 0");
    if (world.n_vehicles < 0) throw ConfigError("config field 'world.n_vehicles' must be >= 0");
    if (world.step_minutes <= 0) throw ConfigError("config field 'world.step_minutes' must be > 0");
    if (sparsity.empty()) throw ConfigError("config field 'sparsity' must be non-empty");
    for (double p : sparsity)
        if (p <= 0.0 || p > 1.0)
            throw ConfigError("config field 'sparsity' entries must be in (0,1]");
    if (window < 1) throw ConfigError("config field 'window' must be >= 1");
    if (seeds.empty()) throw ConfigError("config field 'seeds' must be non-empty");
    if (train.epochs < 0) throw ConfigError("config field 'train.epochs' must be >= 0");
    if (train.batch < 1) throw ConfigError("config field 'train.batch' must be >= 1");
    if (train.stride < 1) throw ConfigError("config field 'train.stride' must be >= 1");
    if (out_dir.empty()) throw ConfigError("config field 'out_dir' must be non-empty");
}

std::vector<Variant> ExperimentConfig::variants() const {
    std::vector<Variant> v;
    if (world.grid) v.push_back(Variant::GridCnn);
    if (world.graph) v.push_back(Variant::GraphGcn);
    return v;
}

ModelSection ExperimentConfig::model_for(Variant v) const {
    if (v == Variant::GridCnn && model_grid) return *model_grid;
    if (v == Variant::GraphGcn && model_graph) return *model_graph;
    return model;
}

RoadMap ExperimentConfig::build_map(Variant v) const {
    if (v == Variant::GridCnn) {
        if (!world.grid) throw ConfigError("config: no world.grid section for grid variant");
        return build_grid_map(world.grid->height, world.grid->width, world.grid->cell_km);
    }
    if (!world.graph) throw ConfigError("config: no world.graph section for graph variant");
    return build_graph_map(world.graph->rows, world.graph->cols, world.graph->block_km);
}

ModelConfig ExperimentConfig::model_config(Variant v, const RoadMap& map) const {
    ModelSection m = model_for(v);
    ModelConfig mc;
    mc.variant = v;
    mc.temporal = m.temporal;
    mc.L = m.L;
    mc.c1 = m.c1;
    mc.c2 = m.c2;
    mc.d_s = m.d_s;
    mc.d_h = m.d_h;
    mc.d_z = m.d_z;
    mc.beta = m.beta;
    mc.v_scale = m.v_scale;
    if (v == Variant::GridCnn) {
        mc.height = map.height;
        mc.width = map.width;
    } else {
        mc.n_nodes = map.region_count();
    }
    mc.map_digest = map.digest();
    mc.validate();
    return mc;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json w = {{"t_per_day", world.t_per_day},
                        {"step_minutes", world.step_minutes},
                        {"days", world.days},
                        {"events_per_day", world.events_per_day},
                        {"noise_sigma", world.noise_sigma},
                        {"obs_sigma", world.obs_sigma},
                        {"n_vehicles", world.n_vehicles},
                        {"seed", world.seed},
                        {"v_max", world.v_max}};
    if (world.grid)
        w["grid"] = {{"height", world.grid->height},
                     {"width", world.grid->width},
                     {"cell_km", world.grid->cell_km}};
    if (world.graph)
        w["graph"] = {{"rows", world.graph->rows},
                      {"cols", world.graph->cols},
                      {"block_km", world.graph->block_km}};
    auto model_json = [](const ModelSection& m) {
        return nlohmann::json{{"temporal", temporal_name(m.temporal)},
                              {"L", m.L},
                              {"c1", m.c1},
                              {"c2", m.c2},
                              {"d_s", m.d_s},
                              {"d_h", m.d_h},
                              {"d_z", m.d_z},
                              {"beta", m.beta},
                              {"v_scale", m.v_scale}};
    };
    nlohmann::json mj = model_json(model);
    if (model_grid) mj["grid"] = model_json(*model_grid);
    if (model_graph) mj["graph"] = model_json(*model_graph);
    return {{"version", version},
            {"world", w},
            {"sparsity", sparsity},
            {"window", window},
            {"model", mj},
            {"train",
             {{"epochs", train.epochs},
              {"batch", train.batch},
              {"lr", train.lr},
              {"stride", train.stride}}},
            {"seeds", seeds},
            {"out_dir", out_dir}};
}

std::uint32_t ExperimentConfig::digest() const {
    std::string s = to_json().dump();
    std::vector<std::uint8_t> bytes(s.begin(), s.end());
    return crc32_of(bytes);
}

// ---------------------------------------------------------------------------
// Paths, manifests
// ---------------------------------------------------------------------------

std::string format_p(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", p);
    return buf;
}

std::string run_id(Variant v, double p, std::uint64_t seed) {
    return variant_name(v) + "_p" + format_p(p) + "_s" + std::to_string(seed);
}

namespace {

fs::path world_dir(const ExperimentConfig& cfg, Variant v) {
    return fs::path(cfg.out_dir) / variant_name(v) / "world";
}
fs::path sparse_dir(const ExperimentConfig& cfg, Variant v, double p, std::uint64_t seed) {
    return fs::path(cfg.out_dir) / variant_name(v) / "sparse" /
           ("p" + format_p(p) + "_s" + std::to_string(seed));
}
fs::path initial_dir(const ExperimentConfig& cfg, Variant v, double p, std::uint64_t seed) {
    return fs::path(cfg.out_dir) / variant_name(v) / "initial" /
           ("p" + format_p(p) + "_s" + std::to_string(seed));
}
fs::path model_path(const ExperimentConfig& cfg, Variant v, double p, std::uint64_t seed) {
    return fs::path(cfg.out_dir) / variant_name(v) / "models" /
           ("p" + format_p(p) + "_s" + std::to_string(seed) + ".ckpt");
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    nlohmann::json m;
    m["config_digest"] = cfg.digest();
    m["inputs"] = nlohmann::json::object();
    m["outputs"] = nlohmann::json::object();
    for (const auto& p : inputs) m["inputs"][p.filename().string()] = crc32_of_file(p.string());
    for (const auto& p : outputs) m["outputs"][p.filename().string()] = crc32_of_file(p.string());
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << m.dump(2) << "\n";
}

void require_file(const fs::path& p) {
    if (!fs::exists(p)) throw MissingInputError("missing input file: " + p.string());
}

std::vector<std::uint64_t> filter_seeds(const ExperimentConfig& cfg, const RunFilter& f) {
    if (!f.seed) return cfg.seeds;
    return {*f.seed};
}

std::vector<Variant> filter_variants(const ExperimentConfig& cfg, const RunFilter& f) {
    auto vs = cfg.variants();
    if (!f.variant) return vs;
    if (std::find(vs.begin(), vs.end(), *f.variant) == vs.end())
        throw ConfigError("variant '" + variant_name(*f.variant) + "' is not configured");
    return {*f.variant};
}

std::vector<CongestionEvent> day_events(const ExperimentConfig& cfg, const RoadMap& map,
                                        std::uint64_t variant_seed, int day) {
    Rng rng(mix_seed(variant_seed, 200 + static_cast<std::uint64_t>(day)));
    std::vector<CongestionEvent> events;
    int R = map.region_count();
    for (int i = 0; i < cfg.world.events_per_day; ++i) {
        CongestionEvent e;
        e.epicenter = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(R)));
        e.onset = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(
            std::max(1, cfg.world.t_per_day - 30))));
        e.rise = 10 + static_cast<int>(rng.uniform_index(21));
        e.decay = 20 + static_cast<int>(rng.uniform_index(41));
        e.drop_kmh = rng.uniform(15.0, 35.0);
        e.radius_hops = 4;
        events.push_back(e);
    }
    return events;
}

std::uint64_t variant_stream(const ExperimentConfig& cfg, Variant v) {
    return mix_seed(cfg.world.seed, v == Variant::GridCnn ? 0 : 1);
}

WorldParams world_params(const ExperimentConfig& cfg) {
    WorldParams p;
    p.v_max = cfg.world.v_max;
    return p;
}

} // namespace

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& cfg, const RunFilter& filter) {
    for (Variant v : filter_variants(cfg, filter)) {
        RoadMap map = cfg.build_map(v);
        std::uint64_t vseed = variant_stream(cfg, v);
        fs::path dir = world_dir(cfg, v);
        fs::create_directories(dir);
        std::vector<fs::path> outputs;
        for (int day = 0; day < cfg.world.days; ++day) {
            auto events = day_events(cfg, map, vseed, day);
            SpeedField field =
                gen_ideal_field(map, cfg.world.t_per_day, cfg.world.step_minutes, events,
                                cfg.world.noise_sigma, mix_seed(vseed, static_cast<std::uint64_t>(day)),
                                world_params(cfg));
            fs::path fpath = dir / ("day" + std::to_string(day) + ".field");
            save_field(fpath.string(), field);
            outputs.push_back(fpath);

            auto records = simulate_probes(map, field, cfg.world.n_vehicles, cfg.world.obs_sigma,
                                           mix_seed(vseed, 100 + static_cast<std::uint64_t>(day)));
            fs::path ppath = dir / ("day" + std::to_string(day) + ".pvd.csv");
            std::ofstream out(ppath, std::ios::trunc | std::ios::binary);
            serialize_pvd(out, records);
            outputs.push_back(ppath);
        }
        write_manifest(dir, cfg, {}, outputs);
    }
}

void cmd_sparsify(const ExperimentConfig& cfg, const RunFilter& filter) {
    for (Variant v : filter_variants(cfg, filter)) {
        fs::path wdir = world_dir(cfg, v);
        for (double p : cfg.sparsity) {
            for (std::uint64_t seed : filter_seeds(cfg, filter)) {
                fs::path dir = sparse_dir(cfg, v, p, seed);
                fs::create_directories(dir);
                std::vector<fs::path> inputs, outputs;
                for (int day = 0; day < cfg.world.days; ++day) {
                    fs::path src = wdir / ("day" + std::to_string(day) + ".pvd.csv");
                    require_file(src);
                    inputs.push_back(src);
                    std::ifstream in(src, std::ios::binary);
                    auto records = parse_pvd(in);
                    auto kept = sparsify(records, p, mix_seed(seed, static_cast<std::uint64_t>(day)));
                    fs::path dst = dir / ("day" + std::to_string(day) + ".pvd.csv");
                    std::ofstream out(dst, std::ios::trunc | std::ios::binary);
                    serialize_pvd(out, kept);
                    outputs.push_back(dst);
                }
                write_manifest(dir, cfg, inputs, outputs);
            }
        }
    }
}

void cmd_aggregate(const ExperimentConfig& cfg, const RunFilter& filter) {
    for (Variant v : filter_variants(cfg, filter)) {
        RoadMap map = cfg.build_map(v);
        for (double p : cfg.sparsity) {
            for (std::uint64_t seed : filter_seeds(cfg, filter)) {
                fs::path sdir = sparse_dir(cfg, v, p, seed);
                fs::path dir = initial_dir(cfg, v, p, seed);
                fs::create_directories(dir);
                std::vector<fs::path> inputs, outputs;
                for (int day = 0; day < cfg.world.days; ++day) {
                    fs::path src = sdir / ("day" + std::to_string(day) + ".pvd.csv");
                    require_file(src);
                    inputs.push_back(src);
                    std::ifstream in(src, std::ios::binary);
                    auto records = parse_pvd(in);
                    auto result = aggregate(records, map, cfg.world.t_per_day, cfg.window);
                    result.estimate.step_minutes = cfg.world.step_minutes;
                    fs::path dst = dir / ("day" + std::to_string(day) + ".init");
                    save_initial(dst.string(), result.estimate);
                    outputs.push_back(dst);
                }
                write_manifest(dir, cfg, inputs, outputs);
            }
        }
    }
}

namespace {

struct LoadedDays {
    std::vector<SpeedField> fields;
    std::vector<InitialEstimate> initials;
};

LoadedDays load_days(const ExperimentConfig& cfg, Variant v, double p, std::uint64_t seed,
                     int from_day, int to_day) {
    LoadedDays out;
    fs::path wdir = world_dir(cfg, v);
    fs::path idir = initial_dir(cfg, v, p, seed);
    for (int day = from_day; day <= to_day; ++day) {
        fs::path fpath = wdir / ("day" + std::to_string(day) + ".field");
        fs::path ipath = idir / ("day" + std::to_string(day) + ".init");
        require_file(fpath);
        require_file(ipath);
        out.fields.push_back(load_field(fpath.string()));
        out.initials.push_back(load_initial(ipath.string()));
    }
    return out;
}

std::vector<DayView> day_views(const LoadedDays& days) {
    std::vector<DayView> views;
    for (std::size_t i = 0; i < days.fields.size(); ++i)
        views.push_back(DayView{days.initials[i].values.data(), days.initials[i].mask.data(),
                                days.fields[i].values.data(), days.fields[i].T,
                                days.fields[i].R});
    return views;
}

} // namespace

void cmd_train(const ExperimentConfig& cfg, const RunFilter& filter) {
    if (cfg.world.days < 3)
        throw ConfigError("training requires world.days >= 3 (train/validation/test split)");
    for (Variant v : filter_variants(cfg, filter)) {
        RoadMap map = cfg.build_map(v);
        for (double p : cfg.sparsity) {
            for (std::uint64_t seed : filter_seeds(cfg, filter)) {
                ModelConfig mc = cfg.model_config(v, map);
                Model model(mc, mix_seed(seed, 7));
                if (v == Variant::GraphGcn) model.set_adjacency(map.adjacency);

                // days [0, days-3] train, day days-2 validation, day days-1 test
                LoadedDays train_days = load_days(cfg, v, p, seed, 0, cfg.world.days - 3);
                LoadedDays val_days =
                    load_days(cfg, v, p, seed, cfg.world.days - 2, cfg.world.days - 2);
                SeqDataset train_set = make_dataset(day_views(train_days), mc.L, cfg.train.stride);
                SeqDataset val_set = make_dataset(day_views(val_days), mc.L, cfg.train.stride);

                TrainOptions opts;
                opts.epochs = cfg.train.epochs;
                opts.batch = cfg.train.batch;
                opts.lr = cfg.train.lr;
                opts.seed = seed;
                TrainingHistory history = train(model, train_set, opts, &val_set);

                TrainMeta meta;
                meta.epochs = static_cast<int>(history.size());
                meta.seed = seed;
                if (!history.empty()) {
                    meta.final_total = history.back().total;
                    meta.final_recon = history.back().recon;
                    meta.final_kl = history.back().kl;
                }
                fs::path mpath = model_path(cfg, v, p, seed);
                fs::create_directories(mpath.parent_path());
                save_checkpoint(model, mpath.string(), meta);
                write_manifest(mpath.parent_path(), cfg, {}, {mpath});
            }
        }
    }
}

namespace {

void regenerate_report(const std::string& out_dir) {
    fs::path rows_dir = fs::path(out_dir) / "rows";
    std::vector<fs::path> row_files;
    if (fs::exists(rows_dir))
        for (const auto& e : fs::directory_iterator(rows_dir))
            if (e.path().extension() == ".csv") row_files.push_back(e.path());
    std::sort(row_files.begin(), row_files.end());
    std::ofstream out(fs::path(out_dir) / "report.csv", std::ios::trunc | std::ios::binary);
    out << kReportHeader << "\n";
    for (const auto& f : row_files) {
        std::ifstream in(f, std::ios::binary);
        out << in.rdbuf();
    }
}

} // namespace

void cmd_evaluate(const ExperimentConfig& cfg, const RunFilter& filter) {
    if (cfg.world.days < 3)
        throw ConfigError("evaluation requires world.days >= 3 (train/validation/test split)");
    int test_day = cfg.world.days - 1;
    for (Variant v : filter_variants(cfg, filter)) {
        for (double p : cfg.sparsity) {
            for (std::uint64_t seed : filter_seeds(cfg, filter)) {
                fs::path mpath = model_path(cfg, v, p, seed);
                require_file(mpath);
                Model model = load_checkpoint(mpath.string());
                if (model.config().variant != v)
                    throw ConfigError("checkpoint " + mpath.string() +
                                      " has variant '" + variant_name(model.config().variant) +
                                      "', expected '" + variant_name(v) + "'");
                LoadedDays day = load_days(cfg, v, p, seed, test_day, test_day);
                const SpeedField& ideal = day.fields[0];
                const InitialEstimate& initial = day.initials[0];

                SeqDataset test_set = make_dataset(day_views(day), model.config().L, 1);
                int L = model.config().L;
                int R = ideal.R;
                double sse_rec = 0.0, sse_init = 0.0;
                std::size_t n_cells = 0;
                for (std::size_t i = 0; i < test_set.size(); ++i) {
                    auto seq = test_set.seq_at(i);
                    std::vector<float> recovered = model.infer(seq);
                    int t_end = test_set.windows[i].second;
                    for (int r = 0; r < R; ++r) {
                        double iv = ideal.at(t_end, r);
                        double dr = iv - recovered[static_cast<std::size_t>(r)];
                        double di = iv - initial.value_at(t_end, r);
                        sse_rec += dr * dr;
                        sse_init += di * di;
                        ++n_cells;
                    }
                }
                if (n_cells == 0)
                    throw ConfigError("evaluate: test day shorter than sequence length L=" +
                                      std::to_string(L));

                ErrorSummary with_missing = error_distribution(ideal, initial, true);
                ErrorSummary without_missing = error_distribution(ideal, initial, false);

                ReportRow row;
                row.run_id = run_id(v, p, seed);
                row.p = p;
                row.seed = seed;
                row.variant = variant_name(v);
                row.rmse_recovered = std::sqrt(sse_rec / static_cast<double>(n_cells));
                row.rmse_initial = std::sqrt(sse_init / static_cast<double>(n_cells));
                row.coverage = coverage(initial);
                row.skew_with_missing = with_missing.skewness;
                row.skew_without_missing = without_missing.skewness;

                fs::path rows_dir = fs::path(cfg.out_dir) / "rows";
                fs::create_directories(rows_dir);
                std::ofstream out(rows_dir / (row.run_id + ".csv"),
                                  std::ios::trunc | std::ios::binary);
                out << format_report_row(row) << "\n";

                // per-run error histograms for the report stage
                fs::path hist_dir = fs::path(cfg.out_dir) / "hist";
                fs::create_directories(hist_dir);
                std::ofstream hout(hist_dir / (row.run_id + ".csv"),
                                   std::ios::trunc | std::ios::binary);
                hout << "run_id,included,bin_lo,bin_hi,count\n";
                char buf[256];
                for (const ErrorSummary* s : {&with_missing, &without_missing}) {
                    const char* inc = s->with_missing ? "with_missing" : "without_missing";
                    for (std::size_t b = 0; b < s->bin_counts.size(); ++b) {
                        std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%zu\n",
                                      row.run_id.c_str(), inc, s->bin_edges[b],
                                      s->bin_edges[b + 1], s->bin_counts[b]);
                        hout << buf;
                    }
                }
            }
        }
    }
    regenerate_report(cfg.out_dir);
}

void cmd_sweep(const ExperimentConfig& cfg, const RunFilter& filter) {
    cmd_generate(cfg, filter);
    cmd_sparsify(cfg, filter);
    cmd_aggregate(cfg, filter);
    cmd_train(cfg, filter);
    cmd_evaluate(cfg, filter);
    cmd_report(cfg.out_dir);
}

void cmd_report(const std::string& out_dir) {
    fs::path report = fs::path(out_dir) / "report.csv";
    std::vector<ReportRow> rows;
    if (fs::exists(report)) {
        std::ifstream in(report, std::ios::binary);
        std::string line;
        std::getline(in, line); // header
        while (std::getline(in, line))
            if (!line.empty()) rows.push_back(parse_report_row(line));
    }
    if (rows.empty()) throw MissingInputError("no runs found in " + out_dir);

    // group by (variant, p)
    std::map<std::pair<std::string, double>, std::vector<ReportRow>> groups;
    for (const auto& r : rows) groups[{r.variant, r.p}].push_back(r);

    auto quantile = [](std::vector<double> v, double q) {
        std::sort(v.begin(), v.end());
        double pos = q * static_cast<double>(v.size() - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        std::size_t hi = std::min(lo + 1, v.size() - 1);
        double frac = pos - static_cast<double>(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };

    nlohmann::json summary = nlohmann::json::array();
    std::ofstream lines(fs::path(out_dir) / "plot_rmse_vs_p.csv", std::ios::trunc | std::ios::binary);
    lines << "variant,p,mean_rmse_initial,mean_rmse_recovered\n";
    std::ofstream quants(fs::path(out_dir) / "plot_rmse_quantiles.csv",
                         std::ios::trunc | std::ios::binary);
    quants << "variant,p,metric,min,q25,median,q75,max\n";

    char buf[320];
    for (const auto& [key, group] : groups) {
        const auto& [variant, p] = key;
        std::vector<double> init, rec;
        for (const auto& r : group) {
            init.push_back(r.rmse_initial);
            rec.push_back(r.rmse_recovered);
        }
        double mean_init = 0, mean_rec = 0;
        for (double x : init) mean_init += x;
        for (double x : rec) mean_rec += x;
        mean_init /= static_cast<double>(init.size());
        mean_rec /= static_cast<double>(rec.size());

        summary.push_back({{"variant", variant},
                           {"p", p},
                           {"runs", group.size()},
                           {"mean_rmse_initial", mean_init},
                           {"mean_rmse_recovered", mean_rec},
                           {"median_rmse_initial", quantile(init, 0.5)},
                           {"median_rmse_recovered", quantile(rec, 0.5)}});

        std::snprintf(buf, sizeof buf, "%s,%.4f,%.6f,%.6f\n", variant.c_str(), p, mean_init,
                      mean_rec);
        lines << buf;
        const std::pair<const char*, const std::vector<double>*> metrics[] = {
            {"rmse_initial", &init}, {"rmse_recovered", &rec}};
        for (const auto& [metric, values] : metrics) {
            std::snprintf(buf, sizeof buf, "%s,%.4f,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                          variant.c_str(), p, metric, quantile(*values, 0.0),
                          quantile(*values, 0.25), quantile(*values, 0.5),
                          quantile(*values, 0.75), quantile(*values, 1.0));
            quants << buf;
        }
    }

    std::ofstream sj(fs::path(out_dir) / "summary.json", std::ios::trunc | std::ios::binary);
    sj << summary.dump(2) << "\n";

    // merge per-run histograms into one plot file
    fs::path hist_dir = fs::path(out_dir) / "hist";
    std::vector<fs::path> hist_files;
    if (fs::exists(hist_dir))
        for (const auto& e : fs::directory_iterator(hist_dir))
            if (e.path().extension() == ".csv") hist_files.push_back(e.path());
    std::sort(hist_files.begin(), hist_files.end());
    std::ofstream hout(fs::path(out_dir) / "plot_error_hist.csv", std::ios::trunc | std::ios::binary);
    hout << "run_id,included,bin_lo,bin_hi,count\n";
    for (const auto& f : hist_files) {
        std::ifstream in(f, std::ios::binary);
        std::string line;
        std::getline(in, line); // header
        while (std::getline(in, line))
            if (!line.empty()) hout << line << "\n";
    }
}

} // namespace sparseflow
