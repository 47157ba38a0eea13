#pragma once

// Template implementation for ModelT; included from model.hpp.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sparseflow {

// ---------------------------------------------------------------------------
// Caches
// ---------------------------------------------------------------------------

template <typename T>
struct ModelT<T>::FrameCache {
    // grid path
    TensorT<T> x, a1, p1, a2, flat;
    // graph path
    TensorT<T> xg, h1;
    nn::GcnCache<T> g1, g2;
};

template <typename T>
struct ModelT<T>::Workspace {
    std::vector<FrameCache> frames;
    std::vector<TensorT<T>> embs;
    std::vector<nn::GruStepCache<T>> gru_caches;
    std::vector<nn::AttentionCache<T>> attn_caches;
    TensorT<T> c, cbar;
    TensorT<T> mu, logvar, eps, z;
    TensorT<T> zc;
    TensorT<T> fc3;               // grid decoder seed map (c2 x H/4 x W/4)
    TensorT<T> up1, a3, up2, a4;  // grid decoder
    TensorT<T> dech1;             // graph decoder hidden pre-activation
    TensorT<T> pred;              // normalized output (1 x R)
    TensorT<T> target_norm;       // (1 x R)
    LossParts loss;
};

template <typename T>
typename ModelT<T>::Workspace ModelT<T>::make_workspace() const {
    return Workspace{};
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

template <typename T>
ModelT<T>::ModelT(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_params(init_seed);
}

template <typename T>
void ModelT<T>::build_params(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5f1ec0de));
    auto s = [](int a) { return static_cast<std::size_t>(a); };
    auto add_w = [&](const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                     std::size_t fan_out) {
        nn::init_uniform_scaled(params_.add(name, std::move(shape)), fan_in, fan_out, rng);
    };
    auto add_b = [&](const std::string& name, std::size_t n) {
        params_.add(name, {n});
    };

    int di = cfg_.spatial_out_dim();
    if (cfg_.variant == Variant::GridCnn) {
        add_w("enc.conv1.k", {s(cfg_.c1), 2, 3, 3}, 2 * 9, s(cfg_.c1) * 9);
        add_b("enc.conv1.b", s(cfg_.c1));
        add_w("enc.conv2.k", {s(cfg_.c2), s(cfg_.c1), 3, 3}, s(cfg_.c1) * 9, s(cfg_.c2) * 9);
        add_b("enc.conv2.b", s(cfg_.c2));
        std::size_t flat = s(cfg_.spatial_flat_dim());
        add_w("enc.fc.w", {s(cfg_.d_s), flat}, flat, s(cfg_.d_s));
        add_b("enc.fc.b", s(cfg_.d_s));
    } else {
        add_w("enc.gcn1.w", {2, s(cfg_.c1)}, 2, s(cfg_.c1));
        add_w("enc.gcn2.w", {s(cfg_.c1), s(cfg_.c2)}, s(cfg_.c1), s(cfg_.c2));
    }

    if (cfg_.temporal == Temporal::Gru) {
        for (const char* g : {"z", "r", "h"}) {
            add_w("enc.gru.w" + std::string(g), {s(cfg_.d_h), s(di)}, s(di), s(cfg_.d_h));
            add_w("enc.gru.u" + std::string(g), {s(cfg_.d_h), s(cfg_.d_h)}, s(cfg_.d_h), s(cfg_.d_h));
            add_b("enc.gru.b" + std::string(g), s(cfg_.d_h));
        }
    } else {
        for (const char* w : {"wq", "wk", "wv"})
            add_w("enc.attn." + std::string(w), {s(di), s(di)}, s(di), s(di));
    }

    std::size_t cd = s(cfg_.c_dim());
    add_w("head.mu.w", {s(cfg_.d_z), cd}, cd, s(cfg_.d_z));
    add_b("head.mu.b", s(cfg_.d_z));
    add_w("head.logvar.w", {s(cfg_.d_z), cd}, cd, s(cfg_.d_z));
    add_b("head.logvar.b", s(cfg_.d_z));

    std::size_t zc_dim = s(cfg_.d_z) + cd;
    if (cfg_.variant == Variant::GridCnn) {
        std::size_t flat = s(cfg_.spatial_flat_dim());
        add_w("dec.fc.w", {flat, zc_dim}, zc_dim, flat);
        add_b("dec.fc.b", flat);
        add_w("dec.conv1.k", {s(cfg_.c1), s(cfg_.c2), 3, 3}, s(cfg_.c2) * 9, s(cfg_.c1) * 9);
        add_b("dec.conv1.b", s(cfg_.c1));
        add_w("dec.conv2.k", {1, s(cfg_.c1), 3, 3}, s(cfg_.c1) * 9, 9);
        add_b("dec.conv2.b", 1);
    } else {
        add_w("dec.fc1.w", {s(cfg_.d_s), zc_dim}, zc_dim, s(cfg_.d_s));
        add_b("dec.fc1.b", s(cfg_.d_s));
        add_w("dec.fc2.w", {1, s(cfg_.d_s)}, s(cfg_.d_s), 1);
        add_b("dec.fc2.b", 1);
    }
}

template <typename T>
void ModelT<T>::set_adjacency(std::vector<std::vector<int>> adj) {
    if (cfg_.variant != Variant::GraphGcn)
        throw std::invalid_argument("set_adjacency: grid model has no graph");
    if (static_cast<int>(adj.size()) != cfg_.n_nodes)
        throw std::invalid_argument("set_adjacency: node count mismatch");
    adjacency_ = std::move(adj);
    ahat_ = nn::normalized_adjacency<T>(adjacency_);
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> ModelT<T>::frame_input(const Frame& f) const {
    int R = cfg_.region_count();
    if (static_cast<int>(f.values.size()) != R || static_cast<int>(f.mask.size()) != R)
        throw std::invalid_argument("frame shape mismatch");
    if (cfg_.variant == Variant::GridCnn) {
        TensorT<T> x({2, static_cast<std::size_t>(cfg_.height), static_cast<std::size_t>(cfg_.width)});
        for (int i = 0; i < R; ++i) {
            x.data[i] = static_cast<T>(f.values[i] / cfg_.v_scale);
            x.data[R + i] = static_cast<T>(f.mask[i]);
        }
        return x;
    }
    TensorT<T> x({static_cast<std::size_t>(cfg_.n_nodes), 2});
    for (int i = 0; i < R; ++i) {
        x.at2(i, 0) = static_cast<T>(f.values[i] / cfg_.v_scale);
        x.at2(i, 1) = static_cast<T>(f.mask[i]);
    }
    return x;
}

template <typename T>
TensorT<T> ModelT<T>::spatial_forward(const Frame& f, FrameCache* cache) const {
    if (cfg_.variant == Variant::GridCnn) {
        TensorT<T> x = frame_input(f);
        TensorT<T> a1 = nn::conv2d(x, params_.value("enc.conv1.k"), params_.value("enc.conv1.b"));
        TensorT<T> p1 = nn::avgpool2(nn::relu(a1));
        TensorT<T> a2 = nn::conv2d(p1, params_.value("enc.conv2.k"), params_.value("enc.conv2.b"));
        TensorT<T> p2 = nn::avgpool2(nn::relu(a2));
        TensorT<T> flat({1, p2.size()});
        flat.data = p2.data;
        TensorT<T> emb = nn::affine(flat, params_.value("enc.fc.w"), params_.value("enc.fc.b"));
        if (cache) {
            cache->x = std::move(x);
            cache->a1 = std::move(a1);
            cache->p1 = std::move(p1);
            cache->a2 = std::move(a2);
            cache->flat = std::move(flat);
        }
        return emb;
    }
    if (ahat_.n == 0) throw std::runtime_error("graph model: adjacency not set");
    TensorT<T> xg = frame_input(f);
    nn::GcnCache<T> g1, g2;
    TensorT<T> h1 = nn::gcn_layer(xg, ahat_, params_.value("enc.gcn1.w"), true, &g1);
    TensorT<T> x2 = nn::gcn_layer(h1, ahat_, params_.value("enc.gcn2.w"), false, &g2);
    if (cache) {
        cache->xg = std::move(xg);
        cache->h1 = std::move(h1);
        cache->g1 = std::move(g1);
        cache->g2 = std::move(g2);
    }
    return x2;
}

namespace detail {

template <typename T>
TensorT<T> mean_rows(const TensorT<T>& x) {
    TensorT<T> out({1, x.shape[1]});
    for (std::size_t i = 0; i < x.shape[0]; ++i)
        for (std::size_t j = 0; j < x.shape[1]; ++j) out[j] += x.at2(i, j);
    T inv = T{1} / static_cast<T>(x.shape[0]);
    for (auto& v : out.data) v *= inv;
    return out;
}

} // namespace detail

template <typename T>
void ModelT<T>::encode_internal(const std::vector<const Frame*>& seq, Workspace& ws) const {
    if (static_cast<int>(seq.size()) != cfg_.L)
        throw std::invalid_argument("encode: sequence length must equal L");

    std::size_t L = seq.size();
    ws.frames.resize(L);
    ws.embs.resize(L);
    for (std::size_t t = 0; t < L; ++t)
        ws.embs[t] = spatial_forward(*seq[t], &ws.frames[t]);

    std::size_t bsz = ws.embs[0].shape[0]; // 1 for grid, N for graph
    std::size_t di = ws.embs[0].shape[1];

    if (cfg_.temporal == Temporal::Gru) {
        nn::GruWeights<T> w{&params_.value("enc.gru.wz"), &params_.value("enc.gru.uz"),
                            &params_.value("enc.gru.bz"), &params_.value("enc.gru.wr"),
                            &params_.value("enc.gru.ur"), &params_.value("enc.gru.br"),
                            &params_.value("enc.gru.wh"), &params_.value("enc.gru.uh"),
                            &params_.value("enc.gru.bh")};
        ws.gru_caches.resize(L);
        TensorT<T> h({bsz, static_cast<std::size_t>(cfg_.d_h)});
        for (std::size_t t = 0; t < L; ++t)
            h = nn::gru_step(ws.embs[t], h, w, &ws.gru_caches[t]);
        ws.c = std::move(h);
    } else {
        const auto& wq = params_.value("enc.attn.wq");
        const auto& wk = params_.value("enc.attn.wk");
        const auto& wv = params_.value("enc.attn.wv");
        ws.attn_caches.resize(bsz);
        ws.c = TensorT<T>({bsz, di});
        TensorT<T> xn({L, di});
        for (std::size_t n = 0; n < bsz; ++n) {
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j < di; ++j) xn.at2(t, j) = ws.embs[t].at2(n, j);
            TensorT<T> out = nn::self_attention(xn, wq, wk, wv, &ws.attn_caches[n]);
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j < di; ++j) ws.c.at2(n, j) += out.at2(t, j);
        }
        T inv = T{1} / static_cast<T>(L);
        for (auto& v : ws.c.data) v *= inv;
    }

    ws.cbar = ws.c.shape[0] == 1 ? ws.c : detail::mean_rows(ws.c);
    ws.mu = nn::affine(ws.cbar, params_.value("head.mu.w"), params_.value("head.mu.b"));
    ws.logvar = nn::affine(ws.cbar, params_.value("head.logvar.w"), params_.value("head.logvar.b"));
}

template <typename T>
typename ModelT<T>::EncodeOut ModelT<T>::encode(const std::vector<const Frame*>& seq) const {
    Workspace ws;
    encode_internal(seq, ws);
    return EncodeOut{std::move(ws.c), std::move(ws.mu), std::move(ws.logvar)};
}

namespace detail {

// rows of [z | c_row]
template <typename T>
TensorT<T> concat_zc(const TensorT<T>& z, const TensorT<T>& c) {
    std::size_t rows = c.shape[0], dz = z.shape[1], dc = c.shape[1];
    TensorT<T> out({rows, dz + dc});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < dz; ++j) out.at2(i, j) = z[j];
        for (std::size_t j = 0; j < dc; ++j) out.at2(i, dz + j) = c.at2(i, j);
    }
    return out;
}

} // namespace detail

// normalized (pre v_scale) decoder output as a (1 x R) tensor
template <typename T>
TensorT<T> decode_forward_impl(const nn::ParamStoreT<T>& params, const ModelConfig& cfg,
                               const TensorT<T>& z, const TensorT<T>& c,
                               typename ModelT<T>::Workspace& ws) {
    ws.zc = detail::concat_zc(z, c);
    if (cfg.variant == Variant::GridCnn) {
        TensorT<T> fcflat = nn::affine(ws.zc, params.value("dec.fc.w"), params.value("dec.fc.b"));
        ws.fc3 = TensorT<T>({static_cast<std::size_t>(cfg.c2), static_cast<std::size_t>(cfg.height / 4),
                             static_cast<std::size_t>(cfg.width / 4)});
        ws.fc3.data = fcflat.data;
        ws.up1 = nn::upsample2(ws.fc3);
        ws.a3 = nn::conv2d(ws.up1, params.value("dec.conv1.k"), params.value("dec.conv1.b"));
        ws.up2 = nn::upsample2(nn::relu(ws.a3));
        ws.a4 = nn::conv2d(ws.up2, params.value("dec.conv2.k"), params.value("dec.conv2.b"));
        TensorT<T> pred({1, ws.a4.size()});
        pred.data = ws.a4.data;
        return pred;
    }
    ws.dech1 = nn::affine(ws.zc, params.value("dec.fc1.w"), params.value("dec.fc1.b"));
    TensorT<T> out = nn::affine(nn::relu(ws.dech1), params.value("dec.fc2.w"), params.value("dec.fc2.b"));
    TensorT<T> pred({1, out.size()});
    pred.data = out.data;
    return pred;
}

template <typename T>
std::vector<float> ModelT<T>::decode(const TensorT<T>& z, const TensorT<T>& c) const {
    Workspace ws;
    TensorT<T> pred = decode_forward_impl<T>(params_, cfg_, z, c, ws);
    std::vector<float> out(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        out[i] = static_cast<float>(static_cast<double>(pred[i]) * cfg_.v_scale);
    return out;
}

template <typename T>
std::vector<float> ModelT<T>::infer(const std::vector<const Frame*>& seq) const {
    EncodeOut enc = encode(seq);
    std::vector<float> y = decode(enc.mu, enc.c);
    for (auto& v : y) v = std::clamp(v, 0.0f, static_cast<float>(cfg_.v_scale));
    return y;
}

template <typename T>
typename ModelT<T>::LossParts ModelT<T>::loss_forward(const std::vector<const Frame*>& seq,
                                                      const std::vector<float>& ideal,
                                                      const TensorT<T>& eps, Workspace& ws) const {
    int R = cfg_.region_count();
    if (static_cast<int>(ideal.size()) != R)
        throw std::invalid_argument("loss_forward: target frame shape mismatch");
    encode_internal(seq, ws);
    ws.eps = eps;
    ws.z = nn::reparameterize(ws.mu, ws.logvar, eps);
    ws.pred = decode_forward_impl<T>(params_, cfg_, ws.z, ws.c, ws);

    ws.target_norm = TensorT<T>({1, static_cast<std::size_t>(R)});
    for (int i = 0; i < R; ++i)
        ws.target_norm[static_cast<std::size_t>(i)] = static_cast<T>(ideal[i] / cfg_.v_scale);

    double recon = nn::mse_loss(ws.pred, ws.target_norm);
    double kl = nn::gaussian_kl(ws.mu, ws.logvar) / cfg_.d_z;
    ws.loss = model_loss<T>(recon, kl, cfg_.beta);
    return ws.loss;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <typename T>
void ModelT<T>::loss_backward(Workspace& ws) {
    auto s = [](int a) { return static_cast<std::size_t>(a); };
    std::size_t dz = s(cfg_.d_z);
    std::size_t cd = s(cfg_.c_dim());

    TensorT<T> g_pred = nn::mse_loss_backward(ws.pred, ws.target_norm);

    TensorT<T> g_zc;
    if (cfg_.variant == Variant::GridCnn) {
        TensorT<T> g_a4(ws.a4.shape);
        g_a4.data = g_pred.data;
        TensorT<T> g_up2 = nn::conv2d_backward(ws.up2, params_.value("dec.conv2.k"), g_a4,
                                               params_.grad("dec.conv2.k"), params_.grad("dec.conv2.b"));
        TensorT<T> g_r3 = nn::upsample2_backward(ws.a3.shape, g_up2);
        TensorT<T> g_a3 = nn::relu_backward(ws.a3, g_r3);
        TensorT<T> g_up1 = nn::conv2d_backward(ws.up1, params_.value("dec.conv1.k"), g_a3,
                                               params_.grad("dec.conv1.k"), params_.grad("dec.conv1.b"));
        TensorT<T> g_fc3 = nn::upsample2_backward(ws.fc3.shape, g_up1);
        TensorT<T> g_fcflat({1, g_fc3.size()});
        g_fcflat.data = g_fc3.data;
        g_zc = nn::affine_backward(ws.zc, params_.value("dec.fc.w"), g_fcflat,
                                   params_.grad("dec.fc.w"), params_.grad("dec.fc.b"));
    } else {
        TensorT<T> g_out(ws.dech1.shape);
        {
            TensorT<T> g_o({ws.zc.shape[0], 1});
            g_o.data = g_pred.data;
            TensorT<T> r = nn::relu(ws.dech1);
            TensorT<T> g_r = nn::affine_backward(r, params_.value("dec.fc2.w"), g_o,
                                                 params_.grad("dec.fc2.w"), params_.grad("dec.fc2.b"));
            g_out = nn::relu_backward(ws.dech1, g_r);
        }
        g_zc = nn::affine_backward(ws.zc, params_.value("dec.fc1.w"), g_out,
                                   params_.grad("dec.fc1.w"), params_.grad("dec.fc1.b"));
    }

    // split [z | c]; z is shared across rows
    std::size_t rows = g_zc.shape[0];
    TensorT<T> g_z({1, dz});
    TensorT<T> g_c({rows, cd});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < dz; ++j) g_z[j] += g_zc.at2(i, j);
        for (std::size_t j = 0; j < cd; ++j) g_c.at2(i, j) = g_zc.at2(i, dz + j);
    }

    TensorT<T> g_mu({1, dz}), g_logvar({1, dz});
    nn::gaussian_kl_backward(ws.mu, ws.logvar, cfg_.beta / cfg_.d_z, g_mu, g_logvar);
    nn::reparameterize_backward(ws.logvar, ws.eps, g_z, g_mu, g_logvar);

    TensorT<T> g_cbar = nn::affine_backward(ws.cbar, params_.value("head.mu.w"), g_mu,
                                            params_.grad("head.mu.w"), params_.grad("head.mu.b"));
    {
        TensorT<T> g2 = nn::affine_backward(ws.cbar, params_.value("head.logvar.w"), g_logvar,
                                            params_.grad("head.logvar.w"), params_.grad("head.logvar.b"));
        for (std::size_t i = 0; i < g_cbar.size(); ++i) g_cbar[i] += g2[i];
    }
    if (rows == 1) {
        for (std::size_t i = 0; i < g_c.size(); ++i) g_c[i] += g_cbar[i];
    } else {
        T inv = T{1} / static_cast<T>(rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cd; ++j) g_c.at2(i, j) += g_cbar[j] * inv;
    }

    // temporal backward -> per-frame embedding gradients
    std::size_t L = ws.embs.size();
    std::vector<TensorT<T>> g_embs(L);
    if (cfg_.temporal == Temporal::Gru) {
        nn::GruWeights<T> w{&params_.value("enc.gru.wz"), &params_.value("enc.gru.uz"),
                            &params_.value("enc.gru.bz"), &params_.value("enc.gru.wr"),
                            &params_.value("enc.gru.ur"), &params_.value("enc.gru.br"),
                            &params_.value("enc.gru.wh"), &params_.value("enc.gru.uh"),
                            &params_.value("enc.gru.bh")};
        nn::GruGrads<T> g{&params_.grad("enc.gru.wz"), &params_.grad("enc.gru.uz"),
                          &params_.grad("enc.gru.bz"), &params_.grad("enc.gru.wr"),
                          &params_.grad("enc.gru.ur"), &params_.grad("enc.gru.br"),
                          &params_.grad("enc.gru.wh"), &params_.grad("enc.gru.uh"),
                          &params_.grad("enc.gru.bh")};
        TensorT<T> grad_h = g_c;
        for (std::size_t t = L; t-- > 0;) {
            auto [gx, gh] = nn::gru_step_backward(ws.gru_caches[t], w, g, grad_h);
            g_embs[t] = std::move(gx);
            grad_h = std::move(gh);
        }
    } else {
        std::size_t di = ws.embs[0].shape[1];
        std::size_t bsz = ws.embs[0].shape[0];
        for (std::size_t t = 0; t < L; ++t) g_embs[t] = TensorT<T>({bsz, di});
        T inv = T{1} / static_cast<T>(L);
        TensorT<T> g_out({L, di});
        for (std::size_t n = 0; n < bsz; ++n) {
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j < di; ++j) g_out.at2(t, j) = g_c.at2(n, j) * inv;
            TensorT<T> g_xn = nn::self_attention_backward(
                ws.attn_caches[n], params_.value("enc.attn.wq"), params_.value("enc.attn.wk"),
                params_.value("enc.attn.wv"), g_out, params_.grad("enc.attn.wq"),
                params_.grad("enc.attn.wk"), params_.grad("enc.attn.wv"));
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j < di; ++j) g_embs[t].at2(n, j) = g_xn.at2(t, j);
        }
    }

    // spatial backward per frame
    for (std::size_t t = 0; t < L; ++t) {
        FrameCache& fc = ws.frames[t];
        if (cfg_.variant == Variant::GridCnn) {
            TensorT<T> g_flat = nn::affine_backward(fc.flat, params_.value("enc.fc.w"), g_embs[t],
                                                    params_.grad("enc.fc.w"), params_.grad("enc.fc.b"));
            TensorT<T> g_p2({s(cfg_.c2), s(cfg_.height / 4), s(cfg_.width / 4)});
            g_p2.data = g_flat.data;
            TensorT<T> g_r2 = nn::avgpool2_backward(fc.a2.shape, g_p2);
            TensorT<T> g_a2 = nn::relu_backward(fc.a2, g_r2);
            TensorT<T> g_p1 = nn::conv2d_backward(fc.p1, params_.value("enc.conv2.k"), g_a2,
                                                  params_.grad("enc.conv2.k"), params_.grad("enc.conv2.b"));
            TensorT<T> g_r1 = nn::avgpool2_backward(fc.a1.shape, g_p1);
            TensorT<T> g_a1 = nn::relu_backward(fc.a1, g_r1);
            nn::conv2d_backward(fc.x, params_.value("enc.conv1.k"), g_a1,
                                params_.grad("enc.conv1.k"), params_.grad("enc.conv1.b"));
        } else {
            TensorT<T> g_h1 = nn::gcn_backward(ahat_, params_.value("enc.gcn2.w"), fc.g2, g_embs[t],
                                               false, params_.grad("enc.gcn2.w"));
            nn::gcn_backward(ahat_, params_.value("enc.gcn1.w"), fc.g1, g_h1, true,
                             params_.grad("enc.gcn1.w"));
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset and training loop
// ---------------------------------------------------------------------------

inline std::vector<const Frame*> SeqDataset::seq_at(std::size_t i) const {
    auto [day, t_end] = windows[i];
    std::vector<const Frame*> seq;
    seq.reserve(static_cast<std::size_t>(L));
    for (int t = t_end - L + 1; t <= t_end; ++t)
        seq.push_back(&day_frames[static_cast<std::size_t>(day)][static_cast<std::size_t>(t)]);
    return seq;
}

inline const std::vector<float>& SeqDataset::target_at(std::size_t i) const {
    auto [day, t_end] = windows[i];
    return day_targets[static_cast<std::size_t>(day)][static_cast<std::size_t>(t_end)];
}

inline SeqDataset make_dataset(const std::vector<DayView>& days, int L, int stride) {
    if (L < 1) throw std::invalid_argument("make_dataset: L must be >= 1");
    if (stride < 1) throw std::invalid_argument("make_dataset: stride must be >= 1");
    SeqDataset ds;
    ds.L = L;
    for (int d = 0; d < static_cast<int>(days.size()); ++d) {
        const DayView& day = days[static_cast<std::size_t>(d)];
        ds.R = day.R;
        std::vector<Frame> frames(static_cast<std::size_t>(day.T));
        std::vector<std::vector<float>> targets(static_cast<std::size_t>(day.T));
        for (int t = 0; t < day.T; ++t) {
            const float* v = day.init_values + static_cast<std::size_t>(t) * day.R;
            const float* m = day.init_mask + static_cast<std::size_t>(t) * day.R;
            const float* iv = day.ideal_values + static_cast<std::size_t>(t) * day.R;
            frames[static_cast<std::size_t>(t)].values.assign(v, v + day.R);
            frames[static_cast<std::size_t>(t)].mask.assign(m, m + day.R);
            targets[static_cast<std::size_t>(t)].assign(iv, iv + day.R);
        }
        ds.day_frames.push_back(std::move(frames));
        ds.day_targets.push_back(std::move(targets));
        for (int t_end = L - 1; t_end < day.T; t_end += stride) ds.windows.push_back({d, t_end});
    }
    return ds;
}

template <typename T>
double evaluate_loss(ModelT<T>& model, const SeqDataset& dataset) {
    TensorT<T> eps0({1, static_cast<std::size_t>(model.config().d_z)});
    double acc = 0.0;
    auto ws = model.make_workspace();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto seq = dataset.seq_at(i);
        acc += model.loss_forward(seq, dataset.target_at(i), eps0, ws).total;
    }
    return acc / static_cast<double>(dataset.size());
}

template <typename T>
TrainingHistory train(ModelT<T>& model, const SeqDataset& dataset, const TrainOptions& opts,
                      const SeqDataset* validation) {
    if (dataset.size() == 0) throw std::invalid_argument("train: empty dataset");
    TrainingHistory history;
    if (opts.epochs == 0) return history;

    // One fixed noise draw per sample, reused across epochs: the objective
    // stays stationary, so epoch losses descend instead of jittering.
    Rng eps_rng(mix_seed(opts.seed, 0xe95));
    std::size_t dz = static_cast<std::size_t>(model.config().d_z);
    std::vector<TensorT<T>> sample_eps;
    sample_eps.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i)
        sample_eps.push_back(nn::draw_eps<T>({1, dz}, eps_rng));

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<TensorT<T>> best_params;

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto ws = model.make_workspace();
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        // Fisher-Yates with the epoch-specific stream
        Rng shuffle_rng(mix_seed(opts.seed, static_cast<std::uint64_t>(epoch) + 1));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

        EpochStats stats;
        std::size_t done = 0;
        while (done < order.size()) {
            std::size_t bsz = std::min(static_cast<std::size_t>(opts.batch), order.size() - done);
            for (std::size_t b = 0; b < bsz; ++b) {
                std::size_t idx = order[done + b];
                auto seq = dataset.seq_at(idx);
                auto parts = model.loss_forward(seq, dataset.target_at(idx), sample_eps[idx], ws);
                if (!std::isfinite(parts.total))
                    throw std::runtime_error("train: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", batch " +
                                             std::to_string(done / opts.batch));
                stats.total += parts.total;
                stats.recon += parts.recon;
                stats.kl += parts.kl;
                model.loss_backward(ws);
            }
            // mean gradient over the mini-batch
            T inv = static_cast<T>(1.0 / static_cast<double>(bsz));
            auto& store = model.params();
            for (std::size_t i = 0; i < store.count(); ++i)
                for (auto& g : store.entry_at(i).grad.data) g *= inv;
            nn::adam_step(store, opts.lr);
            done += bsz;
        }
        double n = static_cast<double>(order.size());
        stats.total /= n;
        stats.recon /= n;
        stats.kl /= n;

        if (validation) {
            stats.val_total = evaluate_loss(model, *validation);
            if (stats.val_total < best_val) {
                best_val = stats.val_total;
                best_params.clear();
                for (std::size_t i = 0; i < model.params().count(); ++i)
                    best_params.push_back(model.params().entry_at(i).value);
            }
        }
        history.push_back(stats);
    }

    if (validation && !best_params.empty())
        for (std::size_t i = 0; i < model.params().count(); ++i)
            model.params().entry_at(i).value = best_params[i];
    return history;
}

} // namespace sparseflow
