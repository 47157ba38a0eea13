#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sparseflow/rng.hpp"
#include "sparseflow/tensor.hpp"

namespace sparseflow::nn {

// ---------------------------------------------------------------------------
// Parameter store and optimizer
// ---------------------------------------------------------------------------

template <typename T>
struct ParamEntry {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> m;
    TensorT<T> v;
};

template <typename T>
class ParamStoreT {
public:
    TensorT<T>& add(const std::string& name, std::vector<std::size_t> shape) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.push_back(ParamEntry<T>{name, TensorT<T>(shape), TensorT<T>(shape),
                                         TensorT<T>(shape), TensorT<T>(shape)});
        return entries_.back().value;
    }

    ParamEntry<T>& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return entries_[it->second];
    }
    const ParamEntry<T>& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return entries_[it->second];
    }

    TensorT<T>& value(const std::string& name) { return entry(name).value; }
    const TensorT<T>& value(const std::string& name) const { return entry(name).value; }
    TensorT<T>& grad(const std::string& name) { return entry(name).grad; }

    std::size_t count() const { return entries_.size(); }
    ParamEntry<T>& entry_at(std::size_t i) { return entries_[i]; }
    const ParamEntry<T>& entry_at(std::size_t i) const { return entries_[i]; }

    void zero_grad() {
        for (auto& e : entries_) e.grad.fill(T{0});
    }

    long step_count() const { return step_; }
    void set_step_count(long s) { step_ = s; }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    template <typename U>
    ParamStoreT<U> cast() const {
        ParamStoreT<U> out;
        for (const auto& e : entries_) {
            out.add(e.name, e.value.shape);
            out.value(e.name) = e.value.template cast<U>();
        }
        out.set_step_count(step_);
        return out;
    }

private:
    std::vector<ParamEntry<T>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    long step_ = 0;
};

using ParamStore = ParamStoreT<float>;

// Adam with bias correction; zeroes gradients after applying the step.
template <typename T>
void adam_step(ParamStoreT<T>& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
    long t = store.step_count() + 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < store.count(); ++i) {
        auto& e = store.entry_at(i);
        for (std::size_t j = 0; j < e.value.size(); ++j) {
            double g = static_cast<double>(e.grad[j]);
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient in parameter " + e.name);
            double m = beta1 * static_cast<double>(e.m[j]) + (1.0 - beta1) * g;
            double v = beta2 * static_cast<double>(e.v[j]) + (1.0 - beta2) * g * g;
            e.m[j] = static_cast<T>(m);
            e.v[j] = static_cast<T>(v);
            double mhat = m / bc1;
            double vhat = v / bc2;
            e.value[j] = static_cast<T>(static_cast<double>(e.value[j]) -
                                        lr * mhat / (std::sqrt(vhat) + eps));
        }
        e.grad.fill(T{0});
    }
    store.set_step_count(t);
}

// Scaled uniform init: U(+-sqrt(6/(fan_in+fan_out)))
template <typename T>
void init_uniform_scaled(TensorT<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& x : w.data) x = static_cast<T>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// Elementwise and dense layers
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    return y;
}

// grad wrt pre-activation; `pre` is the input that was fed to relu
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& pre, const TensorT<T>& grad_out) {
    TensorT<T> g(pre.shape);
    for (std::size_t i = 0; i < pre.size(); ++i) g[i] = pre[i] > T{0} ? grad_out[i] : T{0};
    return g;
}

// Y = X(B x in) * W^T + b, W is (out x in)
template <typename T>
TensorT<T> affine(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    std::size_t bsz = x.shape[0], din = x.shape[1];
    std::size_t dout = w.shape[0];
    if (w.shape[1] != din) throw std::invalid_argument("affine: weight/input dim mismatch");
    if (b.size() != dout) throw std::invalid_argument("affine: bias dim mismatch");
    TensorT<T> y({bsz, dout});
    matmul_bt(x.data.data(), w.data.data(), y.data.data(), bsz, din, dout);
    for (std::size_t i = 0; i < bsz; ++i)
        for (std::size_t j = 0; j < dout; ++j) y.at2(i, j) += b[j];
    return y;
}

template <typename T>
TensorT<T> affine_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& grad_y,
                           TensorT<T>& grad_w, TensorT<T>& grad_b) {
    std::size_t bsz = x.shape[0], din = x.shape[1], dout = w.shape[0];
    // gW += gY^T * X
    matmul_at_acc(grad_y.data.data(), x.data.data(), grad_w.data.data(), bsz, dout, din);
    for (std::size_t i = 0; i < bsz; ++i)
        for (std::size_t j = 0; j < dout; ++j) grad_b[j] += grad_y.at2(i, j);
    TensorT<T> gx({bsz, din});
    matmul(grad_y.data.data(), w.data.data(), gx.data.data(), bsz, dout, din);
    return gx;
}

// ---------------------------------------------------------------------------
// Convolution stack (3x3, stride 1, pad 1 only)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernels, const TensorT<T>& bias) {
    std::size_t cin = input.shape[0], h = input.shape[1], w = input.shape[2];
    std::size_t cout = kernels.shape[0];
    if (kernels.shape[1] != cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (kernels.shape[2] != 3 || kernels.shape[3] != 3)
        throw std::invalid_argument("conv2d: kernel must be 3x3");
    if (bias.size() != cout) throw std::invalid_argument("conv2d: bias mismatch");
    TensorT<T> out({cout, h, w});
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* k = &kernels.data[(co * cin + ci) * 9];
            const T* in = &input.data[ci * h * w];
            T* o = &out.data[co * h * w];
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    T acc{0};
                    for (int dy = -1; dy <= 1; ++dy) {
                        std::size_t yy = y + static_cast<std::size_t>(dy);
                        if (yy >= h) continue; // wraps for negative: zero pad
                        for (int dx = -1; dx <= 1; ++dx) {
                            std::size_t xx = x + static_cast<std::size_t>(dx);
                            if (xx >= w) continue;
                            acc += k[(dy + 1) * 3 + (dx + 1)] * in[yy * w + xx];
                        }
                    }
                    o[y * w + x] += acc;
                }
            }
        }
        T b = bias[co];
        T* o = &out.data[co * h * w];
        for (std::size_t i = 0; i < h * w; ++i) o[i] += b;
    }
    return out;
}

template <typename T>
TensorT<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernels,
                           const TensorT<T>& grad_out, TensorT<T>& grad_kernels,
                           TensorT<T>& grad_bias) {
    std::size_t cin = input.shape[0], h = input.shape[1], w = input.shape[2];
    std::size_t cout = kernels.shape[0];
    TensorT<T> grad_in({cin, h, w});
    for (std::size_t co = 0; co < cout; ++co) {
        const T* g = &grad_out.data[co * h * w];
        T b{0};
        for (std::size_t i = 0; i < h * w; ++i) b += g[i];
        grad_bias[co] += b;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* k = &kernels.data[(co * cin + ci) * 9];
            T* gk = &grad_kernels.data[(co * cin + ci) * 9];
            const T* in = &input.data[ci * h * w];
            T* gi = &grad_in.data[ci * h * w];
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    T gv = g[y * w + x];
                    if (gv == T{0}) continue;
                    for (int dy = -1; dy <= 1; ++dy) {
                        std::size_t yy = y + static_cast<std::size_t>(dy);
                        if (yy >= h) continue;
                        for (int dx = -1; dx <= 1; ++dx) {
                            std::size_t xx = x + static_cast<std::size_t>(dx);
                            if (xx >= w) continue;
                            gk[(dy + 1) * 3 + (dx + 1)] += gv * in[yy * w + xx];
                            gi[yy * w + xx] += gv * k[(dy + 1) * 3 + (dx + 1)];
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

// 2x2 non-overlapping mean pool; H, W must be even
template <typename T>
TensorT<T> avgpool2(const TensorT<T>& input) {
    std::size_t c = input.shape[0], h = input.shape[1], w = input.shape[2];
    if (h % 2 || w % 2) throw std::invalid_argument("avgpool2: extents must be even");
    TensorT<T> out({c, h / 2, w / 2});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x) {
                T s = input.at3(ci, 2 * y, 2 * x) + input.at3(ci, 2 * y, 2 * x + 1) +
                      input.at3(ci, 2 * y + 1, 2 * x) + input.at3(ci, 2 * y + 1, 2 * x + 1);
                out.at3(ci, y, x) = s / T{4};
            }
    return out;
}

template <typename T>
TensorT<T> avgpool2_backward(const std::vector<std::size_t>& in_shape, const TensorT<T>& grad_out) {
    TensorT<T> gi(in_shape);
    std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x) {
                T g = grad_out.at3(ci, y, x) / T{4};
                gi.at3(ci, 2 * y, 2 * x) += g;
                gi.at3(ci, 2 * y, 2 * x + 1) += g;
                gi.at3(ci, 2 * y + 1, 2 * x) += g;
                gi.at3(ci, 2 * y + 1, 2 * x + 1) += g;
            }
    return gi;
}

// Nearest-neighbor x2 upsampling (decoder path)
template <typename T>
TensorT<T> upsample2(const TensorT<T>& input) {
    std::size_t c = input.shape[0], h = input.shape[1], w = input.shape[2];
    TensorT<T> out({c, 2 * h, 2 * w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                T v = input.at3(ci, y, x);
                out.at3(ci, 2 * y, 2 * x) = v;
                out.at3(ci, 2 * y, 2 * x + 1) = v;
                out.at3(ci, 2 * y + 1, 2 * x) = v;
                out.at3(ci, 2 * y + 1, 2 * x + 1) = v;
            }
    return out;
}

template <typename T>
TensorT<T> upsample2_backward(const std::vector<std::size_t>& in_shape, const TensorT<T>& grad_out) {
    TensorT<T> gi(in_shape);
    std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                gi.at3(ci, y, x) = grad_out.at3(ci, 2 * y, 2 * x) +
                                   grad_out.at3(ci, 2 * y, 2 * x + 1) +
                                   grad_out.at3(ci, 2 * y + 1, 2 * x) +
                                   grad_out.at3(ci, 2 * y + 1, 2 * x + 1);
    return gi;
}

// ---------------------------------------------------------------------------
// Graph convolution
// ---------------------------------------------------------------------------

// Symmetric normalized adjacency in CSR form
template <typename T>
struct SparseAdjT {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;
    std::vector<std::size_t> col;
    std::vector<T> val;
};

// D^(-1/2) (A + I) D^(-1/2) from an undirected adjacency list
template <typename T>
SparseAdjT<T> normalized_adjacency(const std::vector<std::vector<int>>& adj) {
    std::size_t n = adj.size();
    std::vector<double> deg(n);
    for (std::size_t i = 0; i < n; ++i) deg[i] = static_cast<double>(adj[i].size()) + 1.0;
    SparseAdjT<T> out;
    out.n = n;
    out.row_ptr.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<int> nbrs(adj[i]);
        nbrs.push_back(static_cast<int>(i));
        std::sort(nbrs.begin(), nbrs.end());
        for (int j : nbrs) {
            out.col.push_back(static_cast<std::size_t>(j));
            out.val.push_back(static_cast<T>(1.0 / std::sqrt(deg[i] * deg[static_cast<std::size_t>(j)])));
        }
        out.row_ptr[i + 1] = out.col.size();
    }
    return out;
}

// Y = A * X, A sparse (n x n), X (n x f)
template <typename T>
TensorT<T> spmm(const SparseAdjT<T>& a, const TensorT<T>& x) {
    std::size_t f = x.shape[1];
    TensorT<T> y({a.n, f});
    for (std::size_t i = 0; i < a.n; ++i) {
        T* yrow = &y.data[i * f];
        for (std::size_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
            T av = a.val[p];
            const T* xrow = &x.data[a.col[p] * f];
            for (std::size_t j = 0; j < f; ++j) yrow[j] += av * xrow[j];
        }
    }
    return y;
}

template <typename T>
struct GcnCache {
    TensorT<T> ax;  // A * X
    TensorT<T> pre; // A * X * W before activation
};

// out = ReLU(A_hat X W) (or linear when apply_relu is false)
template <typename T>
TensorT<T> gcn_layer(const TensorT<T>& x, const SparseAdjT<T>& a, const TensorT<T>& w,
                     bool apply_relu, GcnCache<T>* cache = nullptr) {
    if (x.shape[0] != a.n) throw std::invalid_argument("gcn_layer: node count mismatch");
    if (w.shape[0] != x.shape[1]) throw std::invalid_argument("gcn_layer: feature dim mismatch");
    TensorT<T> ax = spmm(a, x);
    TensorT<T> pre({a.n, w.shape[1]});
    matmul(ax.data.data(), w.data.data(), pre.data.data(), a.n, w.shape[0], w.shape[1]);
    TensorT<T> out = apply_relu ? relu(pre) : pre;
    if (cache) {
        cache->ax = std::move(ax);
        cache->pre = std::move(pre);
    }
    return out;
}

// A_hat is symmetric, so grad_X = A_hat (g W^T)
template <typename T>
TensorT<T> gcn_backward(const SparseAdjT<T>& a, const TensorT<T>& w, const GcnCache<T>& cache,
                        const TensorT<T>& grad_out, bool applied_relu, TensorT<T>& grad_w) {
    TensorT<T> g = applied_relu ? relu_backward(cache.pre, grad_out) : grad_out;
    // gW += (A X)^T g
    matmul_at_acc(cache.ax.data.data(), g.data.data(), grad_w.data.data(), a.n, w.shape[0],
                  w.shape[1]);
    TensorT<T> gwt({a.n, w.shape[0]});
    matmul_bt(g.data.data(), w.data.data(), gwt.data.data(), a.n, w.shape[1], w.shape[0]);
    return spmm(a, gwt);
}

// ---------------------------------------------------------------------------
// GRU cell with backprop through time
// ---------------------------------------------------------------------------

template <typename T>
struct GruWeights {
    // W*: (d_h x d_in), U*: (d_h x d_h), b*: (d_h)
    const TensorT<T>*Wz, *Uz, *bz, *Wr, *Ur, *br, *Wh, *Uh, *bh;
};

template <typename T>
struct GruGrads {
    TensorT<T>*Wz, *Uz, *bz, *Wr, *Ur, *br, *Wh, *Uh, *bh;
};

template <typename T>
struct GruStepCache {
    TensorT<T> x, h_prev, z, r, hcand;
};

template <typename T>
inline T sigmoid(T x) {
    return T{1} / (T{1} + std::exp(-x));
}

// One step over a batch of B rows
template <typename T>
TensorT<T> gru_step(const TensorT<T>& x, const TensorT<T>& h_prev, const GruWeights<T>& w,
                    GruStepCache<T>* cache = nullptr) {
    std::size_t bsz = x.shape[0];
    std::size_t dh = w.Wz->shape[0];
    if (w.Wz->shape[1] != x.shape[1]) throw std::invalid_argument("gru_step: input dim mismatch");
    if (h_prev.shape[1] != dh) throw std::invalid_argument("gru_step: hidden dim mismatch");

    auto gate = [&](const TensorT<T>& W, const TensorT<T>& U, const TensorT<T>& b,
                    const TensorT<T>& hin) {
        TensorT<T> a({bsz, dh});
        matmul_bt(x.data.data(), W.data.data(), a.data.data(), bsz, x.shape[1], dh);
        TensorT<T> uh({bsz, dh});
        matmul_bt(hin.data.data(), U.data.data(), uh.data.data(), bsz, dh, dh);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += uh[i] + b[i % dh];
        return a;
    };

    TensorT<T> z = gate(*w.Wz, *w.Uz, *w.bz, h_prev);
    TensorT<T> r = gate(*w.Wr, *w.Ur, *w.br, h_prev);
    for (auto& v : z.data) v = sigmoid(v);
    for (auto& v : r.data) v = sigmoid(v);

    TensorT<T> rh({bsz, dh});
    for (std::size_t i = 0; i < rh.size(); ++i) rh[i] = r[i] * h_prev[i];
    TensorT<T> hc = gate(*w.Wh, *w.Uh, *w.bh, rh);
    for (auto& v : hc.data) v = std::tanh(v);

    TensorT<T> h({bsz, dh});
    for (std::size_t i = 0; i < h.size(); ++i)
        h[i] = (T{1} - z[i]) * h_prev[i] + z[i] * hc[i];

    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->z = std::move(z);
        cache->r = std::move(r);
        cache->hcand = std::move(hc);
    }
    return h;
}

// Backward for one step: consumes dL/dh_t, returns (grad_x, grad_h_prev),
// accumulates weight gradients.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> gru_step_backward(const GruStepCache<T>& c,
                                                    const GruWeights<T>& w, GruGrads<T>& g,
                                                    const TensorT<T>& grad_h) {
    std::size_t bsz = c.x.shape[0];
    std::size_t din = c.x.shape[1];
    std::size_t dh = c.z.shape[1];

    TensorT<T> da_z({bsz, dh}), da_r({bsz, dh}), da_h({bsz, dh});
    TensorT<T> grad_h_prev({bsz, dh});

    TensorT<T> drh({bsz, dh});
    for (std::size_t i = 0; i < grad_h.size(); ++i) {
        T dh_i = grad_h[i];
        T z = c.z[i], hc = c.hcand[i], hp = c.h_prev[i];
        T dz = dh_i * (hc - hp);
        T dhc = dh_i * z;
        grad_h_prev[i] = dh_i * (T{1} - z);
        da_z[i] = dz * z * (T{1} - z);
        da_h[i] = dhc * (T{1} - hc * hc);
    }
    // d(r .* h_prev) = da_h * Uh
    matmul(da_h.data.data(), w.Uh->data.data(), drh.data.data(), bsz, dh, dh);
    for (std::size_t i = 0; i < drh.size(); ++i) {
        T r = c.r[i], hp = c.h_prev[i];
        grad_h_prev[i] += drh[i] * r;
        T dr = drh[i] * hp;
        da_r[i] = dr * r * (T{1} - r);
    }

    // weight grads
    matmul_at_acc(da_z.data.data(), c.x.data.data(), g.Wz->data.data(), bsz, dh, din);
    matmul_at_acc(da_r.data.data(), c.x.data.data(), g.Wr->data.data(), bsz, dh, din);
    matmul_at_acc(da_h.data.data(), c.x.data.data(), g.Wh->data.data(), bsz, dh, din);
    matmul_at_acc(da_z.data.data(), c.h_prev.data.data(), g.Uz->data.data(), bsz, dh, dh);
    matmul_at_acc(da_r.data.data(), c.h_prev.data.data(), g.Ur->data.data(), bsz, dh, dh);
    TensorT<T> rh({bsz, dh});
    for (std::size_t i = 0; i < rh.size(); ++i) rh[i] = c.r[i] * c.h_prev[i];
    matmul_at_acc(da_h.data.data(), rh.data.data(), g.Uh->data.data(), bsz, dh, dh);
    for (std::size_t i = 0; i < bsz; ++i)
        for (std::size_t j = 0; j < dh; ++j) {
            (*g.bz)[j] += da_z.at2(i, j);
            (*g.br)[j] += da_r.at2(i, j);
            (*g.bh)[j] += da_h.at2(i, j);
        }

    // input grad and remaining h_prev grad
    TensorT<T> gx({bsz, din}), tmp({bsz, din});
    matmul(da_z.data.data(), w.Wz->data.data(), gx.data.data(), bsz, dh, din);
    matmul(da_r.data.data(), w.Wr->data.data(), tmp.data.data(), bsz, dh, din);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    matmul(da_h.data.data(), w.Wh->data.data(), tmp.data.data(), bsz, dh, din);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];

    TensorT<T> hp_extra({bsz, dh});
    matmul(da_z.data.data(), w.Uz->data.data(), hp_extra.data.data(), bsz, dh, dh);
    for (std::size_t i = 0; i < grad_h_prev.size(); ++i) grad_h_prev[i] += hp_extra[i];
    matmul(da_r.data.data(), w.Ur->data.data(), hp_extra.data.data(), bsz, dh, dh);
    for (std::size_t i = 0; i < grad_h_prev.size(); ++i) grad_h_prev[i] += hp_extra[i];

    return {std::move(gx), std::move(grad_h_prev)};
}

// ---------------------------------------------------------------------------
// Single-head self-attention
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionCache {
    TensorT<T> x, q, k, v, p; // p: row-softmax of scores
};

template <typename T>
TensorT<T> self_attention(const TensorT<T>& x, const TensorT<T>& wq, const TensorT<T>& wk,
                          const TensorT<T>& wv, AttentionCache<T>* cache = nullptr) {
    std::size_t L = x.shape[0], d = x.shape[1];
    if (wq.shape != std::vector<std::size_t>{d, d} || wk.shape != wq.shape || wv.shape != wq.shape)
        throw std::invalid_argument("self_attention: weights must be d x d");
    TensorT<T> q({L, d}), k({L, d}), v({L, d});
    matmul(x.data.data(), wq.data.data(), q.data.data(), L, d, d);
    matmul(x.data.data(), wk.data.data(), k.data.data(), L, d, d);
    matmul(x.data.data(), wv.data.data(), v.data.data(), L, d, d);

    T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    TensorT<T> s({L, L});
    matmul_bt(q.data.data(), k.data.data(), s.data.data(), L, d, L);
    for (auto& e : s.data) e *= scale;

    TensorT<T> p({L, L});
    for (std::size_t i = 0; i < L; ++i) {
        T mx = s.at2(i, 0);
        for (std::size_t j = 1; j < L; ++j) mx = std::max(mx, s.at2(i, j));
        T sum{0};
        for (std::size_t j = 0; j < L; ++j) {
            T e = std::exp(s.at2(i, j) - mx);
            p.at2(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < L; ++j) p.at2(i, j) /= sum;
    }

    TensorT<T> out({L, d});
    matmul(p.data.data(), v.data.data(), out.data.data(), L, L, d);
    if (cache) {
        cache->x = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->p = std::move(p);
    }
    return out;
}

template <typename T>
TensorT<T> self_attention_backward(const AttentionCache<T>& c, const TensorT<T>& wq,
                                   const TensorT<T>& wk, const TensorT<T>& wv,
                                   const TensorT<T>& grad_out, TensorT<T>& grad_wq,
                                   TensorT<T>& grad_wk, TensorT<T>& grad_wv) {
    std::size_t L = c.x.shape[0], d = c.x.shape[1];
    T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    // dV = P^T gOut, dP = gOut V^T
    TensorT<T> dv({L, d});
    matmul_at_acc(c.p.data.data(), grad_out.data.data(), dv.data.data(), L, L, d);
    TensorT<T> dp({L, L});
    matmul_bt(grad_out.data.data(), c.v.data.data(), dp.data.data(), L, d, L);

    // softmax backward per row
    TensorT<T> ds({L, L});
    for (std::size_t i = 0; i < L; ++i) {
        T dot{0};
        for (std::size_t j = 0; j < L; ++j) dot += dp.at2(i, j) * c.p.at2(i, j);
        for (std::size_t j = 0; j < L; ++j)
            ds.at2(i, j) = c.p.at2(i, j) * (dp.at2(i, j) - dot) * scale;
    }

    TensorT<T> dq({L, d}), dk({L, d});
    matmul(ds.data.data(), c.k.data.data(), dq.data.data(), L, L, d);
    matmul_at_acc(ds.data.data(), c.q.data.data(), dk.data.data(), L, L, d);

    // weight grads and input grad
    matmul_at_acc(c.x.data.data(), dq.data.data(), grad_wq.data.data(), L, d, d);
    matmul_at_acc(c.x.data.data(), dk.data.data(), grad_wk.data.data(), L, d, d);
    matmul_at_acc(c.x.data.data(), dv.data.data(), grad_wv.data.data(), L, d, d);

    TensorT<T> gx({L, d}), tmp({L, d});
    matmul_bt(dq.data.data(), wq.data.data(), gx.data.data(), L, d, d);
    matmul_bt(dk.data.data(), wk.data.data(), tmp.data.data(), L, d, d);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    matmul_bt(dv.data.data(), wv.data.data(), tmp.data.data(), L, d, d);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    return gx;
}

// ---------------------------------------------------------------------------
// Losses, KL, reparameterization
// ---------------------------------------------------------------------------

template <typename T>
double mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

template <typename T>
TensorT<T> mse_loss_backward(const TensorT<T>& pred, const TensorT<T>& target, double upstream = 1.0) {
    TensorT<T> g(pred.shape);
    double s = 2.0 * upstream / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        g[i] = static_cast<T>(s * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
    return g;
}

// KL(N(mu, exp(logvar)) || N(0, I)) = 0.5 * sum(exp(lv) + mu^2 - 1 - lv)
template <typename T>
double gaussian_kl(const TensorT<T>& mu, const TensorT<T>& logvar) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double m = mu[i], lv = logvar[i];
        acc += std::exp(lv) + m * m - 1.0 - lv;
    }
    return 0.5 * acc;
}

template <typename T>
void gaussian_kl_backward(const TensorT<T>& mu, const TensorT<T>& logvar, double upstream,
                          TensorT<T>& grad_mu, TensorT<T>& grad_logvar) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
        grad_mu[i] += static_cast<T>(upstream * static_cast<double>(mu[i]));
        grad_logvar[i] += static_cast<T>(upstream * 0.5 * (std::exp(static_cast<double>(logvar[i])) - 1.0));
    }
}

// z = mu + exp(0.5*logvar) .* eps
template <typename T>
TensorT<T> reparameterize(const TensorT<T>& mu, const TensorT<T>& logvar, const TensorT<T>& eps) {
    TensorT<T> z(mu.shape);
    for (std::size_t i = 0; i < mu.size(); ++i)
        z[i] = mu[i] + std::exp(logvar[i] / T{2}) * eps[i];
    return z;
}

template <typename T>
TensorT<T> draw_eps(std::vector<std::size_t> shape, Rng& rng) {
    TensorT<T> eps(std::move(shape));
    for (auto& e : eps.data) e = static_cast<T>(rng.normal());
    return eps;
}

// gradient flows to mu and logvar only
template <typename T>
void reparameterize_backward(const TensorT<T>& logvar, const TensorT<T>& eps,
                             const TensorT<T>& grad_z, TensorT<T>& grad_mu,
                             TensorT<T>& grad_logvar) {
    for (std::size_t i = 0; i < logvar.size(); ++i) {
        grad_mu[i] += grad_z[i];
        grad_logvar[i] += grad_z[i] * eps[i] * std::exp(logvar[i] / T{2}) / T{2};
    }
}

} // namespace sparseflow::nn
