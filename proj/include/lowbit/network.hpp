#pragma once

// Minimal feed-forward stack: fully-connected, conv2d, relu, max-pool and a
// softmax cross-entropy head. Enough to train the reference MLP and CNN; no
// autograd, the backward pass is written out per layer kind.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowbit/errors.hpp"
#include "lowbit/rng.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

enum class LayerKind { fully_connected, conv2d, relu, max_pool2d, softmax_cross_entropy };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int in_features = 0, out_features = 0;          // fully_connected
    int in_channels = 0, out_channels = 0;          // conv2d
    int kernel = 0, stride = 1, pad = 0;            // conv2d / max_pool2d (kernel+stride)
    bool has_bias = true;

    static LayerSpec fc(int in, int out, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::fully_connected;
        s.in_features = in;
        s.out_features = out;
        s.has_bias = bias;
        return s;
    }
    static LayerSpec conv(int ic, int oc, int k, int stride = 1, int pad = 0, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in_channels = ic;
        s.out_channels = oc;
        s.kernel = k;
        s.stride = stride;
        s.pad = pad;
        s.has_bias = bias;
        return s;
    }
    static LayerSpec relu() {
        LayerSpec s;
        s.kind = LayerKind::relu;
        return s;
    }
    static LayerSpec max_pool(int k, int stride) {
        LayerSpec s;
        s.kind = LayerKind::max_pool2d;
        s.kernel = k;
        s.stride = stride;
        return s;
    }
    static LayerSpec softmax_ce() {
        LayerSpec s;
        s.kind = LayerKind::softmax_cross_entropy;
        return s;
    }

    bool parameterized() const {
        return kind == LayerKind::fully_connected || kind == LayerKind::conv2d;
    }

    std::vector<int> weight_shape() const {
        if (kind == LayerKind::fully_connected) return {out_features, in_features};
        if (kind == LayerKind::conv2d) return {out_channels, in_channels, kernel, kernel};
        return {};
    }

    int fan_in() const {
        if (kind == LayerKind::fully_connected) return in_features;
        if (kind == LayerKind::conv2d) return in_channels * kernel * kernel;
        return 0;
    }
};

struct Network {
    std::vector<LayerSpec> layers;
    std::vector<Tensor> weights;  // one per parameterized layer, in layer order
    std::vector<Tensor> biases;   // matching; zero-size tensor when has_bias is false

    // 784-256-10 classifier over flattened images.
    static Network mlp() {
        Network n;
        n.layers = {LayerSpec::fc(784, 256), LayerSpec::relu(), LayerSpec::fc(256, 10),
                    LayerSpec::softmax_ce()};
        n.allocate();
        return n;
    }

    // conv5x5x16 / pool / conv5x5x32 / pool / fc, valid padding: 28-24-12-8-4.
    static Network cnn() {
        Network n;
        n.layers = {LayerSpec::conv(1, 16, 5),  LayerSpec::relu(), LayerSpec::max_pool(2, 2),
                    LayerSpec::conv(16, 32, 5), LayerSpec::relu(), LayerSpec::max_pool(2, 2),
                    LayerSpec::fc(512, 10),     LayerSpec::softmax_ce()};
        n.allocate();
        return n;
    }

    static Network from_specs(std::vector<LayerSpec> specs) {
        Network n;
        n.layers = std::move(specs);
        n.allocate();
        return n;
    }

    void allocate() {
        weights.clear();
        biases.clear();
        for (const LayerSpec& l : layers) {
            if (!l.parameterized()) continue;
            weights.emplace_back(l.weight_shape());
            biases.emplace_back(l.has_bias
                                    ? Tensor({l.kind == LayerKind::fully_connected
                                                  ? l.out_features
                                                  : l.out_channels})
                                    : Tensor());
        }
    }

    int weight_layer_count() const { return static_cast<int>(weights.size()); }

    // "conv0", "conv1", "fc0", ... numbered per kind in network order.
    std::vector<std::string> weight_layer_names() const {
        std::vector<std::string> names;
        int fc = 0, conv = 0;
        for (const LayerSpec& l : layers) {
            if (l.kind == LayerKind::fully_connected)
                names.push_back("fc" + std::to_string(fc++));
            else if (l.kind == LayerKind::conv2d)
                names.push_back("conv" + std::to_string(conv++));
        }
        return names;
    }

    // He-normal weights, zero biases. Draw order is layer order, row-major.
    void init_weights(Rng& rng) {
        std::size_t wi = 0;
        for (const LayerSpec& l : layers) {
            if (!l.parameterized()) continue;
            const double stddev = std::sqrt(2.0 / static_cast<double>(l.fan_in()));
            for (double& x : weights[wi].values()) x = stddev * rng.next_normal();
            for (double& x : biases[wi].values()) x = 0.0;
            ++wi;
        }
    }
};

struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    static Gradients zeros_like(const Network& net) {
        Gradients g;
        for (const Tensor& w : net.weights) g.weights.emplace_back(w.shape());
        for (const Tensor& b : net.biases) g.biases.emplace_back(b.shape());
        return g;
    }
};

namespace detail {

inline std::size_t spatial_size(const Tensor& t) {
    std::size_t n = 1;
    for (int i = 1; i < t.rank(); ++i) n *= static_cast<std::size_t>(t.dim(i));
    return n;
}

inline Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int n = x.dim(0);
    const int in = static_cast<int>(spatial_size(x));
    const int out = w.dim(0);
    if (in != w.dim(1))
        throw ShapeError("fully_connected: input size " + std::to_string(in) +
                         " does not match weights " + w.shape_string());
    Tensor y({n, out});
    for (int i = 0; i < n; ++i) {
        const double* xr = x.data() + static_cast<std::size_t>(i) * in;
        double* yr = y.data() + static_cast<std::size_t>(i) * out;
        for (int o = 0; o < out; ++o)
            yr[o] = dot_n(xr, w.data() + static_cast<std::size_t>(o) * in,
                          static_cast<std::size_t>(in)) +
                    (b.size() ? b[static_cast<std::size_t>(o)] : 0.0);
    }
    return y;
}

struct SoftmaxOut {
    Tensor probs;
    double loss = 0;
};

inline SoftmaxOut softmax_ce_forward(const Tensor& z, const std::vector<int>& labels) {
    const int n = z.dim(0), c = z.dim(1);
    if (static_cast<std::size_t>(n) != labels.size())
        throw ShapeError("softmax_cross_entropy: batch/label count mismatch");
    SoftmaxOut out;
    out.probs = Tensor({n, c});
    double loss = 0;
    for (int i = 0; i < n; ++i) {
        const double* zr = z.data() + static_cast<std::size_t>(i) * c;
        double* pr = out.probs.data() + static_cast<std::size_t>(i) * c;
        double zmax = zr[0];
        for (int j = 1; j < c; ++j) zmax = std::max(zmax, zr[j]);
        double denom = 0;
        for (int j = 0; j < c; ++j) {
            pr[j] = std::exp(zr[j] - zmax);
            denom += pr[j];
        }
        for (int j = 0; j < c; ++j) pr[j] /= denom;
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw ShapeError("label out of range");
        loss -= std::log(pr[y]);
    }
    out.loss = loss / n;
    return out;
}

struct Trace {
    std::vector<Tensor> acts;                  // acts[0] = input, acts[i] = layer i output
    std::vector<std::vector<std::int32_t>> pool_argmax;  // per layer; empty unless max_pool2d
    Tensor probs;
    double loss = 0;
};

inline Trace run_forward(const Network& net, const Tensor& batch, const std::vector<int>* labels,
                         bool need_logits_only = false) {
    Trace tr;
    tr.acts.reserve(net.layers.size() + 1);
    tr.acts.push_back(batch);
    tr.pool_argmax.resize(net.layers.size());
    std::size_t wi = 0;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        const Tensor& x = tr.acts.back();
        switch (l.kind) {
            case LayerKind::fully_connected: {
                tr.acts.push_back(fc_forward(x, net.weights[wi], net.biases[wi]));
                ++wi;
                break;
            }
            case LayerKind::conv2d: {
                Tensor y = conv2d(x, net.weights[wi], l.stride, l.pad);
                if (net.biases[wi].size()) {
                    const int n = y.dim(0), c = y.dim(1);
                    const std::size_t plane = static_cast<std::size_t>(y.dim(2)) * y.dim(3);
                    for (int b = 0; b < n; ++b)
                        for (int ch = 0; ch < c; ++ch) {
                            double* p = y.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
                            const double bv = net.biases[wi][static_cast<std::size_t>(ch)];
                            for (std::size_t k = 0; k < plane; ++k) p[k] += bv;
                        }
                }
                tr.acts.push_back(std::move(y));
                ++wi;
                break;
            }
            case LayerKind::relu: {
                Tensor y = x;
                for (double& v : y.values())
                    if (v < 0) v = 0;
                tr.acts.push_back(std::move(y));
                break;
            }
            case LayerKind::max_pool2d: {
                if (x.rank() != 4) throw ShapeError("max_pool2d: expects rank-4 input");
                const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
                const int k = l.kernel, s = l.stride;
                const int oh = (h - k) / s + 1, ow = (w - k) / s + 1;
                if (oh <= 0 || ow <= 0) throw ShapeError("max_pool2d: window larger than input");
                Tensor y({n, c, oh, ow});
                auto& arg = tr.pool_argmax[li];
                arg.resize(y.size());
                std::size_t oi = 0;
                for (int b = 0; b < n; ++b)
                    for (int ch = 0; ch < c; ++ch) {
                        const double* plane =
                            x.data() + (static_cast<std::size_t>(b) * c + ch) *
                                           static_cast<std::size_t>(h) * w;
                        const std::size_t plane_off =
                            (static_cast<std::size_t>(b) * c + ch) * static_cast<std::size_t>(h) *
                            w;
                        for (int y0 = 0; y0 < oh; ++y0)
                            for (int x0 = 0; x0 < ow; ++x0) {
                                double best = plane[static_cast<std::size_t>(y0 * s) * w + x0 * s];
                                std::size_t bidx = static_cast<std::size_t>(y0 * s) * w + x0 * s;
                                for (int dy = 0; dy < k; ++dy)
                                    for (int dx = 0; dx < k; ++dx) {
                                        const std::size_t idx =
                                            static_cast<std::size_t>(y0 * s + dy) * w + x0 * s +
                                            dx;
                                        if (plane[idx] > best) {
                                            best = plane[idx];
                                            bidx = idx;
                                        }
                                    }
                                y[oi] = best;
                                arg[oi] = static_cast<std::int32_t>(plane_off + bidx);
                                ++oi;
                            }
                    }
                tr.acts.push_back(std::move(y));
                break;
            }
            case LayerKind::softmax_cross_entropy: {
                if (need_logits_only) return tr;
                if (!labels) throw ShapeError("softmax_cross_entropy: labels required");
                Tensor z = x;
                if (z.rank() != 2) z = Tensor({z.dim(0), static_cast<int>(spatial_size(z))},
                                              z.values());
                SoftmaxOut so = softmax_ce_forward(z, *labels);
                tr.probs = std::move(so.probs);
                tr.loss = so.loss;
                break;
            }
        }
    }
    return tr;
}

} // namespace detail

inline Tensor logits(const Network& net, const Tensor& batch) {
    detail::Trace tr = detail::run_forward(net, batch, nullptr, /*need_logits_only=*/true);
    Tensor z = tr.acts.back();
    if (z.rank() != 2)
        z = Tensor({z.dim(0), static_cast<int>(detail::spatial_size(z))}, z.values());
    return z;
}

inline double forward(const Network& net, const Tensor& batch, const std::vector<int>& labels) {
    return detail::run_forward(net, batch, &labels).loss;
}

// Fills `grads` (resized and overwritten) and returns the batch loss.
inline double backward(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                       Gradients& grads) {
    detail::Trace tr = detail::run_forward(net, batch, &labels);
    grads = Gradients::zeros_like(net);

    const int n = batch.dim(0);
    // d(loss)/d(logits) for mean-reduced cross entropy.
    Tensor delta = tr.probs;
    for (int i = 0; i < n; ++i)
        delta.at(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    for (double& v : delta.values()) v /= n;

    std::size_t wi = net.weights.size();
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& l = net.layers[li];
        const Tensor& x = tr.acts[li];
        switch (l.kind) {
            case LayerKind::softmax_cross_entropy:
                break;  // delta already holds d/d logits
            case LayerKind::fully_connected: {
                --wi;
                const int in = static_cast<int>(detail::spatial_size(x));
                const int out = l.out_features;
                Tensor& dw = grads.weights[wi];
                Tensor& db = grads.biases[wi];
                Tensor dx(x.shape());
                for (int i = 0; i < n; ++i) {
                    const double* xr = x.data() + static_cast<std::size_t>(i) * in;
                    const double* dr = delta.data() + static_cast<std::size_t>(i) * out;
                    double* dxr = dx.data() + static_cast<std::size_t>(i) * in;
                    for (int o = 0; o < out; ++o) {
                        const double d = dr[o];
                        if (db.size()) db[static_cast<std::size_t>(o)] += d;
                        detail::axpy_n(dw.data() + static_cast<std::size_t>(o) * in, d, xr,
                                       static_cast<std::size_t>(in));
                        detail::axpy_n(dxr, d,
                                       net.weights[wi].data() + static_cast<std::size_t>(o) * in,
                                       static_cast<std::size_t>(in));
                    }
                }
                delta = std::move(dx);
                break;
            }
            case LayerKind::conv2d: {
                --wi;
                const Tensor& w = net.weights[wi];
                const int ic = l.in_channels, oc = l.out_channels, k = l.kernel;
                const int s = l.stride, p = l.pad;
                const int h = x.dim(2), wd = x.dim(3);
                const int oh = delta.dim(2), ow = delta.dim(3);
                Tensor dx(x.shape());
                Tensor& dw = grads.weights[wi];
                Tensor& db = grads.biases[wi];
                const std::size_t in_cs = static_cast<std::size_t>(h) * wd;
                const std::size_t ker_cs = static_cast<std::size_t>(k) * k;
                for (int b = 0; b < n; ++b)
                    for (int co = 0; co < oc; ++co) {
                        const double* dplane =
                            delta.data() + (static_cast<std::size_t>(b) * oc + co) *
                                               static_cast<std::size_t>(oh) * ow;
                        for (int y = 0; y < oh; ++y)
                            for (int x0 = 0; x0 < ow; ++x0) {
                                const double d = dplane[static_cast<std::size_t>(y) * ow + x0];
                                if (db.size()) db[static_cast<std::size_t>(co)] += d;
                                if (d == 0) continue;
                                const int iy0 = y * s - p, ix0 = x0 * s - p;
                                for (int ci = 0; ci < ic; ++ci) {
                                    const double* iplane =
                                        x.data() + (static_cast<std::size_t>(b) * ic + ci) * in_cs;
                                    double* dxp =
                                        dx.data() + (static_cast<std::size_t>(b) * ic + ci) * in_cs;
                                    const std::size_t koff =
                                        (static_cast<std::size_t>(co) * ic + ci) * ker_cs;
                                    for (int ky = 0; ky < k; ++ky) {
                                        const int iy = iy0 + ky;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int kx = 0; kx < k; ++kx) {
                                            const int ix = ix0 + kx;
                                            if (ix < 0 || ix >= wd) continue;
                                            const std::size_t ii =
                                                static_cast<std::size_t>(iy) * wd + ix;
                                            dw[koff + static_cast<std::size_t>(ky) * k + kx] +=
                                                d * iplane[ii];
                                            dxp[ii] +=
                                                d * w[koff + static_cast<std::size_t>(ky) * k + kx];
                                        }
                                    }
                                }
                            }
                    }
                delta = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                const Tensor& y = tr.acts[li + 1];
                Tensor dx(delta.shape(), delta.values());
                for (std::size_t i = 0; i < dx.size(); ++i)
                    if (y[i] <= 0) dx[i] = 0;
                delta = std::move(dx);
                break;
            }
            case LayerKind::max_pool2d: {
                Tensor dx(x.shape());
                const auto& arg = tr.pool_argmax[li];
                for (std::size_t i = 0; i < delta.size(); ++i)
                    dx[static_cast<std::size_t>(arg[i])] += delta[i];
                delta = std::move(dx);
                break;
            }
        }
    }
    return tr.loss;
}

// v = momentum * v + g; w -= lr * v. Pass momentum 0 for plain SGD.
inline void sgd_step(Network& net, const Gradients& grads, double lr, double momentum = 0.0,
                     Gradients* velocity = nullptr) {
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        if (momentum != 0.0 && velocity) {
            Tensor& v = velocity->weights[i];
            for (std::size_t j = 0; j < v.size(); ++j)
                v[j] = momentum * v[j] + grads.weights[i][j];
            add_scaled(net.weights[i], v, -lr);
            Tensor& vb = velocity->biases[i];
            for (std::size_t j = 0; j < vb.size(); ++j)
                vb[j] = momentum * vb[j] + grads.biases[i][j];
            add_scaled(net.biases[i], vb, -lr);
        } else {
            add_scaled(net.weights[i], grads.weights[i], -lr);
            add_scaled(net.biases[i], grads.biases[i], -lr);
        }
    }
}

inline double accuracy(const Network& net, const Tensor& images, const std::vector<int>& labels,
                       int batch_size = 256) {
    const int n = images.dim(0);
    if (n == 0) return 0.0;
    std::vector<int> dims = images.shape();
    std::size_t sample = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) sample *= static_cast<std::size_t>(dims[i]);
    std::size_t correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int m = std::min(batch_size, n - start);
        std::vector<int> bshape = dims;
        bshape[0] = m;
        Tensor chunk(bshape, std::vector<double>(
                                 images.data() + static_cast<std::size_t>(start) * sample,
                                 images.data() + static_cast<std::size_t>(start + m) * sample));
        Tensor z = logits(net, chunk);
        const int c = z.dim(1);
        for (int i = 0; i < m; ++i) {
            const double* zr = z.data() + static_cast<std::size_t>(i) * c;
            int best = 0;
            for (int j = 1; j < c; ++j)
                if (zr[j] > zr[best]) best = j;
            if (best == labels[static_cast<std::size_t>(start + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

} // namespace lowbit
