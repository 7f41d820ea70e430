#pragma once

// Container format for trained models ("LBADMM01": magic, length-prefixed JSON
// header, little-endian payloads) plus the shift/add inference path that
// demonstrates codebook layers need no multiplications in the accumulation.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lowbit/admm.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/network.hpp"
#include "lowbit/quantset.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

constexpr char kModelMagic[8] = {'L', 'B', 'A', 'D', 'M', 'M', '0', '1'};
constexpr int kModelVersion = 1;

// One parameterized layer as stored: the payload under its policy plus the
// (always full-precision) bias. `packed` selects the bit-packed code encoding
// on disk for codebook layers; in memory codes are always int8.
struct ModelLayer {
    std::string name;
    LayerPayload payload;
    bool packed = false;
    Tensor bias;

    std::size_t weight_count() const {
        switch (payload.kind) {
            case PolicyKind::codebook: return payload.q.codes.size();
            case PolicyKind::int8_grid: return payload.i8.codes.size();
            default: return payload.dense.size();
        }
    }
};

struct QuantizedModel {
    std::vector<LayerSpec> architecture;
    std::vector<ModelLayer> layers;  // one per parameterized layer, in order

    bool fully_quantized() const {
        for (const ModelLayer& l : layers)
            if (l.payload.kind == PolicyKind::full_precision) return false;
        return true;
    }
};

// --- code packing ------------------------------------------------------
//
// Codes are stored as alphabet indices, bits_per_weight() bits each, filled
// LSB-first within each byte. 1 bit for binary, 2 for ternary, 3 for pow2:{1,2}.

inline std::vector<std::uint8_t> pack_codes(const std::vector<std::int8_t>& codes,
                                            const QuantizationSet& set) {
    const int bits = set.bits_per_weight();
    std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
    std::size_t bitpos = 0;
    for (std::int8_t c : codes) {
        const unsigned idx = static_cast<unsigned>(set.index_of(c));
        for (int b = 0; b < bits; ++b) {
            if (idx & (1u << b)) out[bitpos >> 3] |= static_cast<std::uint8_t>(1u << (bitpos & 7));
            ++bitpos;
        }
    }
    return out;
}

inline std::vector<std::int8_t> unpack_codes(const std::uint8_t* bytes, std::size_t nbytes,
                                             std::size_t count, const QuantizationSet& set) {
    const int bits = set.bits_per_weight();
    if (nbytes < (count * static_cast<std::size_t>(bits) + 7) / 8)
        throw FormatError("packed codes: payload shorter than declared count");
    const std::vector<int>& alphabet = set.alphabet();
    std::vector<std::int8_t> codes(count);
    std::size_t bitpos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        unsigned idx = 0;
        for (int b = 0; b < bits; ++b) {
            if (bytes[bitpos >> 3] & (1u << (bitpos & 7))) idx |= 1u << b;
            ++bitpos;
        }
        if (idx >= alphabet.size())
            throw FormatError("packed codes: index " + std::to_string(idx) +
                              " outside alphabet " + set.name());
        codes[i] = static_cast<std::int8_t>(alphabet[idx]);
    }
    return codes;
}

// Theoretical packed footprint: the code bits plus one 8-byte scale.
inline std::size_t packed_payload_bytes(const QuantizationSet& set, std::size_t count) {
    return (count * static_cast<std::size_t>(set.bits_per_weight()) + 7) / 8 + sizeof(double);
}

// --- serialization ------------------------------------------------------

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64_le(out, bits);
}

struct ByteReader {
    const std::uint8_t* p;
    std::size_t size;
    std::size_t pos = 0;

    const std::uint8_t* take(std::size_t n, const char* what) {
        if (pos + n > size) throw FormatError(std::string("truncated file: ") + what);
        const std::uint8_t* at = p + pos;
        pos += n;
        return at;
    }
    std::uint64_t u64(const char* what) {
        const std::uint8_t* b = take(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        const std::uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

inline const char* payload_tag(PolicyKind kind, bool packed) {
    switch (kind) {
        case PolicyKind::codebook: return packed ? "codebook_packed" : "codebook";
        case PolicyKind::int8_grid: return "int8";
        default: return "dense";
    }
}

inline nlohmann::json arch_to_json(const std::vector<LayerSpec>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const LayerSpec& l : layers) {
        nlohmann::json j;
        switch (l.kind) {
            case LayerKind::fully_connected:
                j["kind"] = "fc";
                j["in"] = l.in_features;
                j["out"] = l.out_features;
                j["bias"] = l.has_bias;
                break;
            case LayerKind::conv2d:
                j["kind"] = "conv";
                j["in_channels"] = l.in_channels;
                j["out_channels"] = l.out_channels;
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                j["pad"] = l.pad;
                j["bias"] = l.has_bias;
                break;
            case LayerKind::relu: j["kind"] = "relu"; break;
            case LayerKind::max_pool2d:
                j["kind"] = "max_pool";
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                break;
            case LayerKind::softmax_cross_entropy: j["kind"] = "softmax_ce"; break;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

inline LayerSpec arch_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fc")
        return LayerSpec::fc(j.at("in").get<int>(), j.at("out").get<int>(),
                             j.at("bias").get<bool>());
    if (kind == "conv")
        return LayerSpec::conv(j.at("in_channels").get<int>(), j.at("out_channels").get<int>(),
                               j.at("kernel").get<int>(), j.at("stride").get<int>(),
                               j.at("pad").get<int>(), j.at("bias").get<bool>());
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "max_pool") return LayerSpec::max_pool(j.at("kernel").get<int>(),
                                                       j.at("stride").get<int>());
    if (kind == "softmax_ce") return LayerSpec::softmax_ce();
    throw FormatError("unknown layer kind '" + kind + "' in model header");
}

} // namespace detail

inline std::string save_bytes(const QuantizedModel& model) {
    nlohmann::json header;
    header["version"] = kModelVersion;
    header["architecture"] = detail::arch_to_json(model.architecture);
    nlohmann::json layers = nlohmann::json::array();
    for (const ModelLayer& l : model.layers) {
        nlohmann::json j;
        j["name"] = l.name;
        j["payload"] = detail::payload_tag(l.payload.kind, l.packed);
        if (l.payload.kind == PolicyKind::codebook) j["set"] = l.payload.q.set.name();
        j["weight_count"] = l.weight_count();
        j["bias_count"] = l.bias.size();
        layers.push_back(std::move(j));
    }
    header["layers"] = std::move(layers);
    const std::string htext = header.dump();

    std::string out(kModelMagic, sizeof kModelMagic);
    detail::put_u64_le(out, htext.size());
    out += htext;
    for (const ModelLayer& l : model.layers) {
        switch (l.payload.kind) {
            case PolicyKind::codebook: {
                const QuantizedLayer& q = l.payload.q;
                if (l.packed) {
                    const std::vector<std::uint8_t> bits = pack_codes(q.codes, q.set);
                    out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
                } else {
                    out.append(reinterpret_cast<const char*>(q.codes.data()), q.codes.size());
                }
                detail::put_f64_le(out, q.alpha);
                break;
            }
            case PolicyKind::int8_grid:
                out.append(reinterpret_cast<const char*>(l.payload.i8.codes.data()),
                           l.payload.i8.codes.size());
                detail::put_f64_le(out, l.payload.i8.scale);
                break;
            case PolicyKind::full_precision:
                for (std::size_t i = 0; i < l.payload.dense.size(); ++i)
                    detail::put_f64_le(out, l.payload.dense[i]);
                break;
        }
        for (std::size_t i = 0; i < l.bias.size(); ++i) detail::put_f64_le(out, l.bias[i]);
    }
    return out;
}

inline QuantizedModel load_bytes(const std::uint8_t* data, std::size_t size) {
    detail::ByteReader r{data, size};
    const std::uint8_t* magic = r.take(sizeof kModelMagic, "magic");
    if (std::memcmp(magic, kModelMagic, sizeof kModelMagic) != 0)
        throw FormatError("bad magic: not an LBADMM01 model file");
    const std::uint64_t hlen = r.u64("header length");
    const std::uint8_t* htext = r.take(hlen, "header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext, htext + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("unparseable model header: ") + e.what());
    }

    QuantizedModel model;
    try {
        const int version = header.at("version").get<int>();
        if (version != kModelVersion)
            throw FormatError("unsupported model version " + std::to_string(version));
        for (const nlohmann::json& j : header.at("architecture"))
            model.architecture.push_back(detail::arch_from_json(j));

        // Rebuild the expected shapes from the architecture, then check every
        // declared count against them before touching the payload bytes.
        const Network skeleton = Network::from_specs(model.architecture);
        const std::vector<std::string> names = skeleton.weight_layer_names();
        const nlohmann::json& layers = header.at("layers");
        if (layers.size() != names.size())
            throw FormatError("header declares " + std::to_string(layers.size()) +
                              " payload layers, architecture has " +
                              std::to_string(names.size()));

        for (std::size_t k = 0; k < layers.size(); ++k) {
            const nlohmann::json& j = layers[k];
            ModelLayer l;
            l.name = j.at("name").get<std::string>();
            if (l.name != names[k])
                throw FormatError("layer " + std::to_string(k) + " named '" + l.name +
                                  "', expected '" + names[k] + "'");
            const std::size_t wcount = j.at("weight_count").get<std::size_t>();
            const std::size_t bcount = j.at("bias_count").get<std::size_t>();
            if (wcount != skeleton.weights[k].size())
                throw FormatError("layer " + l.name + ": weight_count " +
                                  std::to_string(wcount) + " does not match architecture (" +
                                  std::to_string(skeleton.weights[k].size()) + ")");
            if (bcount != skeleton.biases[k].size())
                throw FormatError("layer " + l.name + ": bias_count " + std::to_string(bcount) +
                                  " does not match architecture (" +
                                  std::to_string(skeleton.biases[k].size()) + ")");

            const std::string tag = j.at("payload").get<std::string>();
            const std::vector<int>& wshape = skeleton.weights[k].shape();
            if (tag == "codebook" || tag == "codebook_packed") {
                l.payload.kind = PolicyKind::codebook;
                l.packed = (tag == "codebook_packed");
                QuantizedLayer& q = l.payload.q;
                q.set = QuantizationSet::parse(j.at("set").get<std::string>());
                q.shape = wshape;
                if (l.packed) {
                    const std::size_t nbytes =
                        (wcount * static_cast<std::size_t>(q.set.bits_per_weight()) + 7) / 8;
                    const std::uint8_t* bits = r.take(nbytes, "packed codes");
                    q.codes = unpack_codes(bits, nbytes, wcount, q.set);
                } else {
                    const std::uint8_t* raw = r.take(wcount, "codes");
                    q.codes.resize(wcount);
                    std::memcpy(q.codes.data(), raw, wcount);
                    for (std::int8_t c : q.codes)
                        if (!q.set.contains(c))
                            throw FormatError("layer " + l.name + ": code " + std::to_string(c) +
                                              " outside alphabet " + q.set.name());
                }
                q.alpha = r.f64("alpha");
                if (!(q.alpha > 0) || !std::isfinite(q.alpha))
                    throw FormatError("layer " + l.name + ": alpha must be finite and positive");
            } else if (tag == "int8") {
                l.payload.kind = PolicyKind::int8_grid;
                Int8Layer& g = l.payload.i8;
                g.shape = wshape;
                const std::uint8_t* raw = r.take(wcount, "int8 codes");
                g.codes.resize(wcount);
                std::memcpy(g.codes.data(), raw, wcount);
                g.scale = r.f64("int8 scale");
                if (!(g.scale > 0) || !std::isfinite(g.scale))
                    throw FormatError("layer " + l.name + ": scale must be finite and positive");
            } else if (tag == "dense") {
                l.payload.kind = PolicyKind::full_precision;
                l.payload.dense = Tensor(wshape);
                for (std::size_t i = 0; i < wcount; ++i)
                    l.payload.dense[i] = r.f64("dense weights");
            } else {
                throw FormatError("unknown payload kind '" + tag + "'");
            }

            l.bias = Tensor(skeleton.biases[k].shape());
            for (std::size_t i = 0; i < bcount; ++i) l.bias[i] = r.f64("bias");
            model.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed model header: ") + e.what());
    }
    if (r.pos != size)
        throw FormatError("trailing bytes after payload (" + std::to_string(size - r.pos) + ")");
    return model;
}

inline void save(const QuantizedModel& model, const std::string& path) {
    const std::string bytes = save_bytes(model);
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
        throw FormatError("cannot write model file '" + path + "'");
}

inline QuantizedModel load(const std::string& path) {
    const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
    return load_bytes(bytes.data(), bytes.size());
}

// Full-precision snapshot of a network (pretrain output).
inline QuantizedModel model_from_network(const Network& net) {
    QuantizedModel m;
    m.architecture = net.layers;
    const std::vector<std::string> names = net.weight_layer_names();
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        ModelLayer l;
        l.name = names[k];
        l.payload.kind = PolicyKind::full_precision;
        l.payload.dense = net.weights[k];
        l.bias = net.biases[k];
        m.layers.push_back(std::move(l));
    }
    return m;
}

// Realize payloads into a plain network (the float inference path).
inline Network to_network(const QuantizedModel& model) {
    Network net = Network::from_specs(model.architecture);
    if (model.layers.size() != net.weights.size())
        throw FormatError("model layer count does not match architecture");
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        net.weights[k] = model.layers[k].payload.realize();
        net.biases[k] = model.layers[k].bias;
    }
    return net;
}

// --- quantized inference ------------------------------------------------

// Accumulation-op tally for the shift/add path. Codebook layers must show
// acc_mults == 0: their accumulators see only adds, subtracts and shifts, and
// each output element pays exactly one multiplication by the layer scale.
struct QuantOpCounts {
    std::uint64_t acc_adds = 0;    // accumulator adds/subtracts
    std::uint64_t acc_shifts = 0;  // arithmetic shifts (|code| >= 2)
    std::uint64_t acc_mults = 0;   // real multiply-accumulates (dense and int8 layers)
    std::uint64_t scale_mults = 0; // one per output element on scaled layers
    std::uint64_t bias_adds = 0;
};

namespace detail {

// x times a codebook level, multiplication-free: |c| is 0, 1 or a power of two.
inline double code_times(double x, int c, QuantOpCounts* n) {
    if (c == 1) return x;
    if (c == -1) return -x;
    if (n) ++n->acc_shifts;
    const int k = std::countr_zero(static_cast<unsigned>(c < 0 ? -c : c));
    const double v = std::ldexp(x, k);
    return c < 0 ? -v : v;
}

// One scalar product between an input row and a stored weight row.
struct PayloadRow {
    const ModelLayer* layer;

    double accumulate(const double* x, std::size_t off, std::size_t count,
                      QuantOpCounts* n) const {
        double acc = 0;
        switch (layer->payload.kind) {
            case PolicyKind::codebook: {
                const std::int8_t* c = layer->payload.q.codes.data() + off;
                for (std::size_t i = 0; i < count; ++i) {
                    if (c[i] == 0) continue;
                    acc += code_times(x[i], c[i], n);
                    if (n) ++n->acc_adds;
                }
                break;
            }
            case PolicyKind::int8_grid: {
                const std::int8_t* c = layer->payload.i8.codes.data() + off;
                for (std::size_t i = 0; i < count; ++i) {
                    if (c[i] == 0) continue;
                    acc += x[i] * static_cast<double>(c[i]);
                    if (n) {
                        ++n->acc_mults;
                        ++n->acc_adds;
                    }
                }
                break;
            }
            case PolicyKind::full_precision: {
                const double* wr = layer->payload.dense.data() + off;
                for (std::size_t i = 0; i < count; ++i) {
                    acc += x[i] * wr[i];
                    if (n) {
                        ++n->acc_mults;
                        ++n->acc_adds;
                    }
                }
                break;
            }
        }
        return acc;
    }

    // Scale an accumulated sum by the layer's alpha/scale (identity for dense).
    double finish(double acc, QuantOpCounts* n) const {
        switch (layer->payload.kind) {
            case PolicyKind::codebook:
                if (n) ++n->scale_mults;
                return layer->payload.q.alpha * acc;
            case PolicyKind::int8_grid:
                if (n) ++n->scale_mults;
                return layer->payload.i8.scale * acc;
            default: return acc;
        }
    }
};

inline Tensor quantized_fc(const Tensor& x, const ModelLayer& l, int in, int out,
                           QuantOpCounts* n) {
    const int rows = x.dim(0);
    if (static_cast<int>(spatial_size(x)) != in)
        throw ShapeError("fully_connected: input size " +
                         std::to_string(spatial_size(x)) + " does not match layer (" +
                         std::to_string(in) + ")");
    const PayloadRow row{&l};
    Tensor y({rows, out});
    for (int i = 0; i < rows; ++i) {
        const double* xr = x.data() + static_cast<std::size_t>(i) * in;
        double* yr = y.data() + static_cast<std::size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
            const double acc = row.accumulate(xr, static_cast<std::size_t>(o) * in,
                                              static_cast<std::size_t>(in), n);
            double v = row.finish(acc, n);
            if (l.bias.size()) {
                v += l.bias[static_cast<std::size_t>(o)];
                if (n) ++n->bias_adds;
            }
            yr[o] = v;
        }
    }
    return y;
}

inline Tensor quantized_conv(const Tensor& x, const ModelLayer& l, const LayerSpec& spec,
                             QuantOpCounts* n) {
    if (x.rank() != 4) throw ShapeError("conv2d: expects rank-4 input");
    const int b = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ic != spec.in_channels) throw ShapeError("conv2d: channel mismatch");
    const int oc = spec.out_channels, kh = spec.kernel, kw = spec.kernel;
    const int stride = spec.stride, pad = spec.pad;
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    Tensor y({b, oc, oh, ow});
    const PayloadRow row{&l};
    const std::size_t in_cs = static_cast<std::size_t>(h) * w;
    const std::size_t ker_cs = static_cast<std::size_t>(kh) * kw;
    const std::size_t ker_os = ker_cs * ic;
    std::size_t oi = 0;
    for (int bi = 0; bi < b; ++bi)
        for (int co = 0; co < oc; ++co)
            for (int y0 = 0; y0 < oh; ++y0)
                for (int x0 = 0; x0 < ow; ++x0) {
                    const int iy0 = y0 * stride - pad, ix0 = x0 * stride - pad;
                    double acc = 0;
                    for (int ci = 0; ci < ic; ++ci) {
                        const double* iplane =
                            x.data() + (static_cast<std::size_t>(bi) * ic + ci) * in_cs;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= h) continue;
                            // clip the kx range to the valid input columns
                            int kx0 = ix0 < 0 ? -ix0 : 0;
                            int kx1 = kw;
                            if (ix0 + kw > w) kx1 = w - ix0;
                            if (kx1 <= kx0) continue;
                            const std::size_t woff = static_cast<std::size_t>(co) * ker_os +
                                                     static_cast<std::size_t>(ci) * ker_cs +
                                                     static_cast<std::size_t>(ky) * kw + kx0;
                            acc += row.accumulate(iplane + static_cast<std::size_t>(iy) * w +
                                                      ix0 + kx0,
                                                  woff, static_cast<std::size_t>(kx1 - kx0), n);
                        }
                    }
                    double v = row.finish(acc, n);
                    if (l.bias.size()) {
                        v += l.bias[static_cast<std::size_t>(co)];
                        if (n) ++n->bias_adds;
                    }
                    y[oi++] = v;
                }
    return y;
}

} // namespace detail

// Forward pass to logits where every parameterized layer runs from its stored
// payload: codebook layers by sign/shift accumulation with a single alpha
// multiply per output, int8 by integer-code multiply-accumulate plus scale.
inline Tensor quantized_forward(const QuantizedModel& model, const Tensor& batch,
                                QuantOpCounts* counts = nullptr) {
    if (model.layers.empty()) throw ShapeError("quantized_forward: model has no layers");
    Tensor x = batch;
    std::size_t wi = 0;
    for (const LayerSpec& l : model.architecture) {
        switch (l.kind) {
            case LayerKind::fully_connected:
                x = detail::quantized_fc(x, model.layers[wi], l.in_features, l.out_features,
                                         counts);
                ++wi;
                break;
            case LayerKind::conv2d:
                x = detail::quantized_conv(x, model.layers[wi], l, counts);
                ++wi;
                break;
            case LayerKind::relu:
                for (double& v : x.values())
                    if (v < 0) v = 0;
                break;
            case LayerKind::max_pool2d: {
                // re-use the float path: pooling moves values, no arithmetic
                Network pool;
                pool.layers = {l};
                pool.allocate();
                x = detail::run_forward(pool, x, nullptr, true).acts.back();
                break;
            }
            case LayerKind::softmax_cross_entropy:
                if (x.rank() != 2)
                    x = Tensor({x.dim(0), static_cast<int>(detail::spatial_size(x))}, x.values());
                return x;
        }
    }
    if (x.rank() != 2)
        x = Tensor({x.dim(0), static_cast<int>(detail::spatial_size(x))}, x.values());
    return x;
}

// --- inspection ----------------------------------------------------------

namespace detail {

inline std::string alphabet_string(const QuantizationSet& set) {
    std::string s = "{";
    const std::vector<int>& a = set.alphabet();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(a[i]);
    }
    return s + "}";
}

} // namespace detail

// Per-layer report: payload kind, alphabet, scale, zero-code fraction and the
// achievable packed size (code bits rounded up to bytes, plus the 8-byte
// scale). Layers already stored packed occupy exactly that many bytes.
inline std::string inspect_report(const QuantizedModel& model) {
    std::ostringstream out;
    out << "format=LBADMM01 version=" << kModelVersion << " layers=" << model.layers.size()
        << "\n";
    for (const ModelLayer& l : model.layers) {
        const std::size_t d = l.weight_count();
        out << "layer=" << l.name;
        switch (l.payload.kind) {
            case PolicyKind::codebook: {
                const QuantizedLayer& q = l.payload.q;
                out << " payload=" << (l.packed ? "codebook_packed" : "codebook")
                    << " set=" << q.set.name()
                    << " alphabet=" << detail::alphabet_string(q.set)
                    << " alpha=" << detail::format_double(q.alpha)
                    << " zero_fraction=" << detail::format_double(q.zero_fraction())
                    << " weights=" << d
                    << " bits_per_weight=" << q.set.bits_per_weight()
                    << " packed_bytes=" << packed_payload_bytes(q.set, d)
                    << " stored_bytes="
                    << (l.packed ? packed_payload_bytes(q.set, d) : d + sizeof(double));
                break;
            }
            case PolicyKind::int8_grid:
                out << " payload=int8 scale=" << detail::format_double(l.payload.i8.scale)
                    << " weights=" << d << " bits_per_weight=8"
                    << " packed_bytes=" << d + sizeof(double)
                    << " stored_bytes=" << d + sizeof(double);
                break;
            case PolicyKind::full_precision:
                out << " payload=dense weights=" << d << " bits_per_weight=64"
                    << " stored_bytes=" << d * sizeof(double);
                break;
        }
        out << " bias_count=" << l.bias.size() << "\n";
    }
    return out.str();
}

} // namespace lowbit
