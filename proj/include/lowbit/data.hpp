#pragma once

// IDX image/label loading (plain or gzip), pixel scaling, and the shuffled
// minibatch stream used by both trainers.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "lowbit/errors.hpp"
#include "lowbit/rng.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "'");
    f.seekg(0, std::ios::end);
    const std::streamoff len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw FormatError("short read on '" + path + "'");
    return bytes;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK)  // +32: accept gzip or zlib wrapper
        throw FormatError("inflateInit2 failed");
    std::vector<unsigned char> out;
    out.resize(in.size() * 4 + 64);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::size_t written = 0;
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        if (written == out.size()) out.resize(out.size() * 2);
        zs.next_out = out.data() + written;
        zs.avail_out = static_cast<uInt>(out.size() - written);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("gzip stream is corrupt (zlib rc " + std::to_string(rc) + ")");
        }
        written = out.size() - zs.avail_out;
    }
    inflateEnd(&zs);
    out.resize(written);
    return out;
}

inline std::uint32_t read_be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<unsigned char> payload;
    std::uint64_t byte_sum = 0;  // over the full decompressed stream, header included
};

inline IdxArray parse_idx(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) bytes = gunzip(bytes);
    if (bytes.size() < 4) throw FormatError("'" + path + "': truncated IDX header");
    if (bytes[0] != 0 || bytes[1] != 0)
        throw FormatError("'" + path + "': bad IDX magic");
    if (bytes[2] != 0x08)
        throw FormatError("'" + path + "': only unsigned-byte IDX payloads are supported");
    const int nd = bytes[3];
    if (nd < 1 || nd > 4) throw FormatError("'" + path + "': unexpected IDX rank");
    if (bytes.size() < 4 + 4 * static_cast<std::size_t>(nd))
        throw FormatError("'" + path + "': truncated IDX dimension list");
    IdxArray arr;
    std::size_t expect = 1;
    for (int i = 0; i < nd; ++i) {
        arr.dims.push_back(read_be32(bytes.data() + 4 + 4 * static_cast<std::size_t>(i)));
        expect *= arr.dims.back();
    }
    const std::size_t off = 4 + 4 * static_cast<std::size_t>(nd);
    if (bytes.size() != off + expect)
        throw FormatError("'" + path + "': payload length mismatch (" +
                          std::to_string(bytes.size() - off) + " bytes, expected " +
                          std::to_string(expect) + ")");
    for (unsigned char b : bytes) arr.byte_sum += b;
    arr.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
    return arr;
}

} // namespace detail

struct Dataset {
    Tensor images;  // [n, 1, h, w], pixels scaled to [0, 1]
    std::vector<int> labels;
    std::uint64_t image_byte_sum = 0;
    std::uint64_t label_byte_sum = 0;
    double applied_mean = 0.0;

    int size() const { return images.rank() ? images.dim(0) : 0; }

    double pixel_mean() const {
        double s = 0;
        for (double v : images.values()) s += v;
        return images.size() ? s / static_cast<double>(images.size()) : 0.0;
    }

    void subtract_mean(double m) {
        for (double& v : images.values()) v -= m;
        applied_mean += m;
    }
};

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    detail::IdxArray img = detail::parse_idx(images_path);
    detail::IdxArray lab = detail::parse_idx(labels_path);
    if (img.dims.size() != 3)
        throw FormatError("'" + images_path + "': expected rank-3 image array");
    if (lab.dims.size() != 1)
        throw FormatError("'" + labels_path + "': expected rank-1 label array");
    if (img.dims[0] != lab.dims[0])
        throw FormatError("image/label count mismatch: " + std::to_string(img.dims[0]) + " vs " +
                          std::to_string(lab.dims[0]));
    const int n = static_cast<int>(img.dims[0]);
    const int h = static_cast<int>(img.dims[1]);
    const int w = static_cast<int>(img.dims[2]);
    Dataset ds;
    ds.images = Tensor({n, 1, h, w});
    for (std::size_t i = 0; i < img.payload.size(); ++i)
        ds.images[i] = static_cast<double>(img.payload[i]) / 255.0;
    ds.labels.resize(lab.payload.size());
    for (std::size_t i = 0; i < lab.payload.size(); ++i)
        ds.labels[i] = static_cast<int>(lab.payload[i]);
    ds.image_byte_sum = img.byte_sum;
    ds.label_byte_sum = lab.byte_sum;
    return ds;
}

// dir/name, else dir/name.gz.
inline std::string resolve_idx_path(const std::string& dir, const std::string& name) {
    namespace fs = std::filesystem;
    const fs::path plain = fs::path(dir) / name;
    if (fs::exists(plain)) return plain.string();
    const fs::path gz = fs::path(dir) / (name + ".gz");
    if (fs::exists(gz)) return gz.string();
    throw FormatError("neither '" + plain.string() + "' nor '" + gz.string() + "' exists");
}

inline Dataset load_mnist_train(const std::string& dir) {
    return load_idx(resolve_idx_path(dir, "train-images-idx3-ubyte"),
                    resolve_idx_path(dir, "train-labels-idx1-ubyte"));
}

inline Dataset load_mnist_test(const std::string& dir) {
    return load_idx(resolve_idx_path(dir, "t10k-images-idx3-ubyte"),
                    resolve_idx_path(dir, "t10k-labels-idx1-ubyte"));
}

// Shuffled minibatches; a fresh permutation per epoch, trailing partial batch
// included so every sample is visited exactly once per epoch.
class BatchStream {
public:
    struct Batch {
        Tensor images;
        std::vector<int> labels;
        std::vector<int> indices;
    };

    BatchStream(const Dataset& ds, int batch_size, std::uint64_t seed)
        : ds_(&ds), batch_size_(batch_size), rng_(Rng::substream(seed, "shuffle")) {
        if (batch_size < 1) throw ConfigError("batch size must be positive");
        reshuffle();
    }

    int batches_per_epoch() const {
        return (ds_->size() + batch_size_ - 1) / batch_size_;
    }

    int epoch() const { return epoch_; }

    Batch next() {
        const int n = ds_->size();
        if (n == 0) throw ShapeError("BatchStream: empty dataset");
        const int m = std::min(batch_size_, n - pos_);
        Batch b;
        b.indices.assign(perm_.begin() + pos_, perm_.begin() + pos_ + m);
        const int h = ds_->images.dim(2), w = ds_->images.dim(3);
        const std::size_t sample = static_cast<std::size_t>(h) * w;
        b.images = Tensor({m, 1, h, w});
        b.labels.resize(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
            const int src = b.indices[static_cast<std::size_t>(i)];
            const double* from = ds_->images.data() + static_cast<std::size_t>(src) * sample;
            std::copy(from, from + sample, b.images.data() + static_cast<std::size_t>(i) * sample);
            b.labels[static_cast<std::size_t>(i)] = ds_->labels[static_cast<std::size_t>(src)];
        }
        pos_ += m;
        if (pos_ >= n) {
            ++epoch_;
            reshuffle();
        }
        return b;
    }

private:
    void reshuffle() {
        perm_ = rng_.permutation(ds_->size());
        pos_ = 0;
    }

    const Dataset* ds_;
    int batch_size_;
    Rng rng_;
    std::vector<int> perm_;
    int pos_ = 0;
    int epoch_ = 0;
};

} // namespace lowbit
