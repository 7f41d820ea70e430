#pragma once

// Small helpers for tests: temp directories, synthetic IDX files (plain and
// gzipped), and tiny deterministic datasets.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "lowbit/errors.hpp"

namespace fixtures {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        namespace fs = std::filesystem;
        base_ = fs::temp_directory_path() / ("lowbit_test_" + tag + "_" +
                                             std::to_string(::getpid()));
        fs::remove_all(base_);
        fs::create_directories(base_);
    }
    ~TempDir() { std::filesystem::remove_all(base_); }
    std::string path(const std::string& name = "") const {
        return name.empty() ? base_.string() : (base_ / name).string();
    }

private:
    std::filesystem::path base_;
};

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw lowbit::Error("fixture write failed: " + path);
}

inline std::vector<unsigned char> gzip_bytes(const std::vector<unsigned char>& in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw lowbit::Error("deflateInit2 failed");
    std::vector<unsigned char> out(deflateBound(&zs, static_cast<uLong>(in.size())) + 32);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    if (deflate(&zs, Z_FINISH) != Z_STREAM_END) {
        deflateEnd(&zs);
        throw lowbit::Error("deflate failed");
    }
    out.resize(out.size() - zs.avail_out);
    deflateEnd(&zs);
    return out;
}

inline std::vector<unsigned char> idx_bytes(std::uint8_t rank,
                                            const std::vector<std::uint32_t>& dims,
                                            const std::vector<unsigned char>& payload) {
    std::vector<unsigned char> b = {0, 0, 0x08, rank};
    for (std::uint32_t d : dims) {
        b.push_back(static_cast<unsigned char>(d >> 24));
        b.push_back(static_cast<unsigned char>(d >> 16));
        b.push_back(static_cast<unsigned char>(d >> 8));
        b.push_back(static_cast<unsigned char>(d));
    }
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

// n tiny "images" whose pixels encode the sample index, so shuffles can be
// traced back, plus labels cycling 0..9.
inline void write_tiny_mnist(const std::string& dir, int n, int side = 6, bool gzipped = false) {
    std::vector<unsigned char> images;
    std::vector<unsigned char> labels;
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < side * side; ++p)
            images.push_back(static_cast<unsigned char>((i * 7 + p * 13) % 251));
        labels.push_back(static_cast<unsigned char>(i % 10));
    }
    auto img = idx_bytes(3, {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(side),
                             static_cast<std::uint32_t>(side)},
                         images);
    auto lab = idx_bytes(1, {static_cast<std::uint32_t>(n)}, labels);
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    if (gzipped) {
        write_bytes((fs::path(dir) / "train-images-idx3-ubyte.gz").string(), gzip_bytes(img));
        write_bytes((fs::path(dir) / "train-labels-idx1-ubyte.gz").string(), gzip_bytes(lab));
        write_bytes((fs::path(dir) / "t10k-images-idx3-ubyte.gz").string(), gzip_bytes(img));
        write_bytes((fs::path(dir) / "t10k-labels-idx1-ubyte.gz").string(), gzip_bytes(lab));
    } else {
        write_bytes((fs::path(dir) / "train-images-idx3-ubyte").string(), img);
        write_bytes((fs::path(dir) / "train-labels-idx1-ubyte").string(), lab);
        write_bytes((fs::path(dir) / "t10k-images-idx3-ubyte").string(), img);
        write_bytes((fs::path(dir) / "t10k-labels-idx1-ubyte").string(), lab);
    }
}

inline std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw lowbit::Error("fixture read failed: " + path);
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
}

} // namespace fixtures
