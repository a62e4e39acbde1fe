#include "sof/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "sof/error.hpp"
#include "sof/rng.hpp"

namespace sof {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw DecodeError("gzip: cannot initialise zlib");
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk;
        zs.avail_out = sizeof(chunk);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DecodeError("gzip: corrupt or truncated stream");
        }
        out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw DecodeError("gzip: truncated stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

std::optional<std::filesystem::path> find_file(const std::filesystem::path& dir, const std::string& stem) {
    for (const auto& candidate : {dir / stem, dir / (stem + ".gz")})
        if (std::filesystem::exists(candidate)) return candidate;
    return std::nullopt;
}

} // namespace

void ImageDataset::validate() const {
    if (images.size() != labels.size() * kImagePixels)
        throw ShapeError("dataset '" + name + "': " + std::to_string(labels.size()) + " labels but " +
                         std::to_string(images.size()) + " pixel values");
    for (double v : images)
        if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset '" + name + "': pixel outside [0, 1]");
    for (std::size_t l : labels)
        if (l >= kNumClasses) throw Error("dataset '" + name + "': label " + std::to_string(l) + " out of range");
}

std::vector<std::uint8_t> read_idx_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes);
    return bytes;
}

RawImages decode_idx_images(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16) throw DecodeError("IDX images: header truncated (" + std::to_string(bytes.size()) + " bytes)");
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxImageMagic)
        throw DecodeError("IDX images: magic mismatch, expected 0x00000803 but found 0x" + [&] {
            char buf[9];
            std::snprintf(buf, sizeof(buf), "%08x", magic);
            return std::string(buf);
        }());
    RawImages raw;
    raw.count = read_be32(bytes, 4);
    raw.rows = read_be32(bytes, 8);
    raw.cols = read_be32(bytes, 12);
    const std::size_t expected = 16 + raw.count * raw.rows * raw.cols;
    if (bytes.size() < expected)
        throw DecodeError("IDX images: truncated payload, expected " + std::to_string(expected) + " bytes but found " +
                          std::to_string(bytes.size()));
    if (bytes.size() > expected) throw DecodeError("IDX images: dimension mismatch, trailing bytes after payload");
    raw.pixels.assign(bytes.begin() + 16, bytes.end());
    return raw;
}

std::vector<std::uint8_t> decode_idx_labels(std::span<const std::uint8_t> bytes, std::size_t num_classes) {
    if (bytes.size() < 8) throw DecodeError("IDX labels: header truncated (" + std::to_string(bytes.size()) + " bytes)");
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxLabelMagic) throw DecodeError("IDX labels: magic mismatch, expected 0x00000801");
    const std::size_t count = read_be32(bytes, 4);
    if (bytes.size() < 8 + count)
        throw DecodeError("IDX labels: truncated payload, expected " + std::to_string(8 + count) + " bytes");
    if (bytes.size() > 8 + count) throw DecodeError("IDX labels: dimension mismatch, trailing bytes after payload");
    std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.end());
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= num_classes)
            throw DecodeError("IDX labels: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                              " is out of range");
    return labels;
}

std::vector<std::uint8_t> encode_idx_images(const RawImages& raw) {
    if (raw.pixels.size() != raw.count * raw.rows * raw.cols) throw ShapeError("encode_idx_images: size mismatch");
    std::vector<std::uint8_t> out;
    out.reserve(16 + raw.pixels.size());
    write_be32(out, kIdxImageMagic);
    write_be32(out, static_cast<std::uint32_t>(raw.count));
    write_be32(out, static_cast<std::uint32_t>(raw.rows));
    write_be32(out, static_cast<std::uint32_t>(raw.cols));
    out.insert(out.end(), raw.pixels.begin(), raw.pixels.end());
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.size());
    write_be32(out, kIdxLabelMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

RawImages load_idx_images(const std::filesystem::path& path) { return decode_idx_images(read_idx_bytes(path)); }

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
    return decode_idx_labels(read_idx_bytes(path));
}

std::vector<double> normalize_and_flatten(const RawImages& raw) {
    if (raw.rows != kImageSide || raw.cols != kImageSide)
        throw ShapeError("normalize_and_flatten: expected 28x28 images, got " + std::to_string(raw.rows) + "x" +
                         std::to_string(raw.cols));
    std::vector<double> out(raw.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = raw.pixels[i] / 255.0;
    return out;
}

std::optional<ImageDataset> load_mnist_split(const std::filesystem::path& dir, const std::string& name,
                                             const std::string& split) {
    if (split != "train" && split != "test") throw Error("unknown split '" + split + "'");
    const std::string prefix = split == "train" ? "train" : "t10k";
    const auto images = find_file(dir, prefix + "-images-idx3-ubyte");
    const auto labels = find_file(dir, prefix + "-labels-idx1-ubyte");
    if (!images || !labels) return std::nullopt;
    const RawImages raw = load_idx_images(*images);
    const auto lab = load_idx_labels(*labels);
    if (raw.count != lab.size())
        throw DecodeError("dataset '" + name + "': " + std::to_string(raw.count) + " images but " +
                          std::to_string(lab.size()) + " labels");
    ImageDataset ds;
    ds.images = normalize_and_flatten(raw);
    ds.labels.assign(lab.begin(), lab.end());
    ds.name = name;
    ds.split = split;
    return ds;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
    if (batch_size == 0) throw Error("batch_iter: batch size must be at least 1");
    if (n == 0) throw Error("batch_iter: empty dataset");
    const auto order = permutation(n, seed, epoch);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::vector<std::vector<std::size_t>> batch_iter(const ImageDataset& ds, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
    return batch_iter(ds.size(), batch_size, seed, epoch);
}

ImageDataset synthetic_onehot_dataset(std::size_t n_samples, std::size_t n_classes, std::uint64_t seed,
                                      std::uint64_t stream) {
    if (n_classes == 0 || n_classes > kImagePixels) throw Error("synthetic dataset: need 1..784 classes");
    if (n_classes > kNumClasses) throw Error("synthetic dataset: labels are limited to 10 classes");
    Rng rng(seed, 0x5e7700 + stream);
    ImageDataset ds;
    ds.name = "synthetic";
    ds.split = "stream" + std::to_string(stream);
    ds.labels.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) ds.labels[i] = i % n_classes;
    for (std::size_t i = n_samples; i > 1; --i) std::swap(ds.labels[i - 1], ds.labels[rng.below(i)]);

    // Class centres on a ring around the image centre.
    constexpr double kRing = 8.0;
    constexpr double kWidth = 2.5;
    constexpr double kJitter = 1.0;
    constexpr double kNoise = 0.15;
    const double c0 = (kImageSide - 1) / 2.0;
    ds.images.resize(n_samples * kImagePixels);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(ds.labels[i]) / static_cast<double>(n_classes);
        const double cx = c0 + kRing * std::cos(angle) + kJitter * rng.normal();
        const double cy = c0 + kRing * std::sin(angle) + kJitter * rng.normal();
        const double amplitude = rng.uniform(0.6, 1.0);
        double* img = ds.images.data() + i * kImagePixels;
        for (std::size_t r = 0; r < kImageSide; ++r) {
            for (std::size_t c = 0; c < kImageSide; ++c) {
                const double dx = static_cast<double>(c) - cx;
                const double dy = static_cast<double>(r) - cy;
                const double v = amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * kWidth * kWidth)) +
                                 kNoise * rng.normal();
                img[r * kImageSide + c] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return ds;
}

Tensor gather_images(const ImageDataset& ds, std::span<const std::size_t> indices) {
    Tensor out(kImagePixels, indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= ds.size()) throw ShapeError("gather_images: index out of range");
        const double* img = ds.images.data() + indices[j] * kImagePixels;
        for (std::size_t p = 0; p < kImagePixels; ++p) out(p, j) = img[p];
    }
    return out;
}

Tensor one_hot_targets(const ImageDataset& ds, std::span<const std::size_t> indices, std::size_t num_classes) {
    Tensor out(num_classes, indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= ds.size()) throw ShapeError("one_hot_targets: index out of range");
        const std::size_t label = ds.labels[indices[j]];
        if (label >= num_classes) throw ShapeError("one_hot_targets: label out of range");
        out(label, j) = 1.0;
    }
    return out;
}

ImageDataset take(const ImageDataset& ds, std::size_t n, std::size_t offset) {
    ImageDataset out;
    out.name = ds.name;
    out.split = ds.split;
    if (offset >= ds.size()) return out;
    const std::size_t end = std::min(ds.size(), offset + n);
    out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(offset),
                      ds.labels.begin() + static_cast<std::ptrdiff_t>(end));
    out.images.assign(ds.images.begin() + static_cast<std::ptrdiff_t>(offset * kImagePixels),
                      ds.images.begin() + static_cast<std::ptrdiff_t>(end * kImagePixels));
    return out;
}

} // namespace sof
