#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sof/autodiff.hpp"

namespace sof {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kNumClasses = 10;

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct RawImages {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels; // count * rows * cols, row-major per image
};

struct ImageDataset {
    std::vector<double> images; // N x 784 row-major, every entry in [0, 1]
    std::vector<std::size_t> labels;
    std::string name;
    std::string split;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> image(std::size_t i) const { return {images.data() + i * kImagePixels, kImagePixels}; }
    /// Throws unless images and labels align and every value is in range.
    void validate() const;
};

/// Reads IDX bytes from disk, inflating gzip input (detected by 0x1f8b).
std::vector<std::uint8_t> read_idx_bytes(const std::filesystem::path& path);

RawImages decode_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> decode_idx_labels(std::span<const std::uint8_t> bytes,
                                            std::size_t num_classes = kNumClasses);
std::vector<std::uint8_t> encode_idx_images(const RawImages& raw);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

RawImages load_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

/// Divides by 255 and flattens each image row-major; images must be 28 x 28.
std::vector<double> normalize_and_flatten(const RawImages& raw);

/// Loads `<dir>/train-images-idx3-ubyte[.gz]` and friends for split "train"
/// or "test". Returns nothing when the files are absent; throws when they are
/// present but malformed.
std::optional<ImageDataset> load_mnist_split(const std::filesystem::path& dir, const std::string& name,
                                             const std::string& split);

/// Index batches over a permutation keyed by (seed, epoch); the last partial
/// batch is kept.
std::vector<std::vector<std::size_t>> batch_iter(const ImageDataset& ds, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);

/// Images with one Gaussian blob per class at a class-specific location, with
/// jitter and pixel noise. Labels are balanced (n mod k classes get one extra)
/// and shuffled. Deterministic per (seed, stream).
ImageDataset synthetic_onehot_dataset(std::size_t n_samples, std::size_t n_classes, std::uint64_t seed,
                                      std::uint64_t stream = 0);

/// Columns `indices` of the dataset as an (784 x batch) input matrix.
Tensor gather_images(const ImageDataset& ds, std::span<const std::size_t> indices);
/// One-hot targets (classes x batch).
Tensor one_hot_targets(const ImageDataset& ds, std::span<const std::size_t> indices,
                       std::size_t num_classes = kNumClasses);
/// First `n` examples (all when n >= size).
ImageDataset take(const ImageDataset& ds, std::size_t n, std::size_t offset = 0);

} // namespace sof
