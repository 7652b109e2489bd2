#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "shakelab/rng.hpp"
#include "shakelab/tensor.hpp"

namespace shakelab {

struct LabeledImage {
  int label = 0;
  Tensor<float> pixels;  // [C, H, W], values in [0, 1]
};

using Dataset = std::vector<LabeledImage>;

// Per-channel statistics of a training set, used to normalize inputs.
struct DatasetStats {
  std::vector<double> mean;
  std::vector<double> std;
};

DatasetStats compute_stats(const Dataset& data);

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;

// CIFAR-10 binary batch: records of 1 label byte followed by 1024 red, 1024
// green and 1024 blue bytes (row-major 32x32). Bytes are scaled by 1/255.
Dataset read_cifar10_bin(const std::filesystem::path& path);
Dataset read_cifar10_bins(std::span<const std::filesystem::path> paths);
// Inverse of read_cifar10_bin; pixels are rounded to the nearest byte.
void write_cifar10_bin(const std::filesystem::path& path, const Dataset& data);

// Deterministic crop of the image zero-padded by `pad` on every side, taken
// at (offset_y, offset_x) in the padded frame, optionally mirrored.
LabeledImage crop_and_flip(const LabeledImage& image, std::size_t pad,
                           std::size_t offset_y, std::size_t offset_x, bool flip);

// Pad-4 random crop followed by a horizontal flip with probability 0.5.
LabeledImage augment(const LabeledImage& image, RngStream& rng);

// Class-conditional Gaussian blobs on a noisy background. Labels cycle
// 0..K-1, so class counts differ by at most one. Image j depends only on
// (seed, j).
Dataset synthetic_dataset(int num_classes, std::size_t n, std::uint64_t seed,
                          std::size_t image_size = 32);

// Index batches for one epoch. Shuffled with a Fisher-Yates pass over rng
// when requested; the final short batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    bool shuffle, RngStream& rng);

template <typename T>
struct Batch {
  Tensor<T> images;  // [N, C, H, W]
  std::vector<int> labels;
};

struct BatchOptions {
  const DatasetStats* stats = nullptr;  // normalize when set
  bool augment = false;
  // Image i of epoch e is augmented with RngStream::derive(seed, {e, i}).
  std::uint64_t augment_seed = 0;
  std::uint64_t epoch = 0;
};

template <typename T>
Batch<T> assemble_batch(const Dataset& data, std::span<const std::size_t> indices,
                        const BatchOptions& options = {});

// Sequence of (images, labels) batches over a dataset for one epoch.
template <typename T>
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, bool shuffle,
                RngStream rng, BatchOptions options = {});

  bool next(Batch<T>& out);
  std::size_t num_batches() const noexcept { return batches_.size(); }

 private:
  const Dataset* data_;
  BatchOptions options_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t cursor_ = 0;
};

extern template class BatchIterator<float>;
extern template class BatchIterator<double>;

}  // namespace shakelab
