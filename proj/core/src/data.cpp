#include "shakelab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "shakelab/errors.hpp"

namespace shakelab {

DatasetStats compute_stats(const Dataset& data) {
  if (data.empty()) throw UsageError("cannot compute statistics of an empty dataset");
  const std::size_t C = data.front().pixels.dim(0);
  const std::size_t P = data.front().pixels.size() / C;
  std::vector<double> sum(C, 0.0);
  for (const auto& img : data) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < P; ++i) sum[c] += img.pixels[c * P + i];
  }
  const double count = static_cast<double>(data.size() * P);
  DatasetStats s;
  s.mean.resize(C);
  s.std.resize(C);
  for (std::size_t c = 0; c < C; ++c) s.mean[c] = sum[c] / count;
  std::vector<double> ss(C, 0.0);
  for (const auto& img : data) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < P; ++i) {
        const double d = img.pixels[c * P + i] - s.mean[c];
        ss[c] += d * d;
      }
  }
  for (std::size_t c = 0; c < C; ++c) {
    s.std[c] = std::sqrt(ss[c] / count);
    if (!(s.std[c] > 0)) {
      throw InputError("channel " + std::to_string(c) + " has zero variance");
    }
  }
  return s;
}

Dataset read_cifar10_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR-10 file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.empty()) throw FormatError(path.string() + ": file is empty");
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  Dataset out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError(path.string() + ": record " + std::to_string(r) +
                        " has label byte " + std::to_string(rec[0]));
    }
    LabeledImage img;
    img.label = rec[0];
    img.pixels = Tensor<float>({3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < 3 * plane; ++i) {
      img.pixels[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    }
    out.push_back(std::move(img));
  }
  return out;
}

Dataset read_cifar10_bins(std::span<const std::filesystem::path> paths) {
  Dataset out;
  for (const auto& p : paths) {
    Dataset part = read_cifar10_bin(p);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

void write_cifar10_bin(const std::filesystem::path& path, const Dataset& data) {
  std::vector<unsigned char> bytes;
  bytes.reserve(data.size() * kCifarRecordBytes);
  for (const auto& img : data) {
    if (img.pixels.shape() != Shape{3, kCifarSide, kCifarSide}) {
      throw InputError("CIFAR-10 images must be 3x32x32, got " +
                       shape_string(img.pixels.shape()));
    }
    if (img.label < 0 || img.label > 9) {
      throw InputError("CIFAR-10 label out of range: " + std::to_string(img.label));
    }
    bytes.push_back(static_cast<unsigned char>(img.label));
    for (float v : img.pixels.values()) {
      const float clamped = std::clamp(v, 0.0f, 1.0f);
      bytes.push_back(static_cast<unsigned char>(std::lround(clamped * 255.0f)));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

LabeledImage crop_and_flip(const LabeledImage& image, std::size_t pad,
                           std::size_t offset_y, std::size_t offset_x, bool flip) {
  const Shape& s = image.pixels.shape();
  const std::size_t C = s[0], H = s[1], W = s[2];
  if (offset_y > 2 * pad || offset_x > 2 * pad) {
    throw InputError("crop offset outside the padded frame");
  }
  LabeledImage out;
  out.label = image.label;
  out.pixels = Tensor<float>(s);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y + offset_y) -
                      static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t dst_x = flip ? W - 1 - x : x;
        const auto sx = static_cast<std::ptrdiff_t>(x + offset_x) -
                        static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
        out.pixels[(c * H + y) * W + dst_x] =
            image.pixels[(c * H + static_cast<std::size_t>(sy)) * W +
                         static_cast<std::size_t>(sx)];
      }
    }
  return out;
}

LabeledImage augment(const LabeledImage& image, RngStream& rng) {
  constexpr std::size_t pad = 4;
  const std::size_t oy = rng.below(2 * pad + 1);
  const std::size_t ox = rng.below(2 * pad + 1);
  const bool flip = rng.uniform() < 0.5;
  return crop_and_flip(image, pad, oy, ox, flip);
}

Dataset synthetic_dataset(int num_classes, std::size_t n, std::uint64_t seed,
                          std::size_t image_size) {
  if (num_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (image_size < 4) throw ConfigError("synthetic images must be at least 4x4");
  const double S = static_cast<double>(image_size);
  const double sigma = S / 6.0;
  Dataset out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    RngStream rng = RngStream::derive(seed, {0x5917, j});
    const int k = static_cast<int>(j % static_cast<std::size_t>(num_classes));
    const double theta = 2.0 * std::numbers::pi * k / num_classes;
    const double cy = S / 2 + S / 4 * std::sin(theta) + rng.uniform(-1.5, 1.5);
    const double cx = S / 2 + S / 4 * std::cos(theta) + rng.uniform(-1.5, 1.5);
    LabeledImage img;
    img.label = k;
    img.pixels = Tensor<float>({3, image_size, image_size});
    for (std::size_t c = 0; c < 3; ++c) {
      const double color = 0.5 + 0.5 * std::cos(theta + 2.0 * std::numbers::pi * c / 3.0);
      for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const double blob = 0.7 * color * std::exp(-d2 / (2 * sigma * sigma));
          const double v = 0.2 + blob + 0.05 * rng.normal();
          img.pixels[(c * image_size + y) * image_size + x] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    bool shuffle, RngStream& rng) {
  if (n == 0) throw UsageError("cannot iterate over an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.below(i + 1)]);
    }
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t first = 0; first < n; first += batch_size) {
    const std::size_t last = std::min(n, first + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                     order.begin() + static_cast<std::ptrdiff_t>(last));
  }
  return out;
}

template <typename T>
Batch<T> assemble_batch(const Dataset& data, std::span<const std::size_t> indices,
                        const BatchOptions& options) {
  if (indices.empty()) throw UsageError("empty batch");
  const Shape& s = data.at(indices[0]).pixels.shape();
  const std::size_t C = s[0], P = s[1] * s[2];
  if (options.stats && options.stats->mean.size() != C) {
    throw ConfigError("dataset statistics have the wrong channel count");
  }
  Batch<T> b;
  b.images = Tensor<T>({indices.size(), C, s[1], s[2]});
  b.labels.reserve(indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const LabeledImage& src = data.at(indices[n]);
    if (src.pixels.shape() != s) throw InputError("images in a batch differ in shape");
    LabeledImage aug;
    const LabeledImage* img = &src;
    if (options.augment) {
      RngStream rng = RngStream::derive(options.augment_seed, {options.epoch, indices[n]});
      aug = augment(src, rng);
      img = &aug;
    }
    T* dst = b.images.data() + n * C * P;
    for (std::size_t c = 0; c < C; ++c) {
      const double mean = options.stats ? options.stats->mean[c] : 0.0;
      const double inv = options.stats ? 1.0 / options.stats->std[c] : 1.0;
      for (std::size_t i = 0; i < P; ++i) {
        dst[c * P + i] = static_cast<T>((img->pixels[c * P + i] - mean) * inv);
      }
    }
    b.labels.push_back(img->label);
  }
  return b;
}

template <typename T>
BatchIterator<T>::BatchIterator(const Dataset& data, std::size_t batch_size,
                                bool shuffle, RngStream rng, BatchOptions options)
    : data_(&data),
      options_(options),
      batches_(batch_indices(data.size(), batch_size, shuffle, rng)) {}

template <typename T>
bool BatchIterator<T>::next(Batch<T>& out) {
  if (cursor_ >= batches_.size()) return false;
  out = assemble_batch<T>(*data_, batches_[cursor_++], options_);
  return true;
}

template Batch<float> assemble_batch(const Dataset&, std::span<const std::size_t>,
                                     const BatchOptions&);
template Batch<double> assemble_batch(const Dataset&, std::span<const std::size_t>,
                                      const BatchOptions&);
template class BatchIterator<float>;
template class BatchIterator<double>;

}  // namespace shakelab
