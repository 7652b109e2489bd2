#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shakelab/data.hpp"
#include "shakelab/model.hpp"

namespace shakelab {

// Streaming means, centered second moments and centered cross moment of a
// sequence of (x, y) pairs (Welford update, Chan et al. merge).
class PairCovAccumulator {
 public:
  void update(double x, double y) noexcept {
    ++n_;
    const double inv = 1.0 / static_cast<double>(n_);
    const double dx = x - mean_x_;
    const double dy = y - mean_y_;
    mean_x_ += dx * inv;
    mean_y_ += dy * inv;
    m2_x_ += dx * (x - mean_x_);
    m2_y_ += dy * (y - mean_y_);
    cross_ += dx * (y - mean_y_);
  }

  void merge(const PairCovAccumulator& other) noexcept;

  std::uint64_t count() const noexcept { return n_; }
  double mean_x() const noexcept { return mean_x_; }
  double mean_y() const noexcept { return mean_y_; }
  double m2_x() const noexcept { return m2_x_; }
  double m2_y() const noexcept { return m2_y_; }
  double cross() const noexcept { return cross_; }
  // Population covariance, cross / n.
  double covariance() const noexcept {
    return n_ ? cross_ / static_cast<double>(n_) : 0.0;
  }

 private:
  std::uint64_t n_ = 0;
  double mean_x_ = 0, mean_y_ = 0;
  double m2_x_ = 0, m2_y_ = 0;
  double cross_ = 0;
};

// cross / sqrt(m2_x * m2_y). Throws UndefinedCorrelation when n < 2 or
// either variance is zero.
double finalize_correlation(const PairCovAccumulator& acc);

// Alignment matrix entry [m][n] is the correlation between layer m+1 of
// branch 1 and layer n+1 of branch 2; nullopt marks an undefined value.
using AlignmentMatrix = std::array<std::array<std::optional<double>, 3>, 3>;

struct CorrelationReport {
  std::string model;
  std::size_t images = 0;
  std::vector<std::optional<double>> correlation;  // per residual block
  std::vector<AlignmentMatrix> alignment;          // empty unless requested
};

struct CorrelationOptions {
  std::size_t batch_size = 64;
  bool alignment = false;
};

// Runs the dataset through the model in the test phase. For every block the
// two branch outputs (scaled by 0.5) are flattened and every corresponding
// pair is streamed into one accumulator per block.
//
// With options.alignment, the three compared layers of each branch are the
// outputs of its first conv, the component after it and the one after that
// (Conv1, BN1, ReLU2 for the batch-norm families; Conv1, ReLU2, Conv2 for
// arch_c). These all have the block output's shape. arch_b branches have
// only two such components and are rejected.
template <typename T>
CorrelationReport branch_correlation(Model<T>& model, const Dataset& data,
                                     const DatasetStats* stats,
                                     const CorrelationOptions& options = {});

template <typename T>
CorrelationReport layerwise_alignment(Model<T>& model, const Dataset& data,
                                      const DatasetStats* stats,
                                      std::size_t batch_size = 64);

// "block,correlation" with "undefined" for undefined values.
void write_correlation_csv(const std::filesystem::path& path,
                           const CorrelationReport& report);
// "block,m,n,correlation" with m, n in 1..3.
void write_alignment_csv(const std::filesystem::path& path,
                         const CorrelationReport& report);

}  // namespace shakelab
