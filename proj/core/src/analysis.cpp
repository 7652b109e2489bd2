#include "shakelab/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "shakelab/errors.hpp"

namespace shakelab {

void PairCovAccumulator::merge(const PairCovAccumulator& other) noexcept {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  const double dx = other.mean_x_ - mean_x_;
  const double dy = other.mean_y_ - mean_y_;
  const double w = na * nb / n;
  mean_x_ += dx * nb / n;
  mean_y_ += dy * nb / n;
  m2_x_ += other.m2_x_ + dx * dx * w;
  m2_y_ += other.m2_y_ + dy * dy * w;
  cross_ += other.cross_ + dx * dy * w;
  n_ += other.n_;
}

double finalize_correlation(const PairCovAccumulator& acc) {
  if (acc.count() < 2) {
    throw UndefinedCorrelation("correlation needs at least two samples");
  }
  if (!(acc.m2_x() > 0) || !(acc.m2_y() > 0)) {
    throw UndefinedCorrelation("correlation undefined: a stream has zero variance");
  }
  return acc.cross() / std::sqrt(acc.m2_x() * acc.m2_y());
}

namespace {

std::optional<double> try_correlation(const PairCovAccumulator& acc) {
  try {
    return finalize_correlation(acc);
  } catch (const UndefinedCorrelation&) {
    return std::nullopt;
  }
}

template <typename T>
void stream_pairs(PairCovAccumulator& acc, const Tensor<T>& a, const Tensor<T>& b,
                  double scale) {
  if (a.shape() != b.shape()) {
    throw ConfigError("cannot correlate activations of shapes " +
                      shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc.update(static_cast<double>(a[i]) * scale, static_cast<double>(b[i]) * scale);
  }
}

// Indices (into BranchSpec::layers) of the three compared layers.
std::array<std::size_t, 3> alignment_layers(const BranchSpec& spec) {
  std::size_t first_conv = spec.layers.size();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i] == LayerKind::Conv3x3) {
      first_conv = i;
      break;
    }
  }
  if (first_conv + 3 > spec.layers.size()) {
    throw ConfigError("layer alignment needs three components from the first conv on; "
                      "this branch structure has fewer");
  }
  return {first_conv, first_conv + 1, first_conv + 2};
}

}  // namespace

template <typename T>
CorrelationReport branch_correlation(Model<T>& model, const Dataset& data,
                                     const DatasetStats* stats,
                                     const CorrelationOptions& options) {
  if (data.empty()) throw UsageError("correlation analysis needs a non-empty dataset");
  const std::size_t blocks = model.num_blocks();
  std::array<std::size_t, 3> layer_idx{};
  if (options.alignment) layer_idx = alignment_layers(model.branch_spec());

  std::vector<PairCovAccumulator> outputs(blocks);
  std::vector<std::array<std::array<PairCovAccumulator, 3>, 3>> align(
      options.alignment ? blocks : 0);

  typename Model<T>::Observer observer = [&](const BlockTrace<T>& trace) {
    stream_pairs(outputs[trace.block], trace.branch_out[0].value(),
                 trace.branch_out[1].value(), 0.5);
    if (!options.alignment) return;
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t n = 0; n < 3; ++n)
        stream_pairs(align[trace.block][m][n], trace.layers[0][layer_idx[m]].value(),
                     trace.layers[1][layer_idx[n]].value(), 1.0);
  };

  RngStream unused;
  BatchOptions bopts;
  bopts.stats = stats;
  BatchIterator<T> it(data, options.batch_size, false, unused, bopts);
  Batch<T> batch;
  while (it.next(batch)) {
    Tape<T> tape;
    Var<T> x = tape.input(std::move(batch.images));
    model.forward(tape, x, Phase::Test, &observer);
  }

  CorrelationReport report;
  report.model = model.spec().name();
  report.images = data.size();
  for (const auto& acc : outputs) report.correlation.push_back(try_correlation(acc));
  for (const auto& grid : align) {
    AlignmentMatrix mtx;
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t n = 0; n < 3; ++n) mtx[m][n] = try_correlation(grid[m][n]);
    report.alignment.push_back(mtx);
  }
  return report;
}

template <typename T>
CorrelationReport layerwise_alignment(Model<T>& model, const Dataset& data,
                                      const DatasetStats* stats, std::size_t batch_size) {
  return branch_correlation(model, data, stats, {batch_size, true});
}

namespace {
std::string format_value(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", *v);
  return buf;
}
}  // namespace

void write_correlation_csv(const std::filesystem::path& path,
                           const CorrelationReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "block,correlation\n";
  for (std::size_t i = 0; i < report.correlation.size(); ++i) {
    out << i << ',' << format_value(report.correlation[i]) << '\n';
  }
}

void write_alignment_csv(const std::filesystem::path& path,
                         const CorrelationReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "block,m,n,correlation\n";
  for (std::size_t i = 0; i < report.alignment.size(); ++i)
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t n = 0; n < 3; ++n)
        out << i << ',' << m + 1 << ',' << n + 1 << ','
            << format_value(report.alignment[i][m][n]) << '\n';
}

template CorrelationReport branch_correlation(Model<float>&, const Dataset&,
                                              const DatasetStats*,
                                              const CorrelationOptions&);
template CorrelationReport branch_correlation(Model<double>&, const Dataset&,
                                              const DatasetStats*,
                                              const CorrelationOptions&);
template CorrelationReport layerwise_alignment(Model<float>&, const Dataset&,
                                               const DatasetStats*, std::size_t);
template CorrelationReport layerwise_alignment(Model<double>&, const Dataset&,
                                               const DatasetStats*, std::size_t);

}  // namespace shakelab
