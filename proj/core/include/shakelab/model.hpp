#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shakelab/autograd.hpp"
#include "shakelab/rng.hpp"
#include "shakelab/shake.hpp"

namespace shakelab {

// ShakeResNet: two-branch residual network with identity / two-flow skips.
// ArchA: ShakeResNet without skip connections.
// ArchB: ArchA with a single conv per branch and twice the blocks.
// ArchC: ArchA without batch normalization (depth 14).
enum class Family { ShakeResNet, ArchA, ArchB, ArchC };

std::string_view to_string(Family family);
Family parse_family(std::string_view text);

struct ModelSpec {
  Family family = Family::ShakeResNet;
  int depth = 26;
  // Width of the first stage; stages use (W, 2W, 4W).
  int base_width = 32;
  int num_classes = 10;
  int stem_width = 16;
  int input_channels = 3;
  ShakeConfig shake;

  void validate() const;
  int blocks_per_stage() const;
  // "26 2x32d S-S-I" style label.
  std::string name() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class LayerKind { ReLU, Conv3x3, BatchNorm };

// Component sequence of one residual branch, excluding the final shake Mul.
struct BranchSpec {
  std::vector<LayerKind> layers;

  static BranchSpec for_family(Family family);
  std::size_t conv_count() const;
};

enum class SkipKind { None, Identity, TwoFlow };

struct BlockSpec {
  std::size_t stage = 0;
  std::size_t index = 0;  // within the stage
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  SkipKind skip = SkipKind::None;
};

std::vector<BlockSpec> block_layout(const ModelSpec& spec);

struct ConvRef {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

struct BatchNormRef {
  std::size_t scale = 0;
  std::size_t shift = 0;
  std::size_t running_mean = 0;  // buffer indices
  std::size_t running_var = 0;
};

// Skip made of two concatenated flows: (1x1 avgpool, stride) -> 1x1 conv,
// and the same on the input shifted one pixel down and right. Each flow maps
// in_channels -> out_channels / 2.
struct TwoFlowSkip {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 2;
  std::size_t flow1_weight = 0;
  std::size_t flow2_weight = 0;

  template <typename T>
  Var<T> apply(Tape<T>& tape, ParamSet<T>& params, Var<T> input) const;
};

// Stage-transition skip: halves resolution and doubles width. Registers
// "<prefix>.flow1.weight" and "<prefix>.flow2.weight".
template <typename T>
TwoFlowSkip build_downsample_skip(ParamSet<T>& params, const std::string& prefix,
                                  std::size_t in_channels, std::size_t out_channels,
                                  RngStream& init);

// General form used where the stem width differs from the first stage width.
template <typename T>
TwoFlowSkip build_projection_skip(ParamSet<T>& params, const std::string& prefix,
                                  std::size_t in_channels, std::size_t out_channels,
                                  std::size_t stride, RngStream& init);

// Activations seen inside one residual block during a forward pass.
template <typename T>
struct BlockTrace {
  std::size_t block = 0;
  Var<T> input;
  // Output of every branch component, in BranchSpec order.
  std::array<std::vector<Var<T>>, 2> layers;
  // Branch outputs before the shake multiplication.
  std::array<Var<T>, 2> branch_out;
  Var<T> output;
};

template <typename T>
class Model {
 public:
  using Observer = std::function<void(const BlockTrace<T>&)>;

  // Builds and initializes every parameter from init_seed.
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  std::vector<NamedTensor<T>>& buffers() noexcept { return buffers_; }
  const std::vector<NamedTensor<T>>& buffers() const noexcept { return buffers_; }
  std::span<ShakeCoefficients> coefficients() noexcept { return coefficients_; }
  std::span<const ShakeCoefficients> coefficients() const noexcept {
    return coefficients_;
  }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  const BlockSpec& block(std::size_t i) const { return blocks_.at(i).spec; }
  const BranchSpec& branch_spec() const noexcept { return branch_spec_; }

  // images: [N, input_channels, H, W] with H == W divisible by 4. Returns
  // [N, num_classes] logits. In the Train phase every block needs forward
  // coefficients for this batch size; in the Test phase all coefficients
  // are 0.5 and batch norm uses its running statistics.
  Var<T> forward(Tape<T>& tape, Var<T> images, Phase phase,
                 const Observer* observer = nullptr);

  // Weighted layers on one input-to-output path: stem + branch convs + fc.
  std::size_t weighted_depth() const;

  // Negative control for verification: swaps beta and 1 - beta in every
  // shake node's backward rule.
  void set_swapped_backward_for_testing(bool swapped) { swapped_backward_ = swapped; }

 private:
  struct Layer {
    LayerKind kind;
    ConvRef conv;
    BatchNormRef bn;
  };
  struct Block {
    BlockSpec spec;
    std::array<std::vector<Layer>, 2> branches;
    std::optional<TwoFlowSkip> projection;
  };

  ConvRef add_conv(const std::string& name, std::size_t in, std::size_t out,
                   std::size_t k, std::size_t stride, bool bias, RngStream& init);
  BatchNormRef add_bn(const std::string& name, std::size_t channels);
  Var<T> apply_conv(Tape<T>& tape, const ConvRef& conv, Var<T> x);
  Var<T> apply_bn(Tape<T>& tape, const BatchNormRef& bn, Var<T> x, Phase phase);

  ModelSpec spec_;
  BranchSpec branch_spec_;
  ParamSet<T> params_;
  std::vector<NamedTensor<T>> buffers_;
  ConvRef stem_conv_;
  std::optional<BatchNormRef> stem_bn_;
  std::vector<Block> blocks_;
  std::vector<ShakeCoefficients> coefficients_;
  std::size_t fc_weight_ = 0;
  std::size_t fc_bias_ = 0;
  bool swapped_backward_ = false;
};

template <typename T>
std::size_t count_params(const Model<T>& model) {
  return model.params().scalar_count();
}

template <typename T>
Model<T> build_shake_resnet(int depth, int base_width, const ShakeConfig& shake,
                            std::uint64_t seed);
template <typename T>
Model<T> build_arch_a(int base_width, const ShakeConfig& shake, std::uint64_t seed);
template <typename T>
Model<T> build_arch_b(int base_width, const ShakeConfig& shake, std::uint64_t seed);
template <typename T>
Model<T> build_arch_c(int depth, int base_width, const ShakeConfig& shake,
                      std::uint64_t seed);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace shakelab
