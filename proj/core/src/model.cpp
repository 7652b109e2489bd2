#include "shakelab/model.hpp"

#include <cmath>

#include "shakelab/errors.hpp"
#include "shakelab/ops.hpp"

namespace shakelab {

std::string_view to_string(Family family) {
  switch (family) {
    case Family::ShakeResNet: return "shake_resnet";
    case Family::ArchA: return "arch_a";
    case Family::ArchB: return "arch_b";
    case Family::ArchC: return "arch_c";
  }
  return "?";
}

Family parse_family(std::string_view text) {
  if (text == "shake_resnet") return Family::ShakeResNet;
  if (text == "arch_a") return Family::ArchA;
  if (text == "arch_b") return Family::ArchB;
  if (text == "arch_c") return Family::ArchC;
  throw ConfigError("model.family: expected shake_resnet|arch_a|arch_b|arch_c, got '" +
                    std::string(text) + "'");
}

BranchSpec BranchSpec::for_family(Family family) {
  using L = LayerKind;
  switch (family) {
    case Family::ArchB: return {{L::ReLU, L::Conv3x3, L::BatchNorm}};
    case Family::ArchC: return {{L::ReLU, L::Conv3x3, L::ReLU, L::Conv3x3}};
    default:
      return {{L::ReLU, L::Conv3x3, L::BatchNorm, L::ReLU, L::Conv3x3, L::BatchNorm}};
  }
}

std::size_t BranchSpec::conv_count() const {
  std::size_t n = 0;
  for (LayerKind k : layers) n += k == LayerKind::Conv3x3;
  return n;
}

int ModelSpec::blocks_per_stage() const {
  const int per_block = family == Family::ArchB ? 1 : 2;
  return (depth - 2) / (3 * per_block);
}

void ModelSpec::validate() const {
  const int per_block = family == Family::ArchB ? 1 : 2;
  if (depth < 2 + 3 * per_block || (depth - 2) % (3 * per_block) != 0) {
    throw ConfigError("model.depth " + std::to_string(depth) + " invalid for " +
                      std::string(to_string(family)) + ": need depth = " +
                      std::to_string(3 * per_block) + "k + 2 with k >= 1");
  }
  if (family == Family::ArchC && depth != 14) {
    throw ConfigError("model.depth: arch_c is defined at depth 14, got " +
                      std::to_string(depth));
  }
  if (base_width < 2 || base_width % 2 != 0) {
    throw ConfigError("model.base_width must be a positive even number, got " +
                      std::to_string(base_width));
  }
  if (num_classes < 2) {
    throw ConfigError("model.num_classes must be at least 2, got " +
                      std::to_string(num_classes));
  }
  if (stem_width < 1 || input_channels < 1) {
    throw ConfigError("model stem and input channels must be positive");
  }
  shake.validate();
}

std::string ModelSpec::name() const {
  std::string out = std::to_string(depth) + " 2x" + std::to_string(base_width) +
                    "d " + shake.short_name();
  if (family != Family::ShakeResNet) out += " (" + std::string(to_string(family)) + ")";
  return out;
}

std::vector<BlockSpec> block_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<BlockSpec> out;
  const auto per_stage = static_cast<std::size_t>(spec.blocks_per_stage());
  std::size_t in = static_cast<std::size_t>(spec.stem_width);
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t width = static_cast<std::size_t>(spec.base_width) << stage;
    for (std::size_t b = 0; b < per_stage; ++b) {
      BlockSpec bs;
      bs.stage = stage;
      bs.index = b;
      bs.in_channels = in;
      bs.out_channels = width;
      bs.stride = (b == 0 && stage > 0) ? 2 : 1;
      if (spec.family == Family::ShakeResNet) {
        bs.skip = (bs.in_channels == bs.out_channels && bs.stride == 1)
                      ? SkipKind::Identity
                      : SkipKind::TwoFlow;
      }
      out.push_back(bs);
      in = width;
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, RngStream& rng) {
  Tensor<T> w(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : w.values()) v = static_cast<T>(rng.normal() * std);
  return w;
}

}  // namespace

template <typename T>
TwoFlowSkip build_projection_skip(ParamSet<T>& params, const std::string& prefix,
                                  std::size_t in_channels, std::size_t out_channels,
                                  std::size_t stride, RngStream& init) {
  if (in_channels == 0 || out_channels == 0 || out_channels % 2 != 0) {
    throw ConfigError("two-flow skip needs an even output width, got " +
                      std::to_string(in_channels) + " -> " +
                      std::to_string(out_channels));
  }
  if (stride == 0) throw ConfigError("two-flow skip stride must be positive");
  TwoFlowSkip s;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.stride = stride;
  const std::size_t half = out_channels / 2;
  s.flow1_weight = params.add(prefix + ".flow1.weight",
                              he_normal<T>({half, in_channels, 1, 1}, in_channels, init),
                              true);
  s.flow2_weight = params.add(prefix + ".flow2.weight",
                              he_normal<T>({half, in_channels, 1, 1}, in_channels, init),
                              true);
  return s;
}

template <typename T>
TwoFlowSkip build_downsample_skip(ParamSet<T>& params, const std::string& prefix,
                                  std::size_t in_channels, std::size_t out_channels,
                                  RngStream& init) {
  if (out_channels != 2 * in_channels) {
    throw ConfigError("downsampling skip must double the width: " +
                      std::to_string(in_channels) + " -> " +
                      std::to_string(out_channels));
  }
  return build_projection_skip(params, prefix, in_channels, out_channels, 2, init);
}

template <typename T>
Var<T> TwoFlowSkip::apply(Tape<T>& tape, ParamSet<T>& params, Var<T> input) const {
  const ops::Conv2dOptions one_by_one{1, 0};
  Var<T> f1 = ops::avgpool2d(input, 1, stride);
  f1 = ops::conv2d(f1, tape.parameter(params[flow1_weight]), one_by_one);
  Var<T> f2 = ops::pixel_shift(input, 1, 1);
  f2 = ops::avgpool2d(f2, 1, stride);
  f2 = ops::conv2d(f2, tape.parameter(params[flow2_weight]), one_by_one);
  return ops::concat_channels(f1, f2);
}

template <typename T>
ConvRef Model<T>::add_conv(const std::string& name, std::size_t in, std::size_t out,
                           std::size_t k, std::size_t stride, bool bias,
                           RngStream& init) {
  ConvRef c;
  c.stride = stride;
  c.padding = k / 2;
  c.weight = params_.add(name + ".weight", he_normal<T>({out, in, k, k}, in * k * k, init),
                         true);
  if (bias) c.bias = params_.add(name + ".bias", Tensor<T>({out}), false);
  return c;
}

template <typename T>
BatchNormRef Model<T>::add_bn(const std::string& name, std::size_t channels) {
  BatchNormRef b;
  b.scale = params_.add(name + ".scale", Tensor<T>({channels}, T{1}), false);
  b.shift = params_.add(name + ".shift", Tensor<T>({channels}), false);
  buffers_.push_back({name + ".running_mean", Tensor<T>({channels})});
  b.running_mean = buffers_.size() - 1;
  buffers_.push_back({name + ".running_var", Tensor<T>({channels}, T{1})});
  b.running_var = buffers_.size() - 1;
  return b;
}

template <typename T>
Model<T>::Model(ModelSpec spec, std::uint64_t init_seed)
    : spec_(std::move(spec)), branch_spec_(BranchSpec::for_family(spec_.family)) {
  spec_.validate();
  RngStream init = RngStream::derive(init_seed, {0x1417});
  const bool use_bn = spec_.family != Family::ArchC;
  const auto stem = static_cast<std::size_t>(spec_.stem_width);

  stem_conv_ = add_conv("stem.conv", static_cast<std::size_t>(spec_.input_channels),
                        stem, 3, 1, !use_bn, init);
  if (use_bn) stem_bn_ = add_bn("stem.bn", stem);

  const std::vector<BlockSpec> layout = block_layout(spec_);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    Block block;
    block.spec = layout[i];
    const std::string prefix = "block" + std::to_string(i);
    for (std::size_t b = 0; b < 2; ++b) {
      const std::string bp = prefix + ".branch" + std::to_string(b + 1);
      std::size_t channels = block.spec.in_channels;
      std::size_t conv_no = 0, bn_no = 0;
      for (LayerKind kind : branch_spec_.layers) {
        Layer layer{kind, {}, {}};
        if (kind == LayerKind::Conv3x3) {
          const bool first = conv_no == 0;
          ++conv_no;
          layer.conv = add_conv(bp + ".conv" + std::to_string(conv_no), channels,
                                block.spec.out_channels, 3,
                                first ? block.spec.stride : 1, !use_bn, init);
          channels = block.spec.out_channels;
        } else if (kind == LayerKind::BatchNorm) {
          ++bn_no;
          layer.bn = add_bn(bp + ".bn" + std::to_string(bn_no), channels);
        }
        block.branches[b].push_back(layer);
      }
    }
    if (block.spec.skip == SkipKind::TwoFlow) {
      if (block.spec.stride == 2) {
        block.projection = build_downsample_skip(params_, prefix + ".skip",
                                                 block.spec.in_channels,
                                                 block.spec.out_channels, init);
      } else {
        block.projection = build_projection_skip(params_, prefix + ".skip",
                                                 block.spec.in_channels,
                                                 block.spec.out_channels,
                                                 block.spec.stride, init);
      }
    }
    blocks_.push_back(std::move(block));
    ShakeCoefficients c;
    c.block = i;
    coefficients_.push_back(c);
  }

  const std::size_t features = static_cast<std::size_t>(spec_.base_width) * 4;
  const auto classes = static_cast<std::size_t>(spec_.num_classes);
  Tensor<T> fc({classes, features});
  const double bound = 1.0 / std::sqrt(static_cast<double>(features));
  for (T& v : fc.values()) v = static_cast<T>(init.uniform(-bound, bound));
  fc_weight_ = params_.add("fc.weight", std::move(fc), true);
  fc_bias_ = params_.add("fc.bias", Tensor<T>({classes}), false);
}

template <typename T>
Var<T> Model<T>::apply_conv(Tape<T>& tape, const ConvRef& conv, Var<T> x) {
  Var<T> y = ops::conv2d(x, tape.parameter(params_[conv.weight]),
                         {conv.stride, conv.padding});
  if (conv.bias) y = ops::add_channel_bias(y, tape.parameter(params_[*conv.bias]));
  return y;
}

template <typename T>
Var<T> Model<T>::apply_bn(Tape<T>& tape, const BatchNormRef& bn, Var<T> x,
                          Phase phase) {
  ops::BatchNormOptions opts;
  opts.training = phase == Phase::Train;
  return ops::batchnorm2d(x, tape.parameter(params_[bn.scale]),
                          tape.parameter(params_[bn.shift]),
                          buffers_[bn.running_mean].value,
                          buffers_[bn.running_var].value, opts);
}

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, Var<T> images, Phase phase,
                         const Observer* observer) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != static_cast<std::size_t>(spec_.input_channels) ||
      s[2] != s[3] || s[2] % 4 != 0) {
    throw ConfigError("model input must be [N," + std::to_string(spec_.input_channels) +
                      ",H,H] with H divisible by 4, got " + shape_string(s));
  }
  Var<T> x = apply_conv(tape, stem_conv_, images);
  if (stem_bn_) x = apply_bn(tape, *stem_bn_, x, phase);

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& block = blocks_[i];
    BlockTrace<T> trace;
    trace.block = i;
    trace.input = x;
    std::array<Var<T>, 2> out;
    for (std::size_t b = 0; b < 2; ++b) {
      Var<T> h = x;
      for (const Layer& layer : block.branches[b]) {
        switch (layer.kind) {
          case LayerKind::ReLU: h = ops::relu(h); break;
          case LayerKind::Conv3x3: h = apply_conv(tape, layer.conv, h); break;
          case LayerKind::BatchNorm: h = apply_bn(tape, layer.bn, h, phase); break;
        }
        if (observer) trace.layers[b].push_back(h);
      }
      out[b] = h;
    }
    Var<T> skip;
    if (block.spec.skip == SkipKind::Identity) {
      skip = x;
    } else if (block.spec.skip == SkipKind::TwoFlow) {
      skip = block.projection->apply(tape, params_, x);
    }
    x = swapped_backward_
            ? shake_combine_swapped_backward(skip, out[0], out[1], coefficients_[i], phase)
            : shake_combine(skip, out[0], out[1], coefficients_[i], phase);
    if (observer) {
      trace.branch_out = out;
      trace.output = x;
      (*observer)(trace);
    }
  }

  const std::size_t spatial = x.shape()[2];
  x = ops::avgpool2d(x, spatial, spatial);
  x = ops::flatten(x);
  return ops::linear(x, tape.parameter(params_[fc_weight_]),
                     tape.parameter(params_[fc_bias_]));
}

template <typename T>
std::size_t Model<T>::weighted_depth() const {
  return 2 + blocks_.size() * branch_spec_.conv_count();
}

template <typename T>
Model<T> build_shake_resnet(int depth, int base_width, const ShakeConfig& shake,
                            std::uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::ShakeResNet;
  spec.depth = depth;
  spec.base_width = base_width;
  spec.shake = shake;
  return Model<T>(spec, seed);
}

template <typename T>
Model<T> build_arch_a(int base_width, const ShakeConfig& shake, std::uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::ArchA;
  spec.depth = 26;
  spec.base_width = base_width;
  spec.shake = shake;
  return Model<T>(spec, seed);
}

template <typename T>
Model<T> build_arch_b(int base_width, const ShakeConfig& shake, std::uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::ArchB;
  spec.depth = 26;
  spec.base_width = base_width;
  spec.shake = shake;
  return Model<T>(spec, seed);
}

template <typename T>
Model<T> build_arch_c(int depth, int base_width, const ShakeConfig& shake,
                      std::uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::ArchC;
  spec.depth = depth;
  spec.base_width = base_width;
  spec.shake = shake;
  return Model<T>(spec, seed);
}

#define SHAKELAB_INSTANTIATE_MODEL(T)                                                 \
  template class Model<T>;                                                            \
  template TwoFlowSkip build_projection_skip(ParamSet<T>&, const std::string&,        \
                                             std::size_t, std::size_t, std::size_t,   \
                                             RngStream&);                             \
  template TwoFlowSkip build_downsample_skip(ParamSet<T>&, const std::string&,        \
                                             std::size_t, std::size_t, RngStream&);   \
  template Var<T> TwoFlowSkip::apply(Tape<T>&, ParamSet<T>&, Var<T>) const;          \
  template Model<T> build_shake_resnet(int, int, const ShakeConfig&, std::uint64_t);  \
  template Model<T> build_arch_a(int, const ShakeConfig&, std::uint64_t);             \
  template Model<T> build_arch_b(int, const ShakeConfig&, std::uint64_t);             \
  template Model<T> build_arch_c(int, int, const ShakeConfig&, std::uint64_t);

SHAKELAB_INSTANTIATE_MODEL(float)
SHAKELAB_INSTANTIATE_MODEL(double)

}  // namespace shakelab
