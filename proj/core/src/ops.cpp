#include "shakelab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "shakelab/errors.hpp"

namespace shakelab::ops {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ConfigError(std::string(op) + " expects a rank-" +
                      std::to_string(rank) + " tensor, got " + shape_string(s));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w;
  std::size_t cout, k;
  std::size_t stride, pad;
  std::size_t ho, wo;

  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

// Images per GEMM so that the column buffer stays around 4M scalars.
std::size_t conv_chunk(const ConvGeometry& g) {
  const std::size_t per_image = g.patch() * g.pixels();
  const std::size_t budget = std::size_t{1} << 22;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_image, 1), 1, g.n);
}

// Column buffer layout: row = (c, ki, kj), column = (image in chunk, oh, ow).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t first, std::size_t count,
            T* col) {
  const std::size_t cols = count * g.pixels();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t b = 0; b < count; ++b) {
          const T* plane = x + ((first + b) * g.cin + c) * g.h * g.w;
          T* out = row + b * g.pixels();
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
            T* orow = out + oh * g.wo;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(orow, orow + g.wo, T{0});
              continue;
            }
            const T* irow = plane + static_cast<std::size_t>(ih) * g.w;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
              orow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w))
                             ? T{0}
                             : irow[iw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::size_t first,
                std::size_t count, T* dx) {
  const std::size_t cols = count * g.pixels();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * cols;
        for (std::size_t b = 0; b < count; ++b) {
          T* plane = dx + ((first + b) * g.cin + c) * g.h * g.w;
          const T* in = row + b * g.pixels();
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * g.stride + ki) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* drow = plane + static_cast<std::size_t>(ih) * g.w;
            const T* irow = in + oh * g.wo;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kj) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
              drow[iw] += irow[ow];
            }
          }
        }
      }
    }
  }
}

// Copies between the NCHW output of a chunk and the (Cout, chunk*pixels)
// GEMM layout.
template <typename T>
void gather_chunk(const T* y, const ConvGeometry& g, std::size_t first,
                  std::size_t count, T* mat) {
  const std::size_t P = g.pixels();
  const std::size_t cols = count * P;
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* src = y + ((first + b) * g.cout + co) * P;
      std::copy(src, src + P, mat + co * cols + b * P);
    }
  }
}

template <typename T>
void scatter_chunk(const T* mat, const ConvGeometry& g, std::size_t first,
                   std::size_t count, T* y) {
  const std::size_t P = g.pixels();
  const std::size_t cols = count * P;
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* src = mat + co * cols + b * P;
      std::copy(src, src + P, y + ((first + b) * g.cout + co) * P);
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Conv2dOptions options) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ks, 4, "conv2d kernel");
  if (ks[2] != ks[3] || (ks[2] != 1 && ks[2] != 3)) {
    throw ConfigError("conv2d supports square 1x1 or 3x3 kernels, got " +
                      shape_string(ks));
  }
  if (ks[1] != xs[1]) {
    throw ConfigError("conv2d channel mismatch: input " + shape_string(xs) +
                      " vs kernel " + shape_string(ks));
  }
  if (options.stride == 0) throw ConfigError("conv2d stride must be positive");
  if (xs[2] + 2 * options.padding < ks[2] || xs[3] + 2 * options.padding < ks[3]) {
    throw ConfigError("conv2d kernel larger than padded input " + shape_string(xs));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], options.stride,
                 options.padding, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  Tensor<T> out({g.n, g.cout, g.ho, g.wo});
  const std::size_t chunk = conv_chunk(g);
  std::vector<T> col(g.patch() * chunk * g.pixels());
  std::vector<T> res(g.cout * chunk * g.pixels());
  Eigen::Map<const MatR<T>> wmat(kernel.value().data(), g.cout, g.patch());
  for (std::size_t first = 0; first < g.n; first += chunk) {
    const std::size_t count = std::min(chunk, g.n - first);
    const std::size_t cols = count * g.pixels();
    im2col(input.value().data(), g, first, count, col.data());
    Eigen::Map<const MatR<T>> cmat(col.data(), g.patch(), cols);
    Eigen::Map<MatR<T>> rmat(res.data(), g.cout, cols);
    rmat.noalias() = wmat * cmat;
    scatter_chunk(res.data(), g, first, count, out.data());
  }

  const std::size_t xid = input.id();
  const std::size_t kid = kernel.id();
  return input.tape().record(
      "conv2d", std::move(out), {input, kernel},
      [g, xid, kid](Tape<T>& tape, std::size_t self) {
        const bool want_x = tape.requires_grad(xid);
        const bool want_k = tape.requires_grad(kid);
        const Tensor<T>& x = tape.value(xid);
        const Tensor<T>& dy = tape.grad(self);
        const std::size_t chunk = conv_chunk(g);
        std::vector<T> col(g.patch() * chunk * g.pixels());
        std::vector<T> gy(g.cout * chunk * g.pixels());
        Eigen::Map<const MatR<T>> wmat(tape.value(kid).data(), g.cout, g.patch());
        T* dx = want_x ? tape.grad(xid).data() : nullptr;
        T* dk = want_k ? tape.grad(kid).data() : nullptr;
        for (std::size_t first = 0; first < g.n; first += chunk) {
          const std::size_t count = std::min(chunk, g.n - first);
          const std::size_t cols = count * g.pixels();
          gather_chunk(dy.data(), g, first, count, gy.data());
          Eigen::Map<const MatR<T>> gmat(gy.data(), g.cout, cols);
          if (want_k) {
            im2col(x.data(), g, first, count, col.data());
            Eigen::Map<const MatR<T>> cmat(col.data(), g.patch(), cols);
            Eigen::Map<MatR<T>> dkmat(dk, g.cout, g.patch());
            dkmat.noalias() += gmat * cmat.transpose();
          }
          if (want_x) {
            Eigen::Map<MatR<T>> cmat(col.data(), g.patch(), cols);
            cmat.noalias() = wmat.transpose() * gmat;
            col2im_add(col.data(), g, first, count, dx);
          }
        }
      });
}

template <typename T>
Var<T> add_channel_bias(Var<T> input, Var<T> bias) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "add_channel_bias");
  if (bias.shape() != Shape{xs[1]}) {
    throw ConfigError("channel bias " + shape_string(bias.shape()) +
                      " does not match input " + shape_string(xs));
  }
  const std::size_t N = xs[0], C = xs[1], P = xs[2] * xs[3];
  Tensor<T> out = input.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      T* p = out.data() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) p[i] += b[c];
    }
  const std::size_t xid = input.id(), bid = bias.id();
  return input.tape().record(
      "add_channel_bias", std::move(out), {input, bias},
      [xid, bid, N, C, P](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& dy = tape.grad(self);
        if (tape.requires_grad(xid)) tape.grad(xid) += dy;
        if (tape.requires_grad(bid)) {
          Tensor<T>& db = tape.grad(bid);
          for (std::size_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::size_t n = 0; n < N; ++n) {
              const T* p = dy.data() + (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) s += p[i];
            }
            db[c] += static_cast<T>(s);
          }
        }
      });
}

template <typename T>
Var<T> batchnorm2d(Var<T> input, Var<T> scale, Var<T> shift,
                   Tensor<T>& running_mean, Tensor<T>& running_var,
                   BatchNormOptions options) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "batchnorm2d");
  const std::size_t N = xs[0], C = xs[1], P = xs[2] * xs[3];
  const Shape cshape{C};
  if (scale.shape() != cshape || shift.shape() != cshape ||
      running_mean.shape() != cshape || running_var.shape() != cshape) {
    throw ConfigError("batchnorm2d parameters must have shape " +
                      shape_string(cshape));
  }
  if (!(options.eps > 0)) throw ConfigError("batchnorm2d eps must be positive");
  const std::size_t M = N * P;
  if (options.training && M < 2) {
    throw ConfigError("batchnorm2d training needs at least 2 values per channel");
  }

  const Tensor<T>& x = input.value();
  const Tensor<T>& gamma = scale.value();
  const Tensor<T>& beta = shift.value();
  Tensor<T> out(xs);
  // Normalized input and 1/sqrt(var+eps) per channel, kept for backward.
  Tensor<T> xhat(xs);
  std::vector<double> inv_std(C);

  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (options.training) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      mean = s / static_cast<double>(M);
      double ss = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(M);
      const double unbiased = ss / static_cast<double>(M - 1);
      running_mean[c] = static_cast<T>((1.0 - options.momentum) * running_mean[c] +
                                       options.momentum * mean);
      running_var[c] = static_cast<T>((1.0 - options.momentum) * running_var[c] +
                                      options.momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + options.eps);
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const double h = (x[off + i] - mean) * inv_std[c];
        xhat[off + i] = static_cast<T>(h);
        out[off + i] = static_cast<T>(gamma[c] * h + beta[c]);
      }
    }
  }

  const std::size_t xid = input.id(), gid = scale.id(), bid = shift.id();
  const bool training = options.training;
  return input.tape().record(
      "batchnorm2d", std::move(out), {input, scale, shift},
      [xid, gid, bid, N, C, P, M, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& dy = tape.grad(self);
        const Tensor<T>& gamma = tape.value(gid);
        const bool want_x = tape.requires_grad(xid);
        T* dx = want_x ? tape.grad(xid).data() : nullptr;
        T* dg = tape.requires_grad(gid) ? tape.grad(gid).data() : nullptr;
        T* db = tape.requires_grad(bid) ? tape.grad(bid).data() : nullptr;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat[off + i];
            }
          }
          if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
          if (db) db[c] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const double k = gamma[c] * inv_std[c];
          if (training) {
            const double mean_dy = sum_dy / static_cast<double>(M);
            const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) {
                dx[off + i] += static_cast<T>(
                    k * (dy[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat));
              }
            }
          } else {
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) {
                dx[off + i] += static_cast<T>(k * dy[off + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> input) {
  Tensor<T> out = input.value();
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  const std::size_t xid = input.id();
  return input.tape().record(
      "relu", std::move(out), {input}, [xid](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& x = tape.value(xid);
        const Tensor<T>& dy = tape.grad(self);
        Tensor<T>& dx = tape.grad(xid);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > T{0}) dx[i] += dy[i];
        }
      });
}

template <typename T>
Var<T> avgpool2d(Var<T> input, std::size_t window, std::size_t stride) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "avgpool2d");
  if (window == 0 || stride == 0) {
    throw ConfigError("avgpool2d window and stride must be positive");
  }
  if (window > xs[2] || window > xs[3]) {
    throw ConfigError("avgpool2d window " + std::to_string(window) +
                      " larger than input " + shape_string(xs));
  }
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t Ho = (H - window) / stride + 1;
  const std::size_t Wo = (W - window) / stride + 1;
  const T inv = T{1} / static_cast<T>(window * window);
  const Tensor<T>& x = input.value();
  Tensor<T> out({N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x.data() + nc * H * W;
    T* oplane = out.data() + nc * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T s{0};
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j)
            s += plane[(oh * stride + i) * W + ow * stride + j];
        oplane[oh * Wo + ow] = s * inv;
      }
  }
  const std::size_t xid = input.id();
  return input.tape().record(
      "avgpool2d", std::move(out), {input},
      [=](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& dy = tape.grad(self);
        Tensor<T>& dx = tape.grad(xid);
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          T* plane = dx.data() + nc * H * W;
          const T* gplane = dy.data() + nc * Ho * Wo;
          for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const T g = gplane[oh * Wo + ow] * inv;
              for (std::size_t i = 0; i < window; ++i)
                for (std::size_t j = 0; j < window; ++j)
                  plane[(oh * stride + i) * W + ow * stride + j] += g;
            }
        }
      });
}

namespace {
// dst[h][w] += src[h - dy][w - dx] over the in-range region.
template <typename T>
void shift_add(const T* src, T* dst, std::size_t planes, std::size_t H,
               std::size_t W, int dy, int dx) {
  const auto h = static_cast<std::ptrdiff_t>(H);
  const auto w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* s = src + p * H * W;
    T* d = dst + p * H * W;
    for (std::ptrdiff_t oh = std::max<std::ptrdiff_t>(0, dy);
         oh < std::min<std::ptrdiff_t>(h, h + dy); ++oh) {
      for (std::ptrdiff_t ow = std::max<std::ptrdiff_t>(0, dx);
           ow < std::min<std::ptrdiff_t>(w, w + dx); ++ow) {
        d[oh * w + ow] += s[(oh - dy) * w + (ow - dx)];
      }
    }
  }
}
}  // namespace

template <typename T>
Var<T> pixel_shift(Var<T> input, int dy, int dx) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "pixel_shift");
  const std::size_t planes = xs[0] * xs[1], H = xs[2], W = xs[3];
  Tensor<T> out(xs);
  shift_add(input.value().data(), out.data(), planes, H, W, dy, dx);
  const std::size_t xid = input.id();
  return input.tape().record(
      "pixel_shift", std::move(out), {input},
      [=](Tape<T>& tape, std::size_t self) {
        shift_add(tape.grad(self).data(), tape.grad(xid).data(), planes, H, W,
                  -dy, -dx);
      });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(as, 4, "concat_channels");
  require_rank(bs, 4, "concat_channels");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw ConfigError("concat_channels batch/spatial mismatch: " +
                      shape_string(as) + " vs " + shape_string(bs));
  }
  const std::size_t N = as[0], Ca = as[1], Cb = bs[1], P = as[2] * as[3];
  Tensor<T> out({N, Ca + Cb, as[2], as[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.value().data() + n * Ca * P, Ca * P,
                out.data() + n * (Ca + Cb) * P);
    std::copy_n(b.value().data() + n * Cb * P, Cb * P,
                out.data() + (n * (Ca + Cb) + Ca) * P);
  }
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      "concat_channels", std::move(out), {a, b},
      [=](Tape<T>& tape, std::size_t self) {
        const T* dy = tape.grad(self).data();
        if (tape.requires_grad(aid)) {
          T* da = tape.grad(aid).data();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < Ca * P; ++i)
              da[n * Ca * P + i] += dy[n * (Ca + Cb) * P + i];
        }
        if (tape.requires_grad(bid)) {
          T* db = tape.grad(bid).data();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < Cb * P; ++i)
              db[n * Cb * P + i] += dy[(n * (Ca + Cb) + Ca) * P + i];
        }
      });
}

template <typename T>
Var<T> slice_channels(Var<T> input, std::size_t begin, std::size_t count) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "slice_channels");
  if (count == 0 || begin + count > xs[1]) {
    throw ConfigError("slice_channels range out of bounds for " + shape_string(xs));
  }
  const std::size_t N = xs[0], C = xs[1], P = xs[2] * xs[3];
  Tensor<T> out({N, count, xs[2], xs[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(input.value().data() + (n * C + begin) * P, count * P,
                out.data() + n * count * P);
  }
  const std::size_t xid = input.id();
  return input.tape().record(
      "slice_channels", std::move(out), {input},
      [=](Tape<T>& tape, std::size_t self) {
        const T* dy = tape.grad(self).data();
        T* dx = tape.grad(xid).data();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < count * P; ++i)
            dx[(n * C + begin) * P + i] += dy[n * count * P + i];
      });
}

template <typename T>
Var<T> flatten(Var<T> input) {
  const Shape& xs = input.shape();
  if (xs.empty()) throw ConfigError("flatten needs at least one axis");
  const std::size_t n = xs[0];
  const std::size_t rest = input.value().size() / n;
  const std::size_t xid = input.id();
  return input.tape().record(
      "flatten", input.value().reshaped({n, rest}), {input},
      [xid](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& dy = tape.grad(self);
        Tensor<T>& dx = tape.grad(xid);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
      });
}

template <typename T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 2, "linear input");
  require_rank(ws, 2, "linear weight");
  if (ws[1] != xs[1] || bias.shape() != Shape{ws[0]}) {
    throw ConfigError("linear dimension mismatch: input " + shape_string(xs) +
                      ", weight " + shape_string(ws) + ", bias " +
                      shape_string(bias.shape()));
  }
  const std::size_t N = xs[0], D = xs[1], K = ws[0];
  Tensor<T> out({N, K});
  Eigen::Map<const MatR<T>> X(input.value().data(), N, D);
  Eigen::Map<const MatR<T>> Wm(weight.value().data(), K, D);
  Eigen::Map<MatR<T>> Y(out.data(), N, K);
  Y.noalias() = X * Wm.transpose();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) Y(n, k) += bias.value()[k];

  const std::size_t xid = input.id(), wid = weight.id(), bid = bias.id();
  return input.tape().record(
      "linear", std::move(out), {input, weight, bias},
      [=](Tape<T>& tape, std::size_t self) {
        Eigen::Map<const MatR<T>> G(tape.grad(self).data(), N, K);
        if (tape.requires_grad(xid)) {
          Eigen::Map<const MatR<T>> Wm(tape.value(wid).data(), K, D);
          Eigen::Map<MatR<T>> dX(tape.grad(xid).data(), N, D);
          dX.noalias() += G * Wm;
        }
        if (tape.requires_grad(wid)) {
          Eigen::Map<const MatR<T>> X(tape.value(xid).data(), N, D);
          Eigen::Map<MatR<T>> dW(tape.grad(wid).data(), K, D);
          dW.noalias() += G.transpose() * X;
        }
        if (tape.requires_grad(bid)) {
          Tensor<T>& db = tape.grad(bid);
          for (std::size_t k = 0; k < K; ++k) {
            T s{0};
            for (std::size_t n = 0; n < N; ++n) s += G(n, k);
            db[k] += s;
          }
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("add shape mismatch: " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
  Tensor<T> out = a.value();
  out += b.value();
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record("add", std::move(out), {a, b},
                         [aid, bid](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& dy = tape.grad(self);
                           if (tape.requires_grad(aid)) tape.grad(aid) += dy;
                           if (tape.requires_grad(bid)) tape.grad(bid) += dy;
                         });
}

template <typename T>
Var<T> scale(Var<T> input, double factor) {
  const T f = static_cast<T>(factor);
  Tensor<T> out = input.value();
  for (T& v : out.values()) v *= f;
  const std::size_t xid = input.id();
  return input.tape().record("scale", std::move(out), {input},
                             [xid, f](Tape<T>& tape, std::size_t self) {
                               const Tensor<T>& dy = tape.grad(self);
                               Tensor<T>& dx = tape.grad(xid);
                               for (std::size_t i = 0; i < dx.size(); ++i)
                                 dx[i] += f * dy[i];
                             });
}

template <typename T>
Var<T> sum(Var<T> input) {
  double s = 0;
  for (T v : input.value().values()) s += v;
  const std::size_t xid = input.id();
  return input.tape().record("sum", Tensor<T>({1}, static_cast<T>(s)), {input},
                             [xid](Tape<T>& tape, std::size_t self) {
                               const T g = tape.grad(self)[0];
                               for (T& v : tape.grad(xid).values()) v += g;
                             });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels,
                             Reduction reduction) {
  const Shape& ls = logits.shape();
  require_rank(ls, 2, "softmax_cross_entropy");
  const std::size_t N = ls[0], K = ls[1];
  if (K < 2) throw ConfigError("softmax_cross_entropy needs at least 2 classes");
  if (labels.size() != N) {
    throw InputError("softmax_cross_entropy got " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(N));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw InputError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(K) + ")");
    }
  }
  const Tensor<T>& z = logits.value();
  Tensor<T> probs({N, K});
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = z.data() + n * K;
    const double m = *std::max_element(row, row + K);
    double denom = 0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - m);
    const double log_denom = std::log(denom);
    for (std::size_t k = 0; k < K; ++k) {
      probs[n * K + k] = static_cast<T>(std::exp(row[k] - m - log_denom));
    }
    total += log_denom - (row[labels[n]] - m);
  }
  const double norm = reduction == Reduction::Mean ? 1.0 / static_cast<double>(N) : 1.0;
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t zid = logits.id();
  return logits.tape().record(
      "softmax_cross_entropy", Tensor<T>({1}, static_cast<T>(total * norm)),
      {logits},
      [=, probs = std::move(probs), ys = std::move(ys)](Tape<T>& tape,
                                                       std::size_t self) {
        const double g = tape.grad(self)[0] * norm;
        Tensor<T>& dz = tape.grad(zid);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k) {
            const double onehot = static_cast<int>(k) == ys[n] ? 1.0 : 0.0;
            dz[n * K + k] += static_cast<T>(g * (probs[n * K + k] - onehot));
          }
      });
}

#define SHAKELAB_INSTANTIATE_OPS(T)                                               \
  template Var<T> conv2d(Var<T>, Var<T>, Conv2dOptions);                          \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                               \
  template Var<T> batchnorm2d(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&,     \
                              BatchNormOptions);                                  \
  template Var<T> relu(Var<T>);                                                   \
  template Var<T> avgpool2d(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> pixel_shift(Var<T>, int, int);                                  \
  template Var<T> concat_channels(Var<T>, Var<T>);                                \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);               \
  template Var<T> flatten(Var<T>);                                                \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                 \
  template Var<T> add(Var<T>, Var<T>);                                            \
  template Var<T> scale(Var<T>, double);                                          \
  template Var<T> sum(Var<T>);                                                    \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>, Reduction);

SHAKELAB_INSTANTIATE_OPS(float)
SHAKELAB_INSTANTIATE_OPS(double)

}  // namespace shakelab::ops
