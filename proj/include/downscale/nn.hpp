#pragma once

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "downscale/container.hpp"
#include "downscale/errors.hpp"
#include "downscale/grid.hpp"
#include "downscale/tensor.hpp"

namespace dsc {

enum class Mode { Train, Eval };

namespace detail {

inline void blas_gemm(bool ta, bool tb, int m, int n, int k, float alpha,
                      const float* a, int lda, const float* b, int ldb,
                      float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

inline void blas_gemm(bool ta, bool tb, int m, int n, int k, double alpha,
                      const double* a, int lda, const double* b, int ldb,
                      double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

// C[m,n] (+)= op(A) op(B) with row-major operands sized from the logical
// m,n,k; lda/ldb are the physical row strides of A and B as stored.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  blas_gemm(ta, tb, m, n, k, alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

}  // namespace detail

// Named parameter or state buffer owned by a layer.
template <typename T>
struct Param {
  std::string name;  // qualified, e.g. "enc1_conv.w"
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void init_shape(Shape s) {
    value = Tensor<T>(s);
    grad = Tensor<T>(std::move(s));
  }
};

// Per-layer forward cache: whatever the layer needs to reproduce exact
// gradients for that pass.
template <typename T>
struct TapeAux {
  Tensor<T> a;
  Tensor<T> b;
  std::vector<std::size_t> idx;
  bool mode_train = false;
};

template <typename T>
struct ForwardTape {
  Mode mode = Mode::Eval;
  Tensor<T> input;                  // [N, C, H, W]
  std::vector<Tensor<T>> outputs;   // per layer, [N, ...]
  std::vector<TapeAux<T>> aux;
};

template <typename T>
struct Layer {
  std::string name;
  Shape in_shape;   // excluding batch axis
  Shape out_shape;  // excluding batch axis

  virtual ~Layer() = default;

  // Derives out_shape from in_shape; throws build_error on mismatch.
  virtual void infer_shape() = 0;

  virtual void forward(const Tensor<T>& in, const Tensor<T>* skip,
                       Tensor<T>& out, TapeAux<T>& aux, Mode mode) = 0;

  // gin is pre-zeroed with the input's shape; gskip (when the layer has a
  // skip input) likewise. Parameter gradients accumulate into Param::grad.
  virtual void backward(const Tensor<T>& in, const Tensor<T>* skip,
                        const TapeAux<T>& aux, const Tensor<T>& out,
                        const Tensor<T>& gout, Tensor<T>& gin, Tensor<T>* gskip,
                        bool param_grads) = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  virtual std::vector<Param<T>*> buffers() { return {}; }
  virtual int skip_source() const { return -1; }
  virtual void init(std::mt19937_64&) {}

 protected:
  void glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& x : w.v) x = T(dist(rng));
  }
};

// ---- conv2d ---------------------------------------------------------------

enum class Padding { Same, Valid };

namespace detail {

// col layout: [in_c*kh*kw, oh*ow]
template <typename T>
void im2col(const T* img, std::size_t ic, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t ph, std::size_t pw,
            std::size_t oh, std::size_t ow, T* col) {
  for (std::size_t c = 0; c < ic; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        T* dst = col + ((c * kh + a) * kw + b) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const std::ptrdiff_t si = std::ptrdiff_t(i + a) - std::ptrdiff_t(ph);
          for (std::size_t j = 0; j < ow; ++j) {
            const std::ptrdiff_t sj =
                std::ptrdiff_t(j + b) - std::ptrdiff_t(pw);
            const bool in_bounds = si >= 0 && si < std::ptrdiff_t(h) &&
                                   sj >= 0 && sj < std::ptrdiff_t(w);
            dst[i * ow + j] =
                in_bounds ? img[(c * h + std::size_t(si)) * w + std::size_t(sj)]
                          : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t ic, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t ph, std::size_t pw,
                std::size_t oh, std::size_t ow, T* img) {
  for (std::size_t c = 0; c < ic; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        const T* src = col + ((c * kh + a) * kw + b) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const std::ptrdiff_t si = std::ptrdiff_t(i + a) - std::ptrdiff_t(ph);
          if (si < 0 || si >= std::ptrdiff_t(h)) continue;
          for (std::size_t j = 0; j < ow; ++j) {
            const std::ptrdiff_t sj =
                std::ptrdiff_t(j + b) - std::ptrdiff_t(pw);
            if (sj < 0 || sj >= std::ptrdiff_t(w)) continue;
            img[(c * h + std::size_t(si)) * w + std::size_t(sj)] +=
                src[i * ow + j];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation with stride 1 and zero padding (same) or no padding
// (valid).
template <typename T>
struct Conv2d final : Layer<T> {
  std::size_t in_c, out_c, kh, kw;
  Padding padding;
  Param<T> w;  // [out_c, in_c, kh, kw]
  Param<T> b;  // [out_c]

  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
         std::size_t kernel_w, Padding pad)
      : in_c(in_channels), out_c(out_channels), kh(kernel_h), kw(kernel_w),
        padding(pad) {
    w.init_shape({out_c, in_c, kh, kw});
    b.init_shape({out_c});
  }

  std::size_t pad_h() const { return padding == Padding::Same ? (kh - 1) / 2 : 0; }
  std::size_t pad_w() const { return padding == Padding::Same ? (kw - 1) / 2 : 0; }

  void infer_shape() override {
    if (this->in_shape.size() != 3 || this->in_shape[0] != in_c)
      throw build_error(this->name + ": input shape/channel mismatch");
    if (padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0))
      throw build_error(this->name + ": 'same' padding needs odd kernels");
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    std::size_t oh, ow;
    if (padding == Padding::Same) {
      oh = h;
      ow = wd;
    } else {
      if (h < kh || wd < kw)
        throw build_error(this->name + ": kernel larger than input");
      oh = h - kh + 1;
      ow = wd - kw + 1;
    }
    this->out_shape = {out_c, oh, ow};
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    const std::size_t n = in.shape[0];
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    const std::size_t oh = this->out_shape[1], ow = this->out_shape[2];
    const std::size_t kdim = in_c * kh * kw, p = oh * ow;
    out = Tensor<T>({n, out_c, oh, ow});
    std::vector<T> col(kdim * p);
    for (std::size_t s = 0; s < n; ++s) {
      detail::im2col(in.data() + s * in_c * h * wd, in_c, h, wd, kh, kw,
                     pad_h(), pad_w(), oh, ow, col.data());
      T* o = out.data() + s * out_c * p;
      detail::gemm<T>(false, false, int(out_c), int(p), int(kdim), T(1),
                      w.value.data(), col.data(), T(0), o);
      for (std::size_t c = 0; c < out_c; ++c)
        for (std::size_t q = 0; q < p; ++q) o[c * p + q] += b.value[c];
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool param_grads) override {
    const std::size_t n = in.shape[0];
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    const std::size_t oh = this->out_shape[1], ow = this->out_shape[2];
    const std::size_t kdim = in_c * kh * kw, p = oh * ow;
    std::vector<T> col(kdim * p), dcol(kdim * p);
    for (std::size_t s = 0; s < n; ++s) {
      const T* go = gout.data() + s * out_c * p;
      if (param_grads) {
        detail::im2col(in.data() + s * in_c * h * wd, in_c, h, wd, kh, kw,
                       pad_h(), pad_w(), oh, ow, col.data());
        // dW[oc, kdim] += gout[oc, p] * col[kdim, p]^T
        detail::gemm<T>(false, true, int(out_c), int(kdim), int(p), T(1), go,
                        col.data(), T(1), w.grad.data());
        for (std::size_t c = 0; c < out_c; ++c)
          for (std::size_t q = 0; q < p; ++q) b.grad[c] += go[c * p + q];
      }
      // dcol[kdim, p] = W[oc, kdim]^T * gout[oc, p]
      detail::gemm<T>(true, false, int(kdim), int(p), int(out_c), T(1),
                      w.value.data(), go, T(0), dcol.data());
      detail::col2im_add(dcol.data(), in_c, h, wd, kh, kw, pad_h(), pad_w(), oh,
                         ow, gin.data() + s * in_c * h * wd);
    }
  }

  std::vector<Param<T>*> params() override { return {&w, &b}; }

  void init(std::mt19937_64& rng) override {
    this->glorot_uniform(w.value, in_c * kh * kw, out_c * kh * kw, rng);
    b.value.fill(T(0));
  }
};

// Transposed convolution (gradient-of-convolution semantics); with kernel ==
// stride and no padding the output is stride x the input size.
template <typename T>
struct ConvTranspose2d final : Layer<T> {
  std::size_t in_c, out_c, k, stride;
  Param<T> w;  // [in_c, out_c, k, k]
  Param<T> b;  // [out_c]

  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels,
                  std::size_t kernel, std::size_t s)
      : in_c(in_channels), out_c(out_channels), k(kernel), stride(s) {
    if (stride < 1) throw build_error("conv_transpose2d: stride must be >= 1");
    w.init_shape({in_c, out_c, k, k});
    b.init_shape({out_c});
  }

  void infer_shape() override {
    if (this->in_shape.size() != 3 || this->in_shape[0] != in_c)
      throw build_error(this->name + ": input shape/channel mismatch");
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    this->out_shape = {out_c, (h - 1) * stride + k, (wd - 1) * stride + k};
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    const std::size_t n = in.shape[0];
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    const std::size_t oh = this->out_shape[1], ow = this->out_shape[2];
    out = Tensor<T>({n, out_c, oh, ow});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t co = 0; co < out_c; ++co) {
        T* o = &out.at4(s, co, 0, 0);
        for (std::size_t q = 0; q < oh * ow; ++q) o[q] = b.value[co];
      }
      for (std::size_t ci = 0; ci < in_c; ++ci)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < wd; ++j) {
            const T x = in.at4(s, ci, i, j);
            for (std::size_t co = 0; co < out_c; ++co)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t bb = 0; bb < k; ++bb)
                  out.at4(s, co, i * stride + a, j * stride + bb) +=
                      x * w.value.at4(ci, co, a, bb);
          }
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool param_grads) override {
    const std::size_t n = in.shape[0];
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    const std::size_t oh = this->out_shape[1], ow = this->out_shape[2];
    for (std::size_t s = 0; s < n; ++s) {
      if (param_grads)
        for (std::size_t co = 0; co < out_c; ++co) {
          const T* go = &gout.at4(s, co, 0, 0);
          T acc = T(0);
          for (std::size_t q = 0; q < oh * ow; ++q) acc += go[q];
          b.grad[co] += acc;
        }
      for (std::size_t ci = 0; ci < in_c; ++ci)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < wd; ++j) {
            T acc = T(0);
            for (std::size_t co = 0; co < out_c; ++co)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t bb = 0; bb < k; ++bb) {
                  const T go = gout.at4(s, co, i * stride + a, j * stride + bb);
                  acc += go * w.value.at4(ci, co, a, bb);
                  if (param_grads)
                    w.grad.at4(ci, co, a, bb) += go * in.at4(s, ci, i, j);
                }
            gin.at4(s, ci, i, j) += acc;
          }
    }
  }

  std::vector<Param<T>*> params() override { return {&w, &b}; }

  void init(std::mt19937_64& rng) override {
    this->glorot_uniform(w.value, in_c * k * k, out_c * k * k, rng);
    b.value.fill(T(0));
  }
};

// 2x2 non-overlapping window maximum; argmax recorded for the backward pass.
template <typename T>
struct MaxPool2 final : Layer<T> {
  void infer_shape() override {
    if (this->in_shape.size() != 3)
      throw build_error(this->name + ": expects channel x H x W input");
    if (this->in_shape[1] % 2 != 0 || this->in_shape[2] % 2 != 0)
      throw build_error(this->name + ": spatial dims must be even, got " +
                        std::to_string(this->in_shape[1]) + "x" +
                        std::to_string(this->in_shape[2]));
    this->out_shape = {this->in_shape[0], this->in_shape[1] / 2,
                       this->in_shape[2] / 2};
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>& aux, Mode) override {
    const std::size_t n = in.shape[0], c = this->in_shape[0];
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    const std::size_t oh = h / 2, ow = wd / 2;
    out = Tensor<T>({n, c, oh, ow});
    aux.idx.assign(n * c * oh * ow, 0);
    std::size_t q = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j, ++q) {
            std::size_t best = (2 * i) * wd + 2 * j;
            T bestv = in.at4(s, ch, 2 * i, 2 * j);
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t bb = 0; bb < 2; ++bb) {
                const T v = in.at4(s, ch, 2 * i + a, 2 * j + bb);
                if (v > bestv) {
                  bestv = v;
                  best = (2 * i + a) * wd + 2 * j + bb;
                }
              }
            out.at4(s, ch, i, j) = bestv;
            aux.idx[q] = best;
          }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>& aux,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool) override {
    const std::size_t n = in.shape[0], c = this->in_shape[0];
    const std::size_t h = this->in_shape[1], wd = this->in_shape[2];
    const std::size_t plane = h * wd;
    const std::size_t oplane = this->out_shape[1] * this->out_shape[2];
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* go = gout.data() + (s * c + ch) * oplane;
        T* gi = gin.data() + (s * c + ch) * plane;
        const std::size_t* id = aux.idx.data() + (s * c + ch) * oplane;
        for (std::size_t q = 0; q < oplane; ++q) gi[id[q]] += go[q];
      }
  }
};

// Per-channel batch normalization; train mode uses batch statistics (biased
// variance) and updates running statistics, eval mode uses running statistics.
template <typename T>
struct BatchNorm2d final : Layer<T> {
  std::size_t channels;
  double eps = 1e-5;
  double momentum = 0.99;  // running = momentum*running + (1-momentum)*batch
  Param<T> gamma, beta;
  Param<T> running_mean, running_var;

  explicit BatchNorm2d(std::size_t c) : channels(c) {
    gamma.init_shape({c});
    beta.init_shape({c});
    running_mean.init_shape({c});
    running_var.init_shape({c});
    running_mean.trainable = false;
    running_var.trainable = false;
    gamma.value.fill(T(1));
    running_var.value.fill(T(1));
  }

  void infer_shape() override {
    if (this->in_shape.size() != 3 || this->in_shape[0] != channels)
      throw build_error(this->name + ": channel mismatch");
    this->out_shape = this->in_shape;
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>& aux, Mode mode) override {
    const std::size_t n = in.shape[0];
    const std::size_t plane = this->in_shape[1] * this->in_shape[2];
    out = Tensor<T>(in.shape);
    aux.a = Tensor<T>(in.shape);          // xhat
    aux.b = Tensor<T>({2, channels});     // mean, inv_std used in this pass
    if (mode == Mode::Train && n < 2)
      throw numeric_error(this->name +
                          ": batch size must be >= 2 in train mode");
    for (std::size_t c = 0; c < channels; ++c) {
      double mu, var;
      if (mode == Mode::Train) {
        double sum = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* x = in.data() + (s * channels + c) * plane;
          for (std::size_t q = 0; q < plane; ++q) sum += double(x[q]);
        }
        mu = sum / double(n * plane);
        double ss = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* x = in.data() + (s * channels + c) * plane;
          for (std::size_t q = 0; q < plane; ++q) {
            const double d = double(x[q]) - mu;
            ss += d * d;
          }
        }
        var = ss / double(n * plane);
        running_mean.value[c] =
            T(momentum * double(running_mean.value[c]) + (1.0 - momentum) * mu);
        running_var.value[c] =
            T(momentum * double(running_var.value[c]) + (1.0 - momentum) * var);
      } else {
        mu = double(running_mean.value[c]);
        var = double(running_var.value[c]);
      }
      const double inv = 1.0 / std::sqrt(var + eps);
      aux.b.at2(0, c) = T(mu);
      aux.b.at2(1, c) = T(inv);
      for (std::size_t s = 0; s < n; ++s) {
        const T* x = in.data() + (s * channels + c) * plane;
        T* xh = aux.a.data() + (s * channels + c) * plane;
        T* y = out.data() + (s * channels + c) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          xh[q] = T((double(x[q]) - mu) * inv);
          y[q] = gamma.value[c] * xh[q] + beta.value[c];
        }
      }
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>& aux,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool param_grads) override {
    const std::size_t n = in.shape[0];
    const std::size_t plane = this->in_shape[1] * this->in_shape[2];
    const double m = double(n * plane);
    const bool train = aux.mode_train;
    for (std::size_t c = 0; c < channels; ++c) {
      const double inv = double(aux.b.at2(1, c));
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* go = gout.data() + (s * channels + c) * plane;
        const T* xh = aux.a.data() + (s * channels + c) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          sum_dy += double(go[q]);
          sum_dy_xh += double(go[q]) * double(xh[q]);
        }
      }
      if (param_grads) {
        gamma.grad[c] += T(sum_dy_xh);
        beta.grad[c] += T(sum_dy);
      }
      const double g = double(gamma.value[c]);
      for (std::size_t s = 0; s < n; ++s) {
        const T* go = gout.data() + (s * channels + c) * plane;
        const T* xh = aux.a.data() + (s * channels + c) * plane;
        T* gi = gin.data() + (s * channels + c) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          double d;
          if (train) {
            d = g * inv *
                (double(go[q]) - sum_dy / m - double(xh[q]) * sum_dy_xh / m);
          } else {
            d = g * inv * double(go[q]);
          }
          gi[q] += T(d);
        }
      }
    }
  }

  std::vector<Param<T>*> params() override { return {&gamma, &beta}; }
  std::vector<Param<T>*> buffers() override {
    return {&running_mean, &running_var};
  }

  void init(std::mt19937_64&) override {
    gamma.value.fill(T(1));
    beta.value.fill(T(0));
    running_mean.value.fill(T(0));
    running_var.value.fill(T(1));
  }
};

// Elementwise rectifier; works on any rank.
template <typename T>
struct ReLU final : Layer<T> {
  void infer_shape() override { this->out_shape = this->in_shape; }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    out = in;
    for (auto& x : out.v)
      if (x < T(0)) x = T(0);
  }

  void backward(const Tensor<T>&, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>& out, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool) override {
    for (std::size_t i = 0; i < gout.numel(); ++i)
      if (out[i] > T(0)) gin[i] += gout[i];
  }
};

template <typename T>
struct Flatten final : Layer<T> {
  void infer_shape() override {
    this->out_shape = {shape_numel(this->in_shape)};
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    out = in;
    out.shape = {in.shape[0], shape_numel(this->in_shape)};
  }

  void backward(const Tensor<T>&, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool) override {
    for (std::size_t i = 0; i < gout.numel(); ++i) gin[i] += gout[i];
  }
};

enum class Activation { Linear, Relu };

// Affine map with optional ReLU.
template <typename T>
struct Dense final : Layer<T> {
  std::size_t in_n, out_n;
  Activation act;
  Param<T> w;  // [out_n, in_n]
  Param<T> b;  // [out_n]

  Dense(std::size_t in_units, std::size_t out_units, Activation a)
      : in_n(in_units), out_n(out_units), act(a) {
    w.init_shape({out_n, in_n});
    b.init_shape({out_n});
  }

  void infer_shape() override {
    if (this->in_shape.size() != 1 || this->in_shape[0] != in_n)
      throw build_error(this->name + ": input length mismatch (got " +
                        std::to_string(shape_numel(this->in_shape)) +
                        ", want " + std::to_string(in_n) + ")");
    this->out_shape = {out_n};
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>& aux, Mode) override {
    const std::size_t n = in.shape[0];
    out = Tensor<T>({n, out_n});
    // out[n, out_n] = in[n, in_n] * W[out_n, in_n]^T
    detail::gemm<T>(false, true, int(n), int(out_n), int(in_n), T(1), in.data(),
                    w.value.data(), T(0), out.data());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < out_n; ++o) out.at2(s, o) += b.value[o];
    if (act == Activation::Relu) {
      aux.a = out;  // pre-activation
      for (auto& x : out.v)
        if (x < T(0)) x = T(0);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>& aux,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool param_grads) override {
    const std::size_t n = in.shape[0];
    Tensor<T> g = gout;
    if (act == Activation::Relu) {
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (aux.a[i] <= T(0)) g[i] = T(0);
    }
    if (param_grads) {
      // dW[out_n, in_n] += g[n, out_n]^T * in[n, in_n]
      detail::gemm<T>(true, false, int(out_n), int(in_n), int(n), T(1),
                      g.data(), in.data(), T(1), w.grad.data());
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < out_n; ++o) b.grad[o] += g.at2(s, o);
    }
    // gin[n, in_n] += g[n, out_n] * W[out_n, in_n]
    detail::gemm<T>(false, false, int(n), int(in_n), int(out_n), T(1), g.data(),
                    w.value.data(), T(1), gin.data());
  }

  std::vector<Param<T>*> params() override { return {&w, &b}; }

  void init(std::mt19937_64& rng) override {
    if (zero_init)
      w.value.fill(T(0));
    else
      this->glorot_uniform(w.value, in_n, out_n, rng);
    b.value.fill(T(0));
  }

  // Zero-initialized readout: the model starts at the climatological mean and
  // the optimizer does not have to unwind a random projection first.
  bool zero_init = false;
};

// Channel concatenation of an earlier layer's output (UNET skip edge) with
// the previous layer's output: out = concat(skip, prev).
template <typename T>
struct ConcatSkip final : Layer<T> {
  int src;          // index of the skip-source layer in the graph
  Shape src_shape;  // filled by the graph at build time

  explicit ConcatSkip(int source) : src(source) {}

  void infer_shape() override {
    if (this->in_shape.size() != 3 || src_shape.size() != 3)
      throw build_error(this->name + ": expects channel x H x W inputs");
    if (this->in_shape[1] != src_shape[1] || this->in_shape[2] != src_shape[2])
      throw build_error(this->name + ": skip spatial dims mismatch");
    this->out_shape = {src_shape[0] + this->in_shape[0], this->in_shape[1],
                       this->in_shape[2]};
  }

  void forward(const Tensor<T>& in, const Tensor<T>* skip, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    const std::size_t n = in.shape[0];
    const std::size_t plane = this->in_shape[1] * this->in_shape[2];
    const std::size_t sc = src_shape[0], pc = this->in_shape[0];
    out = Tensor<T>({n, sc + pc, this->in_shape[1], this->in_shape[2]});
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(skip->data() + s * sc * plane, sc * plane,
                  out.data() + s * (sc + pc) * plane);
      std::copy_n(in.data() + s * pc * plane, pc * plane,
                  out.data() + (s * (sc + pc) + sc) * plane);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>* gskip, bool) override {
    const std::size_t n = in.shape[0];
    const std::size_t plane = this->in_shape[1] * this->in_shape[2];
    const std::size_t sc = src_shape[0], pc = this->in_shape[0];
    for (std::size_t s = 0; s < n; ++s) {
      const T* g0 = gout.data() + s * (sc + pc) * plane;
      T* gs = gskip->data() + s * sc * plane;
      T* gp = gin.data() + s * pc * plane;
      for (std::size_t q = 0; q < sc * plane; ++q) gs[q] += g0[q];
      for (std::size_t q = 0; q < pc * plane; ++q) gp[q] += g0[sc * plane + q];
    }
  }

  int skip_source() const override { return src; }
};

// Center-crop / zero-pad to a target spatial size (per axis independently).
template <typename T>
struct CropPad2d final : Layer<T> {
  std::size_t target_h, target_w;

  CropPad2d(std::size_t th, std::size_t tw) : target_h(th), target_w(tw) {}

  void infer_shape() override {
    if (this->in_shape.size() != 3)
      throw build_error(this->name + ": expects channel x H x W input");
    this->out_shape = {this->in_shape[0], target_h, target_w};
  }

  // Maps output row/col to input row/col; either side may be out of range
  // (zero pad).
  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    const std::size_t n = in.shape[0], c = this->in_shape[0];
    const std::size_t h = this->in_shape[1], w = this->in_shape[2];
    const std::ptrdiff_t oi = (std::ptrdiff_t(h) - std::ptrdiff_t(target_h)) / 2;
    const std::ptrdiff_t oj = (std::ptrdiff_t(w) - std::ptrdiff_t(target_w)) / 2;
    out = Tensor<T>({n, c, target_h, target_w});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < target_h; ++i) {
          const std::ptrdiff_t si = std::ptrdiff_t(i) + oi;
          if (si < 0 || si >= std::ptrdiff_t(h)) continue;
          for (std::size_t j = 0; j < target_w; ++j) {
            const std::ptrdiff_t sj = std::ptrdiff_t(j) + oj;
            if (sj < 0 || sj >= std::ptrdiff_t(w)) continue;
            out.at4(s, ch, i, j) = in.at4(s, ch, std::size_t(si), std::size_t(sj));
          }
        }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool) override {
    const std::size_t n = in.shape[0], c = this->in_shape[0];
    const std::size_t h = this->in_shape[1], w = this->in_shape[2];
    const std::ptrdiff_t oi = (std::ptrdiff_t(h) - std::ptrdiff_t(target_h)) / 2;
    const std::ptrdiff_t oj = (std::ptrdiff_t(w) - std::ptrdiff_t(target_w)) / 2;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < target_h; ++i) {
          const std::ptrdiff_t si = std::ptrdiff_t(i) + oi;
          if (si < 0 || si >= std::ptrdiff_t(h)) continue;
          for (std::size_t j = 0; j < target_w; ++j) {
            const std::ptrdiff_t sj = std::ptrdiff_t(j) + oj;
            if (sj < 0 || sj >= std::ptrdiff_t(w)) continue;
            gin.at4(s, ch, std::size_t(si), std::size_t(sj)) +=
                gout.at4(s, ch, i, j);
          }
        }
  }
};

// Flattens a single-channel grid through the land mask to the location vector
// (row-major enumeration of true cells).
template <typename T>
struct MaskSelect final : Layer<T> {
  LandMask mask;

  explicit MaskSelect(LandMask m) : mask(std::move(m)) {}

  void infer_shape() override {
    if (this->in_shape.size() != 3 || this->in_shape[0] != 1 ||
        this->in_shape[1] != mask.rows || this->in_shape[2] != mask.cols)
      throw build_error(this->name + ": input grid does not match mask");
    this->out_shape = {mask.count()};
  }

  void forward(const Tensor<T>& in, const Tensor<T>*, Tensor<T>& out,
               TapeAux<T>&, Mode) override {
    const std::size_t n = in.shape[0];
    const std::size_t plane = mask.rows * mask.cols;
    out = Tensor<T>({n, mask.count()});
    for (std::size_t s = 0; s < n; ++s) {
      const T* x = in.data() + s * plane;
      for (std::size_t l = 0; l < mask.count(); ++l)
        out.at2(s, l) = x[mask.cells[l]];
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>*, const TapeAux<T>&,
                const Tensor<T>&, const Tensor<T>& gout, Tensor<T>& gin,
                Tensor<T>*, bool) override {
    const std::size_t n = in.shape[0];
    const std::size_t plane = mask.rows * mask.cols;
    for (std::size_t s = 0; s < n; ++s) {
      T* gi = gin.data() + s * plane;
      for (std::size_t l = 0; l < mask.count(); ++l)
        gi[mask.cells[l]] += gout.at2(s, l);
    }
  }
};

// ---- model graph ----------------------------------------------------------

// Ordered layer DAG: a linear chain plus UNET skip edges resolved by layer
// index. Shapes are validated as layers are appended.
template <typename T>
struct ModelGraph {
  std::string arch;
  Shape input_shape;  // {C, H, W}
  std::vector<std::unique_ptr<Layer<T>>> layers;

  explicit ModelGraph(Shape in_shape = {}) : input_shape(std::move(in_shape)) {}

  Layer<T>* add(std::unique_ptr<Layer<T>> layer, const std::string& name) {
    layer->name = name;
    layer->in_shape = layers.empty() ? input_shape : layers.back()->out_shape;
    if (auto* cs = dynamic_cast<ConcatSkip<T>*>(layer.get())) {
      if (cs->src < 0 || std::size_t(cs->src) >= layers.size())
        throw build_error(name + ": skip source out of range");
      cs->src_shape = layers[std::size_t(cs->src)]->out_shape;
    }
    layer->infer_shape();
    layers.push_back(std::move(layer));
    return layers.back().get();
  }

  std::size_t output_size() const {
    if (layers.empty()) throw build_error("empty model graph");
    return shape_numel(layers.back()->out_shape);
  }

  const Shape& output_shape() const { return layers.back()->out_shape; }

  bool has_batchnorm() const {
    for (const auto& l : layers)
      if (dynamic_cast<const BatchNorm2d<T>*>(l.get())) return true;
    return false;
  }

  // Re-checks the whole shape chain (self-check of the DAG).
  void validate() const {
    if (layers.empty()) throw build_error("empty model graph");
    Shape prev = input_shape;
    for (const auto& l : layers) {
      if (l->in_shape != prev)
        throw build_error(l->name + ": chain shape inconsistency");
      prev = l->out_shape;
    }
  }

  // Deterministic flat parameter ordering: layers in graph order, each
  // layer's params in declaration order, then its buffers.
  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : layers)
      for (Param<T>* p : l->params()) out.push_back(p);
    return out;
  }

  std::vector<Param<T>*> buffers() {
    std::vector<Param<T>*> out;
    for (auto& l : layers)
      for (Param<T>* p : l->buffers()) out.push_back(p);
    return out;
  }

  std::vector<Param<T>*> state() {
    std::vector<Param<T>*> out;
    for (auto& l : layers) {
      for (Param<T>* p : l->params()) out.push_back(p);
      for (Param<T>* p : l->buffers()) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Param<T>* p : parameters()) n += p->value.numel();
    return n;
  }

  void init_params(std::uint64_t seed) {
    name_params();
    std::mt19937_64 rng(seed);
    for (auto& l : layers) l->init(rng);
  }

  void zero_grads() {
    for (Param<T>* p : parameters()) p->grad.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& batch, ForwardTape<T>& tape, Mode mode) {
    if (batch.rank() != input_shape.size() + 1 ||
        Shape(batch.shape.begin() + 1, batch.shape.end()) != input_shape)
      throw input_error("forward: input shape does not match model");
    tape.mode = mode;
    tape.input = batch;
    tape.outputs.assign(layers.size(), Tensor<T>());
    tape.aux.assign(layers.size(), TapeAux<T>());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Tensor<T>& in = i == 0 ? tape.input : tape.outputs[i - 1];
      const Tensor<T>* skip = nullptr;
      const int src = layers[i]->skip_source();
      if (src >= 0) skip = &tape.outputs[std::size_t(src)];
      tape.aux[i].mode_train = (mode == Mode::Train);
      layers[i]->forward(in, skip, tape.outputs[i], tape.aux[i], mode);
    }
    return tape.outputs.back();
  }

  // Reverse sweep. Accumulates parameter gradients when param_grads is set;
  // returns the gradient w.r.t. the graph input when want_input_grad is set.
  std::optional<Tensor<T>> backward(const ForwardTape<T>& tape,
                                    const Tensor<T>& gout_last,
                                    bool param_grads, bool want_input_grad) {
    if (tape.outputs.size() != layers.size())
      throw numeric_error("backward: tape does not match model");
    std::vector<Tensor<T>> gouts(layers.size());
    gouts.back() = gout_last;
    Tensor<T> ginput;
    if (want_input_grad) ginput = Tensor<T>(tape.input.shape);
    for (std::size_t ii = layers.size(); ii-- > 0;) {
      if (gouts[ii].numel() == 0) continue;  // no gradient flowed here
      const Tensor<T>& in = ii == 0 ? tape.input : tape.outputs[ii - 1];
      Tensor<T>* gin = nullptr;
      Tensor<T> gin_local;
      if (ii == 0) {
        gin = want_input_grad ? &ginput : &(gin_local = Tensor<T>(in.shape));
      } else {
        if (gouts[ii - 1].numel() == 0) gouts[ii - 1] = Tensor<T>(in.shape);
        gin = &gouts[ii - 1];
      }
      Tensor<T>* gskip = nullptr;
      const int src = layers[ii]->skip_source();
      const Tensor<T>* skip = nullptr;
      if (src >= 0) {
        skip = &tape.outputs[std::size_t(src)];
        if (gouts[std::size_t(src)].numel() == 0)
          gouts[std::size_t(src)] = Tensor<T>(skip->shape);
        gskip = &gouts[std::size_t(src)];
      }
      layers[ii]->backward(in, skip, tape.aux[ii], tape.outputs[ii], gouts[ii],
                           *gin, gskip, param_grads);
      gouts[ii] = Tensor<T>();  // release
    }
    if (want_input_grad) return ginput;
    return std::nullopt;
  }

  void backward_params(const ForwardTape<T>& tape, const Tensor<T>& gout) {
    backward(tape, gout, /*param_grads=*/true, /*want_input_grad=*/false);
  }

  // Exact gradient of one output neuron w.r.t. the input features, eval mode.
  Tensor<T> input_gradient(const Tensor<T>& sample, std::size_t neuron) {
    if (sample.shape != input_shape)
      throw input_error("input_gradient: sample shape does not match model");
    if (neuron >= output_size())
      throw input_error("input_gradient: output neuron index out of range");
    Tensor<T> batch;
    batch.shape = input_shape;
    batch.shape.insert(batch.shape.begin(), 1);
    batch.v = sample.v;
    ForwardTape<T> tape;
    forward(batch, tape, Mode::Eval);
    Tensor<T> gout(tape.outputs.back().shape);
    gout[neuron] = T(1);
    auto g = backward(tape, gout, /*param_grads=*/false, /*want_input_grad=*/true);
    Tensor<T> out;
    out.shape = input_shape;
    out.v = std::move(g->v);
    return out;
  }

  std::vector<Tensor<T>> snapshot_state() {
    std::vector<Tensor<T>> snap;
    for (Param<T>* p : state()) snap.push_back(p->value);
    return snap;
  }

  void restore_state(const std::vector<Tensor<T>>& snap) {
    auto st = state();
    if (snap.size() != st.size())
      throw input_error("restore_state: snapshot does not match model");
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (snap[i].shape != st[i]->value.shape)
        throw input_error("restore_state: shape mismatch for " + st[i]->name);
      st[i]->value = snap[i];
    }
  }

  void name_params() {
    for (auto& l : layers) {
      auto tag = [&](Param<T>* p, const char* suffix) {
        p->name = l->name + "." + suffix;
      };
      if (auto* c = dynamic_cast<Conv2d<T>*>(l.get())) {
        tag(&c->w, "w");
        tag(&c->b, "b");
      } else if (auto* ct = dynamic_cast<ConvTranspose2d<T>*>(l.get())) {
        tag(&ct->w, "w");
        tag(&ct->b, "b");
      } else if (auto* d = dynamic_cast<Dense<T>*>(l.get())) {
        tag(&d->w, "w");
        tag(&d->b, "b");
      } else if (auto* bn = dynamic_cast<BatchNorm2d<T>*>(l.get())) {
        tag(&bn->gamma, "gamma");
        tag(&bn->beta, "beta");
        tag(&bn->running_mean, "running_mean");
        tag(&bn->running_var, "running_var");
      }
    }
  }
};

// ---- checkpoint serialization ---------------------------------------------

namespace containerio {

// Stores every parameter and state buffer as a named f32 array; the container
// manifest carries name, shape, and byte offset for each.
template <typename T>
void put_checkpoint(Container& c, ModelGraph<T>& model) {
  model.name_params();
  c.set_meta("checkpoint.arch", model.arch);
  {
    std::string s;
    for (std::size_t i = 0; i < model.input_shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(model.input_shape[i]);
    c.set_meta("checkpoint.input_shape", s);
  }
  c.set_meta("checkpoint.output_size", std::to_string(model.output_size()));
  for (Param<T>* p : model.state()) {
    std::vector<float> data(p->value.v.begin(), p->value.v.end());
    c.add_f32("param." + p->name, p->value.shape, std::move(data));
  }
}

template <typename T>
void load_checkpoint(const Container& c, ModelGraph<T>& model) {
  model.name_params();
  if (const std::string* a = c.find_meta("checkpoint.arch"); a && *a != model.arch)
    throw input_error("checkpoint: architecture mismatch (file has '" + *a +
                      "', model is '" + model.arch + "')");
  for (Param<T>* p : model.state()) {
    const ContainerArray& a = c.require_array("param." + p->name);
    if (a.dtype != 'f')
      throw format_error("checkpoint: parameter arrays must be f32");
    if (a.shape != p->value.shape)
      throw format_error("checkpoint: shape mismatch for " + p->name);
    for (std::size_t i = 0; i < a.f.size(); ++i) p->value[i] = T(a.f[i]);
  }
}

}  // namespace containerio

}  // namespace dsc
