#include "lesionnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace lesionnet {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::kInvalidArgument, what);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.rank() != rank) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": expected rank " +
                                          std::to_string(rank) + " input, got " +
                                          s.to_string());
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": shape mismatch " +
                                          a.to_string() + " vs " + b.to_string());
  }
}

template <typename Scalar>
Scalar dot(const Scalar* a, const Scalar* b, std::size_t n) {
  Scalar acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename Scalar>
void axpy(Scalar alpha, const Scalar* x, Scalar* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[m][n] += sum_l A[m][l] * B[l][n], all row-major with the given leading
// dimensions. Every C element accumulates over l in increasing order whatever
// the tiling, so results do not depend on the block sizes.
#if defined(__AVX512F__)
constexpr std::size_t kVectorBytes = 64;
#elif defined(__AVX__)
constexpr std::size_t kVectorBytes = 32;
#else
constexpr std::size_t kVectorBytes = 16;
#endif

// Two SIMD vectors per tile row.
template <typename Scalar>
constexpr std::size_t kTileWidth = 2 * kVectorBytes / sizeof(Scalar);

template <typename Scalar, std::size_t Rows>
void gemm_tile(std::size_t depth, const Scalar* a, std::size_t lda, const Scalar* b,
               std::size_t ldb, Scalar* c, std::size_t ldc) {
  constexpr std::size_t kWidth = kTileWidth<Scalar>;
  Scalar acc[Rows][kWidth];
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t j = 0; j < kWidth; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t l = 0; l < depth; ++l) {
    const Scalar* brow = b + l * ldb;
    for (std::size_t r = 0; r < Rows; ++r) {
      const Scalar av = a[r * lda + l];
#pragma omp simd
      for (std::size_t j = 0; j < kWidth; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t j = 0; j < kWidth; ++j) c[r * ldc + j] = acc[r][j];
}

template <typename Scalar>
void gemm_acc(std::size_t m, std::size_t n, std::size_t depth, const Scalar* a, const Scalar* b,
              Scalar* c) {
  constexpr std::size_t kRows = 8;
  constexpr std::size_t kWidth = kTileWidth<Scalar>;
  const std::size_t n_full = n - n % kWidth;
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    for (std::size_t j = 0; j < n_full; j += kWidth) {
      gemm_tile<Scalar, kRows>(depth, a + i * depth, depth, b + j, n, c + i * n + j, n);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n_full; j += kWidth) {
      gemm_tile<Scalar, 1>(depth, a + i * depth, depth, b + j, n, c + i * n + j, n);
    }
  }
  if (n_full == n) return;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t l = 0; l < depth; ++l) {
      const Scalar av = a[r * depth + l];
      for (std::size_t j = n_full; j < n; ++j) c[r * n + j] += av * b[l * n + j];
    }
  }
}

template <typename Scalar>
std::vector<Scalar> transpose(const Scalar* src, std::size_t rows, std::size_t cols) {
  std::vector<Scalar> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t out_h, out_w, stride;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& weights,
                           std::size_t stride) {
  require_rank(input, 3, "conv2d");
  require(weights.rank() == 4, "conv2d: weights must be OxCxKhxKw, got " +
                                   weights.to_string());
  require(stride >= 1, "conv2d: stride must be >= 1");
  ConvGeometry g{input[0], input[1], input[2], weights[0], weights[2], weights[3],
                 0,        0,        stride};
  require(weights[1] == g.channels,
          "conv2d: kernel expects " + std::to_string(weights[1]) +
              " input channels, input has " + std::to_string(g.channels));
  require(g.kh <= g.height && g.kw <= g.width,
          "conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
              " exceeds input " + input.to_string());
  g.out_h = (g.height - g.kh) / stride + 1;
  g.out_w = (g.width - g.kw) / stride + 1;
  return g;
}

// Row k = (c, i, j) holds the input values that kernel tap k sees at every
// output position.
template <typename Scalar>
std::vector<Scalar> im2col(const Tensor<Scalar>& input, const ConvGeometry& g) {
  const std::size_t positions = g.positions();
  std::vector<Scalar> cols(g.patch() * positions);
  const Scalar* in = input.data().data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j, ++row) {
        Scalar* dst = cols.data() + row * positions;
        for (std::size_t y = 0; y < g.out_h; ++y) {
          const Scalar* src = in + (c * g.height + y * g.stride + i) * g.width + j;
          if (g.stride == 1) {
            std::copy(src, src + g.out_w, dst + y * g.out_w);
          } else {
            for (std::size_t x = 0; x < g.out_w; ++x) dst[y * g.out_w + x] = src[x * g.stride];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_accumulate(const std::vector<Scalar>& cols, const ConvGeometry& g,
                       Tensor<Scalar>& input_grad) {
  const std::size_t positions = g.positions();
  Scalar* out = input_grad.data().data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j, ++row) {
        const Scalar* src = cols.data() + row * positions;
        for (std::size_t y = 0; y < g.out_h; ++y) {
          Scalar* dst = out + (c * g.height + y * g.stride + i) * g.width + j;
          const Scalar* s = src + y * g.out_w;
          if (g.stride == 1) {
#pragma omp simd
            for (std::size_t x = 0; x < g.out_w; ++x) dst[x] += s[x];
          } else {
            for (std::size_t x = 0; x < g.out_w; ++x) dst[x * g.stride] += s[x];
          }
        }
      }
    }
  }
}

std::uint64_t mask_bits(std::mt19937_64& gen) { return gen() >> 11; }

constexpr double kTwoPow53 = 9007199254740992.0;

}  // namespace

// ---------------------------------------------------------------------------

Shape conv2d_output_shape(const Shape& input, const Shape& weights,
                          std::size_t stride) {
  ConvGeometry g = conv_geometry(input, weights, stride);
  return Shape{g.out_channels, g.out_h, g.out_w};
}

Shape maxpool2d_output_shape(const Shape& input, std::size_t window,
                             std::size_t stride) {
  require_rank(input, 3, "maxpool2d");
  require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  require(input[1] >= window && input[2] >= window,
          "maxpool2d: input " + input.to_string() + " smaller than window " +
              std::to_string(window));
  return Shape{input[0], (input[1] - window) / stride + 1,
               (input[2] - window) / stride + 1};
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                      const Tensor<Scalar>& bias, std::size_t stride) {
  const ConvGeometry g = conv_geometry(input.shape(), weights.shape(), stride);
  require(bias.shape() == Shape{g.out_channels},
          "conv2d: bias shape " + bias.shape().to_string() + " does not match " +
              std::to_string(g.out_channels) + " output channels");
  const std::size_t positions = g.positions();
  const std::size_t patch = g.patch();
  const std::vector<Scalar> cols = im2col(input, g);

  Tensor<Scalar> out(Shape{g.out_channels, g.out_h, g.out_w});
  Scalar* o = out.data().data();
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    std::fill(o + oc * positions, o + (oc + 1) * positions, bias[oc]);
  }
  gemm_acc(g.out_channels, positions, patch, weights.data().data(), cols.data(), o);
  return out;
}

template <typename Scalar>
LayerGradients<Scalar> conv2d_backward(const Tensor<Scalar>& input,
                                       const Tensor<Scalar>& weights,
                                       const Tensor<Scalar>& output_grad,
                                       std::size_t stride) {
  const ConvGeometry g = conv_geometry(input.shape(), weights.shape(), stride);
  require_same_shape(output_grad.shape(), Shape{g.out_channels, g.out_h, g.out_w},
                     "conv2d_backward");
  const std::size_t positions = g.positions();
  const std::size_t patch = g.patch();
  const std::vector<Scalar> cols = im2col(input, g);

  Tensor<Scalar> weights_grad(weights.shape());
  Tensor<Scalar> bias_grad(Shape{g.out_channels});
  std::vector<Scalar> cols_grad(patch * positions, Scalar{0});

  const Scalar* go = output_grad.data().data();
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    const Scalar* grow = go + oc * positions;
    Scalar b = 0;
    for (std::size_t p = 0; p < positions; ++p) b += grow[p];
    bias_grad[oc] = b;
  }
  // dW = dY . cols^T and dcols = W^T . dY
  const std::vector<Scalar> cols_t = transpose(cols.data(), patch, positions);
  gemm_acc(g.out_channels, patch, positions, go, cols_t.data(), weights_grad.data().data());
  const std::vector<Scalar> w_t = transpose(weights.data().data(), g.out_channels, patch);
  gemm_acc(patch, positions, g.out_channels, w_t.data(), go, cols_grad.data());

  Tensor<Scalar> input_grad(input.shape());
  col2im_accumulate(cols_grad, g, input_grad);
  LayerGradients<Scalar> out;
  out.input_grad = std::move(input_grad);
  out.param_grads.push_back(std::move(weights_grad));
  out.param_grads.push_back(std::move(bias_grad));
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  Tensor<Scalar> out = input;
  for (Scalar& v : out.data()) v = v > Scalar{0} ? v : Scalar{0};
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& input,
                             const Tensor<Scalar>& output_grad) {
  require_same_shape(input.shape(), output_grad.shape(), "relu_backward");
  Tensor<Scalar> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = input[i] > Scalar{0} ? output_grad[i] : Scalar{0};
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input) {
  Tensor<Scalar> out = input;
  for (Scalar& v : out.data()) {
    // Branch keeps exp() from overflowing for large |v|.
    if (v >= 0) {
      v = Scalar{1} / (Scalar{1} + std::exp(-v));
    } else {
      const Scalar e = std::exp(v);
      v = e / (Scalar{1} + e);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& output,
                                const Tensor<Scalar>& output_grad) {
  require_same_shape(output.shape(), output_grad.shape(), "sigmoid_backward");
  Tensor<Scalar> out(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    out[i] = output_grad[i] * output[i] * (Scalar{1} - output[i]);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input) {
  require(!input.empty(), "softmax: empty input");
  Tensor<Scalar> out = input;
  const Scalar peak = *std::max_element(out.data().begin(), out.data().end());
  Scalar sum = 0;
  for (Scalar& v : out.data()) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (Scalar& v : out.data()) v /= sum;
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& output,
                                const Tensor<Scalar>& output_grad) {
  require_same_shape(output.shape(), output_grad.shape(), "softmax_backward");
  Scalar inner = 0;
  for (std::size_t i = 0; i < output.size(); ++i) inner += output[i] * output_grad[i];
  Tensor<Scalar> out(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    out[i] = output[i] * (output_grad[i] - inner);
  }
  return out;
}

template <typename Scalar>
MaxPoolResult<Scalar> maxpool2d(const Tensor<Scalar>& input, std::size_t window,
                                std::size_t stride) {
  const Shape out_shape = maxpool2d_output_shape(input.shape(), window, stride);
  const std::size_t height = input.shape()[1];
  const std::size_t width = input.shape()[2];
  MaxPoolResult<Scalar> result{Tensor<Scalar>(out_shape), {}};
  result.argmax.resize(out_shape.numel());
  std::size_t o = 0;
  for (std::size_t c = 0; c < out_shape[0]; ++c) {
    for (std::size_t y = 0; y < out_shape[1]; ++y) {
      for (std::size_t x = 0; x < out_shape[2]; ++x, ++o) {
        std::size_t best = (c * height + y * stride) * width + x * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (c * height + y * stride + i) * width + x * stride + j;
            // Strict comparison keeps the first maximum in row-major order.
            if (input[idx] > input[best]) best = idx;
          }
        }
        result.output[o] = input[best];
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Shape& input_shape,
                                  std::span<const std::size_t> argmax,
                                  const Tensor<Scalar>& output_grad) {
  require(argmax.size() == output_grad.size(),
          "maxpool2d_backward: argmax/output_grad length mismatch");
  Tensor<Scalar> out(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    require(argmax[o] < out.size(), "maxpool2d_backward: argmax out of range");
    out[argmax[o]] += output_grad[o];
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_pool(const Tensor<Scalar>& input, PoolMode mode) {
  require_rank(input.shape(), 3, "global_pool");
  const std::size_t channels = input.shape()[0];
  const std::size_t plane = input.shape()[1] * input.shape()[2];
  Tensor<Scalar> out(Shape{channels});
  for (std::size_t c = 0; c < channels; ++c) {
    const Scalar* p = input.data().data() + c * plane;
    if (mode == PoolMode::kAverage) {
      Scalar sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      out[c] = sum / static_cast<Scalar>(plane);
    } else {
      out[c] = *std::max_element(p, p + plane);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_pool_backward(const Tensor<Scalar>& input, PoolMode mode,
                                    const Tensor<Scalar>& output_grad) {
  require_rank(input.shape(), 3, "global_pool_backward");
  const std::size_t channels = input.shape()[0];
  const std::size_t plane = input.shape()[1] * input.shape()[2];
  require_same_shape(output_grad.shape(), Shape{channels}, "global_pool_backward");
  Tensor<Scalar> out(input.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    Scalar* g = out.data().data() + c * plane;
    if (mode == PoolMode::kAverage) {
      const Scalar share = output_grad[c] / static_cast<Scalar>(plane);
      std::fill(g, g + plane, share);
    } else {
      const Scalar* p = input.data().data() + c * plane;
      g[std::max_element(p, p + plane) - p] = output_grad[c];
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                     const Tensor<Scalar>& bias) {
  require(weights.shape().rank() == 2, "dense: weights must be MxN");
  const std::size_t rows = weights.shape()[0];
  const std::size_t cols = weights.shape()[1];
  require(input.size() == cols, "dense: input length " + std::to_string(input.size()) +
                                    " does not match weight columns " +
                                    std::to_string(cols));
  require(bias.shape() == Shape{rows}, "dense: bias length mismatch");
  Tensor<Scalar> out(Shape{rows});
  for (std::size_t m = 0; m < rows; ++m) {
    out[m] = bias[m] + dot(weights.data().data() + m * cols, input.data().data(), cols);
  }
  return out;
}

template <typename Scalar>
LayerGradients<Scalar> dense_backward(const Tensor<Scalar>& input,
                                      const Tensor<Scalar>& weights,
                                      const Tensor<Scalar>& output_grad) {
  require(weights.shape().rank() == 2, "dense_backward: weights must be MxN");
  const std::size_t rows = weights.shape()[0];
  const std::size_t cols = weights.shape()[1];
  require(input.size() == cols, "dense_backward: input length mismatch");
  require(output_grad.shape() == Shape{rows}, "dense_backward: output_grad length mismatch");
  Tensor<Scalar> input_grad(input.shape());
  Tensor<Scalar> weights_grad(weights.shape());
  for (std::size_t m = 0; m < rows; ++m) {
    const Scalar g = output_grad[m];
    axpy(g, weights.data().data() + m * cols, input_grad.data().data(), cols);
    axpy(g, input.data().data(), weights_grad.data().data() + m * cols, cols);
  }
  LayerGradients<Scalar> out;
  out.input_grad = std::move(input_grad);
  out.param_grads.push_back(std::move(weights_grad));
  out.param_grads.push_back(output_grad);
  return out;
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& input, double rate, std::uint64_t seed,
                       bool training) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return input;
  std::mt19937_64 gen(seed);
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  const double threshold = rate * kTwoPow53;
  Tensor<Scalar> out = input;
  for (Scalar& v : out.data()) {
    v = static_cast<double>(mask_bits(gen)) < threshold ? Scalar{0} : v * scale;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> dropout_backward(const Tensor<Scalar>& output_grad, double rate,
                                std::uint64_t seed, bool training) {
  // The mask is linear, so backward is the forward map applied to the gradient.
  return dropout(output_grad, rate, seed, training);
}

// ---------------------------------------------------------------------------
// Layer objects

template <typename Scalar>
Conv2dLayer<Scalar>::Conv2dLayer(Tensor<Scalar> weights, Tensor<Scalar> bias,
                                 std::size_t stride)
    : weights_(std::move(weights)), bias_(std::move(bias)), stride_(stride) {
  require(weights_.shape().rank() == 4, "conv layer: weights must be OxCxKhxKw");
  require(bias_.shape() == Shape{weights_.shape()[0]}, "conv layer: bias length mismatch");
}

template <typename Scalar>
Shape Conv2dLayer<Scalar>::output_shape(const Shape& input) const {
  return conv2d_output_shape(input, weights_.shape(), stride_);
}

template <typename Scalar>
Tensor<Scalar> Conv2dLayer<Scalar>::forward(const Tensor<Scalar>& input) const {
  return conv2d(input, weights_, bias_, stride_);
}

template <typename Scalar>
LayerGradients<Scalar> Conv2dLayer<Scalar>::backward(
    const Tensor<Scalar>& input, const Tensor<Scalar>& output_grad) const {
  return conv2d_backward(input, weights_, output_grad, stride_);
}

template <typename Scalar>
DenseLayer<Scalar>::DenseLayer(Tensor<Scalar> weights, Tensor<Scalar> bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
  require(weights_.shape().rank() == 2, "dense layer: weights must be MxN");
  require(bias_.shape() == Shape{weights_.shape()[0]}, "dense layer: bias length mismatch");
}

template <typename Scalar>
Shape DenseLayer<Scalar>::output_shape(const Shape& input) const {
  require(input.rank() == 1, "dense layer: input must be a flat vector, got " +
                                 input.to_string());
  require(input[0] == weights_.shape()[1],
          "dense layer: input length " + std::to_string(input[0]) +
              " does not match weight columns " + std::to_string(weights_.shape()[1]));
  return Shape{weights_.shape()[0]};
}

template <typename Scalar>
bool ReluLayer<Scalar>::kink_near(const Tensor<Scalar>& input, std::size_t index,
                                  Scalar eps) const {
  return std::abs(input[index]) <= eps;
}

template <typename Scalar>
Shape SoftmaxLayer<Scalar>::output_shape(const Shape& input) const {
  require(input.rank() == 1, "softmax layer: input must be a flat vector");
  return input;
}

template <typename Scalar>
LayerGradients<Scalar> MaxPoolLayer<Scalar>::backward(
    const Tensor<Scalar>& input, const Tensor<Scalar>& output_grad) const {
  const MaxPoolResult<Scalar> fwd = maxpool2d(input, window_, stride_);
  return {maxpool2d_backward(input.shape(), fwd.argmax, output_grad), {}};
}

template <typename Scalar>
bool MaxPoolLayer<Scalar>::kink_near(const Tensor<Scalar>& input, std::size_t index,
                                     Scalar eps) const {
  // A perturbation of +-eps can change the argmax of any window holding two
  // values within 2*eps of each other where one of them is the maximum.
  const Shape& s = input.shape();
  const std::size_t height = s[1], width = s[2];
  const std::size_t c = index / (height * width);
  const std::size_t y = (index / width) % height;
  const std::size_t x = index % width;
  const Shape out = output_shape(s);
  for (std::size_t oy = 0; oy < out[1]; ++oy) {
    if (y < oy * stride_ || y >= oy * stride_ + window_) continue;
    for (std::size_t ox = 0; ox < out[2]; ++ox) {
      if (x < ox * stride_ || x >= ox * stride_ + window_) continue;
      Scalar top = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t i = 0; i < window_; ++i) {
        for (std::size_t j = 0; j < window_; ++j) {
          top = std::max(top, input.at(c, oy * stride_ + i, ox * stride_ + j));
        }
      }
      int close = 0;
      for (std::size_t i = 0; i < window_; ++i) {
        for (std::size_t j = 0; j < window_; ++j) {
          if (top - input.at(c, oy * stride_ + i, ox * stride_ + j) <= 2 * eps) ++close;
        }
      }
      if (close > 1) return true;
    }
  }
  return false;
}

template <typename Scalar>
Shape GlobalPoolLayer<Scalar>::output_shape(const Shape& input) const {
  require_rank(input, 3, "globalpool layer");
  return Shape{input[0]};
}

template <typename Scalar>
bool GlobalPoolLayer<Scalar>::kink_near(const Tensor<Scalar>& input, std::size_t index,
                                        Scalar eps) const {
  if (mode_ == PoolMode::kAverage) return false;
  const std::size_t plane = input.shape()[1] * input.shape()[2];
  const std::size_t c = index / plane;
  const Scalar* p = input.data().data() + c * plane;
  const Scalar top = *std::max_element(p, p + plane);
  int close = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (top - p[i] <= 2 * eps) ++close;
  }
  return close > 1;
}

#define LESIONNET_INSTANTIATE(S)                                                   \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,  \
                            std::size_t);                                          \
  template LayerGradients<S> conv2d_backward(const Tensor<S>&, const Tensor<S>&,   \
                                             const Tensor<S>&, std::size_t);       \
  template Tensor<S> relu(const Tensor<S>&);                                       \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> sigmoid(const Tensor<S>&);                                    \
  template Tensor<S> sigmoid_backward(const Tensor<S>&, const Tensor<S>&);         \
  template Tensor<S> softmax(const Tensor<S>&);                                    \
  template Tensor<S> softmax_backward(const Tensor<S>&, const Tensor<S>&);         \
  template MaxPoolResult<S> maxpool2d(const Tensor<S>&, std::size_t, std::size_t); \
  template Tensor<S> maxpool2d_backward(const Shape&, std::span<const std::size_t>, \
                                        const Tensor<S>&);                         \
  template Tensor<S> global_pool(const Tensor<S>&, PoolMode);                      \
  template Tensor<S> global_pool_backward(const Tensor<S>&, PoolMode,              \
                                          const Tensor<S>&);                       \
  template Tensor<S> dense(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);  \
  template LayerGradients<S> dense_backward(const Tensor<S>&, const Tensor<S>&,    \
                                            const Tensor<S>&);                     \
  template Tensor<S> dropout(const Tensor<S>&, double, std::uint64_t, bool);       \
  template Tensor<S> dropout_backward(const Tensor<S>&, double, std::uint64_t, bool); \
  template class Conv2dLayer<S>;                                                   \
  template class DenseLayer<S>;                                                    \
  template class ReluLayer<S>;                                                     \
  template class SigmoidLayer<S>;                                                  \
  template class SoftmaxLayer<S>;                                                  \
  template class MaxPoolLayer<S>;                                                  \
  template class GlobalPoolLayer<S>;                                               \
  template class DropoutLayer<S>;

LESIONNET_INSTANTIATE(float)
LESIONNET_INSTANTIATE(double)

#undef LESIONNET_INSTANTIATE

}  // namespace lesionnet
