#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lesionnet/tensor.hpp"

namespace lesionnet {

// Result of a layer's backward pass. Shapes mirror the forward counterparts:
// input_grad has the input's shape, param_grads[i] the i-th parameter's.
template <typename Scalar>
struct LayerGradients {
  Tensor<Scalar> input_grad;
  std::vector<Tensor<Scalar>> param_grads;
};

enum class PoolMode { kAverage, kMax };

// ---------------------------------------------------------------------------
// Shape rules
// ---------------------------------------------------------------------------

// Valid (unpadded) convolution of a CxHxW input with OxCxKhxKw weights.
Shape conv2d_output_shape(const Shape& input, const Shape& weights,
                          std::size_t stride = 1);
Shape maxpool2d_output_shape(const Shape& input, std::size_t window = 2,
                             std::size_t stride = 2);

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                      const Tensor<Scalar>& bias, std::size_t stride = 1);

// param_grads = {weights_grad, bias_grad}.
template <typename Scalar>
LayerGradients<Scalar> conv2d_backward(const Tensor<Scalar>& input,
                                       const Tensor<Scalar>& weights,
                                       const Tensor<Scalar>& output_grad,
                                       std::size_t stride = 1);

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

// Subgradient 0 at x == 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& input,
                             const Tensor<Scalar>& output_grad);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& output,
                                const Tensor<Scalar>& output_grad);

// Softmax over all elements of a vector, max-subtracted.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input);

// Jacobian-vector product through softmax, given its forward output.
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& output,
                                const Tensor<Scalar>& output_grad);

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename Scalar>
struct MaxPoolResult {
  Tensor<Scalar> output;
  // Flat input index of the selected element for every output element.
  std::vector<std::size_t> argmax;
};

// Trailing rows/columns that do not fill a window are dropped. Ties resolve
// to the first element in row-major window order.
template <typename Scalar>
MaxPoolResult<Scalar> maxpool2d(const Tensor<Scalar>& input,
                                std::size_t window = 2, std::size_t stride = 2);

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Shape& input_shape,
                                  std::span<const std::size_t> argmax,
                                  const Tensor<Scalar>& output_grad);

// CxHxW -> C.
template <typename Scalar>
Tensor<Scalar> global_pool(const Tensor<Scalar>& input,
                           PoolMode mode = PoolMode::kAverage);

template <typename Scalar>
Tensor<Scalar> global_pool_backward(const Tensor<Scalar>& input, PoolMode mode,
                                    const Tensor<Scalar>& output_grad);

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                     const Tensor<Scalar>& bias);

// param_grads = {weights_grad, bias_grad}.
template <typename Scalar>
LayerGradients<Scalar> dense_backward(const Tensor<Scalar>& input,
                                      const Tensor<Scalar>& weights,
                                      const Tensor<Scalar>& output_grad);

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: in training mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate). The mask is a pure function
// of (seed, element index), so the backward pass regenerates it.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& input, double rate,
                       std::uint64_t seed, bool training);

template <typename Scalar>
Tensor<Scalar> dropout_backward(const Tensor<Scalar>& output_grad, double rate,
                                std::uint64_t seed, bool training);

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string name() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& input) const = 0;
  virtual LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                          const Tensor<Scalar>& output_grad) const = 0;

  virtual std::vector<Tensor<Scalar>*> parameters() { return {}; }
  virtual std::vector<const Tensor<Scalar>*> parameters() const { return {}; }

  // True when the layer is not differentiable within +-eps of input[index];
  // finite-difference checks skip such elements.
  virtual bool kink_near(const Tensor<Scalar>& /*input*/, std::size_t /*index*/,
                         Scalar /*eps*/) const {
    return false;
  }

  virtual std::unique_ptr<Layer> clone() const = 0;
};

template <typename Scalar>
class Conv2dLayer final : public Layer<Scalar> {
 public:
  Conv2dLayer(Tensor<Scalar> weights, Tensor<Scalar> bias, std::size_t stride = 1);

  std::string name() const override { return "conv"; }
  Shape output_shape(const Shape& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override;
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override;
  std::vector<Tensor<Scalar>*> parameters() override { return {&weights_, &bias_}; }
  std::vector<const Tensor<Scalar>*> parameters() const override {
    return {&weights_, &bias_};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<Conv2dLayer>(*this);
  }

 private:
  Tensor<Scalar> weights_;
  Tensor<Scalar> bias_;
  std::size_t stride_;
};

template <typename Scalar>
class DenseLayer final : public Layer<Scalar> {
 public:
  DenseLayer(Tensor<Scalar> weights, Tensor<Scalar> bias);

  std::string name() const override { return "dense"; }
  Shape output_shape(const Shape& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return dense(input, weights_, bias_);
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override {
    return dense_backward(input, weights_, output_grad);
  }
  std::vector<Tensor<Scalar>*> parameters() override { return {&weights_, &bias_}; }
  std::vector<const Tensor<Scalar>*> parameters() const override {
    return {&weights_, &bias_};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<DenseLayer>(*this);
  }

 private:
  Tensor<Scalar> weights_;
  Tensor<Scalar> bias_;
};

template <typename Scalar>
class ReluLayer final : public Layer<Scalar> {
 public:
  std::string name() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return relu(input);
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override {
    return {relu_backward(input, output_grad), {}};
  }
  bool kink_near(const Tensor<Scalar>& input, std::size_t index,
                 Scalar eps) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<ReluLayer>(*this);
  }
};

template <typename Scalar>
class SigmoidLayer final : public Layer<Scalar> {
 public:
  std::string name() const override { return "sigmoid"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return sigmoid(input);
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override {
    return {sigmoid_backward(sigmoid(input), output_grad), {}};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<SigmoidLayer>(*this);
  }
};

template <typename Scalar>
class SoftmaxLayer final : public Layer<Scalar> {
 public:
  std::string name() const override { return "softmax"; }
  Shape output_shape(const Shape& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return softmax(input);
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override {
    return {softmax_backward(softmax(input), output_grad), {}};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<SoftmaxLayer>(*this);
  }
};

template <typename Scalar>
class MaxPoolLayer final : public Layer<Scalar> {
 public:
  explicit MaxPoolLayer(std::size_t window = 2, std::size_t stride = 2)
      : window_(window), stride_(stride) {}

  std::string name() const override { return "maxpool"; }
  Shape output_shape(const Shape& input) const override {
    return maxpool2d_output_shape(input, window_, stride_);
  }
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return maxpool2d(input, window_, stride_).output;
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override;
  bool kink_near(const Tensor<Scalar>& input, std::size_t index,
                 Scalar eps) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<MaxPoolLayer>(*this);
  }

 private:
  std::size_t window_;
  std::size_t stride_;
};

template <typename Scalar>
class GlobalPoolLayer final : public Layer<Scalar> {
 public:
  explicit GlobalPoolLayer(PoolMode mode = PoolMode::kAverage) : mode_(mode) {}

  std::string name() const override { return "globalpool"; }
  Shape output_shape(const Shape& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return global_pool(input, mode_);
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output_grad) const override {
    return {global_pool_backward(input, mode_, output_grad), {}};
  }
  bool kink_near(const Tensor<Scalar>& input, std::size_t index,
                 Scalar eps) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<GlobalPoolLayer>(*this);
  }

 private:
  PoolMode mode_;
};

// Dropout carries its own mask seed; callers reseed it per sample.
template <typename Scalar>
class DropoutLayer final : public Layer<Scalar> {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {}

  std::string name() const override { return "dropout"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const override {
    return dropout(input, rate_, seed_, training_);
  }
  LayerGradients<Scalar> backward(const Tensor<Scalar>& /*input*/,
                                  const Tensor<Scalar>& output_grad) const override {
    return {dropout_backward(output_grad, rate_, seed_, training_), {}};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    return std::make_unique<DropoutLayer>(*this);
  }

  double rate() const { return rate_; }
  void set_rate(double rate) { rate_ = rate; }
  void set_training(bool training) { training_ = training; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

 private:
  double rate_;
  std::uint64_t seed_ = 0;
  bool training_ = false;
};

}  // namespace lesionnet
