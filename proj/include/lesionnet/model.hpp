#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lesionnet/dataset.hpp"
#include "lesionnet/layers.hpp"
#include "lesionnet/tensor.hpp"

namespace lesionnet {

enum class LayerKind { kConv, kRelu, kMaxPool, kGlobalPool, kDense, kDropout, kSoftmax, kSigmoid };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t kernel_h = 0;  // conv
  std::size_t kernel_w = 0;  // conv
  std::size_t units = 0;     // conv output channels or dense units
  std::size_t stride = 0;    // conv (default 1) and maxpool (default 2)
  std::size_t window = 0;    // maxpool (default 2)
  double rate = 0.0;         // dropout
  PoolMode pool_mode = PoolMode::kAverage;  // globalpool

  static LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1);
  static LayerSpec relu() { return {LayerKind::kRelu}; }
  static LayerSpec maxpool(std::size_t window = 2, std::size_t stride = 2);
  static LayerSpec globalpool(PoolMode mode = PoolMode::kAverage);
  static LayerSpec dense(std::size_t units);
  static LayerSpec dropout(double rate);
  static LayerSpec softmax() { return {LayerKind::kSoftmax}; }
  static LayerSpec sigmoid() { return {LayerKind::kSigmoid}; }

  bool parameterized() const { return kind == LayerKind::kConv || kind == LayerKind::kDense; }
  // Kind-specific fields are set exactly when the kind needs them.
  void validate() const;
  std::string describe() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchConfig {
  Shape input_shape;  // C x H x W
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// Output shape of every layer, in order. Fails on the first inconsistent
// layer, naming it; also fails when the final output is not num_classes long.
std::vector<Shape> infer_shapes(const ArchConfig& config);

// Weight and bias shapes of every parameterized layer, flattened in layer order.
std::vector<Shape> parameter_shapes(const ArchConfig& config);

struct ShapeWarning {
  std::size_t layer_index;
  std::string row;       // row label as printed in the reference table
  std::string declared;
  std::string inferred;
};

struct PaperCnnOptions {
  double width = 1.0;  // multiplier on every channel and unit count
  double dropout_rate = 0.5;
  PoolMode global_pool = PoolMode::kAverage;
  bool sigmoid_head = false;
};

struct PaperArch {
  ArchConfig config;
  // Rows of the published layer table whose printed shapes disagree with the
  // shapes the layer algebra produces. Only populated for a 512-pixel,
  // full-width build, the setting the table describes.
  std::vector<ShapeWarning> warnings;
};

// Three 3x3 convs (32), max-pool, 3x3 conv (64), 3x3 conv (256), 5x5 conv
// (256), each conv followed by ReLU; global pooling; dense 4096 + ReLU +
// dropout; dense num_classes + softmax.
PaperArch paper_cnn_config(int input_side, std::size_t num_classes,
                           const PaperCnnOptions& options = {});

// VGG16 layout (13 convs in 5 blocks, three dense layers) with unpadded
// convolutions and global pooling before the classifier.
ArchConfig vgg16_config(int input_side = 224, std::size_t num_classes = 7, double width = 1.0);

// ---------------------------------------------------------------------------

struct ModelState {
  ArchConfig config;
  ClassCatalog classes;
  // weights then bias for each parameterized layer, in layer order
  std::vector<Tensor<float>> params;
  // one flag per parameterized layer
  std::vector<bool> frozen;
  std::uint64_t init_seed = 0;

  std::size_t num_parameterized_layers() const;
  // Positions in config.layers of the parameterized layers.
  std::vector<std::size_t> parameterized_layers() const;
  void validate() const;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

// He-normal weights (std = sqrt(2 / fan_in)), zero biases. Layer l draws from
// a generator keyed by (seed, l).
ModelState init_params(const ArchConfig& config, std::uint64_t seed);
ModelState init_params(const ArchConfig& config, std::uint64_t seed, ClassCatalog classes);

// Flags the first ceil(fraction * P) parameterized layers as frozen and
// clears the rest. Parameter values are untouched.
ModelState freeze_layers(ModelState model, double fraction);

// Replaces the final dense layer with a freshly initialized one of
// classes.size() units; every other parameter is carried over.
ModelState replace_head(ModelState model, ClassCatalog classes, std::uint64_t seed);

// ---------------------------------------------------------------------------

// Executable form of a ModelState at a chosen precision.
template <typename Scalar>
class Network {
 public:
  explicit Network(const ModelState& state);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ArchConfig& config() const { return config_; }
  std::size_t num_layers() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }

  // Inference-mode forward pass (dropout disabled).
  Tensor<Scalar> forward(const Tensor<Scalar>& input);

  // activations[0] is the input, activations[i + 1] the output of layer i.
  struct Trace {
    std::vector<Tensor<Scalar>> activations;
  };

  // Forward pass that keeps every activation. In training mode each dropout
  // layer draws its mask from (dropout_seed, layer index).
  Trace forward_trace(const Tensor<Scalar>& input, bool training, std::uint64_t dropout_seed);

  // Back-propagates output_grad, the gradient with respect to the output of
  // layer end - 1, down to layer `begin`. Parameter gradients are added into
  // param_grads (flat, ModelState order); layers below `begin` are skipped.
  void backward(const Trace& trace, const Tensor<Scalar>& output_grad, std::size_t end,
                std::size_t begin, std::vector<Tensor<Scalar>>& param_grads);

  // Flat parameter list in ModelState order.
  std::vector<Tensor<Scalar>*> parameters();
  std::vector<Tensor<Scalar>> zero_gradients() const;

  // Writes the current parameters back into a ModelState (as float).
  void store(ModelState& state) const;

 private:
  ArchConfig config_;
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  // first flat parameter index of each layer (parameterized layers only)
  std::vector<std::size_t> param_offset_;
};

}  // namespace lesionnet
