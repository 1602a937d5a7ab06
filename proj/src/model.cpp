#include "lesionnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lesionnet/error.hpp"
#include "lesionnet/random.hpp"

namespace lesionnet {
namespace {

[[noreturn]] void bad_layer(std::size_t index, const LayerSpec& spec, const std::string& what) {
  fail(ErrorKind::kInvalidArgument,
       "layer " + std::to_string(index) + " (" + spec.describe() + "): " + what);
}

std::size_t scaled(std::size_t count, double width) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(count * width)));
}

// Output shape of one layer; throws Error on inconsistency.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::kConv: {
      if (in.rank() != 3) {
        fail(ErrorKind::kInvalidArgument, "needs a C x H x W input, got " + in.to_string());
      }
      return conv2d_output_shape(in, Shape{spec.units, in[0], spec.kernel_h, spec.kernel_w},
                                 spec.stride);
    }
    case LayerKind::kMaxPool:
      return maxpool2d_output_shape(in, spec.window, spec.stride);
    case LayerKind::kGlobalPool:
      if (in.rank() != 3) {
        fail(ErrorKind::kInvalidArgument, "needs a C x H x W input, got " + in.to_string());
      }
      return Shape{in[0]};
    case LayerKind::kDense:
      if (in.rank() != 1) {
        fail(ErrorKind::kInvalidArgument,
             "needs a flat input, got " + in.to_string() + " (add a global pooling layer)");
      }
      return Shape{spec.units};
    case LayerKind::kSoftmax:
      if (in.rank() != 1) {
        fail(ErrorKind::kInvalidArgument, "needs a flat input, got " + in.to_string());
      }
      return in;
    case LayerKind::kRelu:
    case LayerKind::kDropout:
    case LayerKind::kSigmoid:
      return in;
  }
  fail(ErrorKind::kInvalidArgument, "unknown layer kind");
}

template <typename Scalar>
std::unique_ptr<Layer<Scalar>> make_layer(const LayerSpec& spec, const Tensor<float>* weights,
                                          const Tensor<float>* bias) {
  switch (spec.kind) {
    case LayerKind::kConv:
      return std::make_unique<Conv2dLayer<Scalar>>(weights->cast<Scalar>(), bias->cast<Scalar>(),
                                                   spec.stride);
    case LayerKind::kDense:
      return std::make_unique<DenseLayer<Scalar>>(weights->cast<Scalar>(), bias->cast<Scalar>());
    case LayerKind::kRelu:
      return std::make_unique<ReluLayer<Scalar>>();
    case LayerKind::kMaxPool:
      return std::make_unique<MaxPoolLayer<Scalar>>(spec.window, spec.stride);
    case LayerKind::kGlobalPool:
      return std::make_unique<GlobalPoolLayer<Scalar>>(spec.pool_mode);
    case LayerKind::kDropout:
      return std::make_unique<DropoutLayer<Scalar>>(spec.rate);
    case LayerKind::kSoftmax:
      return std::make_unique<SoftmaxLayer<Scalar>>();
    case LayerKind::kSigmoid:
      return std::make_unique<SigmoidLayer<Scalar>>();
  }
  fail(ErrorKind::kInvalidArgument, "unknown layer kind");
}

Tensor<float> he_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& gen) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<float> t(shape);
  for (float& v : t.data()) v = static_cast<float>(dist(gen));
  return t;
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kGlobalPool: return "globalpool";
    case LayerKind::kDense: return "dense";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kSoftmax: return "softmax";
    case LayerKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (LayerKind k : {LayerKind::kConv, LayerKind::kRelu, LayerKind::kMaxPool,
                      LayerKind::kGlobalPool, LayerKind::kDense, LayerKind::kDropout,
                      LayerKind::kSoftmax, LayerKind::kSigmoid}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorKind::kInvalidArgument, "unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv(std::size_t out_channels, std::size_t kernel, std::size_t stride) {
  LayerSpec s{LayerKind::kConv};
  s.units = out_channels;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t window, std::size_t stride) {
  LayerSpec s{LayerKind::kMaxPool};
  s.window = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::globalpool(PoolMode mode) {
  LayerSpec s{LayerKind::kGlobalPool};
  s.pool_mode = mode;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s{LayerKind::kDense};
  s.units = units;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s{LayerKind::kDropout};
  s.rate = rate;
  return s;
}

void LayerSpec::validate() const {
  const bool conv = kind == LayerKind::kConv;
  const bool pool = kind == LayerKind::kMaxPool;
  auto check = [&](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::kInvalidArgument, std::string(to_string(kind)) + " layer: " + what);
  };
  check(conv == (kernel_h > 0 && kernel_w > 0), "kernel size must be set exactly for conv");
  check((conv || kind == LayerKind::kDense) == (units > 0),
        "unit/channel count must be set exactly for conv and dense");
  check((conv || pool) == (stride > 0), "stride must be set exactly for conv and maxpool");
  check(pool == (window > 0), "window must be set exactly for maxpool");
  if (kind == LayerKind::kDropout) {
    check(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0, 1)");
  } else {
    check(rate == 0.0, "rate is only valid for dropout");
  }
  check(kind == LayerKind::kGlobalPool || pool_mode == PoolMode::kAverage,
        "pool mode is only valid for globalpool");
}

std::string LayerSpec::describe() const {
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case LayerKind::kConv:
      out << ' ' << units << " k" << kernel_h;
      if (kernel_w != kernel_h) out << 'x' << kernel_w;
      if (stride != 1) out << " s" << stride;
      break;
    case LayerKind::kDense: out << ' ' << units; break;
    case LayerKind::kDropout: out << ' ' << rate; break;
    case LayerKind::kGlobalPool: out << (pool_mode == PoolMode::kMax ? " max" : " avg"); break;
    case LayerKind::kMaxPool: out << ' ' << window << 'x' << window; break;
    default: break;
  }
  return out.str();
}

std::vector<Shape> infer_shapes(const ArchConfig& config) {
  if (config.input_shape.rank() != 3) {
    fail(ErrorKind::kInvalidArgument,
         "input shape must be C x H x W, got " + config.input_shape.to_string());
  }
  if (config.layers.empty()) fail(ErrorKind::kInvalidArgument, "architecture has no layers");
  std::vector<Shape> shapes;
  Shape current = config.input_shape;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& spec = config.layers[i];
    try {
      spec.validate();
      current = layer_output_shape(spec, current);
    } catch (const Error& e) {
      bad_layer(i, spec, e.what());
    }
    shapes.push_back(current);
  }
  if (current != Shape{config.num_classes}) {
    fail(ErrorKind::kInvalidArgument, "final layer emits " + current.to_string() +
                                          " values, expected num_classes = " +
                                          std::to_string(config.num_classes));
  }
  return shapes;
}

std::vector<Shape> parameter_shapes(const ArchConfig& config) {
  const std::vector<Shape> out_shapes = infer_shapes(config);
  std::vector<Shape> shapes;
  Shape in = config.input_shape;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& spec = config.layers[i];
    if (spec.kind == LayerKind::kConv) {
      shapes.push_back(Shape{spec.units, in[0], spec.kernel_h, spec.kernel_w});
      shapes.push_back(Shape{spec.units});
    } else if (spec.kind == LayerKind::kDense) {
      shapes.push_back(Shape{spec.units, in[0]});
      shapes.push_back(Shape{spec.units});
    }
    in = out_shapes[i];
  }
  return shapes;
}

PaperArch paper_cnn_config(int input_side, std::size_t num_classes,
                           const PaperCnnOptions& options) {
  if (input_side < 32) fail(ErrorKind::kInvalidArgument, "paper CNN needs input_side >= 32");
  if (num_classes < 1) fail(ErrorKind::kInvalidArgument, "num_classes must be >= 1");
  if (!(options.width > 0.0)) fail(ErrorKind::kInvalidArgument, "width must be > 0");
  const double w = options.width;
  const auto side = static_cast<std::size_t>(input_side);

  PaperArch arch;
  ArchConfig& c = arch.config;
  c.input_shape = Shape{3, side, side};
  c.num_classes = num_classes;
  c.layers = {
      LayerSpec::conv(scaled(32, w), 3),  LayerSpec::relu(),
      LayerSpec::conv(scaled(32, w), 3),  LayerSpec::relu(),
      LayerSpec::conv(scaled(32, w), 3),  LayerSpec::relu(),
      LayerSpec::maxpool(),
      LayerSpec::conv(scaled(64, w), 3),  LayerSpec::relu(),
      LayerSpec::conv(scaled(256, w), 3), LayerSpec::relu(),
      LayerSpec::conv(scaled(256, w), 5), LayerSpec::relu(),
      LayerSpec::globalpool(options.global_pool),
      LayerSpec::dense(scaled(4096, w)),  LayerSpec::relu(),
      LayerSpec::dropout(options.dropout_rate),
      LayerSpec::dense(num_classes),
      options.sigmoid_head ? LayerSpec::sigmoid() : LayerSpec::softmax(),
  };
  const std::vector<Shape> shapes = infer_shapes(c);

  if (input_side != 512 || w != 1.0) return arch;

  struct Declared {
    std::size_t layer;
    const char* row;
    Shape shape;
  };
  const std::vector<Declared> table = {
      {0, "Convolution", {32, 510, 510}},     {1, "ReLu Activation", {32, 510, 510}},
      {2, "Convolution", {32, 508, 508}},     {3, "ReLu Activation", {32, 252, 252}},
      {4, "Convolution", {32, 506, 506}},     {5, "ReLu Activation", {32, 506, 506}},
      {6, "Max Pooling", {32, 253, 253}},     {7, "Convolution", {64, 251, 251}},
      {8, "ReLu Activation", {64, 251, 251}}, {9, "Convolution", {256, 57, 57}},
      {10, "ReLu Activation", {256, 57, 57}}, {11, "Convolution", {256, 53, 53}},
      {12, "ReLu Activation", {256, 53, 53}}, {13, "Global Pooling", {256}},
      {14, "Dense", {4096}},                  {15, "ReLu Activation", {4096}},
      {17, "Dense 2", {5}},                   {18, "Sigmoid Activation", {5}},
  };
  for (const Declared& d : table) {
    if (shapes[d.layer] != d.shape) {
      arch.warnings.push_back(
          {d.layer, d.row, d.shape.to_string(), shapes[d.layer].to_string()});
    }
  }
  if (!options.sigmoid_head) {
    arch.warnings.push_back({18, "Sigmoid Activation", "sigmoid head", "softmax head"});
  }
  return arch;
}

ArchConfig vgg16_config(int input_side, std::size_t num_classes, double width) {
  const auto side = static_cast<std::size_t>(input_side);
  ArchConfig c;
  c.input_shape = Shape{3, side, side};
  c.num_classes = num_classes;
  const std::vector<std::pair<std::size_t, std::size_t>> blocks = {
      {64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  for (const auto& [channels, convs] : blocks) {
    for (std::size_t i = 0; i < convs; ++i) {
      c.layers.push_back(LayerSpec::conv(scaled(channels, width), 3));
      c.layers.push_back(LayerSpec::relu());
    }
    c.layers.push_back(LayerSpec::maxpool());
  }
  c.layers.push_back(LayerSpec::globalpool());
  for (int i = 0; i < 2; ++i) {
    c.layers.push_back(LayerSpec::dense(scaled(4096, width)));
    c.layers.push_back(LayerSpec::relu());
    c.layers.push_back(LayerSpec::dropout(0.5));
  }
  c.layers.push_back(LayerSpec::dense(num_classes));
  c.layers.push_back(LayerSpec::softmax());
  infer_shapes(c);
  return c;
}

// ---------------------------------------------------------------------------

std::size_t ModelState::num_parameterized_layers() const {
  return parameterized_layers().size();
}

std::vector<std::size_t> ModelState::parameterized_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (config.layers[i].parameterized()) out.push_back(i);
  }
  return out;
}

void ModelState::validate() const {
  const std::vector<Shape> expected = parameter_shapes(config);
  if (params.size() != expected.size()) {
    fail(ErrorKind::kConsistency, "model has " + std::to_string(params.size()) +
                                      " parameter tensors, architecture needs " +
                                      std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params[i].shape() != expected[i]) {
      fail(ErrorKind::kConsistency, "parameter " + std::to_string(i) + " has shape " +
                                        params[i].shape().to_string() + ", architecture needs " +
                                        expected[i].to_string());
    }
  }
  if (frozen.size() != num_parameterized_layers()) {
    fail(ErrorKind::kConsistency, "frozen flag count does not match parameterized layers");
  }
  if (classes.size() != config.num_classes) {
    fail(ErrorKind::kConsistency, "class catalog size does not match num_classes");
  }
}

ModelState init_params(const ArchConfig& config, std::uint64_t seed) {
  return init_params(config, seed, ClassCatalog::first(config.num_classes));
}

ModelState init_params(const ArchConfig& config, std::uint64_t seed, ClassCatalog classes) {
  ModelState state;
  state.config = config;
  state.classes = std::move(classes);
  state.init_seed = seed;
  const std::vector<Shape> shapes = parameter_shapes(config);
  std::size_t p = 0;
  for (std::size_t layer : state.parameterized_layers()) {
    const Shape& ws = shapes[p];
    const std::size_t fan_in = ws.numel() / ws[0];
    auto gen = make_rng({seed, layer});
    state.params.push_back(he_normal(ws, fan_in, gen));
    state.params.emplace_back(shapes[p + 1]);
    state.frozen.push_back(false);
    p += 2;
  }
  state.validate();
  return state;
}

ModelState freeze_layers(ModelState model, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "freeze fraction must be in [0, 1]");
  }
  const std::size_t total = model.num_parameterized_layers();
  // The small slack absorbs representation error such as 0.7 * 10 = 7.000...1.
  const auto count = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(total) - 1e-9));
  model.frozen.assign(total, false);
  for (std::size_t i = 0; i < std::min(count, total); ++i) model.frozen[i] = true;
  return model;
}

ModelState replace_head(ModelState model, ClassCatalog classes, std::uint64_t seed) {
  const std::vector<std::size_t> param_layers = model.parameterized_layers();
  if (param_layers.empty() || model.config.layers[param_layers.back()].kind != LayerKind::kDense) {
    fail(ErrorKind::kConsistency, "replace_head: model does not end in a dense layer");
  }
  const std::size_t head = param_layers.back();
  model.config.layers[head].units = classes.size();
  model.config.num_classes = classes.size();
  model.classes = std::move(classes);

  const std::vector<Shape> shapes = parameter_shapes(model.config);
  const std::size_t w = shapes.size() - 2;
  auto gen = make_rng({seed, head});
  model.params[w] = he_normal(shapes[w], shapes[w][1], gen);
  model.params[w + 1] = Tensor<float>(shapes[w + 1]);
  model.frozen.back() = false;
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Network<Scalar>::Network(const ModelState& state) : config_(state.config) {
  state.validate();
  std::size_t p = 0;
  for (const LayerSpec& spec : config_.layers) {
    if (spec.parameterized()) {
      param_offset_.push_back(p);
      layers_.push_back(make_layer<Scalar>(spec, &state.params[p], &state.params[p + 1]));
      p += 2;
    } else {
      param_offset_.push_back(static_cast<std::size_t>(-1));
      layers_.push_back(make_layer<Scalar>(spec, nullptr, nullptr));
    }
  }
}

template <typename Scalar>
Network<Scalar>::Network(const Network& other)
    : config_(other.config_), param_offset_(other.param_offset_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename Scalar>
Network<Scalar>& Network<Scalar>::operator=(const Network& other) {
  if (this != &other) *this = Network(other);
  return *this;
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& input) {
  Tensor<Scalar> x = input;
  for (auto& layer : layers_) {
    if (auto* d = dynamic_cast<DropoutLayer<Scalar>*>(layer.get())) d->set_training(false);
    x = layer->forward(x);
  }
  return x;
}

template <typename Scalar>
typename Network<Scalar>::Trace Network<Scalar>::forward_trace(const Tensor<Scalar>& input,
                                                               bool training,
                                                               std::uint64_t dropout_seed) {
  Trace trace;
  trace.activations.reserve(layers_.size() + 1);
  trace.activations.push_back(input);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* d = dynamic_cast<DropoutLayer<Scalar>*>(layers_[i].get())) {
      d->set_training(training);
      d->set_seed(derive_seed({dropout_seed, i}));
    }
    trace.activations.push_back(layers_[i]->forward(trace.activations.back()));
  }
  return trace;
}

template <typename Scalar>
void Network<Scalar>::backward(const Trace& trace, const Tensor<Scalar>& output_grad,
                               std::size_t end, std::size_t begin,
                               std::vector<Tensor<Scalar>>& param_grads) {
  Tensor<Scalar> grad = output_grad;
  for (std::size_t i = end; i-- > begin;) {
    LayerGradients<Scalar> g = layers_[i]->backward(trace.activations[i], grad);
    if (config_.layers[i].parameterized()) {
      const std::size_t p = param_offset_[i];
      for (std::size_t k = 0; k < g.param_grads.size(); ++k) {
        auto dst = param_grads.at(p + k).data();
        const auto src = g.param_grads[k].data();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      }
    }
    grad = std::move(g.input_grad);
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> Network<Scalar>::parameters() {
  std::vector<Tensor<Scalar>*> out;
  for (auto& layer : layers_) {
    for (Tensor<Scalar>* t : layer->parameters()) out.push_back(t);
  }
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> Network<Scalar>::zero_gradients() const {
  std::vector<Tensor<Scalar>> out;
  for (const auto& layer : layers_) {
    const Layer<Scalar>& l = *layer;
    for (const Tensor<Scalar>* t : l.parameters()) out.emplace_back(t->shape());
  }
  return out;
}

template <typename Scalar>
void Network<Scalar>::store(ModelState& state) const {
  std::size_t p = 0;
  for (const auto& layer : layers_) {
    const Layer<Scalar>& l = *layer;
    for (const Tensor<Scalar>* t : l.parameters()) state.params.at(p++) = t->template cast<float>();
  }
}

template class Network<float>;
template class Network<double>;

}  // namespace lesionnet
