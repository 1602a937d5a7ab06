#include "lesionnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lesionnet/error.hpp"
#include "lesionnet/random.hpp"

namespace lesionnet {
namespace {

struct BatchView {
  std::size_t rows;
  std::size_t classes;
};

template <typename Scalar>
BatchView check_loss_inputs(const Tensor<Scalar>& probs, const Tensor<Scalar>& targets,
                            std::span<const double> class_weights, const char* op) {
  const Shape& s = probs.shape();
  if (s.rank() != 1 && s.rank() != 2) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": probabilities must be batch x K");
  }
  if (targets.shape() != s) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": targets shape " +
                                          targets.shape().to_string() + " != probs shape " +
                                          s.to_string());
  }
  const BatchView view{s.rank() == 1 ? 1 : s[0], s.rank() == 1 ? s[0] : s[1]};
  if (class_weights.size() != view.classes) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": expected " +
                                          std::to_string(view.classes) + " class weights, got " +
                                          std::to_string(class_weights.size()));
  }
  return view;
}

template <typename Scalar>
std::size_t true_class(const Tensor<Scalar>& targets, std::size_t row, std::size_t classes,
                       const char* op) {
  std::size_t hot = classes;
  for (std::size_t k = 0; k < classes; ++k) {
    const Scalar y = targets[row * classes + k];
    if (y == Scalar{1} && hot == classes) {
      hot = k;
    } else if (y != Scalar{0}) {
      hot = classes + 1;
      break;
    }
  }
  if (hot >= classes) {
    fail(ErrorKind::kInvalidArgument,
         std::string(op) + ": target row " + std::to_string(row) + " is not one-hot");
  }
  return hot;
}

double clip(double p) { return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip); }

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool has_sigmoid_head(const ArchConfig& config) {
  return config.layers.back().kind == LayerKind::kSigmoid;
}

template <typename Scalar>
LossResult<Scalar> head_loss(bool sigmoid, const Tensor<Scalar>& probs,
                             const Tensor<Scalar>& targets, std::span<const double> weights) {
  return sigmoid ? weighted_bce(probs, targets, weights) : weighted_cce(probs, targets, weights);
}

}  // namespace

template <typename Scalar>
std::size_t argmax(std::span<const Scalar> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

template <typename Scalar>
LossResult<Scalar> weighted_cce(const Tensor<Scalar>& probs, const Tensor<Scalar>& targets,
                                std::span<const double> class_weights) {
  const BatchView b = check_loss_inputs(probs, targets, class_weights, "weighted_cce");
  LossResult<Scalar> out{Scalar{0}, Tensor<Scalar>(probs.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < b.rows; ++i) {
    double row_sum = 0.0;
    for (std::size_t k = 0; k < b.classes; ++k) row_sum += probs[i * b.classes + k];
    if (std::abs(row_sum - 1.0) > 1e-4) {
      fail(ErrorKind::kInvalidArgument,
           "weighted_cce: probability row " + std::to_string(i) + " does not sum to 1");
    }
    const std::size_t c = true_class(targets, i, b.classes, "weighted_cce");
    const double w = class_weights[c];
    total += w * -std::log(clip(static_cast<double>(probs[i * b.classes + c])));
    for (std::size_t k = 0; k < b.classes; ++k) {
      const std::size_t e = i * b.classes + k;
      out.logit_grad[e] = static_cast<Scalar>(w * (static_cast<double>(probs[e]) - targets[e]) /
                                              static_cast<double>(b.rows));
    }
  }
  out.loss = static_cast<Scalar>(total / static_cast<double>(b.rows));
  return out;
}

template <typename Scalar>
LossResult<Scalar> weighted_bce(const Tensor<Scalar>& probs, const Tensor<Scalar>& targets,
                                std::span<const double> class_weights) {
  const BatchView b = check_loss_inputs(probs, targets, class_weights, "weighted_bce");
  LossResult<Scalar> out{Scalar{0}, Tensor<Scalar>(probs.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < b.rows; ++i) {
    const std::size_t c = true_class(targets, i, b.classes, "weighted_bce");
    const double w = class_weights[c];
    for (std::size_t k = 0; k < b.classes; ++k) {
      const std::size_t e = i * b.classes + k;
      const double p = clip(static_cast<double>(probs[e]));
      const double y = targets[e];
      total += w * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      out.logit_grad[e] = static_cast<Scalar>(w * (static_cast<double>(probs[e]) - y) /
                                              static_cast<double>(b.rows));
    }
  }
  out.loss = static_cast<Scalar>(total / static_cast<double>(b.rows));
  return out;
}

template <typename Scalar>
AdamState<Scalar>::AdamState(std::span<const Shape> shapes, AdamOptions opts)
    : options(opts) {
  for (const Shape& s : shapes) {
    m.emplace_back(s);
    v.emplace_back(s);
  }
}

template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, std::span<const Tensor<Scalar>> grads,
               AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail(ErrorKind::kInvalidArgument, "adam_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p]->shape() != grads[p].shape() || params[p]->shape() != state.m[p].shape()) {
      fail(ErrorKind::kInvalidArgument,
           "adam_step: shape mismatch for parameter " + std::to_string(p));
    }
    for (Scalar g : grads[p].data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        fail(ErrorKind::kNumeric,
             "adam_step: non-finite gradient for parameter " + std::to_string(p));
      }
    }
  }

  const AdamOptions& o = state.options;
  const std::uint64_t t = state.step + 1;
  const double correction1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
  const auto b1 = static_cast<Scalar>(o.beta1);
  const auto b2 = static_cast<Scalar>(o.beta2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p]->data();
    const auto g = grads[p].data();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    for (std::size_t e = 0; e < theta.size(); ++e) {
      m[e] = b1 * m[e] + (Scalar{1} - b1) * g[e];
      v[e] = b2 * v[e] + (Scalar{1} - b2) * g[e] * g[e];
      const double m_hat = static_cast<double>(m[e]) / correction1;
      const double v_hat = static_cast<double>(v[e]) / correction2;
      theta[e] = static_cast<Scalar>(static_cast<double>(theta[e]) -
                                     o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon));
    }
  }
  state.step = t;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const EpochStats& e : epochs) {
    out += std::to_string(e.epoch) + ',' + fmt6(e.train_loss) + ',' + fmt6(e.train_accuracy) +
           ',' + (e.val_loss ? fmt6(*e.val_loss) : "") + ',' +
           (e.val_accuracy ? fmt6(*e.val_accuracy) : "") + '\n';
  }
  return out;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, path.string() + ": cannot open for writing");
  out << to_csv();
  if (!out) fail(ErrorKind::kIo, path.string() + ": write failed");
}

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorKind::kInvalidArgument, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kInvalidArgument, "batch size must be >= 1");
  if (dropout_rate && !(*dropout_rate >= 0.0 && *dropout_rate < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "dropout rate must be in [0, 1)");
  }
  if (freeze_fraction && !(*freeze_fraction >= 0.0 && *freeze_fraction <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, "freeze fraction must be in [0, 1]");
  }
  if (!(adam.learning_rate >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "invalid Adam hyperparameters");
  }
}

EvalResult evaluate(Network<float>& net, const SampleSet& samples,
                    std::span<const double> class_weights) {
  const std::size_t k = net.config().num_classes;
  std::vector<double> ones(k, 1.0);
  if (class_weights.empty()) class_weights = ones;
  if (samples.num_classes > k) {
    fail(ErrorKind::kConsistency, "sample set has " + std::to_string(samples.num_classes) +
                                      " classes, model has " + std::to_string(k));
  }
  const bool sigmoid = has_sigmoid_head(net.config());
  EvalResult result;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor<float> probs = net.forward(sample_tensor(samples, i));
    Tensor<float> target(Shape{k});
    target[samples.labels[i]] = 1.0f;
    loss += head_loss(sigmoid, probs, target, class_weights).loss;
    const std::size_t pred = argmax<float>(probs.data());
    correct += pred == samples.labels[i];
    result.predictions.push_back(pred);
    result.labels.push_back(samples.labels[i]);
  }
  if (samples.size() > 0) {
    result.loss = loss / static_cast<double>(samples.size());
    result.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  }
  return result;
}

EvalResult evaluate(const ModelState& model, const SampleSet& samples,
                    std::span<const double> class_weights) {
  Network<float> net(model);
  return evaluate(net, samples, class_weights);
}

TrainResult train(ModelState model, const SampleSet& train_set, const SampleSet* val_set,
                  const TrainConfig& config) {
  config.validate();
  model.validate();
  const std::size_t k = model.config.num_classes;
  const LayerKind head = model.config.layers.back().kind;
  if (head != LayerKind::kSoftmax && head != LayerKind::kSigmoid) {
    fail(ErrorKind::kConsistency, "training needs a softmax or sigmoid output layer");
  }
  if (train_set.size() == 0) fail(ErrorKind::kInvalidArgument, "training set is empty");
  for (const SampleSet* s : {&train_set, val_set}) {
    if (s && s->num_classes != k) {
      fail(ErrorKind::kConsistency, "data has " + std::to_string(s->num_classes) +
                                        " classes, model has " + std::to_string(k));
    }
  }
  if (config.freeze_fraction) model = freeze_layers(std::move(model), *config.freeze_fraction);
  if (config.dropout_rate) {
    for (LayerSpec& spec : model.config.layers) {
      if (spec.kind == LayerKind::kDropout) spec.rate = *config.dropout_rate;
    }
  }

  TrainResult result;
  if (!config.use_class_weights) {
    result.class_weights.assign(k, 1.0);
  } else if (!config.class_weights.empty()) {
    if (config.class_weights.size() != k) {
      fail(ErrorKind::kConsistency, "class weight count does not match model classes");
    }
    result.class_weights = config.class_weights;
  } else {
    result.class_weights = class_weights(train_set.class_counts());
  }
  const std::span<const double> weights = result.class_weights;

  Network<float> net(model);
  const bool sigmoid = head == LayerKind::kSigmoid;
  const std::size_t n_layers = net.num_layers();

  // Trainable parameters and the lowest layer backward has to reach.
  const std::vector<std::size_t> param_layers = model.parameterized_layers();
  std::vector<Tensor<float>*> all_params = net.parameters();
  std::vector<std::size_t> trainable;
  std::size_t first_trainable_layer = n_layers;
  for (std::size_t l = 0; l < param_layers.size(); ++l) {
    if (model.frozen[l]) continue;
    trainable.push_back(2 * l);
    trainable.push_back(2 * l + 1);
    first_trainable_layer = std::min(first_trainable_layer, param_layers[l]);
  }
  std::vector<Tensor<float>*> trainable_params;
  std::vector<Shape> trainable_shapes;
  for (std::size_t p : trainable) {
    trainable_params.push_back(all_params[p]);
    trainable_shapes.push_back(all_params[p]->shape());
  }
  AdamState<float> adam(trainable_shapes, config.adam);

  const std::size_t sample_elems = sample_tensor(train_set, 0).size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchIterator batches(train_set, config.batch_size, config.seed, epoch, config.augment);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_no = 0;
    while (auto batch = batches.next()) {
      ++batch_no;
      const std::size_t n = batch->indices.size();
      std::vector<Tensor<float>> grads = net.zero_gradients();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        std::vector<float> x(batch->inputs.data().begin() + b * sample_elems,
                             batch->inputs.data().begin() + (b + 1) * sample_elems);
        const Shape& bs = batch->inputs.shape();
        const Tensor<float> input(Shape{bs[1], bs[2], bs[3]}, std::move(x));
        const std::uint64_t dropout_seed =
            derive_seed({config.seed, epoch, batch->indices[b], 0xD1});
        const auto trace = net.forward_trace(input, true, dropout_seed);
        const Tensor<float>& probs = trace.activations.back();
        Tensor<float> target(Shape{k});
        target[train_set.labels[batch->indices[b]]] = 1.0f;

        LossResult<float> sample_loss = head_loss(sigmoid, probs, target, weights);
        batch_loss += sample_loss.loss;
        correct += argmax<float>(probs.data()) == train_set.labels[batch->indices[b]];
        if (first_trainable_layer < n_layers) {
          // Per-sample gradients of the batch mean.
          for (float& g : sample_loss.logit_grad.data()) g /= static_cast<float>(n);
          net.backward(trace, sample_loss.logit_grad, n_layers - 1, first_trainable_layer,
                       grads);
        }
      }
      batch_loss /= static_cast<double>(n);
      if (!std::isfinite(batch_loss)) {
        fail(ErrorKind::kNumeric, "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                      ", batch " + std::to_string(batch_no));
      }
      if (!trainable_params.empty()) {
        std::vector<Tensor<float>> trainable_grads;
        for (std::size_t p : trainable) trainable_grads.push_back(std::move(grads[p]));
        try {
          adam_step<float>(trainable_params, trainable_grads, adam);
        } catch (const Error& e) {
          fail(ErrorKind::kNumeric, std::string(e.what()) + " at epoch " +
                                        std::to_string(epoch + 1) + ", batch " +
                                        std::to_string(batch_no));
        }
      }
      loss_sum += batch_loss * static_cast<double>(n);
      seen += n;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (val_set && val_set->size() > 0) {
      const EvalResult val = evaluate(net, *val_set, weights);
      stats.val_loss = val.loss;
      stats.val_accuracy = val.accuracy;
    }
    result.history.epochs.push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
  }

  net.store(model);
  result.model = std::move(model);
  return result;
}

template LossResult<float> weighted_cce(const Tensor<float>&, const Tensor<float>&,
                                        std::span<const double>);
template LossResult<double> weighted_cce(const Tensor<double>&, const Tensor<double>&,
                                         std::span<const double>);
template LossResult<float> weighted_bce(const Tensor<float>&, const Tensor<float>&,
                                        std::span<const double>);
template LossResult<double> weighted_bce(const Tensor<double>&, const Tensor<double>&,
                                         std::span<const double>);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                        AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                        AdamState<double>&);
template std::size_t argmax(std::span<const float>);
template std::size_t argmax(std::span<const double>);

}  // namespace lesionnet
