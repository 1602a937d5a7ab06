#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesionnet/dataset.hpp"
#include "lesionnet/model.hpp"

namespace lesionnet {

// Lower/upper bound applied to probabilities before taking logs.
inline constexpr double kProbabilityClip = 1e-7;

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  Tensor<Scalar> logit_grad;  // batch x K, gradient w.r.t. pre-activation logits
};

// mean_i w[c(i)] * -log(clip(p_i[c(i)])) over a batch x K probability matrix
// (rank 1 is read as a batch of one). The gradient is the fused softmax +
// cross-entropy one: w[c(i)] * (p_i - y_i) / batch.
template <typename Scalar>
LossResult<Scalar> weighted_cce(const Tensor<Scalar>& probs, const Tensor<Scalar>& targets,
                                std::span<const double> class_weights);

// Per-class binary cross-entropy for a sigmoid head, summed over classes and
// weighted by the true class: gradient w[c(i)] * (p_i - y_i) / batch.
template <typename Scalar>
LossResult<Scalar> weighted_bce(const Tensor<Scalar>& probs, const Tensor<Scalar>& targets,
                                std::span<const double> class_weights);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::span<const Shape> shapes, AdamOptions opts);
};

// One bias-corrected Adam update of params (in place) and state. Any
// non-finite gradient aborts the step before anything is modified.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, std::span<const Tensor<Scalar>> grads,
               AdamState<Scalar>& state);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_accuracy = 0;  // running accuracy over the epoch's training batches
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  // epoch,train_loss,train_acc,val_loss,val_acc with 6 significant digits.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  // Empty: balanced weights from the training split's class counts.
  std::vector<double> class_weights;
  bool use_class_weights = true;
  // Applied to every dropout layer; unset keeps the architecture's rates.
  std::optional<double> dropout_rate = 0.5;
  std::uint64_t seed = 0;
  // Unset keeps the model's existing frozen flags.
  std::optional<double> freeze_fraction;
  AdamOptions adam;
  std::optional<AugmentRanges> augment = AugmentRanges{};
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  ModelState model;
  TrainHistory history;
  std::vector<double> class_weights;  // the weights actually used
};

// Shuffled mini-batch training with augmentation, class-weighted loss, Adam
// and dropout. Frozen layers are never updated. Deterministic for a fixed
// seed. Non-finite losses abort with the epoch and batch coordinates.
TrainResult train(ModelState model, const SampleSet& train_set, const SampleSet* val_set,
                  const TrainConfig& config);

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;
};

// Inference-mode pass over a sample set.
EvalResult evaluate(const ModelState& model, const SampleSet& samples,
                    std::span<const double> class_weights = {});
EvalResult evaluate(Network<float>& net, const SampleSet& samples,
                    std::span<const double> class_weights = {});

// Index of the largest element, first on ties.
template <typename Scalar>
std::size_t argmax(std::span<const Scalar> values);

}  // namespace lesionnet
