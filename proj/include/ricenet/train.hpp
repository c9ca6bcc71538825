#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ricenet/augment.hpp"
#include "ricenet/dataset.hpp"
#include "ricenet/model.hpp"

namespace ricenet {

template <typename T>
struct LossResult {
    T loss;
    Tensor<T> grad_logits;  ///< (probabilities - targets) / batch
};

/// Mean negative log-probability of the true class, with probabilities clamped below at 1e-12.
template <typename T>
LossResult<T> categorical_cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& targets);

/// Index of the first maximum of each row.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& m);

/// Fraction of rows whose first-max prediction equals the target. Targets may be one-hot rows or indices.
template <typename T>
double accuracy(const Tensor<T>& probabilities, const Tensor<T>& targets);
template <typename T>
double accuracy(const Tensor<T>& probabilities, const std::vector<std::size_t>& labels);

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
    bool operator==(const AdamHyper&) const = default;
};

template <typename T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> v;
    std::uint64_t t = 0;
};

/// One bias-corrected update in place. Throws NumericError naming `name` on a non-finite gradient.
template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state, const AdamHyper& hyper,
               std::string_view name = "parameter");

/// Optimizer state for the trainable parameters of one model, created on construction.
template <typename T>
class Adam {
public:
    Adam(const Model<T>& model, AdamHyper hyper);

    /// Applies one step to every parameter present in `grads`.
    void step(Model<T>& model, const Gradients<T>& grads);

    const std::map<ParamKey, AdamState<T>>& states() const noexcept { return states_; }
    const AdamHyper& hyper() const noexcept { return hyper_; }

private:
    AdamHyper hyper_;
    std::map<ParamKey, AdamState<T>> states_;
};

/// Freezes exactly the layers whose names start with one of `prefixes`; all others become trainable.
/// Throws ConfigError if a prefix matches no layer.
template <typename T>
void apply_freeze(Model<T>& model, const std::vector<std::string>& prefixes);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    AdamHyper adam;
    std::vector<std::string> freeze_policy;
    bool augmentation_enabled = false;
    AugmentSpec augmentation;
    std::uint64_t seed = 0;
    /// Preset name, empty for hand-made configs.
    std::string preset;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// paper-iter1, paper-iter2 or paper-iter3. Throws ConfigError for anything else.
TrainConfig iteration_preset(std::string_view name);
std::vector<std::string> preset_names();

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    double train_accuracy = 0;  ///< running mean over the epoch's batches, weighted by batch size
    double val_loss = 0;
    double val_accuracy = 0;
    double wall_seconds = 0;

    double gap() const { return train_accuracy - val_accuracy; }
    bool same_metrics(const EpochRecord& other) const;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::uint64_t seed = 0;

    /// Equality ignoring wall-clock times.
    bool same_metrics(const TrainHistory& other) const;
    const EpochRecord& final() const;
};

/// Tab-separated, one line per epoch after a header and a `# seed=` comment. Wall times are omitted.
std::string format_history(const TrainHistory& history);

/// `Result= X.X% trained data set, Y.Y% validation` for the final epoch.
std::string iteration_report(const TrainHistory& history);

struct Evaluation {
    double loss = 0;
    double accuracy = 0;
    std::size_t samples = 0;
    std::vector<double> per_class_accuracy;  ///< NaN for a class without samples
    /// confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
};

template <typename T>
Evaluation evaluate(const Model<T>& model, const Dataset& dataset, std::size_t batch_size = 32);

std::string format_evaluation(const Evaluation& eval, const std::vector<std::string>& labels);

using EpochCallback = std::function<void(const EpochRecord&)>;

/**
 * Seeded minibatch ADAM training of the non-frozen layers. A non-empty freeze policy is applied first;
 * an empty one keeps the frozen flags the model already carries.
 * Validates after every epoch. Throws NumericError with epoch and batch on a non-finite loss.
 */
template <typename T>
TrainHistory train(Model<T>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

}  // namespace ricenet
