#include "ricenet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace ricenet {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void check_rank2_pair(const Shape& a, const Shape& b, std::string_view what) {
    if (a.size() != 2 || a != b) {
        throw ShapeError(fmt::format("{}: probabilities {} and targets {} must be equal rank-2 shapes", what,
                                     format_shape(a), format_shape(b)));
    }
}

template <typename T>
std::size_t one_hot_index(const Tensor<T>& targets, std::size_t row) {
    const std::size_t n = targets.dim(1);
    std::size_t hot = n;
    for (std::size_t j = 0; j < n; ++j) {
        const T v = targets.at(row, j);
        if (v == T{1} && hot == n) {
            hot = j;
        } else if (v != T{0}) {
            throw ValidationError(fmt::format("target row {} is not one-hot", row));
        }
    }
    if (hot == n) throw ValidationError(fmt::format("target row {} is not one-hot", row));
    return hot;
}

}  // namespace

template <typename T>
LossResult<T> categorical_cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& targets) {
    check_rank2_pair(probabilities.shape(), targets.shape(), "categorical_cross_entropy");
    const std::size_t batch = probabilities.dim(0), n = probabilities.dim(1);
    double total = 0;
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t k = one_hot_index(targets, i);
        total -= std::log(std::max(static_cast<double>(probabilities.at(i, k)), kProbabilityFloor));
    }
    LossResult<T> r{static_cast<T>(total / static_cast<double>(batch)), Tensor<T>(probabilities.shape())};
    const T inv = T{1} / static_cast<T>(batch);
    for (std::size_t i = 0; i < batch * n; ++i) r.grad_logits[i] = (probabilities[i] - targets[i]) * inv;
    return r;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& m) {
    if (m.rank() != 2) throw ShapeError("argmax_rows expects a rank-2 tensor, got " + format_shape(m.shape()));
    std::vector<std::size_t> out(m.dim(0));
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < m.dim(1); ++j)
            if (m.at(i, j) > m.at(i, best)) best = j;
        out[i] = best;
    }
    return out;
}

template <typename T>
double accuracy(const Tensor<T>& probabilities, const std::vector<std::size_t>& labels) {
    const auto pred = argmax_rows(probabilities);
    if (pred.size() != labels.size()) {
        throw ShapeError(fmt::format("accuracy: {} predictions but {} labels", pred.size(), labels.size()));
    }
    if (pred.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

template <typename T>
double accuracy(const Tensor<T>& probabilities, const Tensor<T>& targets) {
    check_rank2_pair(probabilities.shape(), targets.shape(), "accuracy");
    return accuracy(probabilities, argmax_rows(targets));
}

void AdamHyper::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("adam learning_rate must be > 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("adam beta1 must be in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam beta2 must be in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("adam epsilon must be > 0");
}

template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state, const AdamHyper& hyper,
               std::string_view name) {
    if (grad.shape() != param.shape()) {
        throw ShapeError(fmt::format("adam_step: gradient {} does not match parameter '{}' {}",
                                     format_shape(grad.shape()), name, format_shape(param.shape())));
    }
    if (!grad.all_finite()) throw NumericError(fmt::format("non-finite gradient for parameter '{}'", name));
    if (state.m.shape() != param.shape()) {
        state.m = Tensor<T>(param.shape());
        state.v = Tensor<T>(param.shape());
        state.t = 0;
    }
    ++state.t;
    const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
    const T lr = static_cast<T>(hyper.learning_rate), eps = static_cast<T>(hyper.epsilon);
    const T c1 = static_cast<T>(1.0 - std::pow(hyper.beta1, static_cast<double>(state.t)));
    const T c2 = static_cast<T>(1.0 - std::pow(hyper.beta2, static_cast<double>(state.t)));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
        state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
        const T m_hat = state.m[i] / c1;
        const T v_hat = state.v[i] / c2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

template <typename T>
Adam<T>::Adam(const Model<T>& model, AdamHyper hyper) : hyper_(hyper) {
    hyper_.validate();
    for (const auto& key : model.trainable_parameters()) {
        const auto& p = model.parameter(key);
        states_.emplace(key, AdamState<T>{Tensor<T>(p.shape()), Tensor<T>(p.shape()), 0});
    }
}

template <typename T>
void Adam<T>::step(Model<T>& model, const Gradients<T>& grads) {
    for (const auto& [key, g] : grads) {
        auto it = states_.find(key);
        if (it == states_.end()) {
            throw ConsistencyError("adam: gradient for '" + key.str() + "' which has no optimizer state");
        }
        adam_step(model.parameter(key), g, it->second, hyper_, key.str());
    }
}

template <typename T>
void apply_freeze(Model<T>& model, const std::vector<std::string>& prefixes) {
    std::vector<bool> used(prefixes.size(), false);
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        bool frozen = false;
        for (std::size_t p = 0; p < prefixes.size(); ++p) {
            if (model.layer(i).name.starts_with(prefixes[p])) {
                frozen = true;
                used[p] = true;
            }
        }
        model.set_frozen(i, frozen);
    }
    for (std::size_t p = 0; p < prefixes.size(); ++p) {
        if (!used[p]) throw ConfigError(fmt::format("freeze prefix '{}' matches no layer", prefixes[p]));
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    adam.validate();
    if (augmentation_enabled) augmentation.validate();
}

std::vector<std::string> preset_names() { return {"paper-iter1", "paper-iter2", "paper-iter3"}; }

TrainConfig iteration_preset(std::string_view name) {
    TrainConfig c;
    c.preset = std::string(name);
    if (name == "paper-iter1" || name == "paper-iter2") {
        // paper-iter1 is reconstructed: same frozen-backbone setup as paper-iter2.
        c.epochs = 10;
        c.freeze_policy = {"base."};
        c.augmentation_enabled = false;
    } else if (name == "paper-iter3") {
        c.epochs = 20;
        c.augmentation_enabled = true;
    } else {
        throw ConfigError(fmt::format("unknown preset '{}' (known: paper-iter1, paper-iter2, paper-iter3)", name));
    }
    return c;
}

bool EpochRecord::same_metrics(const EpochRecord& o) const {
    return epoch == o.epoch && train_loss == o.train_loss && train_accuracy == o.train_accuracy &&
           val_loss == o.val_loss && val_accuracy == o.val_accuracy;
}

bool TrainHistory::same_metrics(const TrainHistory& o) const {
    if (seed != o.seed || epochs.size() != o.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i)
        if (!epochs[i].same_metrics(o.epochs[i])) return false;
    return true;
}

const EpochRecord& TrainHistory::final() const {
    if (epochs.empty()) throw ConsistencyError("training history is empty");
    return epochs.back();
}

std::string format_history(const TrainHistory& history) {
    std::string out = fmt::format("# seed={}\nepoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\tgap\n", history.seed);
    for (const auto& e : history.epochs) {
        out += fmt::format("{}\t{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}\n", e.epoch, e.train_loss, e.train_accuracy,
                           e.val_loss, e.val_accuracy, e.gap());
    }
    return out;
}

std::string iteration_report(const TrainHistory& history) {
    const auto& e = history.final();
    return fmt::format("Result= {:.1f}% trained data set, {:.1f}% validation", e.train_accuracy * 100.0,
                       e.val_accuracy * 100.0);
}

template <typename T>
Evaluation evaluate(const Model<T>& model, const Dataset& dataset, std::size_t batch_size) {
    if (dataset.size() == 0) throw ValidationError("cannot evaluate on an empty dataset");
    if (dataset.num_classes() != model.num_classes()) {
        throw ValidationError(fmt::format("dataset has {} classes, model has {}", dataset.num_classes(),
                                          model.num_classes()));
    }
    const std::size_t k = model.num_classes();
    Evaluation ev;
    ev.confusion.assign(k, std::vector<std::size_t>(k, 0));
    double loss_sum = 0;
    std::size_t hits = 0;
    BatchStream stream(dataset, BatchOptions{batch_size, false, 0, std::nullopt}, 0);
    while (auto batch = stream.next()) {
        const auto probs = model_predict(model, tensor_cast<T>(batch->images));
        const auto loss = categorical_cross_entropy(probs, tensor_cast<T>(batch->targets));
        const std::size_t b = batch->labels.size();
        loss_sum += static_cast<double>(loss.loss) * static_cast<double>(b);
        const auto pred = argmax_rows(probs);
        for (std::size_t i = 0; i < b; ++i) {
            ++ev.confusion[batch->labels[i]][pred[i]];
            hits += pred[i] == batch->labels[i];
        }
        ev.samples += b;
    }
    ev.loss = loss_sum / static_cast<double>(ev.samples);
    ev.accuracy = static_cast<double>(hits) / static_cast<double>(ev.samples);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t row = 0;
        for (auto v : ev.confusion[c]) row += v;
        ev.per_class_accuracy.push_back(row == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                 : static_cast<double>(ev.confusion[c][c]) / static_cast<double>(row));
    }
    return ev;
}

std::string format_evaluation(const Evaluation& ev, const std::vector<std::string>& labels) {
    std::string out = fmt::format("samples\t{}\nloss\t{:.6f}\naccuracy\t{:.6f}\n", ev.samples, ev.loss, ev.accuracy);
    for (std::size_t c = 0; c < labels.size() && c < ev.per_class_accuracy.size(); ++c) {
        const double a = ev.per_class_accuracy[c];
        out += std::isnan(a) ? fmt::format("accuracy[{}]\tn/a\n", labels[c])
                             : fmt::format("accuracy[{}]\t{:.6f}\n", labels[c], a);
    }
    out += "confusion (rows = true, columns = predicted)\n";
    for (const auto& l : labels) out += "\t" + l;
    out += "\n";
    for (std::size_t r = 0; r < ev.confusion.size(); ++r) {
        out += r < labels.size() ? labels[r] : std::to_string(r);
        for (auto v : ev.confusion[r]) out += fmt::format("\t{}", v);
        out += "\n";
    }
    return out;
}

template <typename T>
TrainHistory train(Model<T>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.size() == 0) throw ValidationError("training set is empty");
    if (val_set.size() == 0) throw ValidationError("validation set is empty");
    for (const Dataset* d : {&train_set, &val_set}) {
        if (d->num_classes() != model.num_classes()) {
            throw ValidationError(fmt::format("dataset has {} classes but the model outputs {}", d->num_classes(),
                                              model.num_classes()));
        }
    }
    if (!config.freeze_policy.empty()) apply_freeze(model, config.freeze_policy);

    Adam<T> adam(model, config.adam);
    TrainHistory history;
    history.seed = config.seed;

    BatchOptions options{config.batch_size, true, config.seed, std::nullopt};
    if (config.augmentation_enabled) options.augment = config.augmentation;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        BatchStream stream(train_set, options, epoch);
        double loss_sum = 0;
        std::size_t hits = 0, seen = 0, batch_index = 0;
        while (auto batch = stream.next()) {
            const auto images = tensor_cast<T>(batch->images);
            const auto targets = tensor_cast<T>(batch->targets);
            auto fwd = model_forward(model, images);
            const auto loss = categorical_cross_entropy(fwd.probabilities, targets);
            if (!std::isfinite(static_cast<double>(loss.loss))) {
                throw NumericError(fmt::format("non-finite loss at epoch {} batch {}", epoch + 1, batch_index + 1));
            }
            const std::size_t b = batch->labels.size();
            loss_sum += static_cast<double>(loss.loss) * static_cast<double>(b);
            const auto pred = argmax_rows(fwd.probabilities);
            for (std::size_t i = 0; i < b; ++i) hits += pred[i] == batch->labels[i];
            seen += b;
            if (!adam.states().empty()) {
                const auto grads = model_backward(model, fwd.cache, loss.grad_logits, GradientWrt::logits);
                try {
                    adam.step(model, grads);
                } catch (const NumericError& e) {
                    throw NumericError(fmt::format("epoch {} batch {}: {}", epoch + 1, batch_index + 1, e.what()));
                }
            }
            ++batch_index;
        }
        const auto val = evaluate(model, val_set, config.batch_size);
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(seen);
        rec.val_loss = val.loss;
        rec.val_accuracy = val.accuracy;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

#define RICENET_INSTANTIATE(T)                                                                                \
    template LossResult<T> categorical_cross_entropy(const Tensor<T>&, const Tensor<T>&);                    \
    template std::vector<std::size_t> argmax_rows(const Tensor<T>&);                                          \
    template double accuracy(const Tensor<T>&, const Tensor<T>&);                                             \
    template double accuracy(const Tensor<T>&, const std::vector<std::size_t>&);                              \
    template void adam_step(Tensor<T>&, const Tensor<T>&, AdamState<T>&, const AdamHyper&, std::string_view); \
    template class Adam<T>;                                                                                   \
    template void apply_freeze(Model<T>&, const std::vector<std::string>&);                                   \
    template Evaluation evaluate(const Model<T>&, const Dataset&, std::size_t);                               \
    template TrainHistory train(Model<T>&, const Dataset&, const Dataset&, const TrainConfig&, const EpochCallback&);

RICENET_INSTANTIATE(float)
RICENET_INSTANTIATE(double)

}  // namespace ricenet
