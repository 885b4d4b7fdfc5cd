#pragma once

// Victim training and accuracy measurement on event-stack datasets.

#include <chrono>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uevs/events.hpp"
#include "uevs/net.hpp"
#include "uevs/parallel.hpp"
#include "uevs/pollution.hpp"
#include "uevs/random.hpp"
#include "uevs/stack.hpp"

namespace uevs {

/// Stacks every sample of a dataset; all samples must share one geometry.
inline std::vector<EventStack> build_stacks(const Dataset& d, int channels) {
    std::vector<EventStack> out(d.size());
    parallel_for(d.size(), [&](std::size_t i) {
        try {
            out[i] = build_stack(d.samples[i].stream, channels);
        } catch (const std::exception& e) {
            throw SampleError(i, e.what());
        }
    });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].height != out[0].height || out[i].width != out[0].width)
            throw SampleError(i, "sensor geometry differs from sample 0");
    return out;
}

inline std::vector<int> labels_of(const Dataset& d) {
    std::vector<int> out;
    out.reserve(d.size());
    for (const auto& s : d.samples) out.push_back(s.label);
    return out;
}

/// [B, C, H, W] batch of the selected stacks.
inline Tensor<float> gather_batch(const std::vector<EventStack>& stacks, std::span<const std::size_t> idx) {
    const EventStack& s0 = stacks.at(idx.front());
    Tensor<float> batch({int(idx.size()), s0.channels, s0.height, s0.width});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& cells = stacks[idx[i]].cells;
        if (cells.size() != batch.stride0()) throw ShapeError("stack shape differs inside a batch");
        std::copy(cells.begin(), cells.end(), batch.slice(i));
    }
    return batch;
}

/// Index of the largest logit of row i; ties go to the lowest class.
template <typename T>
int argmax_row(const Tensor<T>& logits, std::size_t i) {
    const T* row = logits.slice(i);
    int best = 0;
    for (int k = 1; k < logits.shape[1]; ++k)
        if (row[k] > row[best]) best = k;
    return best;
}

struct AccuracyReport {
    double accuracy = 0;
    std::vector<double> per_class;
};

/// Fraction of stacks whose argmax prediction equals the label.
template <typename T>
AccuracyReport accuracy_on_stacks(const Network<T>& net, const std::vector<EventStack>& stacks,
                                  std::span<const int> labels, int batch_size = 64) {
    if (stacks.empty()) throw Error("accuracy of an empty dataset is undefined");
    const int classes = net.arch().num_classes;
    std::vector<std::size_t> hits(std::size_t(classes), 0), totals(std::size_t(classes), 0);
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < stacks.size(); start += std::size_t(batch_size)) {
        idx.clear();
        for (std::size_t i = start; i < std::min(stacks.size(), start + batch_size); ++i) idx.push_back(i);
        const auto f = net.forward(gather_batch(stacks, idx).template cast_to<T>());
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const int label = labels[idx[j]];
            const bool ok = argmax_row(f.logits, j) == label;
            correct += ok;
            if (label >= 0 && label < classes) {
                hits[std::size_t(label)] += ok;
                ++totals[std::size_t(label)];
            }
        }
    }
    AccuracyReport r;
    r.accuracy = double(correct) / double(stacks.size());
    for (int k = 0; k < classes; ++k)
        r.per_class.push_back(totals[std::size_t(k)] ? double(hits[std::size_t(k)]) / double(totals[std::size_t(k)]) : 0.0);
    return r;
}

template <typename T>
double test_accuracy(const Network<T>& net, const Dataset& d, int channels = kDefaultChannels) {
    if (d.size() == 0) throw Error("accuracy of an empty dataset is undefined");
    const auto labels = labels_of(d);
    return accuracy_on_stacks(net, build_stacks(d, channels), labels).accuracy;
}

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0;
    double train_loss = 0;
    double train_accuracy = 0;
};

struct EvalReport {
    double test_accuracy = 0;
    std::vector<double> per_class_accuracy;
    std::vector<EpochRecord> history;
    Architecture arch;
    TrainConfig train;
    int channels = kDefaultChannels;
    bool augmented = false;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    double wall_time_s = 0;
};

inline nlohmann::json to_json(const EvalReport& r, bool include_wall_time = true) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : r.history)
        history.push_back({{"epoch", h.epoch},
                           {"learning_rate", h.learning_rate},
                           {"train_loss", h.train_loss},
                           {"train_accuracy", h.train_accuracy}});
    nlohmann::json doc = {
        {"test_accuracy", r.test_accuracy},
        {"per_class_accuracy", r.per_class_accuracy},
        {"history", history},
        {"config",
         {{"conv_channels", r.arch.conv_channels},
          {"num_classes", r.arch.num_classes},
          {"channels", r.channels},
          {"learning_rate", r.train.learning_rate},
          {"momentum", r.train.momentum},
          {"lr_gamma", r.train.lr_gamma},
          {"batch_size", r.train.batch_size},
          {"epochs", r.train.epochs},
          {"seed", r.train.seed},
          {"augmented", r.augmented},
          {"train_size", r.train_size},
          {"test_size", r.test_size}}},
    };
    if (include_wall_time) doc["wall_time_s"] = r.wall_time_s;
    return doc;
}

struct TrainResult {
    Network<float> model;
    EvalReport report;
};

/// Trains a freshly initialized classifier with SGD + momentum and an
/// exponentially decaying learning rate, then scores it on `test`.
/// With an augmentation spec every epoch sees a newly augmented copy of the
/// training stacks.
inline TrainResult train_classifier(const Dataset& train, const Dataset& test, const Architecture& arch,
                                    const TrainConfig& cfg, int channels = kDefaultChannels,
                                    const AugmentSpec* augment = nullptr) {
    cfg.validate();
    arch.validate();
    if (train.size() == 0) throw Error("training split is empty");
    if (test.size() == 0) throw Error("test split is empty");
    if (train.num_classes() != test.num_classes() || train.num_classes() != arch.num_classes)
        throw Error("class count differs between training split, test split and architecture");
    const auto start = std::chrono::steady_clock::now();

    auto stacks = build_stacks(train, channels);
    const auto test_stacks = build_stacks(test, channels);
    if (stacks[0].height != arch.height || stacks[0].width != arch.width || channels != arch.in_channels)
        throw ShapeError("dataset geometry does not match the architecture");
    if (test_stacks[0].height != arch.height || test_stacks[0].width != arch.width)
        throw ShapeError("test geometry does not match the training geometry");
    const auto labels = labels_of(train);
    const bool augmenting = augment && augment->enabled();

    TrainResult out{Network<float>(arch, mix_seed(cfg.seed, 0x696e6974)), {}};
    Network<float>& net = out.model;
    SgdState<float> state;
    const LossConfig ce_only{1.0, 0.0};
    std::vector<std::size_t> order(train.size());
    std::vector<EventStack> augmented;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = exp_lr(epoch, cfg.learning_rate, cfg.lr_gamma);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg.seed, 0x73687566, std::uint64_t(epoch)));
        shuffle(order, rng);

        const std::vector<EventStack>* source = &stacks;
        if (augmenting) {
            augmented.resize(train.size());
            parallel_for(train.size(), [&](std::size_t i) {
                const std::uint64_t s = mix_seed(cfg.seed, 0x61756700 + std::uint64_t(epoch), i);
                const EventStream dropped = augment->drop_ratio > 0
                                                ? event_drop(train.samples[i].stream, augment->drop_ratio, s)
                                                : train.samples[i].stream;
                augmented[i] = stack_augment(build_stack(dropped, channels), *augment, s);
            });
            source = &augmented;
        }

        double loss_sum = 0;
        std::size_t correct = 0;
        std::vector<int> batch_labels;
        for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
            const std::span<const std::size_t> idx(order.data() + b,
                                                   std::min<std::size_t>(cfg.batch_size, order.size() - b));
            batch_labels.clear();
            for (std::size_t i : idx) batch_labels.push_back(labels[i]);
            const auto batch = gather_batch(*source, idx);
            auto r = combined_loss_with_features<float>(net, nullptr, batch, batch_labels, ce_only, {true, false});
            sgd_step(net.params(), r.param_grads, lr, cfg.momentum, state);
            loss_sum += r.value * double(idx.size());
            for (std::size_t j = 0; j < idx.size(); ++j) correct += argmax_row(r.logits, j) == batch_labels[j];
        }
        out.report.history.push_back(
            {epoch, lr, loss_sum / double(order.size()), double(correct) / double(order.size())});
    }

    const auto acc = accuracy_on_stacks(net, test_stacks, labels_of(test));
    EvalReport& rep = out.report;
    rep.test_accuracy = acc.accuracy;
    rep.per_class_accuracy = acc.per_class;
    rep.arch = arch;
    rep.train = cfg;
    rep.channels = channels;
    rep.augmented = augmenting;
    rep.train_size = train.size();
    rep.test_size = test.size();
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

} // namespace uevs
