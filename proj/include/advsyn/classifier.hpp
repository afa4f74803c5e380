#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "advsyn/checkpoint.hpp"
#include "advsyn/dataset.hpp"
#include "advsyn/errors.hpp"
#include "advsyn/losses.hpp"
#include "advsyn/network.hpp"
#include "advsyn/optim.hpp"
#include "advsyn/persist.hpp"
#include "advsyn/rng.hpp"

namespace advsyn {

struct ClassifierConfig {
    int image_size = 128;
    // (conv count, channels) per block; each block ends in batchnorm,
    // 2x2 max pooling and dropout
    std::vector<std::pair<int, int>> blocks{{2, 32}, {2, 64}, {2, 128}};
    int dense_units = 1024;
    double conv_dropout = 0.25;
    double dense_dropout = 0.5;
    double lr = 0.0005;
    double l2_lambda = 1e-4;
    int max_epochs = 200;
    int early_stop_patience = 25;
    double lr_reduce_factor = 0.5;
    int lr_reduce_patience = 10;
    double min_delta = 1e-4;
    double min_lr = 1e-6;
    int batch_size = 32;
    uint64_t seed = 1;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;

    void validate() const {
        if (image_size < 1) throw ConfigError("classifier.image_size must be positive");
        if (blocks.empty()) throw ConfigError("classifier.blocks must not be empty");
        for (const auto& [convs, channels] : blocks) {
            if (convs < 1 || channels < 1) {
                throw ConfigError("classifier.blocks entries must be positive pairs");
            }
        }
        if (dense_units < 1) throw ConfigError("classifier.dense_units must be positive");
        if (!(conv_dropout >= 0.0 && conv_dropout < 1.0)) {
            throw ConfigError("classifier.conv_dropout must be in [0,1)");
        }
        if (!(dense_dropout >= 0.0 && dense_dropout < 1.0)) {
            throw ConfigError("classifier.dense_dropout must be in [0,1)");
        }
        if (!(lr > 0.0)) throw ConfigError("classifier.lr must be positive");
        if (l2_lambda < 0.0) throw ConfigError("classifier.l2_lambda must be non-negative");
        if (max_epochs < 0) throw ConfigError("classifier.max_epochs must be >= 0");
        if (early_stop_patience < 1) {
            throw ConfigError("classifier.early_stop_patience must be >= 1");
        }
        if (!(lr_reduce_factor > 0.0 && lr_reduce_factor < 1.0)) {
            throw ConfigError("classifier.lr_reduce_factor must be in (0,1)");
        }
        if (lr_reduce_patience < 1) throw ConfigError("classifier.lr_reduce_patience must be >= 1");
        if (min_delta < 0.0) throw ConfigError("classifier.min_delta must be non-negative");
        if (!(min_lr > 0.0)) throw ConfigError("classifier.min_lr must be positive");
        if (batch_size < 1) throw ConfigError("classifier.batch_size must be >= 1");
        // every 2x2 pool needs at least a 2-pixel map
        int s = image_size;
        for (size_t b = 0; b < blocks.size(); ++b) {
            if (s < 2) {
                throw ConfigError("classifier: image_size " + std::to_string(image_size) +
                                  " is too small for " + std::to_string(blocks.size()) +
                                  " pooling stages");
            }
            s = (s - 2) / 2 + 1;
        }
    }
};

// Conv blocks (relu convs + batchnorm + maxpool + dropout), global average
// pooling, a dense relu layer with dropout, and a sigmoid output unit.
inline NetworkSpec build_cnn(const ClassifierConfig& cfg) {
    cfg.validate();
    NetworkSpec spec;
    spec.name = "clf";
    int in_ch = 1;
    for (const auto& [convs, channels] : cfg.blocks) {
        for (int c = 0; c < convs; ++c) {
            spec.layers.push_back(Conv2dLayer{in_ch, channels, 3, 1, 1});
            spec.layers.push_back(ActivationLayer{ActKind::relu, 0.0});
            in_ch = channels;
        }
        spec.layers.push_back(BatchNormLayer{channels, cfg.bn_momentum, cfg.bn_epsilon});
        spec.layers.push_back(MaxPoolLayer{2, 2});
        spec.layers.push_back(DropoutLayer{cfg.conv_dropout});
    }
    spec.layers.push_back(GlobalAvgPoolLayer{});
    spec.layers.push_back(DenseLayer{in_ch, cfg.dense_units});
    spec.layers.push_back(ActivationLayer{ActKind::relu, 0.0});
    spec.layers.push_back(DropoutLayer{cfg.dense_dropout});
    spec.layers.push_back(DenseLayer{cfg.dense_units, 1});
    spec.layers.push_back(ActivationLayer{ActKind::sigmoid, 0.0});
    return spec;
}

struct EpochStats {
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;  // 0-based index into epochs
    std::string stop_reason;
};

struct Prediction {
    std::vector<double> probs;
    std::vector<int> labels;  // probability >= 0.5 counts as positive
};

// Batched inference; batchnorm and dropout run in infer mode, so running
// statistics are never touched.
inline Prediction predict(const NetworkSpec& spec, ParamStore& params,
                          const std::vector<Tensor>& images, int batch_size = 64) {
    Prediction pred;
    if (images.empty()) return pred;
    const int h = images[0].dim(1), w = images[0].dim(2);
    size_t done = 0;
    while (done < images.size()) {
        const size_t take = std::min<size_t>(static_cast<size_t>(batch_size),
                                             images.size() - done);
        Tensor batch({static_cast<int>(take), 1, h, w});
        const int64_t px = static_cast<int64_t>(h) * w;
        for (size_t k = 0; k < take; ++k) {
            const Tensor& img = images[done + k];
            if (img.dim(1) != h || img.dim(2) != w) {
                throw ShapeError("predict: image size " + img.shape_string() +
                                 " differs from batch " + std::to_string(h) + "x" +
                                 std::to_string(w));
            }
            std::copy(img.data(), img.data() + px, batch.data() + static_cast<int64_t>(k) * px);
        }
        Tensor probs = network_infer(spec, params, batch);
        for (int64_t i = 0; i < probs.size(); ++i) {
            pred.probs.push_back(probs[i]);
            pred.labels.push_back(probs[i] >= 0.5 ? 1 : 0);
        }
        done += take;
    }
    return pred;
}

inline Prediction predict(const NetworkSpec& spec, ParamStore& params, const ImageDataset& ds,
                          int batch_size = 64) {
    return predict(spec, params, ds.images, batch_size);
}

namespace detail {

struct LossAcc {
    double loss = 0.0;
    double acc = 0.0;
};

// plain BCE (no L2 term) and thresholded accuracy, in infer mode
inline LossAcc evaluate(const NetworkSpec& spec, ParamStore& params, const ImageDataset& ds,
                        int batch_size) {
    Prediction p = predict(spec, params, ds, batch_size);
    Tensor probs({static_cast<int>(p.probs.size())});
    Tensor targets({static_cast<int>(p.probs.size())});
    int64_t correct = 0;
    for (size_t i = 0; i < p.probs.size(); ++i) {
        probs[static_cast<int64_t>(i)] = p.probs[i];
        targets[static_cast<int64_t>(i)] = static_cast<double>(ds.labels[i]);
        correct += p.labels[i] == ds.labels[i] ? 1 : 0;
    }
    Tape tape;
    LossAcc out;
    out.loss = tape.value(binary_cross_entropy(tape, tape.constant(probs), targets))[0];
    out.acc = static_cast<double>(correct) / static_cast<double>(p.probs.size());
    return out;
}

}  // namespace detail

struct TrainedClassifier {
    NetworkSpec spec;
    ParamStore params;
    TrainReport report;
};

// Per epoch: seeded-shuffled minibatches, BCE + L2 on the conv/dense
// weights, Adam (beta1 0.9, beta2 0.999). After each epoch the validation
// loss drives the callbacks:
//  - no improvement by min_delta for lr_reduce_patience epochs halves the
//    learning rate by lr_reduce_factor (floored at min_lr, counter resets),
//  - no improvement for early_stop_patience epochs stops training,
//  - the best-validation parameters are restored on exit.
inline TrainedClassifier train_classifier(const ImageDataset& train, const ImageDataset& val,
                                          const ClassifierConfig& cfg) {
    cfg.validate();
    if (train.empty() || val.empty()) {
        throw DataError("train_classifier: train and validation sets must be non-empty");
    }
    if (train.n_pos() == 0 || train.n_neg() == 0) {
        throw DataError("train_classifier: training set must contain both classes");
    }
    if (train.height != cfg.image_size || train.width != cfg.image_size) {
        throw DataError("train_classifier: images are " + std::to_string(train.height) + "x" +
                        std::to_string(train.width) + " but config.image_size is " +
                        std::to_string(cfg.image_size));
    }

    TrainedClassifier out;
    out.spec = build_cnn(cfg);
    Rng master(cfg.seed);
    Rng weights_rng = master.stream(RngStream::weights);
    Rng dropout_rng = master.stream(RngStream::dropout);
    Rng shuffle_rng = master.stream(RngStream::shuffle);
    out.params = init_weights(out.spec, weights_rng);

    AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    double lr = cfg.lr;
    double best_val = std::numeric_limits<double>::infinity();
    ParamStore best_params = out.params;
    int wait_reduce = 0, wait_stop = 0;
    bool stopped_early = false;

    // indices of the L2-regularized parameters: conv/dense weights only
    std::vector<size_t> weight_leaf_slots;

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t seen = 0, correct = 0;
        opt.config().lr = lr;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t take = std::min<size_t>(static_cast<size_t>(cfg.batch_size),
                                                 order.size() - start);
            Tensor batch = train.batch(order, start, take);
            Tensor targets({static_cast<int>(take)});
            for (size_t k = 0; k < take; ++k) {
                targets[static_cast<int64_t>(k)] =
                    static_cast<double>(train.labels[order[start + k]]);
            }

            Tape tape;
            ParamLeaves leaves = insert_params(out.spec, out.params, tape, true);
            if (weight_leaf_slots.empty()) {
                for (size_t s = 0; s < leaves.ordered.size(); ++s) {
                    const std::string& name = leaves.ordered[s].first;
                    if (name.size() > 7 && name.substr(name.size() - 7) == "/weight") {
                        weight_leaf_slots.push_back(s);
                    }
                }
            }
            Tape::Id probs = network_apply(out.spec, out.params, tape, tape.constant(batch),
                                           Mode::train, &dropout_rng, leaves);
            Tape::Id loss = binary_cross_entropy(tape, probs, targets);
            if (cfg.l2_lambda > 0.0) {
                std::vector<Tape::Id> weight_ids;
                for (size_t s : weight_leaf_slots) weight_ids.push_back(leaves.ordered[s].second);
                loss = add(tape, loss, l2_penalty(tape, weight_ids, cfg.l2_lambda));
            }
            const double loss_v = tape.value(loss)[0];
            if (!std::isfinite(loss_v)) {
                throw NumericError("train_classifier: non-finite loss at epoch " +
                                   std::to_string(epoch + 1));
            }
            tape.backward(loss);
            apply_gradients(leaves, tape, out.params, opt);

            loss_sum += loss_v * static_cast<double>(take);
            seen += static_cast<int64_t>(take);
            const Tensor& pv = tape.value(probs);
            for (size_t k = 0; k < take; ++k) {
                const int label = pv[static_cast<int64_t>(k)] >= 0.5 ? 1 : 0;
                correct += label == train.labels[order[start + k]] ? 1 : 0;
            }
        }

        detail::LossAcc v = detail::evaluate(out.spec, out.params, val, cfg.batch_size);
        if (!std::isfinite(v.loss)) {
            throw NumericError("train_classifier: non-finite validation loss at epoch " +
                               std::to_string(epoch + 1));
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        stats.val_loss = v.loss;
        stats.val_acc = v.acc;
        stats.lr = lr;
        out.report.epochs.push_back(stats);

        if (v.loss < best_val - cfg.min_delta) {
            best_val = v.loss;
            best_params = out.params;
            out.report.best_epoch = epoch;
            wait_reduce = 0;
            wait_stop = 0;
        } else {
            ++wait_reduce;
            ++wait_stop;
            if (wait_reduce >= cfg.lr_reduce_patience && lr > cfg.min_lr) {
                lr = std::max(lr * cfg.lr_reduce_factor, cfg.min_lr);
                wait_reduce = 0;
            }
            if (wait_stop >= cfg.early_stop_patience) {
                stopped_early = true;
                break;
            }
        }
    }

    if (out.report.best_epoch >= 0) out.params = std::move(best_params);
    out.report.stop_reason = cfg.max_epochs == 0 ? "no_epochs"
                             : stopped_early     ? "early_stop"
                                                 : "max_epochs";
    return out;
}

inline void write_train_report_csv(const std::string& path, const TrainReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("train report: cannot write " + path);
    out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
    char buf[256];
    for (size_t i = 0; i < report.epochs.size(); ++i) {
        const EpochStats& e = report.epochs[i];
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g\n", i + 1, e.train_loss,
                      e.train_acc, e.val_loss, e.val_acc, e.lr);
        out << buf;
    }
    if (!out) throw DataError("train report: write failed for " + path);
}

// --- checkpointing ------------------------------------------------------------

inline Checkpoint classifier_checkpoint(const TrainedClassifier& clf,
                                        const ClassifierConfig& cfg) {
    Checkpoint ck;
    ck.meta["clf/image_size"] = static_cast<uint64_t>(cfg.image_size);
    ck.meta["clf/dense_units"] = static_cast<uint64_t>(cfg.dense_units);
    ck.meta["clf/n_blocks"] = cfg.blocks.size();
    for (size_t b = 0; b < cfg.blocks.size(); ++b) {
        ck.meta["clf/block/" + std::to_string(b) + "/convs"] =
            static_cast<uint64_t>(cfg.blocks[b].first);
        ck.meta["clf/block/" + std::to_string(b) + "/channels"] =
            static_cast<uint64_t>(cfg.blocks[b].second);
    }
    ck.put_f64("clf/conv_dropout", cfg.conv_dropout);
    ck.put_f64("clf/dense_dropout", cfg.dense_dropout);
    ck.put_f64("clf/bn_momentum", cfg.bn_momentum);
    ck.put_f64("clf/bn_epsilon", cfg.bn_epsilon);
    detail::pack_store(ck, "clf", clf.params);
    return ck;
}

inline TrainedClassifier classifier_from_checkpoint(const Checkpoint& ck,
                                                    ClassifierConfig* cfg_out = nullptr) {
    ClassifierConfig cfg;
    cfg.image_size = static_cast<int>(ck.require_meta("clf/image_size"));
    cfg.dense_units = static_cast<int>(ck.require_meta("clf/dense_units"));
    cfg.blocks.clear();
    const size_t n_blocks = ck.require_meta("clf/n_blocks");
    for (size_t b = 0; b < n_blocks; ++b) {
        cfg.blocks.emplace_back(
            static_cast<int>(ck.require_meta("clf/block/" + std::to_string(b) + "/convs")),
            static_cast<int>(ck.require_meta("clf/block/" + std::to_string(b) + "/channels")));
    }
    cfg.conv_dropout = ck.get_f64("clf/conv_dropout");
    cfg.dense_dropout = ck.get_f64("clf/dense_dropout");
    cfg.bn_momentum = ck.get_f64("clf/bn_momentum");
    cfg.bn_epsilon = ck.get_f64("clf/bn_epsilon");

    TrainedClassifier clf;
    clf.spec = build_cnn(cfg);
    Rng dummy(0);
    clf.params = init_weights(clf.spec, dummy);
    detail::unpack_store(ck, "clf", clf.params);
    if (cfg_out) *cfg_out = cfg;
    return clf;
}

}  // namespace advsyn
