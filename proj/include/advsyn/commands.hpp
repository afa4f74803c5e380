#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <tuple>
#include <vector>

#include "advsyn/classifier.hpp"
#include "advsyn/config.hpp"
#include "advsyn/dcgan.hpp"
#include "advsyn/dataset.hpp"
#include "advsyn/errors.hpp"
#include "advsyn/metrics.hpp"

// Command implementations behind the CLI, callable from tests. Commands
// write files under an output directory and print a one-line summary;
// failures are reported by throwing the typed errors the CLI maps to exit
// codes (ConfigError -> 2, DataError -> 3, NumericError -> 4).

namespace advsyn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// Writes a procedurally generated phantom dataset tree.
inline void cmd_phantom(const RunConfig& cfg, int n_yes, int n_no, int size,
                        const std::string& out_dir) {
    if (n_yes < 0 || n_no < 0) throw ConfigError("phantom: counts must be non-negative");
    if (size < 8) throw ConfigError("phantom: size must be at least 8");
    PhantomSpec spec;
    spec.image_size = size;
    spec.seed = cfg.seed;
    ImageDataset ds = make_phantom_dataset(spec, n_yes, n_no);
    detail::ensure_dir(out_dir);
    save_dataset_dir(ds, out_dir);
    std::cout << "phantom: wrote " << ds.size() << " images (" << ds.n_pos() << " yes, "
              << ds.n_neg() << " no) to " << out_dir << "\n";
}

// Resizes an existing dataset tree to size x size, keeping labels and
// provenance.
inline void cmd_preprocess(const RunConfig& cfg, const std::string& in_dir, int size,
                           const std::string& out_dir) {
    (void)cfg;
    if (size < 1) throw ConfigError("preprocess: size must be positive");
    std::vector<DatasetEntry> entries = list_dataset_entries(in_dir);
    if (entries.empty()) throw DataError("preprocess: no images found under " + in_dir);
    ImageDataset ds;
    ds.name = "preprocessed";
    for (const DatasetEntry& e : entries) {
        RawImage raw = load_pgm(detail::join(in_dir, e.relative_path));
        Tensor as_double({1, raw.height, raw.width});
        for (size_t j = 0; j < raw.pixels.size(); ++j) {
            as_double[static_cast<int64_t>(j)] = static_cast<double>(raw.pixels[j]);
        }
        Tensor resized = resize_bilinear(as_double, size, size);
        for (int64_t j = 0; j < resized.size(); ++j) resized[j] = resized[j] / 127.5 - 1.0;
        ds.push(std::move(resized), e.label, e.provenance);
    }
    detail::ensure_dir(out_dir);
    save_dataset_dir(ds, out_dir);
    std::cout << "preprocess: wrote " << ds.size() << " images at " << size << "x" << size
              << " to " << out_dir << "\n";
}

// Trains (or resumes) the GAN on the tumor images of a dataset tree.
// Emits epoch checkpoints, fixed-probe sample grids and a per-step loss log.
inline void cmd_train_gan(const RunConfig& cfg, const std::string& data_dir,
                          const std::string& out_dir, const std::string& resume_ckpt = "") {
    cfg.validate();
    ImageDataset all = load_dataset_dir(data_dir);
    ImageDataset positives;
    positives.name = "gan-train";
    for (size_t i = 0; i < all.size(); ++i) {
        if (all.labels[i] == 1) positives.push(all.images[i], 1, all.provenance[i]);
    }
    if (positives.empty()) throw DataError("train-gan: no tumor (yes) images under " + data_dir);

    GanConfig gan_cfg = cfg.gan;
    gan_cfg.seed = cfg.seed;
    GanModel model = resume_ckpt.empty()
                         ? GanModel::create(gan_cfg)
                         : gan_from_checkpoint(Checkpoint::load(resume_ckpt), gan_cfg);

    detail::ensure_dir(out_dir);
    const std::string loss_path = detail::join(out_dir, "gan_loss.csv");
    const bool append = !resume_ckpt.empty() && std::filesystem::exists(loss_path);
    std::ofstream loss_csv(loss_path, append ? std::ios::binary | std::ios::app
                                             : std::ios::binary);
    if (!loss_csv) throw DataError("train-gan: cannot write " + loss_path);
    if (!append) loss_csv << "step,d_loss,g_loss\n";

    GanTrainSinks sinks;
    char buf[160];
    sinks.on_losses = [&loss_csv, &buf, &loss_path](int64_t step, const StepLosses& l) {
        std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g\n", static_cast<long long>(step),
                      l.d_loss, l.g_loss);
        loss_csv << buf;
        if (!loss_csv) throw DataError("train-gan: write failed for " + loss_path);
    };
    sinks.on_sample = [&out_dir](int64_t step, const Tensor& grid) {
        save_pgm(detail::join(out_dir, "samples_step_" + std::to_string(step) + ".pgm"),
                 unit_to_raw(grid));
    };
    sinks.on_checkpoint = [&out_dir](int epoch, GanModel& m) {
        gan_checkpoint(m).save(detail::join(out_dir, "gan_epoch_" + std::to_string(epoch) +
                                                         ".ckpt"));
    };
    train_gan(model, positives, sinks);
    std::cout << "train-gan: completed " << model.step << " steps over " << cfg.gan.epochs
              << " epochs; outputs in " << out_dir << "\n";
}

// Samples n synthetic tumor images from a trained generator checkpoint.
inline void cmd_generate(const RunConfig& cfg, const std::string& ckpt_path, int n,
                         const std::string& out_dir) {
    Checkpoint ck = Checkpoint::load(ckpt_path);
    GanModel model = gan_from_checkpoint(ck, GanConfig{});
    Rng rng = Rng(cfg.seed).stream(RngStream::noise);
    ImageDataset ds = generate_images(model, n, rng);
    detail::ensure_dir(out_dir);
    save_dataset_dir(ds, out_dir);
    std::cout << "generate: wrote " << ds.size() << " synthetic images to " << out_dir << "\n";
}

// Merge/balance/split the real (+ optional synthetic) data, train the CNN,
// and persist the best checkpoint, the training report, and the held-out
// test split.
inline void cmd_train_clf(const RunConfig& cfg, const std::string& data_dir,
                          const std::string& synth_dir, const std::string& out_dir) {
    cfg.validate();
    ImageDataset real = load_dataset_dir(data_dir);
    if (real.n_pos() == 0 || real.n_neg() == 0) {
        throw DataError("train-clf: data root must contain both yes and no images");
    }
    if (real.height != cfg.classifier.image_size) {
        throw DataError("train-clf: images are " + std::to_string(real.height) +
                        "px but classifier.image_size is " +
                        std::to_string(cfg.classifier.image_size) +
                        "; run the preprocess command first");
    }

    ImageDataset synth;
    synth.name = "synthetic";
    if (!synth_dir.empty() && cfg.pipeline.synth_count > 0) {
        ImageDataset loaded = load_dataset_dir(synth_dir);
        if (loaded.size() < static_cast<size_t>(cfg.pipeline.synth_count)) {
            throw DataError("train-clf: synthetic dir has " + std::to_string(loaded.size()) +
                            " images, fewer than synth_count " +
                            std::to_string(cfg.pipeline.synth_count));
        }
        for (size_t i = 0; i < static_cast<size_t>(cfg.pipeline.synth_count); ++i) {
            synth.push(loaded.images[i], loaded.labels[i], Provenance::synthetic);
        }
    }

    Rng augment_rng = Rng(cfg.seed).stream(RngStream::augment);
    Rng split_rng = Rng(cfg.seed).stream(RngStream::split);

    ImageDataset train_all, test;
    if (cfg.pipeline.augment_before_split) {
        // the published pipeline: balance first, then split (augmented
        // near-duplicates can land in the test set)
        ImageDataset merged = merge_and_balance(real, synth, augment_rng,
                                                cfg.pipeline.balance_target);
        std::tie(train_all, test) = split(merged, cfg.pipeline.train_fraction, split_rng);
    } else {
        // default: split first, then balance only the training side
        ImageDataset combined = real;
        combined.append(synth);
        std::tie(train_all, test) = split(combined, cfg.pipeline.train_fraction, split_rng);
        ImageDataset no_synth;
        train_all = merge_and_balance(train_all, no_synth, augment_rng,
                                      cfg.pipeline.balance_target);
    }
    auto [train, val] = split(train_all, 1.0 - cfg.pipeline.val_fraction, split_rng);

    ClassifierConfig clf_cfg = cfg.classifier;
    clf_cfg.seed = cfg.seed;
    TrainedClassifier clf = train_classifier(train, val, clf_cfg);

    detail::ensure_dir(out_dir);
    classifier_checkpoint(clf, clf_cfg).save(detail::join(out_dir, "clf_best.ckpt"));
    write_train_report_csv(detail::join(out_dir, "train_report.csv"), clf.report);
    save_dataset_dir(test, detail::join(out_dir, "test_split"));
    const int best = clf.report.best_epoch;
    std::cout << "train-clf: " << clf.report.epochs.size() << " epochs (" << clf.report.stop_reason
              << "), best epoch " << best + 1 << ", val_loss "
              << (best >= 0 ? clf.report.epochs[static_cast<size_t>(best)].val_loss : 0.0)
              << "; outputs in " << out_dir << "\n";
}

// Evaluates a classifier checkpoint on a dataset tree and writes the
// classification report and confusion matrix.
inline void cmd_evaluate(const RunConfig& cfg, const std::string& ckpt_path,
                         const std::string& data_dir, const std::string& out_dir) {
    (void)cfg;
    ClassifierConfig clf_cfg;
    TrainedClassifier clf = classifier_from_checkpoint(Checkpoint::load(ckpt_path), &clf_cfg);
    ImageDataset test = load_dataset_dir(data_dir);
    if (test.height != clf_cfg.image_size) {
        throw DataError("evaluate: images are " + std::to_string(test.height) +
                        "px but the checkpoint expects " + std::to_string(clf_cfg.image_size));
    }
    Prediction pred = predict(clf.spec, clf.params, test);
    ConfusionMatrix cm = confusion_matrix(test.labels, pred.labels);
    EvalReport report = classification_report(cm);
    detail::ensure_dir(out_dir);
    write_report_csv(detail::join(out_dir, "report.csv"), report);
    write_confusion_csv(detail::join(out_dir, "confusion.csv"), cm);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "evaluate: accuracy %.4f on %lld images (tn=%lld fp=%lld fn=%lld tp=%lld)\n",
                  report.accuracy, static_cast<long long>(cm.total()),
                  static_cast<long long>(cm.tn), static_cast<long long>(cm.fp),
                  static_cast<long long>(cm.fn), static_cast<long long>(cm.tp));
    std::cout << buf;
}

// Pixel-intensity distribution comparison between two dataset trees.
inline void cmd_compare_dist(const RunConfig& cfg, const std::string& real_dir,
                             const std::string& synth_dir, const std::string& out_dir,
                             int bins = 50) {
    (void)cfg;
    ImageDataset real = load_dataset_dir(real_dir);
    ImageDataset synth = load_dataset_dir(synth_dir);
    DistributionComparison cmp = compare_real_synthetic(real, synth, bins);
    detail::ensure_dir(out_dir);
    write_distribution_csv(detail::join(out_dir, "distribution.csv"), cmp);
    {
        std::ofstream out(detail::join(out_dir, "jsd.txt"), std::ios::binary);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.12g\n", cmp.jsd);
        out << buf;
        if (!out) throw DataError("compare-dist: cannot write jsd.txt");
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "compare-dist: jsd %.6f over %d bins\n", cmp.jsd, bins);
    std::cout << buf;
}

}  // namespace advsyn
