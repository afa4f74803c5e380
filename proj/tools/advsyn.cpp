// advsyn - adversarial synthesis and classification of grayscale scans.
//
// Subcommands mirror the pipeline stages: phantom data generation,
// preprocessing, GAN training, synthetic image generation, classifier
// training, evaluation, and distribution comparison. A JSON config file
// (--config) captures every hyperparameter; command-line flags override it.
//
// Exit codes: 0 success, 2 configuration/validation error, 3 data error,
// 4 numeric divergence, 1 unexpected failure.

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "advsyn/commands.hpp"
#include "advsyn/config.hpp"

using namespace advsyn;

int main(int argc, char** argv) {
    CLI::App app{"advsyn: DC-GAN synthesis and CNN classification of grayscale scans"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed_override;
    std::optional<std::string> out_override;
    bool strict_serial = false;
    app.add_option("--config", config_path, "JSON run configuration file")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed_override, "Master seed overriding the config file (default 1)");
    app.add_option("--out", out_override, "Output directory overriding the config file");
    app.add_flag("--strict-serial", strict_serial,
                 "Pin strictly serial execution (the engine default; recorded in the run)");

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate a procedural phantom dataset tree");
    int n_yes = 500, n_no = 500, size = 32;
    phantom->add_option("--n-yes", n_yes, "Number of tumor images")->capture_default_str();
    phantom->add_option("--n-no", n_no, "Number of no-tumor images")->capture_default_str();
    phantom->add_option("--size", size, "Image side length in pixels")->capture_default_str();

    // preprocess
    auto* preprocess = app.add_subcommand(
        "preprocess", "Resize a dataset tree to a target resolution (bilinear, then [-1,1])");
    std::string pre_in;
    int pre_size = 128;
    preprocess->add_option("--in", pre_in, "Input dataset directory")->required();
    preprocess->add_option("--size", pre_size, "Target side length")->capture_default_str();

    // train-gan
    auto* train_gan_cmd =
        app.add_subcommand("train-gan", "Train the DC-GAN on the tumor images of a dataset tree");
    std::string gan_data, gan_resume;
    std::optional<int> gan_size, gan_zdim, gan_epochs, gan_steps, gan_batch, gan_sample_every;
    std::optional<double> gan_lr;
    train_gan_cmd->add_option("--data", gan_data, "Dataset directory (yes/ images are used)")
        ->required();
    train_gan_cmd->add_option("--resume", gan_resume, "Checkpoint to resume from");
    train_gan_cmd->add_option("--image-size", gan_size, "GAN resolution: 32, 64 or 128 (default 128)");
    train_gan_cmd->add_option("--z-dim", gan_zdim, "Latent dimension (default 400)");
    train_gan_cmd->add_option("--epochs", gan_epochs, "Training epochs (default 10)");
    train_gan_cmd->add_option("--steps-per-epoch", gan_steps, "Steps per epoch (default 3750)");
    train_gan_cmd->add_option("--batch-size", gan_batch, "Batch size (default 4)");
    train_gan_cmd->add_option("--lr", gan_lr, "Adam learning rate (default 0.0002)");
    train_gan_cmd->add_option("--sample-every", gan_sample_every,
                              "Sample-grid cadence in steps, 0 disables (default 500)");

    // generate
    auto* generate =
        app.add_subcommand("generate", "Sample synthetic tumor images from a GAN checkpoint");
    std::string gen_ckpt;
    int gen_n = 400;
    generate->add_option("--ckpt", gen_ckpt, "GAN checkpoint file")->required();
    generate->add_option("--n", gen_n, "Number of images")->capture_default_str();

    // train-clf
    auto* train_clf_cmd = app.add_subcommand(
        "train-clf", "Merge, balance, split and train the CNN tumor classifier");
    std::string clf_data, clf_synth;
    std::optional<int> clf_size, clf_epochs, clf_batch, clf_synth_count;
    std::optional<bool> clf_augment_before;
    train_clf_cmd->add_option("--data", clf_data, "Real dataset directory")->required();
    train_clf_cmd->add_option("--synth", clf_synth, "Synthetic dataset directory (optional)");
    train_clf_cmd->add_option(
        "--synth-count", clf_synth_count,
        "Synthetic images to merge, 0 for the real-only baseline (default 400)");
    train_clf_cmd->add_option("--image-size", clf_size, "Classifier resolution (default 128)");
    train_clf_cmd->add_option("--max-epochs", clf_epochs, "Epoch budget (default 200)");
    train_clf_cmd->add_option("--batch-size", clf_batch, "Batch size (default 32)");
    train_clf_cmd->add_option(
        "--augment-before-split", clf_augment_before,
        "Balance by augmentation before the train/test split (default false)");

    // evaluate
    auto* evaluate =
        app.add_subcommand("evaluate", "Evaluate a classifier checkpoint on a dataset tree");
    std::string eval_ckpt, eval_data;
    evaluate->add_option("--ckpt", eval_ckpt, "Classifier checkpoint file")->required();
    evaluate->add_option("--data", eval_data, "Dataset directory to evaluate on")->required();

    // compare-dist
    auto* compare = app.add_subcommand(
        "compare-dist", "Compare pixel-intensity distributions of two dataset trees");
    std::string cmp_real, cmp_synth;
    int cmp_bins = 50;
    compare->add_option("--real", cmp_real, "Real dataset directory")->required();
    compare->add_option("--synth", cmp_synth, "Synthetic dataset directory")->required();
    compare->add_option("--bins", cmp_bins, "Histogram bins over [-1,1]")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.gan.seed = *seed_override;
            cfg.classifier.seed = *seed_override;
        }
        if (out_override) cfg.out_dir = *out_override;
        if (strict_serial) cfg.strict_serial = true;

        if (*phantom) {
            cmd_phantom(cfg, n_yes, n_no, size, cfg.out_dir);
        } else if (*preprocess) {
            cmd_preprocess(cfg, pre_in, pre_size, cfg.out_dir);
        } else if (*train_gan_cmd) {
            if (gan_size) cfg.gan.image_size = *gan_size;
            if (gan_zdim) cfg.gan.z_dim = *gan_zdim;
            if (gan_epochs) cfg.gan.epochs = *gan_epochs;
            if (gan_steps) cfg.gan.steps_per_epoch = *gan_steps;
            if (gan_batch) cfg.gan.batch_size = *gan_batch;
            if (gan_lr) cfg.gan.lr = *gan_lr;
            if (gan_sample_every) cfg.gan.sample_every = *gan_sample_every;
            cmd_train_gan(cfg, gan_data, cfg.out_dir, gan_resume);
        } else if (*generate) {
            cmd_generate(cfg, gen_ckpt, gen_n, cfg.out_dir);
        } else if (*train_clf_cmd) {
            if (clf_size) cfg.classifier.image_size = *clf_size;
            if (clf_epochs) cfg.classifier.max_epochs = *clf_epochs;
            if (clf_batch) cfg.classifier.batch_size = *clf_batch;
            if (clf_synth_count) cfg.pipeline.synth_count = *clf_synth_count;
            if (clf_augment_before) cfg.pipeline.augment_before_split = *clf_augment_before;
            cmd_train_clf(cfg, clf_data, clf_synth, cfg.out_dir);
        } else if (*evaluate) {
            cmd_evaluate(cfg, eval_ckpt, eval_data, cfg.out_dir);
        } else if (*compare) {
            cmd_compare_dist(cfg, cmp_real, cmp_synth, cfg.out_dir, cmp_bins);
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
