#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advsyn/classifier.hpp"
#include "advsyn/dcgan.hpp"
#include "advsyn/errors.hpp"

namespace advsyn {

struct PipelineConfig {
    bool augment_before_split = false;  // default: augment only the training split
    int synth_count = 400;
    size_t balance_target = 0;  // 0 = match the majority class
    double train_fraction = 0.8;
    double val_fraction = 0.1;  // carved out of the training split

    void validate() const {
        if (synth_count < 0) throw ConfigError("pipeline.synth_count must be >= 0");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
            throw ConfigError("pipeline.train_fraction must be in (0,1]");
        }
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
            throw ConfigError("pipeline.val_fraction must be in (0,1)");
        }
    }
};

// One document capturing every knob of a run; the CLI seeds gan/classifier
// sub-configs from the master seed.
struct RunConfig {
    uint64_t seed = 1;
    std::string data_root = "data";
    std::string out_dir = "out";
    bool strict_serial = true;  // the engine is serial; recorded for provenance
    GanConfig gan;
    ClassifierConfig classifier;
    PipelineConfig pipeline;

    void validate() const {
        gan.validate();
        classifier.validate();
        pipeline.validate();
        if (data_root.empty()) throw ConfigError("data_root must not be empty");
        if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                                const std::string& scope) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const std::string& k : known) ok = ok || k == key;
        if (!ok) throw ConfigError("config: unknown key '" + scope + key + "'");
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
        }
    }
}

inline void parse_gan(const json& j, GanConfig& g) {
    reject_unknown_keys(j,
                        {"z_dim", "image_size", "epochs", "steps_per_epoch", "batch_size", "lr",
                         "beta1", "beta2", "sample_every", "use_batchnorm", "leaky_slope",
                         "dropout_rate"},
                        "gan.");
    maybe(j, "z_dim", g.z_dim);
    maybe(j, "image_size", g.image_size);
    maybe(j, "epochs", g.epochs);
    maybe(j, "steps_per_epoch", g.steps_per_epoch);
    maybe(j, "batch_size", g.batch_size);
    maybe(j, "lr", g.lr);
    maybe(j, "beta1", g.beta1);
    maybe(j, "beta2", g.beta2);
    maybe(j, "sample_every", g.sample_every);
    maybe(j, "use_batchnorm", g.use_batchnorm);
    maybe(j, "leaky_slope", g.leaky_slope);
    maybe(j, "dropout_rate", g.dropout_rate);
}

inline void parse_classifier(const json& j, ClassifierConfig& c) {
    reject_unknown_keys(j,
                        {"image_size", "blocks", "dense_units", "conv_dropout", "dense_dropout",
                         "lr", "l2_lambda", "max_epochs", "early_stop_patience",
                         "lr_reduce_factor", "lr_reduce_patience", "min_delta", "min_lr",
                         "batch_size", "bn_momentum", "bn_epsilon"},
                        "classifier.");
    maybe(j, "image_size", c.image_size);
    if (j.contains("blocks")) {
        c.blocks.clear();
        if (!j.at("blocks").is_array()) {
            throw ConfigError("config: classifier.blocks must be an array of [convs, channels]");
        }
        for (const auto& entry : j.at("blocks")) {
            if (!entry.is_array() || entry.size() != 2) {
                throw ConfigError(
                    "config: classifier.blocks must be an array of [convs, channels]");
            }
            c.blocks.emplace_back(entry.at(0).get<int>(), entry.at(1).get<int>());
        }
    }
    maybe(j, "dense_units", c.dense_units);
    maybe(j, "conv_dropout", c.conv_dropout);
    maybe(j, "dense_dropout", c.dense_dropout);
    maybe(j, "lr", c.lr);
    maybe(j, "l2_lambda", c.l2_lambda);
    maybe(j, "max_epochs", c.max_epochs);
    maybe(j, "early_stop_patience", c.early_stop_patience);
    maybe(j, "lr_reduce_factor", c.lr_reduce_factor);
    maybe(j, "lr_reduce_patience", c.lr_reduce_patience);
    maybe(j, "min_delta", c.min_delta);
    maybe(j, "min_lr", c.min_lr);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "bn_momentum", c.bn_momentum);
    maybe(j, "bn_epsilon", c.bn_epsilon);
}

inline void parse_pipeline(const json& j, PipelineConfig& p) {
    reject_unknown_keys(j,
                        {"augment_before_split", "synth_count", "balance_target",
                         "train_fraction", "val_fraction"},
                        "pipeline.");
    maybe(j, "augment_before_split", p.augment_before_split);
    maybe(j, "synth_count", p.synth_count);
    maybe(j, "balance_target", p.balance_target);
    maybe(j, "train_fraction", p.train_fraction);
    maybe(j, "val_fraction", p.val_fraction);
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"seed", "data_root", "out_dir", "strict_serial", "gan", "classifier", "pipeline"},
        "");
    RunConfig cfg;
    detail::maybe(j, "seed", cfg.seed);
    detail::maybe(j, "data_root", cfg.data_root);
    detail::maybe(j, "out_dir", cfg.out_dir);
    detail::maybe(j, "strict_serial", cfg.strict_serial);
    if (j.contains("gan")) detail::parse_gan(j.at("gan"), cfg.gan);
    if (j.contains("classifier")) detail::parse_classifier(j.at("classifier"), cfg.classifier);
    if (j.contains("pipeline")) detail::parse_pipeline(j.at("pipeline"), cfg.pipeline);
    // one master seed drives every stream
    cfg.gan.seed = cfg.seed;
    cfg.classifier.seed = cfg.seed;
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace advsyn
