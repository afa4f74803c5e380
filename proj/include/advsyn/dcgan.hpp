#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "advsyn/checkpoint.hpp"
#include "advsyn/persist.hpp"
#include "advsyn/dataset.hpp"
#include "advsyn/errors.hpp"
#include "advsyn/image.hpp"
#include "advsyn/losses.hpp"
#include "advsyn/network.hpp"
#include "advsyn/optim.hpp"
#include "advsyn/rng.hpp"
#include "advsyn/tape.hpp"

namespace advsyn {

struct GanConfig {
    int z_dim = 400;
    int image_size = 128;  // power-of-two ladder: 32, 64 or 128
    int epochs = 10;
    int steps_per_epoch = 3750;
    int batch_size = 4;
    double lr = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int sample_every = 500;  // 0 disables sample grids
    uint64_t seed = 1;
    bool use_batchnorm = false;  // GAN blocks default to leaky_relu/dropout only
    double leaky_slope = 0.2;
    double dropout_rate = 0.3;

    void validate() const {
        if (z_dim < 1) throw ConfigError("gan.z_dim must be >= 1");
        if (image_size != 32 && image_size != 64 && image_size != 128) {
            throw ConfigError("gan.image_size must be one of 32, 64, 128");
        }
        if (epochs < 0) throw ConfigError("gan.epochs must be >= 0");
        if (steps_per_epoch < 0) throw ConfigError("gan.steps_per_epoch must be >= 0");
        if (batch_size < 1) throw ConfigError("gan.batch_size must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("gan.lr must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("gan.beta1 must be in (0,1)");
        if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("gan.beta2 must be in (0,1)");
        if (sample_every < 0) throw ConfigError("gan.sample_every must be >= 0");
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
            throw ConfigError("gan.leaky_slope must be in (0,1)");
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw ConfigError("gan.dropout_rate must be in [0,1)");
        }
    }

    // Channel ladders scale with resolution so desk-scale runs stay cheap:
    // 128 -> 256 base generator channels (the full-size architecture),
    // 64 -> 128, 32 -> 64. The discriminator mirrors at half that.
    int gen_base_channels() const { return 2 * image_size; }
    int disc_base_channels() const { return image_size / 2; }
};

// Dense projection to a (base x base) map, two stride-2 transposed-conv
// doublings, then a stride-1 conv to one tanh channel.
inline NetworkSpec build_generator(const GanConfig& cfg) {
    cfg.validate();
    const int base = cfg.image_size / 4;
    const int c0 = cfg.gen_base_channels();
    NetworkSpec spec;
    spec.name = "gen";
    spec.layers.push_back(DenseLayer{cfg.z_dim, c0 * base * base});
    spec.layers.push_back(ReshapeLayer{{c0, base, base}});
    spec.layers.push_back(ActivationLayer{ActKind::leaky_relu, cfg.leaky_slope});
    if (cfg.use_batchnorm) spec.layers.push_back(BatchNormLayer{c0});
    spec.layers.push_back(ConvT2dLayer{c0, c0 / 2, 4, 2, 1});
    spec.layers.push_back(ActivationLayer{ActKind::leaky_relu, cfg.leaky_slope});
    if (cfg.use_batchnorm) spec.layers.push_back(BatchNormLayer{c0 / 2});
    spec.layers.push_back(ConvT2dLayer{c0 / 2, c0 / 4, 4, 2, 1});
    spec.layers.push_back(ActivationLayer{ActKind::leaky_relu, cfg.leaky_slope});
    if (cfg.use_batchnorm) spec.layers.push_back(BatchNormLayer{c0 / 4});
    spec.layers.push_back(Conv2dLayer{c0 / 4, 1, 3, 1, 1});
    spec.layers.push_back(ActivationLayer{ActKind::tanh, 0.0});
    return spec;
}

// Four conv layers: three stride-2 halvings to image_size/8, one stride-1,
// each with leaky_relu + dropout; then flatten, dense, sigmoid.
inline NetworkSpec build_discriminator(const GanConfig& cfg) {
    cfg.validate();
    const int d0 = cfg.disc_base_channels();
    const int final_map = cfg.image_size / 8;
    NetworkSpec spec;
    spec.name = "disc";
    auto block = [&spec, &cfg](int in_ch, int out_ch, int kernel, int stride, int pad) {
        spec.layers.push_back(Conv2dLayer{in_ch, out_ch, kernel, stride, pad});
        spec.layers.push_back(ActivationLayer{ActKind::leaky_relu, cfg.leaky_slope});
        spec.layers.push_back(DropoutLayer{cfg.dropout_rate});
    };
    block(1, d0, 4, 2, 1);
    block(d0, 2 * d0, 4, 2, 1);
    block(2 * d0, 4 * d0, 4, 2, 1);
    block(4 * d0, 4 * d0, 3, 1, 1);
    spec.layers.push_back(FlattenLayer{});
    spec.layers.push_back(DenseLayer{4 * d0 * final_map * final_map, 1});
    spec.layers.push_back(ActivationLayer{ActKind::sigmoid, 0.0});
    return spec;
}

struct StepLosses {
    double d_loss = 0.0;
    double g_loss = 0.0;
};

// Generator + discriminator parameters, their Adam states, the live rng
// streams, and the dataset-cycling state. Everything here round-trips
// through checkpoints so a resumed run continues bit-identically.
struct GanModel {
    GanConfig config;
    NetworkSpec gen_spec, disc_spec;
    ParamStore gen_params, disc_params;
    AdamOptimizer gen_opt, disc_opt;
    int64_t step = 0;
    Rng noise_rng{0}, dropout_rng{0}, shuffle_rng{0};
    std::vector<size_t> data_order;
    size_t data_cursor = 0;

    static GanModel create(const GanConfig& cfg) {
        cfg.validate();
        GanModel m;
        m.config = cfg;
        m.gen_spec = build_generator(cfg);
        m.disc_spec = build_discriminator(cfg);
        Rng master(cfg.seed);
        Rng weights = master.stream(RngStream::weights);
        m.gen_params = init_weights(m.gen_spec, weights);
        m.disc_params = init_weights(m.disc_spec, weights);
        const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
        m.gen_opt = AdamOptimizer(adam);
        m.disc_opt = AdamOptimizer(adam);
        m.noise_rng = master.stream(RngStream::noise);
        m.dropout_rng = master.stream(RngStream::dropout);
        m.shuffle_rng = master.stream(RngStream::shuffle);
        return m;
    }

    Tensor sample_noise(int n, Rng& rng) const {
        Tensor z({n, config.z_dim});
        for (int64_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
        return z;
    }
};

// Parameter snapshots taken between the two phases, for tests asserting the
// alternation contract byte-for-byte.
struct StepTrace {
    ParamStore gen_after_phase1;
    ParamStore disc_after_phase1;
};

// One alternating update: phase 1 trains D on a real batch against fresh
// fakes (G frozen), phase 2 trains G through the frozen D on a resampled z.
// Dropout draws come from the model's dropout stream in a fixed order:
// D real pass, D fake pass, then the G-phase D pass.
inline StepLosses gan_train_step(GanModel& m, const Tensor& real_batch,
                                 StepTrace* trace = nullptr) {
    if (real_batch.rank() != 4 || real_batch.dim(1) != 1 ||
        real_batch.dim(2) != m.config.image_size || real_batch.dim(3) != m.config.image_size) {
        throw ShapeError("gan_train_step: real batch must be [N,1," +
                         std::to_string(m.config.image_size) + "," +
                         std::to_string(m.config.image_size) + "], got " +
                         real_batch.shape_string());
    }
    if (real_batch.dim(0) != m.config.batch_size) {
        throw ShapeError("gan_train_step: batch size " + std::to_string(real_batch.dim(0)) +
                         " does not match config " + std::to_string(m.config.batch_size));
    }
    if (real_batch.min() < -1.0 || real_batch.max() > 1.0) {
        throw DataError("gan_train_step: real batch has pixels outside [-1,1]");
    }
    const int n = m.config.batch_size;
    StepLosses losses;

    {
        // phase 1: update D, G frozen
        Tape tape;
        Tape::Id z = tape.constant(m.sample_noise(n, m.noise_rng));
        ParamLeaves gen_leaves = insert_params(m.gen_spec, m.gen_params, tape, false);
        Tape::Id fakes =
            network_apply(m.gen_spec, m.gen_params, tape, z, Mode::train, nullptr, gen_leaves);
        ParamLeaves disc_leaves = insert_params(m.disc_spec, m.disc_params, tape, true);
        Tape::Id d_real = network_apply(m.disc_spec, m.disc_params, tape,
                                        tape.constant(real_batch), Mode::train, &m.dropout_rng,
                                        disc_leaves);
        Tape::Id d_fake = network_apply(m.disc_spec, m.disc_params, tape, fakes, Mode::train,
                                        &m.dropout_rng, disc_leaves);
        Tape::Id loss = discriminator_loss(tape, d_real, d_fake);
        losses.d_loss = tape.value(loss)[0];
        if (!std::isfinite(losses.d_loss)) {
            throw NumericError("gan_train_step: non-finite loss in the discriminator at step " +
                               std::to_string(m.step + 1));
        }
        tape.backward(loss);
        apply_gradients(disc_leaves, tape, m.disc_params, m.disc_opt);
    }
    if (trace) {
        trace->gen_after_phase1 = m.gen_params;
        trace->disc_after_phase1 = m.disc_params;
    }
    {
        // phase 2: update G through a frozen D, fresh z
        Tape tape;
        Tape::Id z = tape.constant(m.sample_noise(n, m.noise_rng));
        ParamLeaves gen_leaves = insert_params(m.gen_spec, m.gen_params, tape, true);
        Tape::Id fakes =
            network_apply(m.gen_spec, m.gen_params, tape, z, Mode::train, nullptr, gen_leaves);
        ParamLeaves disc_leaves = insert_params(m.disc_spec, m.disc_params, tape, false);
        Tape::Id d_fake = network_apply(m.disc_spec, m.disc_params, tape, fakes, Mode::train,
                                        &m.dropout_rng, disc_leaves);
        Tape::Id loss = generator_loss(tape, d_fake);
        losses.g_loss = tape.value(loss)[0];
        if (!std::isfinite(losses.g_loss)) {
            throw NumericError("gan_train_step: non-finite loss in the generator at step " +
                               std::to_string(m.step + 1));
        }
        tape.backward(loss);
        apply_gradients(gen_leaves, tape, m.gen_params, m.gen_opt);
    }
    m.step += 1;
    return losses;
}

// 4x4 grid from the fixed probe stream; the same z every call, so grids
// emitted across training show the generator's progression.
inline Tensor sample_grid(GanModel& m, int grid = 4) {
    Rng probe = Rng(m.config.seed).stream(RngStream::probe);
    Tensor z = m.sample_noise(grid * grid, probe);
    Tensor imgs = network_infer(m.gen_spec, m.gen_params, z);
    std::vector<Tensor> tiles;
    const int64_t px = static_cast<int64_t>(m.config.image_size) * m.config.image_size;
    for (int i = 0; i < grid * grid; ++i) {
        Tensor one({1, m.config.image_size, m.config.image_size});
        std::copy(imgs.data() + i * px, imgs.data() + (i + 1) * px, one.data());
        tiles.push_back(std::move(one));
    }
    return tile_grid(tiles, grid);
}

struct GanTrainSinks {
    // step is 1-based and global across resumes
    std::function<void(int64_t step, const StepLosses&)> on_losses;
    std::function<void(int64_t step, const Tensor& grid)> on_sample;
    std::function<void(int epoch, GanModel& model)> on_checkpoint;
};

// Runs (or resumes) the epochs x steps_per_epoch schedule, cycling the
// dataset with a reshuffle at each exhaustion. The dataset must be
// single-class tumor images.
inline void train_gan(GanModel& m, const ImageDataset& dataset, const GanTrainSinks& sinks = {}) {
    if (dataset.empty()) throw DataError("train_gan: dataset is empty");
    for (int label : dataset.labels) {
        if (label != 1) {
            throw DataError("train_gan: the GAN trains on tumor images only (all labels 1)");
        }
    }
    if (dataset.height != m.config.image_size || dataset.width != m.config.image_size) {
        throw DataError("train_gan: dataset is " + std::to_string(dataset.height) + "x" +
                        std::to_string(dataset.width) + " but config.image_size is " +
                        std::to_string(m.config.image_size));
    }
    if (m.data_order.size() != dataset.size()) {
        m.data_order.resize(dataset.size());
        for (size_t i = 0; i < dataset.size(); ++i) m.data_order[i] = i;
        m.shuffle_rng.shuffle(m.data_order);
        m.data_cursor = 0;
    }

    const int64_t total_steps =
        static_cast<int64_t>(m.config.epochs) * m.config.steps_per_epoch;
    while (m.step < total_steps) {
        std::vector<size_t> batch_idx(static_cast<size_t>(m.config.batch_size));
        for (int k = 0; k < m.config.batch_size; ++k) {
            if (m.data_cursor >= m.data_order.size()) {
                m.shuffle_rng.shuffle(m.data_order);
                m.data_cursor = 0;
            }
            batch_idx[static_cast<size_t>(k)] = m.data_order[m.data_cursor++];
        }
        Tensor batch = dataset.batch(batch_idx, 0, batch_idx.size());
        StepLosses losses = gan_train_step(m, batch);
        if (sinks.on_losses) sinks.on_losses(m.step, losses);
        if (m.config.sample_every > 0 && m.step % m.config.sample_every == 0 && sinks.on_sample) {
            sinks.on_sample(m.step, sample_grid(m));
        }
        if (m.step % m.config.steps_per_epoch == 0 && sinks.on_checkpoint) {
            sinks.on_checkpoint(static_cast<int>(m.step / m.config.steps_per_epoch), m);
        }
    }
}

// n synthetic positives from the generator in infer mode.
inline ImageDataset generate_images(GanModel& m, int n, Rng& rng) {
    if (n < 1) throw ConfigError("generate_images: n must be >= 1");
    ImageDataset out;
    out.name = "synthetic";
    int done = 0;
    while (done < n) {
        const int take = std::min(64, n - done);
        Tensor z = m.sample_noise(take, rng);
        Tensor imgs = network_infer(m.gen_spec, m.gen_params, z);
        const int64_t px = static_cast<int64_t>(m.config.image_size) * m.config.image_size;
        for (int i = 0; i < take; ++i) {
            Tensor one({1, m.config.image_size, m.config.image_size});
            std::copy(imgs.data() + i * px, imgs.data() + (i + 1) * px, one.data());
            out.push(std::move(one), 1, Provenance::synthetic);
        }
        done += take;
    }
    return out;
}

// --- checkpointing -------------------------------------------------------------



inline Checkpoint gan_checkpoint(const GanModel& m) {
    Checkpoint ck;
    ck.meta["gan/step"] = static_cast<uint64_t>(m.step);
    ck.meta["gan/z_dim"] = static_cast<uint64_t>(m.config.z_dim);
    ck.meta["gan/image_size"] = static_cast<uint64_t>(m.config.image_size);
    ck.meta["gan/use_batchnorm"] = m.config.use_batchnorm ? 1 : 0;
    ck.put_f64("gan/leaky_slope", m.config.leaky_slope);
    ck.put_f64("gan/dropout_rate", m.config.dropout_rate);
    ck.put_f64("gan/lr", m.config.lr);
    ck.put_f64("gan/beta1", m.config.beta1);
    ck.put_f64("gan/beta2", m.config.beta2);
    ck.meta["gan/seed"] = m.config.seed;
    ck.put_rng("rng/noise", m.noise_rng);
    ck.put_rng("rng/dropout", m.dropout_rng);
    ck.put_rng("rng/shuffle", m.shuffle_rng);
    ck.meta["trainer/data_cursor"] = m.data_cursor;
    if (!m.data_order.empty()) {
        Tensor order({static_cast<int>(m.data_order.size())});
        for (size_t i = 0; i < m.data_order.size(); ++i) {
            order[static_cast<int64_t>(i)] = static_cast<double>(m.data_order[i]);
        }
        ck.tensors.emplace("trainer/data_order", std::move(order));
    }
    detail::pack_store(ck, "gen", m.gen_params);
    detail::pack_store(ck, "disc", m.disc_params);
    detail::pack_adam(ck, "gen", m.gen_opt);
    detail::pack_adam(ck, "disc", m.disc_opt);
    return ck;
}

// Rebuilds a model from a checkpoint. Schedule fields (epochs, steps,
// batch size, sample cadence) come from cfg; architecture fields must match
// the checkpoint and are taken from it.
inline GanModel gan_from_checkpoint(const Checkpoint& ck, GanConfig cfg) {
    cfg.z_dim = static_cast<int>(ck.require_meta("gan/z_dim"));
    cfg.image_size = static_cast<int>(ck.require_meta("gan/image_size"));
    cfg.use_batchnorm = ck.require_meta("gan/use_batchnorm") != 0;
    cfg.leaky_slope = ck.get_f64("gan/leaky_slope");
    cfg.dropout_rate = ck.get_f64("gan/dropout_rate");
    cfg.lr = ck.get_f64("gan/lr");
    cfg.beta1 = ck.get_f64("gan/beta1");
    cfg.beta2 = ck.get_f64("gan/beta2");
    cfg.seed = ck.require_meta("gan/seed");

    GanModel m = GanModel::create(cfg);
    m.step = static_cast<int64_t>(ck.require_meta("gan/step"));
    detail::unpack_store(ck, "gen", m.gen_params);
    detail::unpack_store(ck, "disc", m.disc_params);
    detail::unpack_adam(ck, "gen", m.gen_opt);
    detail::unpack_adam(ck, "disc", m.disc_opt);
    m.noise_rng = ck.get_rng("rng/noise");
    m.dropout_rng = ck.get_rng("rng/dropout");
    m.shuffle_rng = ck.get_rng("rng/shuffle");
    m.data_cursor = ck.require_meta("trainer/data_cursor");
    m.data_order.clear();
    auto it = ck.tensors.find("trainer/data_order");
    if (it != ck.tensors.end()) {
        for (int64_t i = 0; i < it->second.size(); ++i) {
            m.data_order.push_back(static_cast<size_t>(it->second[i]));
        }
    }
    return m;
}

}  // namespace advsyn
