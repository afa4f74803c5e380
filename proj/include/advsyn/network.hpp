#pragma once

#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/losses.hpp"
#include "advsyn/ops.hpp"
#include "advsyn/optim.hpp"
#include "advsyn/rng.hpp"
#include "advsyn/tape.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

// Declarative layer stack. A NetworkSpec plus a ParamStore fully determine
// the forward pass; trainers rebuild the tape from them every step.

struct DenseLayer {
    int in = 0, out = 0;
};
struct Conv2dLayer {
    int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
};
struct ConvT2dLayer {
    int in_ch = 0, out_ch = 0, kernel = 4, stride = 2, pad = 1;
};
struct ActivationLayer {
    ActKind kind = ActKind::relu;
    double alpha = 0.0;
};
struct BatchNormLayer {
    int channels = 0;
    double momentum = 0.9, epsilon = 1e-5;
};
struct DropoutLayer {
    double rate = 0.0;
};
struct MaxPoolLayer {
    int window = 2, stride = 2;
};
struct GlobalAvgPoolLayer {};
struct FlattenLayer {};
// Per-sample target shape; the batch dimension is kept.
struct ReshapeLayer {
    std::vector<int> sample_shape;
};

using LayerSpec = std::variant<DenseLayer, Conv2dLayer, ConvT2dLayer, ActivationLayer,
                               BatchNormLayer, DropoutLayer, MaxPoolLayer, GlobalAvgPoolLayer,
                               FlattenLayer, ReshapeLayer>;

struct NetworkSpec {
    std::string name;
    std::vector<LayerSpec> layers;
};

// Named parameter tensors plus batchnorm running stats. Parameter names are
// "<net>/<layer-index>/<role>", e.g. "gen/2/weight". Iteration is in name
// order (std::map), which fixes initialization and update order.
struct ParamStore {
    std::map<std::string, Tensor> params;       // trainable
    std::map<std::string, BatchNormState> bn;   // per batchnorm layer index

    Tensor& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw Error("param store: no parameter named '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw Error("param store: no parameter named '" + name + "'");
        return it->second;
    }
};

namespace detail {

inline std::string param_name(const std::string& net, size_t layer, const char* role) {
    return net + "/" + std::to_string(layer) + "/" + role;
}

}  // namespace detail

// Conv/dense weights ~ Normal(0, 0.02); biases 0; batchnorm gamma 1, beta 0.
// Draw order is layer order, elements row-major, from the caller's stream.
inline ParamStore init_weights(const NetworkSpec& spec, Rng& rng) {
    ParamStore store;
    auto fill_normal = [&rng](Tensor& t) {
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, 0.02);
    };
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& layer = spec.layers[li];
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            Tensor w({d->in, d->out});
            fill_normal(w);
            store.params.emplace(detail::param_name(spec.name, li, "weight"), std::move(w));
            store.params.emplace(detail::param_name(spec.name, li, "bias"), Tensor::zeros({d->out}));
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            Tensor w({c->out_ch, c->in_ch, c->kernel, c->kernel});
            fill_normal(w);
            store.params.emplace(detail::param_name(spec.name, li, "weight"), std::move(w));
            store.params.emplace(detail::param_name(spec.name, li, "bias"),
                                 Tensor::zeros({c->out_ch}));
        } else if (const auto* ct = std::get_if<ConvT2dLayer>(&layer)) {
            Tensor w({ct->in_ch, ct->out_ch, ct->kernel, ct->kernel});
            fill_normal(w);
            store.params.emplace(detail::param_name(spec.name, li, "weight"), std::move(w));
            store.params.emplace(detail::param_name(spec.name, li, "bias"),
                                 Tensor::zeros({ct->out_ch}));
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            store.params.emplace(detail::param_name(spec.name, li, "gamma"),
                                 Tensor::full({bn->channels}, 1.0));
            store.params.emplace(detail::param_name(spec.name, li, "beta"),
                                 Tensor::zeros({bn->channels}));
            store.bn.emplace(detail::param_name(spec.name, li, "stats"),
                             BatchNormState::init(bn->channels));
        }
    }
    return store;
}

// Parameter leaves inserted for one tape. Running a network twice on the
// same tape against the same leaves (e.g. the discriminator on a real and a
// fake batch) accumulates both passes' gradients on those leaves.
struct ParamLeaves {
    std::vector<std::pair<std::string, Tape::Id>> ordered;  // layer order
    std::map<std::string, Tape::Id> by_name;

    Tape::Id at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("param leaves: no leaf for '" + name + "'");
        return it->second;
    }
};

// trainable=false inserts constants, freezing the parameters for this tape;
// gradients still flow through them to upstream inputs.
inline ParamLeaves insert_params(const NetworkSpec& spec, ParamStore& store, Tape& tape,
                                 bool trainable) {
    ParamLeaves leaves;
    auto add = [&](const std::string& name) {
        Tape::Id id = tape.leaf(store.at(name), trainable);
        leaves.ordered.emplace_back(name, id);
        leaves.by_name.emplace(name, id);
    };
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& layer = spec.layers[li];
        if (std::holds_alternative<DenseLayer>(layer) ||
            std::holds_alternative<Conv2dLayer>(layer) ||
            std::holds_alternative<ConvT2dLayer>(layer)) {
            add(detail::param_name(spec.name, li, "weight"));
            add(detail::param_name(spec.name, li, "bias"));
        } else if (std::holds_alternative<BatchNormLayer>(layer)) {
            add(detail::param_name(spec.name, li, "gamma"));
            add(detail::param_name(spec.name, li, "beta"));
        }
    }
    return leaves;
}

inline Tape::Id network_apply(const NetworkSpec& spec, ParamStore& store, Tape& tape,
                              Tape::Id input, Mode mode, Rng* dropout_rng,
                              const ParamLeaves& leaves) {
    Tape::Id cur = input;
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& layer = spec.layers[li];
        if (std::get_if<DenseLayer>(&layer)) {
            cur = dense(tape, cur, leaves.at(detail::param_name(spec.name, li, "weight")),
                        leaves.at(detail::param_name(spec.name, li, "bias")));
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            cur = conv2d(tape, cur, leaves.at(detail::param_name(spec.name, li, "weight")),
                         leaves.at(detail::param_name(spec.name, li, "bias")), c->stride, c->pad);
        } else if (const auto* ct = std::get_if<ConvT2dLayer>(&layer)) {
            cur = conv2d_transpose(tape, cur,
                                   leaves.at(detail::param_name(spec.name, li, "weight")),
                                   leaves.at(detail::param_name(spec.name, li, "bias")),
                                   ct->stride, ct->pad);
        } else if (const auto* a = std::get_if<ActivationLayer>(&layer)) {
            cur = activation(tape, cur, a->kind, a->alpha);
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            auto it = store.bn.find(detail::param_name(spec.name, li, "stats"));
            if (it == store.bn.end()) {
                throw Error("network_apply: missing batchnorm state for layer " +
                            std::to_string(li));
            }
            cur = batchnorm(tape, cur, leaves.at(detail::param_name(spec.name, li, "gamma")),
                            leaves.at(detail::param_name(spec.name, li, "beta")), it->second, mode,
                            bn->momentum, bn->epsilon);
        } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
            if (mode == Mode::train && dr->rate > 0.0 && dropout_rng == nullptr) {
                throw Error("network_apply: dropout in train mode needs an rng");
            }
            // In infer mode (or at rate 0) dropout is the identity and
            // draws nothing, so the placeholder rng is never consumed.
            Rng placeholder(0);
            cur = dropout(tape, cur, dr->rate, dropout_rng ? *dropout_rng : placeholder, mode);
        } else if (const auto* mp = std::get_if<MaxPoolLayer>(&layer)) {
            cur = maxpool2d(tape, cur, mp->window, mp->stride);
        } else if (std::get_if<GlobalAvgPoolLayer>(&layer)) {
            cur = global_avg_pool(tape, cur);
        } else if (std::get_if<FlattenLayer>(&layer)) {
            cur = flatten(tape, cur);
        } else if (const auto* rs = std::get_if<ReshapeLayer>(&layer)) {
            std::vector<int> full{tape.value(cur).dim(0)};
            full.insert(full.end(), rs->sample_shape.begin(), rs->sample_shape.end());
            cur = reshape(tape, cur, std::move(full));
        }
    }
    return cur;
}

struct ForwardResult {
    Tape::Id output = -1;
    ParamLeaves leaves;
};

inline ForwardResult network_forward(const NetworkSpec& spec, ParamStore& store, Tape& tape,
                                     Tape::Id input, Mode mode, Rng* dropout_rng = nullptr,
                                     bool train_params = true) {
    ForwardResult res;
    res.leaves = insert_params(spec, store, tape, train_params);
    res.output = network_apply(spec, store, tape, input, mode, dropout_rng, res.leaves);
    return res;
}

// Convenience inference pass: constants only, infer mode, returns values.
inline Tensor network_infer(const NetworkSpec& spec, ParamStore& store, const Tensor& input) {
    Tape tape;
    Tape::Id in = tape.constant(input);
    ForwardResult fr = network_forward(spec, store, tape, in, Mode::infer, nullptr, false);
    return tape.value(fr.output);
}

// One Adam step per trainable leaf from the tape's gradients.
inline void apply_gradients(const ParamLeaves& leaves, Tape& tape, ParamStore& store,
                            AdamOptimizer& opt) {
    for (const auto& [name, id] : leaves.ordered) {
        opt.step(name, store.at(name), tape.grad(id));
    }
}

// Shape of the activation after every layer, without touching any data.
// Throws ShapeError exactly where the real forward pass would.
inline std::vector<std::vector<int>> infer_layer_shapes(const NetworkSpec& spec,
                                                        std::vector<int> input_shape) {
    std::vector<std::vector<int>> shapes;
    std::vector<int> s = std::move(input_shape);
    auto expect_rank = [&s](int rank, const char* what) {
        if (static_cast<int>(s.size()) != rank) {
            throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             " input, got " + Tensor::shape_string(s));
        }
    };
    for (const LayerSpec& layer : spec.layers) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            expect_rank(2, "dense");
            if (s[1] != d->in) {
                throw ShapeError("dense: expected " + std::to_string(d->in) + " features, got " +
                                 std::to_string(s[1]));
            }
            s = {s[0], d->out};
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            expect_rank(4, "conv2d");
            if (s[1] != c->in_ch) {
                throw ShapeError("conv2d: expected " + std::to_string(c->in_ch) +
                                 " channels, got " + std::to_string(s[1]));
            }
            const int h = (s[2] + 2 * c->pad - c->kernel) / c->stride + 1;
            const int w = (s[3] + 2 * c->pad - c->kernel) / c->stride + 1;
            if (h < 1 || w < 1) throw ShapeError("conv2d: output collapses to zero size");
            s = {s[0], c->out_ch, h, w};
        } else if (const auto* ct = std::get_if<ConvT2dLayer>(&layer)) {
            expect_rank(4, "conv2d_transpose");
            if (s[1] != ct->in_ch) {
                throw ShapeError("conv2d_transpose: expected " + std::to_string(ct->in_ch) +
                                 " channels, got " + std::to_string(s[1]));
            }
            const int h = (s[2] - 1) * ct->stride - 2 * ct->pad + ct->kernel;
            const int w = (s[3] - 1) * ct->stride - 2 * ct->pad + ct->kernel;
            if (h < 1 || w < 1) throw ShapeError("conv2d_transpose: non-positive output size");
            s = {s[0], ct->out_ch, h, w};
        } else if (const auto* mp = std::get_if<MaxPoolLayer>(&layer)) {
            expect_rank(4, "maxpool2d");
            if (mp->window > s[2] || mp->window > s[3]) {
                throw ShapeError("maxpool2d: window larger than input");
            }
            s = {s[0], s[1], (s[2] - mp->window) / mp->stride + 1,
                 (s[3] - mp->window) / mp->stride + 1};
        } else if (std::get_if<GlobalAvgPoolLayer>(&layer)) {
            expect_rank(4, "global_avg_pool");
            s = {s[0], s[1]};
        } else if (std::get_if<FlattenLayer>(&layer)) {
            int64_t rest = 1;
            for (size_t i = 1; i < s.size(); ++i) rest *= s[i];
            s = {s[0], static_cast<int>(rest)};
        } else if (const auto* rs = std::get_if<ReshapeLayer>(&layer)) {
            int64_t have = 1;
            for (size_t i = 1; i < s.size(); ++i) have *= s[i];
            int64_t want = 1;
            for (int d : rs->sample_shape) want *= d;
            if (have != want) {
                throw ShapeError("reshape: cannot view " + std::to_string(have) +
                                 " elements as " + Tensor::shape_string(rs->sample_shape));
            }
            std::vector<int> full{s[0]};
            full.insert(full.end(), rs->sample_shape.begin(), rs->sample_shape.end());
            s = std::move(full);
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            expect_rank(4, "batchnorm");
            if (s[1] != bn->channels) {
                throw ShapeError("batchnorm: expected " + std::to_string(bn->channels) +
                                 " channels, got " + std::to_string(s[1]));
            }
        }
        // activation and dropout leave the shape unchanged
        shapes.push_back(s);
    }
    return shapes;
}

inline std::vector<int> infer_output_shape(const NetworkSpec& spec, std::vector<int> input_shape) {
    std::vector<std::vector<int>> shapes = infer_layer_shapes(spec, std::move(input_shape));
    if (shapes.empty()) throw Error("infer_output_shape: network has no layers");
    return shapes.back();
}

}  // namespace advsyn
