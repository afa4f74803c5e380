#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

// Recorded computation graph for reverse-mode differentiation.
//
// Every tensor that participates in a differentiable computation lives in a
// slot on the tape; ops execute eagerly, push one node per call, and return
// the slot id of their output. Nodes are appended in execution order, so the
// node list is already a topological order and backward() is a single
// reverse sweep that visits each node exactly once.
class Tape {
  public:
    using Id = int;

    // A node's backward rule reads grad(out) and accumulates into the grads
    // of its inputs. Rules capture whatever forward state they need.
    using BackwardFn = std::function<void(Tape&, Id out)>;

    Id leaf(Tensor value, bool requires_grad = false) {
        slots_.push_back(Slot{std::move(value), Tensor{}, requires_grad});
        return static_cast<Id>(slots_.size() - 1);
    }

    Id constant(Tensor value) { return leaf(std::move(value), false); }

    // Records an op. The output requires a gradient iff any input does;
    // the backward rule is only retained in that case.
    Id push(Tensor out_value, const std::vector<Id>& inputs, BackwardFn backward) {
        bool needs = false;
        for (Id in : inputs) needs = needs || requires_grad(in);
        slots_.push_back(Slot{std::move(out_value), Tensor{}, needs});
        const Id out = static_cast<Id>(slots_.size() - 1);
        if (needs) nodes_.push_back(Node{out, std::move(backward)});
        return out;
    }

    const Tensor& value(Id id) const { return slot(id).value; }
    Tensor& value_mut(Id id) { return slot(id).value; }
    bool requires_grad(Id id) const { return slot(id).requires_grad; }

    // Gradient of the last backward() loss w.r.t. this slot. Slots that
    // require a gradient but were untouched by the sweep read as zeros.
    const Tensor& grad(Id id) const {
        const Slot& s = slot(id);
        if (s.grad.empty()) {
            throw Error("tape: gradient not computed for this tensor; run backward() first");
        }
        return s.grad;
    }

    // Accumulates g into the slot's gradient, allocating zeros on first use.
    void add_grad(Id id, const Tensor& g) {
        Slot& s = slot(id);
        if (s.grad.empty()) {
            s.grad = Tensor::zeros(s.value.shape());
        }
        s.touched = true;
        double* dst = s.grad.data();
        const double* src = g.data();
        const int64_t n = s.grad.size();
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }

    bool has_grad(Id id) const { return !slot(id).grad.empty(); }

    // Reverse sweep from a scalar loss. Gradients of all requires_grad
    // slots are materialized (zero where the loss does not depend on them);
    // nodes whose output never received a gradient are skipped.
    void backward(Id loss) {
        Slot& ls = slot(loss);
        if (ls.value.size() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " + ls.value.shape_string());
        }
        for (Slot& s : slots_) {
            if (s.requires_grad) s.grad = Tensor::zeros(s.value.shape());
            s.touched = false;
        }
        if (!ls.requires_grad) ls.grad = Tensor::zeros(ls.value.shape());
        ls.grad[0] = 1.0;
        ls.touched = true;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!slot(it->output).touched) continue;
            it->backward(*this, it->output);
        }
    }

    size_t num_slots() const { return slots_.size(); }
    size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Slot {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool touched = false;
    };

    struct Node {
        Id output;
        BackwardFn backward;
    };

    const Slot& slot(Id id) const {
        if (id < 0 || static_cast<size_t>(id) >= slots_.size()) {
            throw Error("tape: tensor id " + std::to_string(id) + " is not on this tape");
        }
        return slots_[static_cast<size_t>(id)];
    }

    Slot& slot(Id id) {
        return const_cast<Slot&>(static_cast<const Tape*>(this)->slot(id));
    }

    std::deque<Slot> slots_;  // deque: references stay valid as ops append slots
    std::vector<Node> nodes_;
};

}  // namespace advsyn
