#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/tape.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

// Inside every loss, each log argument is clamped against its singular end:
// log(p) becomes log(max(p, kProbEps)) and log(1-p) becomes
// log(1 - min(p, 1-kProbEps)). Raw 0/1 probabilities stay finite, perfect
// inputs still give an exact zero loss, and where the clamp is active the
// loss is constant so its gradient there is exactly zero.
inline constexpr double kProbEps = 1e-7;

namespace detail {

inline double clamp_lo(double p) { return p < kProbEps ? kProbEps : p; }
inline double clamp_hi(double p) { return p > 1.0 - kProbEps ? 1.0 - kProbEps : p; }

inline void require_batch(const Tensor& t, const char* op) {
    if (t.size() < 1) throw DataError(std::string(op) + ": empty batch");
}

// mean over the batch of log(max(p, eps))
inline double mean_log(const Tensor& p) {
    double s = 0.0;
    for (int64_t i = 0; i < p.size(); ++i) s += std::log(clamp_lo(p[i]));
    return s / static_cast<double>(p.size());
}

// mean over the batch of log(1 - min(p, 1-eps))
inline double mean_log1m(const Tensor& p) {
    double s = 0.0;
    for (int64_t i = 0; i < p.size(); ++i) s += std::log(1.0 - clamp_hi(p[i]));
    return s / static_cast<double>(p.size());
}

}  // namespace detail

// Adversarial value function: mean[log D(x)] + mean[log(1 - D(G(z)))].
// Diagnostic only; the trainable losses below relate to it by
// discriminator_loss == -gan_value at matching inputs, exactly.
inline double gan_value(const Tensor& d_real, const Tensor& d_fake) {
    detail::require_batch(d_real, "gan_value");
    detail::require_batch(d_fake, "gan_value");
    return detail::mean_log(d_real) + detail::mean_log1m(d_fake);
}

// L_D = -mean[log D(x)] - mean[log(1 - D(G(z)))]
inline Tape::Id discriminator_loss(Tape& t, Tape::Id d_real_id, Tape::Id d_fake_id) {
    const Tensor& r = t.value(d_real_id);
    const Tensor& f = t.value(d_fake_id);
    detail::require_batch(r, "discriminator_loss");
    detail::require_batch(f, "discriminator_loss");
    Tensor y = Tensor::scalar(-(detail::mean_log(r) + detail::mean_log1m(f)));

    auto backward = [d_real_id, d_fake_id](Tape& tp, Tape::Id out) {
        const double g = tp.grad(out)[0];
        if (tp.requires_grad(d_real_id)) {
            const Tensor& r_v = tp.value(d_real_id);
            const double inv_n = 1.0 / static_cast<double>(r_v.size());
            Tensor dr(r_v.shape());
            for (int64_t i = 0; i < r_v.size(); ++i) {
                dr[i] = r_v[i] > kProbEps ? g * (-inv_n / r_v[i]) : 0.0;
            }
            tp.add_grad(d_real_id, dr);
        }
        if (tp.requires_grad(d_fake_id)) {
            const Tensor& f_v = tp.value(d_fake_id);
            const double inv_n = 1.0 / static_cast<double>(f_v.size());
            Tensor df(f_v.shape());
            for (int64_t i = 0; i < f_v.size(); ++i) {
                df[i] = f_v[i] < 1.0 - kProbEps ? g * (inv_n / (1.0 - f_v[i])) : 0.0;
            }
            tp.add_grad(d_fake_id, df);
        }
    };
    return t.push(std::move(y), {d_real_id, d_fake_id}, backward);
}

// Non-saturating generator loss: L_G = -mean[log D(G(z))]
inline Tape::Id generator_loss(Tape& t, Tape::Id d_fake_id) {
    const Tensor& f = t.value(d_fake_id);
    detail::require_batch(f, "generator_loss");
    Tensor y = Tensor::scalar(-detail::mean_log(f));

    auto backward = [d_fake_id](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(d_fake_id)) return;
        const double g = tp.grad(out)[0];
        const Tensor& f_v = tp.value(d_fake_id);
        const double inv_n = 1.0 / static_cast<double>(f_v.size());
        Tensor df(f_v.shape());
        for (int64_t i = 0; i < f_v.size(); ++i) {
            df[i] = f_v[i] > kProbEps ? g * (-inv_n / f_v[i]) : 0.0;
        }
        tp.add_grad(d_fake_id, df);
    };
    return t.push(std::move(y), {d_fake_id}, backward);
}

// L = -mean[y log p + (1-y) log(1-p)] with y in {0,1}.
inline Tape::Id binary_cross_entropy(Tape& t, Tape::Id pred_id, const Tensor& targets) {
    const Tensor& p = t.value(pred_id);
    detail::require_batch(p, "binary_cross_entropy");
    if (p.size() != targets.size()) {
        throw ShapeError("binary_cross_entropy: " + std::to_string(p.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
    }
    for (int64_t i = 0; i < targets.size(); ++i) {
        if (targets[i] != 0.0 && targets[i] != 1.0) {
            throw DataError("binary_cross_entropy: target at index " + std::to_string(i) +
                            " is not a 0/1 label");
        }
    }
    double s = 0.0;
    for (int64_t i = 0; i < p.size(); ++i) {
        s += targets[i] == 1.0 ? std::log(detail::clamp_lo(p[i]))
                               : std::log(1.0 - detail::clamp_hi(p[i]));
    }
    Tensor y = Tensor::scalar(-s / static_cast<double>(p.size()));

    auto targets_copy = std::make_shared<Tensor>(targets);
    auto backward = [pred_id, targets_copy](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(pred_id)) return;
        const double g = tp.grad(out)[0];
        const Tensor& p_v = tp.value(pred_id);
        const double inv_n = 1.0 / static_cast<double>(p_v.size());
        Tensor dp(p_v.shape());
        for (int64_t i = 0; i < p_v.size(); ++i) {
            if ((*targets_copy)[i] == 1.0) {
                dp[i] = p_v[i] > kProbEps ? g * (-inv_n / p_v[i]) : 0.0;
            } else {
                dp[i] = p_v[i] < 1.0 - kProbEps ? g * (inv_n / (1.0 - p_v[i])) : 0.0;
            }
        }
        tp.add_grad(pred_id, dp);
    };
    return t.push(std::move(y), {pred_id}, backward);
}

// lambda * sum over all listed parameters of p^2.
inline Tape::Id l2_penalty(Tape& t, const std::vector<Tape::Id>& param_ids, double lambda) {
    if (lambda < 0.0) throw ConfigError("l2_penalty: lambda must be non-negative");
    double s = 0.0;
    for (Tape::Id id : param_ids) {
        const Tensor& p = t.value(id);
        for (int64_t i = 0; i < p.size(); ++i) s += p[i] * p[i];
    }
    Tensor y = Tensor::scalar(lambda * s);

    auto ids = std::make_shared<std::vector<Tape::Id>>(param_ids);
    auto backward = [ids, lambda](Tape& tp, Tape::Id out) {
        const double g = tp.grad(out)[0];
        for (Tape::Id id : *ids) {
            if (!tp.requires_grad(id)) continue;
            const Tensor& p = tp.value(id);
            Tensor dp(p.shape());
            for (int64_t i = 0; i < p.size(); ++i) dp[i] = g * 2.0 * lambda * p[i];
            tp.add_grad(id, dp);
        }
    };
    return t.push(std::move(y), param_ids, backward);
}

}  // namespace advsyn
