#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/model.hpp"
#include "dpmlat/rng.hpp"
#include "dpmlat/schedule.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// TinyDenoiser: a two-hidden-layer fully connected eps-predictor with a
// learned time-embedding vector per step (and an optional label embedding).
//
//   a1 = W1 x + b1 + E_time[t] (+ E_label[c]),  h1 = tanh(a1)
//   a2 = W2 h1 + b2,                            h2 = tanh(a2)
//   out = W3 h2 + b3
//
// tanh keeps the map smooth everywhere so the hand-derived VJP is exact.
// Parameters live in one flat vector (layout below) so the trainer and the
// serializer share a single view of the model.
// ---------------------------------------------------------------------------

struct TinyDenoiser {
    int data_dim = 0;
    int hidden1 = 0;
    int hidden2 = 0;
    int steps = 0;
    int n_labels = 0;  // 0 = unconditional
    Vec params;        // [W1 | b1 | Etime | Elabel | W2 | b2 | W3 | b3], row-major

    TinyDenoiser() = default;
    TinyDenoiser(int d, int h1, int h2, int T, int labels = 0)
        : data_dim(d), hidden1(h1), hidden2(h2), steps(T), n_labels(labels),
          params(param_count(), 0.0) {
        if (d < 1 || h1 < 1 || h2 < 1 || T < 1 || labels < 0)
            throw ValidationError("denoiser", "bad denoiser dimensions");
        if (param_count() > 100000)
            throw ValidationError("denoiser", "parameter budget exceeded (1e5)");
    }

    std::size_t o_w1() const { return 0; }
    std::size_t o_b1() const { return o_w1() + static_cast<std::size_t>(hidden1) * data_dim; }
    std::size_t o_et() const { return o_b1() + static_cast<std::size_t>(hidden1); }
    std::size_t o_ec() const { return o_et() + static_cast<std::size_t>(steps) * hidden1; }
    std::size_t o_w2() const { return o_ec() + static_cast<std::size_t>(n_labels) * hidden1; }
    std::size_t o_b2() const { return o_w2() + static_cast<std::size_t>(hidden2) * hidden1; }
    std::size_t o_w3() const { return o_b2() + static_cast<std::size_t>(hidden2); }
    std::size_t o_b3() const { return o_w3() + static_cast<std::size_t>(data_dim) * hidden2; }
    std::size_t param_count() const { return o_b3() + static_cast<std::size_t>(data_dim); }

    struct Cache {
        Vec a1, h1, a2, h2, out;
    };

    void check_cond(ConditionLabel cond) const {
        if (cond.has_value() && (n_labels == 0 || cond.value() >= n_labels))
            throw ValidationError("denoiser", "condition label outside the declared set");
    }

    Cache forward_cached(const Vec& x, int t, ConditionLabel cond = {}) const {
        if (static_cast<int>(x.size()) != data_dim)
            throw DimensionMismatch("denoiser", "input dim");
        if (t < 1 || t > steps) throw IndexOutOfRange("denoiser", "step out of range");
        check_cond(cond);
        Cache c;
        c.a1.assign(static_cast<std::size_t>(hidden1), 0.0);
        const double* W1 = params.data() + o_w1();
        const double* b1 = params.data() + o_b1();
        const double* Et = params.data() + o_et() + static_cast<std::size_t>(t - 1) * hidden1;
        const double* Ec = cond.has_value()
                               ? params.data() + o_ec() + static_cast<std::size_t>(cond.value()) * hidden1
                               : nullptr;
        for (int i = 0; i < hidden1; ++i) {
            double s = b1[i] + Et[i] + (Ec ? Ec[i] : 0.0);
            const double* row = W1 + static_cast<std::size_t>(i) * data_dim;
            for (int j = 0; j < data_dim; ++j) s += row[j] * x[static_cast<std::size_t>(j)];
            c.a1[static_cast<std::size_t>(i)] = s;
        }
        c.h1.resize(c.a1.size());
        for (std::size_t i = 0; i < c.a1.size(); ++i) c.h1[i] = std::tanh(c.a1[i]);

        c.a2.assign(static_cast<std::size_t>(hidden2), 0.0);
        const double* W2 = params.data() + o_w2();
        const double* b2 = params.data() + o_b2();
        for (int i = 0; i < hidden2; ++i) {
            double s = b2[i];
            const double* row = W2 + static_cast<std::size_t>(i) * hidden1;
            for (int j = 0; j < hidden1; ++j) s += row[j] * c.h1[static_cast<std::size_t>(j)];
            c.a2[static_cast<std::size_t>(i)] = s;
        }
        c.h2.resize(c.a2.size());
        for (std::size_t i = 0; i < c.a2.size(); ++i) c.h2[i] = std::tanh(c.a2[i]);

        c.out.assign(static_cast<std::size_t>(data_dim), 0.0);
        const double* W3 = params.data() + o_w3();
        const double* b3 = params.data() + o_b3();
        for (int i = 0; i < data_dim; ++i) {
            double s = b3[i];
            const double* row = W3 + static_cast<std::size_t>(i) * hidden2;
            for (int j = 0; j < hidden2; ++j) s += row[j] * c.h2[static_cast<std::size_t>(j)];
            c.out[static_cast<std::size_t>(i)] = s;
        }
        return c;
    }

    Vec forward(const Vec& x, int t, ConditionLabel cond = {}) const {
        return forward_cached(x, t, cond).out;
    }

    // J^T u with J = d out / d x.
    Vec input_vjp(const Vec& x, int t, ConditionLabel cond, const Vec& u) const {
        Cache c = forward_cached(x, t, cond);
        return input_vjp_cached(c, u);
    }

    Vec input_vjp_cached(const Cache& c, const Vec& u) const {
        if (static_cast<int>(u.size()) != data_dim)
            throw DimensionMismatch("denoiser", "cotangent dim");
        Vec d2(static_cast<std::size_t>(hidden2), 0.0);
        const double* W3 = params.data() + o_w3();
        for (int i = 0; i < data_dim; ++i) {
            const double* row = W3 + static_cast<std::size_t>(i) * hidden2;
            double ui = u[static_cast<std::size_t>(i)];
            for (int j = 0; j < hidden2; ++j) d2[static_cast<std::size_t>(j)] += row[j] * ui;
        }
        for (int j = 0; j < hidden2; ++j)
            d2[static_cast<std::size_t>(j)] *= 1.0 - c.h2[static_cast<std::size_t>(j)] * c.h2[static_cast<std::size_t>(j)];

        Vec d1(static_cast<std::size_t>(hidden1), 0.0);
        const double* W2 = params.data() + o_w2();
        for (int i = 0; i < hidden2; ++i) {
            const double* row = W2 + static_cast<std::size_t>(i) * hidden1;
            double di = d2[static_cast<std::size_t>(i)];
            for (int j = 0; j < hidden1; ++j) d1[static_cast<std::size_t>(j)] += row[j] * di;
        }
        for (int j = 0; j < hidden1; ++j)
            d1[static_cast<std::size_t>(j)] *= 1.0 - c.h1[static_cast<std::size_t>(j)] * c.h1[static_cast<std::size_t>(j)];

        Vec dx(static_cast<std::size_t>(data_dim), 0.0);
        const double* W1 = params.data() + o_w1();
        for (int i = 0; i < hidden1; ++i) {
            const double* row = W1 + static_cast<std::size_t>(i) * data_dim;
            double di = d1[static_cast<std::size_t>(i)];
            for (int j = 0; j < data_dim; ++j) dx[static_cast<std::size_t>(j)] += row[j] * di;
        }
        return dx;
    }

    // Accumulates parameter gradients for one sample given dL/dout.
    void accumulate_param_grad(const Vec& x, int t, ConditionLabel cond, const Cache& c,
                               const Vec& dout, Vec& grad) const {
        Vec d2(static_cast<std::size_t>(hidden2), 0.0);
        const double* W3 = params.data() + o_w3();
        double* gW3 = grad.data() + o_w3();
        double* gb3 = grad.data() + o_b3();
        for (int i = 0; i < data_dim; ++i) {
            double di = dout[static_cast<std::size_t>(i)];
            gb3[i] += di;
            const double* row = W3 + static_cast<std::size_t>(i) * hidden2;
            double* grow = gW3 + static_cast<std::size_t>(i) * hidden2;
            for (int j = 0; j < hidden2; ++j) {
                grow[j] += di * c.h2[static_cast<std::size_t>(j)];
                d2[static_cast<std::size_t>(j)] += row[j] * di;
            }
        }
        for (int j = 0; j < hidden2; ++j)
            d2[static_cast<std::size_t>(j)] *= 1.0 - c.h2[static_cast<std::size_t>(j)] * c.h2[static_cast<std::size_t>(j)];

        Vec d1(static_cast<std::size_t>(hidden1), 0.0);
        const double* W2 = params.data() + o_w2();
        double* gW2 = grad.data() + o_w2();
        double* gb2 = grad.data() + o_b2();
        for (int i = 0; i < hidden2; ++i) {
            double di = d2[static_cast<std::size_t>(i)];
            gb2[i] += di;
            const double* row = W2 + static_cast<std::size_t>(i) * hidden1;
            double* grow = gW2 + static_cast<std::size_t>(i) * hidden1;
            for (int j = 0; j < hidden1; ++j) {
                grow[j] += di * c.h1[static_cast<std::size_t>(j)];
                d1[static_cast<std::size_t>(j)] += row[j] * di;
            }
        }
        for (int j = 0; j < hidden1; ++j)
            d1[static_cast<std::size_t>(j)] *= 1.0 - c.h1[static_cast<std::size_t>(j)] * c.h1[static_cast<std::size_t>(j)];

        double* gW1 = grad.data() + o_w1();
        double* gb1 = grad.data() + o_b1();
        double* gEt = grad.data() + o_et() + static_cast<std::size_t>(t - 1) * hidden1;
        double* gEc = cond.has_value()
                          ? grad.data() + o_ec() + static_cast<std::size_t>(cond.value()) * hidden1
                          : nullptr;
        for (int i = 0; i < hidden1; ++i) {
            double di = d1[static_cast<std::size_t>(i)];
            gb1[i] += di;
            gEt[i] += di;
            if (gEc) gEc[i] += di;
            double* grow = gW1 + static_cast<std::size_t>(i) * data_dim;
            for (int j = 0; j < data_dim; ++j) grow[j] += di * x[static_cast<std::size_t>(j)];
        }
    }
};

inline Vec denoiser_vjp(const TinyDenoiser& d, const Vec& x_t, int t, const Vec& cotangent,
                        ConditionLabel cond = {}) {
    return d.input_vjp(x_t, t, cond, cotangent);
}

// ---------------------------------------------------------------------------
// Training: eps-prediction MSE (summed over coordinates, averaged over the
// batch, so a zero predictor scores exactly the data dimension). Adam with
// fixed draw order; a given seed reproduces the parameters bit for bit.
// ---------------------------------------------------------------------------

struct TrainConfig {
    int steps = 2000;
    double lr = 2e-3;
    int batch = 32;
    std::uint64_t seed = 0;
    int hidden1 = 64;
    int hidden2 = 64;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (steps < 1 || batch < 1 || lr <= 0.0)
            throw ValidationError("denoiser", "bad training config");
    }
};

struct TrainResult {
    TinyDenoiser net;
    double final_loss = 0.0;
};

inline TrainResult denoiser_train(const std::vector<Vec>& data, const NoiseSchedule& s,
                                  const TrainConfig& cfg,
                                  const std::vector<int>& labels = {}) {
    cfg.validate();
    if (data.empty()) throw ValidationError("denoiser", "training data is empty");
    int d = static_cast<int>(data[0].size());
    int n_labels = 0;
    if (!labels.empty()) {
        if (labels.size() != data.size())
            throw DimensionMismatch("denoiser", "labels vs data size");
        for (int l : labels) n_labels = std::max(n_labels, l + 1);
    }

    TinyDenoiser net(d, cfg.hidden1, cfg.hidden2, s.steps(), n_labels);
    Rng rng(cfg.seed, 0);

    // Scaled uniform init; embeddings and final bias start at zero.
    auto init_block = [&](std::size_t off, std::size_t count, int fan_in) {
        double a = std::sqrt(6.0 / (fan_in > 0 ? fan_in : 1));
        for (std::size_t i = 0; i < count; ++i) net.params[off + i] = rng.uniform(-a, a);
    };
    init_block(net.o_w1(), static_cast<std::size_t>(net.hidden1) * d, d);
    init_block(net.o_w2(), static_cast<std::size_t>(net.hidden2) * net.hidden1, net.hidden1);
    init_block(net.o_w3(), static_cast<std::size_t>(d) * net.hidden2, net.hidden2);

    std::size_t P = net.param_count();
    Vec grad(P, 0.0), m1(P, 0.0), m2(P, 0.0);
    double loss = 0.0;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
            int t = static_cast<int>(rng.uniform_int(1, s.steps()));
            ConditionLabel cond;
            if (n_labels > 0) cond = ConditionLabel(labels[i]);
            Vec eps = rng.normal_vec(static_cast<std::size_t>(d));
            Vec x_t = forward_marginal(s, data[i], t, eps);
            TinyDenoiser::Cache c = net.forward_cached(x_t, t, cond);
            Vec dout(static_cast<std::size_t>(d));
            for (int k = 0; k < d; ++k) {
                double r = c.out[static_cast<std::size_t>(k)] - eps[static_cast<std::size_t>(k)];
                loss += r * r;
                dout[static_cast<std::size_t>(k)] = 2.0 * r / cfg.batch;
            }
            net.accumulate_param_grad(x_t, t, cond, c, dout, grad);
        }
        loss /= cfg.batch;
        if (!std::isfinite(loss))
            throw DivergenceError("denoiser", "training loss became non-finite", step, loss);

        double bc1 = 1.0 - std::pow(cfg.adam_beta1, step);
        double bc2 = 1.0 - std::pow(cfg.adam_beta2, step);
        for (std::size_t p = 0; p < P; ++p) {
            m1[p] = cfg.adam_beta1 * m1[p] + (1.0 - cfg.adam_beta1) * grad[p];
            m2[p] = cfg.adam_beta2 * m2[p] + (1.0 - cfg.adam_beta2) * grad[p] * grad[p];
            net.params[p] -= cfg.lr * (m1[p] / bc1) / (std::sqrt(m2[p] / bc2) + cfg.adam_eps);
        }
    }
    return {std::move(net), loss};
}

// ---------------------------------------------------------------------------
// MeanEstimator adapter: the network is the eps-predictor of the DDPM/DDIM
// step formulas.
// ---------------------------------------------------------------------------

class DenoiserMeanEstimator : public X0PredictingEstimator {
public:
    DenoiserMeanEstimator(std::shared_ptr<const TinyDenoiser> net,
                          std::shared_ptr<const NoiseSchedule> s, StepKind kind)
        : X0PredictingEstimator(std::move(s), kind), net_(std::move(net)) {
        if (net_->steps != schedule().steps())
            throw DimensionMismatch("denoiser", "network steps vs schedule T");
    }

    int dim() const override { return net_->data_dim; }

    bool supports(ConditionLabel cond) const override {
        return !cond.has_value() || cond.value() < net_->n_labels;
    }

    Vec eps_hat(const Vec& x_t, int t, ConditionLabel cond = {}) const override {
        return net_->forward(x_t, t, cond);
    }

    Vec eps_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cot) const override {
        return net_->input_vjp(x_t, t, cond, cot);
    }

    Vec x0_hat(const Vec& x_t, int t, ConditionLabel cond = {}) const override {
        double ab = schedule().alpha_bar(t);
        double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
        Vec e = eps_hat(x_t, t, cond);
        Vec r(x_t.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = (x_t[i] - b * e[i]) * inv;
        return r;
    }

    Vec x0_vjp(const Vec& x_t, int t, ConditionLabel cond, const Vec& cot) const override {
        double ab = schedule().alpha_bar(t);
        double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
        Vec ev = eps_vjp(x_t, t, cond, cot);
        Vec r(cot.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = (cot[i] - b * ev[i]) * inv;
        return r;
    }

private:
    std::shared_ptr<const TinyDenoiser> net_;
};

}  // namespace dpmlat
