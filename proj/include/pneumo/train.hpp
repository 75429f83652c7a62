#ifndef PNEUMO_TRAIN_HPP
#define PNEUMO_TRAIN_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "pneumo/model.hpp"
#include "pneumo/tensor.hpp"

namespace pneumo {

struct PlateauConfig {
    double factor = 0.5;
    int patience = 2;
    double min_delta = 1e-4;
    double min_lr = 1e-6;
};

struct EarlyStopConfig {
    int patience = 4;
    double min_delta = 1e-4;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 32;
    int max_epochs = 10;
    PlateauConfig plateau;
    EarlyStopConfig early_stop;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;  // rate in effect during this epoch
};

// Binary cross-entropy over a probability batch. Probabilities are clamped to
// [1e-7, 1-1e-7] before the log; the returned gradient is d(mean loss)/dp at
// the clamped values.
template <typename T>
std::pair<double, TensorT<T>> bce_loss(const TensorT<T>& p, const std::vector<int>& y) {
    if (p.numel() != y.size()) {
        throw ShapeError("bce: got " + std::to_string(p.numel()) + " probabilities for " +
                         std::to_string(y.size()) + " labels");
    }
    if (p.numel() == 0) throw ShapeError("bce: empty batch");
    const double clamp_lo = 1e-7, clamp_hi = 1.0 - 1e-7;
    const double n = static_cast<double>(p.numel());
    double loss = 0.0;
    TensorT<T> grad(p.shape(), T(0));
    for (std::size_t i = 0; i < p.numel(); ++i) {
        if (y[i] != 0 && y[i] != 1) {
            throw ValueError("bce: label must be 0 or 1, got " + std::to_string(y[i]));
        }
        double pi = static_cast<double>(p[i]);
        if (!(pi >= 0.0 && pi <= 1.0)) {
            throw ValueError("bce: probability outside [0,1]");
        }
        pi = std::min(std::max(pi, clamp_lo), clamp_hi);
        if (y[i] == 1) {
            loss -= std::log(pi);
            grad[i] = static_cast<T>(-1.0 / (pi * n));
        } else {
            loss -= std::log(1.0 - pi);
            grad[i] = static_cast<T>(1.0 / ((1.0 - pi) * n));
        }
    }
    return {loss / n, std::move(grad)};
}

// Adam with bias correction. Moments are zero-initialized; the step counter
// is incremented before the corrections are applied.
template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<TensorT<T>*> params, const TrainConfig& cfg)
        : params_(std::move(params)), lr_(cfg.learning_rate),
          beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {
        for (const TensorT<T>* p : params_) {
            m_.emplace_back(p->shape(), T(0));
            v_.emplace_back(p->shape(), T(0));
        }
    }

    void step(const std::vector<TensorT<T>*>& grads) {
        if (grads.size() != params_.size()) {
            throw ValueError("adam: gradient list does not match parameter list");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            TensorT<T>& p = *params_[i];
            const TensorT<T>& g = *grads[i];
            if (!p.same_shape(g)) {
                throw ValueError("adam: gradient shape does not match parameter shape");
            }
            TensorT<T>& m = m_[i];
            TensorT<T>& v = v_[i];
            for (std::size_t j = 0; j < p.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
                const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                p[j] = static_cast<T>(static_cast<double>(p[j]) -
                                      lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    std::int64_t step_count() const { return t_; }

private:
    std::vector<TensorT<T>*> params_;
    std::vector<TensorT<T>> m_, v_;
    std::int64_t t_ = 0;
    double lr_, beta1_, beta2_, eps_;
};

// Halves the learning rate (by `factor`, floored at min_lr) once the
// validation loss has failed to improve by min_delta for more than
// `patience` consecutive epochs.
class ReduceLROnPlateau {
public:
    ReduceLROnPlateau(const PlateauConfig& cfg, double initial_lr)
        : cfg_(cfg), lr_(initial_lr) {}

    // Call once per epoch end; returns the learning rate for the next epoch.
    double update(double val_loss) {
        if (val_loss < best_ - cfg_.min_delta) {
            best_ = val_loss;
            stale_ = 0;
        } else {
            ++stale_;
        }
        if (stale_ > cfg_.patience) {
            lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
            stale_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    PlateauConfig cfg_;
    double lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
};

// Halts training once the validation loss has failed to improve by min_delta
// for more than `patience` consecutive epochs.
class EarlyStopping {
public:
    explicit EarlyStopping(const EarlyStopConfig& cfg) : cfg_(cfg) {}

    // Call once per epoch end; returns true when training should halt.
    bool update(double val_loss) {
        if (val_loss < best_ - cfg_.min_delta) {
            best_ = val_loss;
            stale_ = 0;
        } else {
            ++stale_;
        }
        if (stale_ > cfg_.patience) halted_ = true;
        return halted_;
    }

    bool halted() const { return halted_; }

private:
    EarlyStopConfig cfg_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
    bool halted_ = false;
};

// Preprocessed samples ready for the model: images are (C,H,W) in [0,1].
struct Dataset {
    std::vector<Tensor> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

// Eval-mode loss and accuracy over a dataset, batches taken in order.
std::pair<double, double> evaluate(Model& model, const Dataset& data, int batch_size);

// The epoch loop: seeded shuffle, mini-batches, forward/BCE/backward/Adam,
// Eval-mode validation, then both callbacks. Stops at max_epochs or when
// early stopping halts. Returns one log entry per completed epoch.
std::vector<EpochLog> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                            const TrainConfig& cfg);

} // namespace pneumo

#endif
