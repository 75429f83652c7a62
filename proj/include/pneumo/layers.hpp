#ifndef PNEUMO_LAYERS_HPP
#define PNEUMO_LAYERS_HPP

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "pneumo/tensor.hpp"

namespace pneumo {

// Dropout and batch-norm behavior switch on this flag and nothing else.
enum class Mode { Train, Eval };

// He (fan-in, normal) initialization: std = sqrt(2 / fan_in).
template <typename T>
void fill_he(TensorT<T>& w, int fan_in, SeededRng& rng) {
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.numel(); ++i) {
        w[i] = static_cast<T>(rng.normal() * std);
    }
}

// Base for all layers. forward() in Train mode caches whatever the backward
// pass needs; Eval forward writes no member state, so a model in Eval mode is
// shareable across workers. backward() consumes the cache (one-shot) and
// leaves parameter gradients in grads().
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* rng = nullptr) = 0;
    virtual TensorT<T> backward(const TensorT<T>& grad_out) = 0;

    virtual std::vector<TensorT<T>*> params() { return {}; }
    virtual std::vector<TensorT<T>*> grads() { return {}; }

    virtual const char* kind() const = 0;

protected:
    void require_cache(bool have, const char* who) {
        if (!have) {
            throw ValueError(std::string(who) +
                             ": backward requires a preceding Train-mode forward on this layer");
        }
    }
};

// 2-d cross-correlation, stride 1, zero padding chosen so the spatial size is
// preserved (kernel size must be odd). Weights are [out,in,k,k], bias [out].
template <typename T>
class Conv2d : public Layer<T> {
public:
    Conv2d(int in_channels, int out_channels, int kernel = 3)
        : in_(in_channels), out_(out_channels), k_(kernel),
          w_({out_channels, in_channels, kernel, kernel}, T(0)),
          b_({out_channels}, T(0)),
          gw_({out_channels, in_channels, kernel, kernel}, T(0)),
          gb_({out_channels}, T(0)) {
        if (kernel % 2 == 0) throw ShapeError("conv kernel size must be odd");
    }

    void init(SeededRng& rng) { fill_he(w_, in_ * k_ * k_, rng); b_.fill(T(0)); }

    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        check_input(x);
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int pad = k_ / 2;
        TensorT<T> y({n, out_, h, w}, T(0));
        std::vector<double> row(static_cast<std::size_t>(w));
        for (int ni = 0; ni < n; ++ni) {
            for (int co = 0; co < out_; ++co) {
                for (int oh = 0; oh < h; ++oh) {
                    std::fill(row.begin(), row.end(), static_cast<double>(b_[co]));
                    for (int ci = 0; ci < in_; ++ci) {
                        for (int kh = 0; kh < k_; ++kh) {
                            const int ih = oh + kh - pad;
                            if (ih < 0 || ih >= h) continue;
                            const T* xrow = &x.at(ni, ci, ih, 0);
                            for (int kw = 0; kw < k_; ++kw) {
                                const int shift = kw - pad;
                                const double wv = static_cast<double>(w_.at(co, ci, kh, kw));
                                const int lo = std::max(0, -shift);
                                const int hi = std::min(w, w - shift);
                                for (int ow = lo; ow < hi; ++ow) {
                                    row[ow] += wv * static_cast<double>(xrow[ow + shift]);
                                }
                            }
                        }
                    }
                    T* yrow = &y.at(ni, co, oh, 0);
                    for (int ow = 0; ow < w; ++ow) yrow[ow] = static_cast<T>(row[ow]);
                }
            }
        }
        if (mode == Mode::Train) {
            x_ = x;
            has_cache_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "conv2d");
        const int n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
        if (grad_out.shape() != std::vector<int>{n, out_, h, w}) {
            throw ShapeError("conv2d: grad_out shape does not match cached forward output");
        }
        const int pad = k_ / 2;

        TensorT<T> gx({n, in_, h, w}, T(0));
        std::vector<double> row(static_cast<std::size_t>(w));
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < in_; ++ci) {
                for (int ih = 0; ih < h; ++ih) {
                    std::fill(row.begin(), row.end(), 0.0);
                    for (int co = 0; co < out_; ++co) {
                        for (int kh = 0; kh < k_; ++kh) {
                            const int oh = ih - kh + pad;
                            if (oh < 0 || oh >= h) continue;
                            const T* grow = &grad_out.at(ni, co, oh, 0);
                            for (int kw = 0; kw < k_; ++kw) {
                                const int shift = pad - kw;
                                const double wv = static_cast<double>(w_.at(co, ci, kh, kw));
                                const int lo = std::max(0, -shift);
                                const int hi = std::min(w, w - shift);
                                for (int iw = lo; iw < hi; ++iw) {
                                    row[iw] += wv * static_cast<double>(grow[iw + shift]);
                                }
                            }
                        }
                    }
                    T* gxrow = &gx.at(ni, ci, ih, 0);
                    for (int iw = 0; iw < w; ++iw) gxrow[iw] = static_cast<T>(row[iw]);
                }
            }
        }

        for (int co = 0; co < out_; ++co) {
            for (int ci = 0; ci < in_; ++ci) {
                for (int kh = 0; kh < k_; ++kh) {
                    for (int kw = 0; kw < k_; ++kw) {
                        double acc = 0.0;
                        const int shift = kw - pad;
                        for (int ni = 0; ni < n; ++ni) {
                            for (int oh = 0; oh < h; ++oh) {
                                const int ih = oh + kh - pad;
                                if (ih < 0 || ih >= h) continue;
                                const T* grow = &grad_out.at(ni, co, oh, 0);
                                const T* xrow = &x_.at(ni, ci, ih, 0);
                                const int lo = std::max(0, -shift);
                                const int hi = std::min(w, w - shift);
                                for (int ow = lo; ow < hi; ++ow) {
                                    acc += static_cast<double>(grow[ow]) *
                                           static_cast<double>(xrow[ow + shift]);
                                }
                            }
                        }
                        gw_.at(co, ci, kh, kw) = static_cast<T>(acc);
                    }
                }
            }
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* grow = &grad_out.at(ni, co, 0, 0);
                for (int i = 0; i < h * w; ++i) acc += static_cast<double>(grow[i]);
            }
            gb_[co] = static_cast<T>(acc);
        }
        has_cache_ = false;
        return gx;
    }

    std::vector<TensorT<T>*> params() override { return {&w_, &b_}; }
    std::vector<TensorT<T>*> grads() override { return {&gw_, &gb_}; }
    const char* kind() const override { return "conv2d"; }

    TensorT<T>& weights() { return w_; }
    TensorT<T>& bias() { return b_; }
    int out_channels() const { return out_; }

private:
    void check_input(const TensorT<T>& x) const {
        if (x.ndim() != 4) throw ShapeError("conv2d expects a (N,C,H,W) tensor");
        if (x.dim(1) != in_) {
            throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) +
                             " channels, layer expects " + std::to_string(in_));
        }
    }

    int in_, out_, k_;
    TensorT<T> w_, b_, gw_, gb_;
    TensorT<T> x_;
    bool has_cache_ = false;
};

// Depthwise 3x3 same-padding convolution per channel, then a 1x1 pointwise
// convolution mixing channels, then bias. Depthwise weights [c,1,k,k],
// pointwise [out,c,1,1], bias [out].
template <typename T>
class SeparableConv2d : public Layer<T> {
public:
    SeparableConv2d(int in_channels, int out_channels, int kernel = 3)
        : in_(in_channels), out_(out_channels), k_(kernel),
          dw_({in_channels, 1, kernel, kernel}, T(0)),
          pw_({out_channels, in_channels, 1, 1}, T(0)),
          b_({out_channels}, T(0)),
          gdw_({in_channels, 1, kernel, kernel}, T(0)),
          gpw_({out_channels, in_channels, 1, 1}, T(0)),
          gb_({out_channels}, T(0)) {
        if (kernel % 2 == 0) throw ShapeError("separable conv kernel size must be odd");
    }

    void init(SeededRng& rng) {
        fill_he(dw_, k_ * k_, rng);
        fill_he(pw_, in_, rng);
        b_.fill(T(0));
    }

    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        check_input(x);
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int pad = k_ / 2;

        TensorT<T> mid({n, in_, h, w}, T(0));
        std::vector<double> row(static_cast<std::size_t>(w));
        for (int ni = 0; ni < n; ++ni) {
            for (int c = 0; c < in_; ++c) {
                for (int oh = 0; oh < h; ++oh) {
                    std::fill(row.begin(), row.end(), 0.0);
                    for (int kh = 0; kh < k_; ++kh) {
                        const int ih = oh + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        const T* xrow = &x.at(ni, c, ih, 0);
                        for (int kw = 0; kw < k_; ++kw) {
                            const int shift = kw - pad;
                            const double wv = static_cast<double>(dw_.at(c, 0, kh, kw));
                            const int lo = std::max(0, -shift);
                            const int hi = std::min(w, w - shift);
                            for (int ow = lo; ow < hi; ++ow) {
                                row[ow] += wv * static_cast<double>(xrow[ow + shift]);
                            }
                        }
                    }
                    T* mrow = &mid.at(ni, c, oh, 0);
                    for (int ow = 0; ow < w; ++ow) mrow[ow] = static_cast<T>(row[ow]);
                }
            }
        }

        TensorT<T> y({n, out_, h, w}, T(0));
        const int hw = h * w;
        for (int ni = 0; ni < n; ++ni) {
            for (int co = 0; co < out_; ++co) {
                std::vector<double> acc(static_cast<std::size_t>(hw),
                                        static_cast<double>(b_[co]));
                for (int c = 0; c < in_; ++c) {
                    const double wv = static_cast<double>(pw_.at(co, c, 0, 0));
                    const T* mrow = &mid.at(ni, c, 0, 0);
                    for (int i = 0; i < hw; ++i) acc[i] += wv * static_cast<double>(mrow[i]);
                }
                T* yrow = &y.at(ni, co, 0, 0);
                for (int i = 0; i < hw; ++i) yrow[i] = static_cast<T>(acc[i]);
            }
        }

        if (mode == Mode::Train) {
            x_ = x;
            mid_ = std::move(mid);
            has_cache_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "separable_conv2d");
        const int n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
        if (grad_out.shape() != std::vector<int>{n, out_, h, w}) {
            throw ShapeError("separable_conv2d: grad_out shape does not match cached output");
        }
        const int pad = k_ / 2;
        const int hw = h * w;

        // Through the pointwise stage.
        TensorT<T> gmid({n, in_, h, w}, T(0));
        for (int ni = 0; ni < n; ++ni) {
            for (int c = 0; c < in_; ++c) {
                std::vector<double> acc(static_cast<std::size_t>(hw), 0.0);
                for (int co = 0; co < out_; ++co) {
                    const double wv = static_cast<double>(pw_.at(co, c, 0, 0));
                    const T* grow = &grad_out.at(ni, co, 0, 0);
                    for (int i = 0; i < hw; ++i) acc[i] += wv * static_cast<double>(grow[i]);
                }
                T* grow = &gmid.at(ni, c, 0, 0);
                for (int i = 0; i < hw; ++i) grow[i] = static_cast<T>(acc[i]);
            }
        }
        for (int co = 0; co < out_; ++co) {
            for (int c = 0; c < in_; ++c) {
                double acc = 0.0;
                for (int ni = 0; ni < n; ++ni) {
                    const T* grow = &grad_out.at(ni, co, 0, 0);
                    const T* mrow = &mid_.at(ni, c, 0, 0);
                    for (int i = 0; i < hw; ++i) {
                        acc += static_cast<double>(grow[i]) * static_cast<double>(mrow[i]);
                    }
                }
                gpw_.at(co, c, 0, 0) = static_cast<T>(acc);
            }
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* grow = &grad_out.at(ni, co, 0, 0);
                for (int i = 0; i < hw; ++i) acc += static_cast<double>(grow[i]);
            }
            gb_[co] = static_cast<T>(acc);
        }

        // Through the depthwise stage.
        TensorT<T> gx({n, in_, h, w}, T(0));
        std::vector<double> row(static_cast<std::size_t>(w));
        for (int ni = 0; ni < n; ++ni) {
            for (int c = 0; c < in_; ++c) {
                for (int ih = 0; ih < h; ++ih) {
                    std::fill(row.begin(), row.end(), 0.0);
                    for (int kh = 0; kh < k_; ++kh) {
                        const int oh = ih - kh + pad;
                        if (oh < 0 || oh >= h) continue;
                        const T* grow = &gmid.at(ni, c, oh, 0);
                        for (int kw = 0; kw < k_; ++kw) {
                            const int shift = pad - kw;
                            const double wv = static_cast<double>(dw_.at(c, 0, kh, kw));
                            const int lo = std::max(0, -shift);
                            const int hi = std::min(w, w - shift);
                            for (int iw = lo; iw < hi; ++iw) {
                                row[iw] += wv * static_cast<double>(grow[iw + shift]);
                            }
                        }
                    }
                    T* gxrow = &gx.at(ni, c, ih, 0);
                    for (int iw = 0; iw < w; ++iw) gxrow[iw] = static_cast<T>(row[iw]);
                }
            }
        }
        for (int c = 0; c < in_; ++c) {
            for (int kh = 0; kh < k_; ++kh) {
                for (int kw = 0; kw < k_; ++kw) {
                    double acc = 0.0;
                    const int shift = kw - pad;
                    for (int ni = 0; ni < n; ++ni) {
                        for (int oh = 0; oh < h; ++oh) {
                            const int ih = oh + kh - pad;
                            if (ih < 0 || ih >= h) continue;
                            const T* grow = &gmid.at(ni, c, oh, 0);
                            const T* xrow = &x_.at(ni, c, ih, 0);
                            const int lo = std::max(0, -shift);
                            const int hi = std::min(w, w - shift);
                            for (int ow = lo; ow < hi; ++ow) {
                                acc += static_cast<double>(grow[ow]) *
                                       static_cast<double>(xrow[ow + shift]);
                            }
                        }
                    }
                    gdw_.at(c, 0, kh, kw) = static_cast<T>(acc);
                }
            }
        }
        has_cache_ = false;
        return gx;
    }

    std::vector<TensorT<T>*> params() override { return {&dw_, &pw_, &b_}; }
    std::vector<TensorT<T>*> grads() override { return {&gdw_, &gpw_, &gb_}; }
    const char* kind() const override { return "separable_conv2d"; }

    TensorT<T>& depthwise_weights() { return dw_; }
    TensorT<T>& pointwise_weights() { return pw_; }
    TensorT<T>& bias() { return b_; }

private:
    void check_input(const TensorT<T>& x) const {
        if (x.ndim() != 4) throw ShapeError("separable_conv2d expects a (N,C,H,W) tensor");
        if (x.dim(1) != in_) {
            throw ShapeError("separable_conv2d: input has " + std::to_string(x.dim(1)) +
                             " channels, layer expects " + std::to_string(in_));
        }
    }

    int in_, out_, k_;
    TensorT<T> dw_, pw_, b_, gdw_, gpw_, gb_;
    TensorT<T> x_, mid_;
    bool has_cache_ = false;
};

// Non-overlapping 2x2 window maximum, stride 2; an odd trailing row or column
// is dropped (floor semantics). Argmax positions are cached for backward.
template <typename T>
class MaxPool2x2 : public Layer<T> {
public:
    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        if (x.ndim() != 4) throw ShapeError("maxpool expects a (N,C,H,W) tensor");
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (h < 2 || w < 2) throw ShapeError("maxpool requires spatial dimensions >= 2");
        const int oh = h / 2, ow = w / 2;
        TensorT<T> y({n, c, oh, ow}, T(0));
        std::vector<std::size_t> argmax(y.numel());
        std::size_t oi = 0;
        for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
                for (int i = 0; i < oh; ++i) {
                    for (int j = 0; j < ow; ++j, ++oi) {
                        std::size_t base =
                            (((static_cast<std::size_t>(ni) * c) + ci) * h + 2 * i) * w + 2 * j;
                        std::size_t best = base;
                        T bv = x[base];
                        const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
                        for (std::size_t k : cand) {
                            if (x[k] > bv) { bv = x[k]; best = k; }
                        }
                        y[oi] = bv;
                        argmax[oi] = best;
                    }
                }
            }
        }
        if (mode == Mode::Train) {
            argmax_ = std::move(argmax);
            in_shape_ = x.shape();
            out_shape_ = y.shape();
            has_cache_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "maxpool");
        if (grad_out.shape() != out_shape_) {
            throw ShapeError("maxpool: grad_out shape does not match cached output");
        }
        TensorT<T> gx(in_shape_, T(0));
        for (std::size_t i = 0; i < grad_out.numel(); ++i) {
            gx[argmax_[i]] += grad_out[i];
        }
        has_cache_ = false;
        return gx;
    }

    const char* kind() const override { return "maxpool2x2"; }

private:
    std::vector<std::size_t> argmax_;
    std::vector<int> in_shape_, out_shape_;
    bool has_cache_ = false;
};

// Per-channel batch normalization. Train mode normalizes by the biased batch
// statistics and updates running statistics with momentum; Eval mode uses the
// running statistics only.
template <typename T>
class BatchNorm2d : public Layer<T> {
public:
    explicit BatchNorm2d(int channels, T momentum = T(0.9), T epsilon = T(1e-5))
        : c_(channels), momentum_(momentum), eps_(epsilon),
          gamma_({channels}, T(1)), beta_({channels}, T(0)),
          running_mean_({channels}, T(0)), running_var_({channels}, T(1)),
          ggamma_({channels}, T(0)), gbeta_({channels}, T(0)) {
        if (!(epsilon > T(0))) throw ValueError("batch-norm epsilon must be > 0");
    }

    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        check_input(x);
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int m = n * h * w;
        TensorT<T> y(x.shape(), T(0));

        if (mode == Mode::Eval) {
            for (int ci = 0; ci < c_; ++ci) {
                const double mean = static_cast<double>(running_mean_[ci]);
                const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[ci]) +
                                                   static_cast<double>(eps_));
                const double g = static_cast<double>(gamma_[ci]);
                const double bt = static_cast<double>(beta_[ci]);
                for (int ni = 0; ni < n; ++ni) {
                    const T* xrow = &x.at(ni, ci, 0, 0);
                    T* yrow = &y.at(ni, ci, 0, 0);
                    for (int i = 0; i < h * w; ++i) {
                        yrow[i] = static_cast<T>(g * (static_cast<double>(xrow[i]) - mean) * inv + bt);
                    }
                }
            }
            return y;
        }

        if (m < 2) {
            throw ValueError("batch-norm statistics require at least 2 values per channel in Train mode");
        }
        TensorT<T> xhat(x.shape(), T(0));
        std::vector<double> inv_std(static_cast<std::size_t>(c_));
        for (int ci = 0; ci < c_; ++ci) {
            double sum = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* xrow = &x.at(ni, ci, 0, 0);
                for (int i = 0; i < h * w; ++i) sum += static_cast<double>(xrow[i]);
            }
            const double mean = sum / m;
            double sq = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* xrow = &x.at(ni, ci, 0, 0);
                for (int i = 0; i < h * w; ++i) {
                    const double d = static_cast<double>(xrow[i]) - mean;
                    sq += d * d;
                }
            }
            const double var = sq / m;  // biased
            const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps_));
            inv_std[ci] = inv;
            const double g = static_cast<double>(gamma_[ci]);
            const double bt = static_cast<double>(beta_[ci]);
            for (int ni = 0; ni < n; ++ni) {
                const T* xrow = &x.at(ni, ci, 0, 0);
                T* hrow = &xhat.at(ni, ci, 0, 0);
                T* yrow = &y.at(ni, ci, 0, 0);
                for (int i = 0; i < h * w; ++i) {
                    const double xh = (static_cast<double>(xrow[i]) - mean) * inv;
                    hrow[i] = static_cast<T>(xh);
                    yrow[i] = static_cast<T>(g * xh + bt);
                }
            }
            running_mean_[ci] = static_cast<T>(static_cast<double>(momentum_) *
                                                   static_cast<double>(running_mean_[ci]) +
                                               (1.0 - static_cast<double>(momentum_)) * mean);
            running_var_[ci] = static_cast<T>(static_cast<double>(momentum_) *
                                                  static_cast<double>(running_var_[ci]) +
                                              (1.0 - static_cast<double>(momentum_)) * var);
        }
        xhat_ = std::move(xhat);
        inv_std_ = std::move(inv_std);
        has_cache_ = true;
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "batchnorm");
        if (grad_out.shape() != xhat_.shape()) {
            throw ShapeError("batchnorm: grad_out shape does not match cached output");
        }
        const int n = grad_out.dim(0), h = grad_out.dim(2), w = grad_out.dim(3);
        const int m = n * h * w;
        TensorT<T> gx(grad_out.shape(), T(0));
        for (int ci = 0; ci < c_; ++ci) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const T* grow = &grad_out.at(ni, ci, 0, 0);
                const T* hrow = &xhat_.at(ni, ci, 0, 0);
                for (int i = 0; i < h * w; ++i) {
                    sum_dy += static_cast<double>(grow[i]);
                    sum_dy_xhat += static_cast<double>(grow[i]) * static_cast<double>(hrow[i]);
                }
            }
            gbeta_[ci] = static_cast<T>(sum_dy);
            ggamma_[ci] = static_cast<T>(sum_dy_xhat);
            const double g = static_cast<double>(gamma_[ci]);
            const double inv = inv_std_[ci];
            const double scale = g * inv / m;
            for (int ni = 0; ni < n; ++ni) {
                const T* grow = &grad_out.at(ni, ci, 0, 0);
                const T* hrow = &xhat_.at(ni, ci, 0, 0);
                T* gxrow = &gx.at(ni, ci, 0, 0);
                for (int i = 0; i < h * w; ++i) {
                    gxrow[i] = static_cast<T>(
                        scale * (m * static_cast<double>(grow[i]) - sum_dy -
                                 static_cast<double>(hrow[i]) * sum_dy_xhat));
                }
            }
        }
        has_cache_ = false;
        return gx;
    }

    std::vector<TensorT<T>*> params() override { return {&gamma_, &beta_}; }
    std::vector<TensorT<T>*> grads() override { return {&ggamma_, &gbeta_}; }
    const char* kind() const override { return "batchnorm"; }

    TensorT<T>& gamma() { return gamma_; }
    TensorT<T>& beta() { return beta_; }
    TensorT<T>& running_mean() { return running_mean_; }
    TensorT<T>& running_var() { return running_var_; }

private:
    void check_input(const TensorT<T>& x) const {
        if (x.ndim() != 4) throw ShapeError("batchnorm expects a (N,C,H,W) tensor");
        if (x.dim(1) != c_) {
            throw ShapeError("batchnorm: input has " + std::to_string(x.dim(1)) +
                             " channels, layer expects " + std::to_string(c_));
        }
    }

    int c_;
    T momentum_, eps_;
    TensorT<T> gamma_, beta_, running_mean_, running_var_, ggamma_, gbeta_;
    TensorT<T> xhat_;
    std::vector<double> inv_std_;
    bool has_cache_ = false;
};

// Inverted dropout: each element is zeroed with probability `rate` during
// training and survivors are scaled by 1/(1-rate), so Eval is a passthrough.
template <typename T>
class Dropout : public Layer<T> {
public:
    explicit Dropout(T rate) : rate_(rate) {
        if (!(rate >= T(0) && rate < T(1))) {
            throw ValueError("dropout rate must be in [0,1)");
        }
    }

    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* rng = nullptr) override {
        if (mode == Mode::Eval || rate_ == T(0)) {
            if (mode == Mode::Train) {
                mask_ = TensorT<T>(x.shape(), T(1));
                has_cache_ = true;
            }
            return x;
        }
        if (rng == nullptr) throw ValueError("dropout in Train mode needs an rng");
        TensorT<T> mask(x.shape(), T(0));
        for (std::size_t i = 0; i < mask.numel(); ++i) {
            mask[i] = (rng->uniform() >= static_cast<float>(rate_)) ? T(1) : T(0);
        }
        TensorT<T> y = apply_mask(x, mask, rate_);
        mask_ = std::move(mask);
        has_cache_ = true;
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "dropout");
        if (!grad_out.same_shape(mask_)) {
            throw ShapeError("dropout: grad_out shape does not match cached mask");
        }
        TensorT<T> gx = apply_mask(grad_out, mask_, rate_);
        has_cache_ = false;
        return gx;
    }

    // Re-applies a fixed mask; used by backward and by the gradient-check
    // harness, which must hold the mask constant across evaluations.
    static TensorT<T> apply_mask(const TensorT<T>& x, const TensorT<T>& mask, T rate) {
        const T scale = T(1) / (T(1) - rate);
        TensorT<T> y(x.shape(), T(0));
        for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * mask[i] * scale;
        return y;
    }

    const TensorT<T>& mask() const { return mask_; }
    T rate() const { return rate_; }
    const char* kind() const override { return "dropout"; }

private:
    T rate_;
    TensorT<T> mask_;
    bool has_cache_ = false;
};

// Fully connected: y = x W^T + b with weights [out,in], bias [out].
template <typename T>
class Dense : public Layer<T> {
public:
    Dense(int in_features, int out_features)
        : in_(in_features), out_(out_features),
          w_({out_features, in_features}, T(0)), b_({out_features}, T(0)),
          gw_({out_features, in_features}, T(0)), gb_({out_features}, T(0)) {}

    void init(SeededRng& rng) { fill_he(w_, in_, rng); b_.fill(T(0)); }

    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        if (x.ndim() != 2) throw ShapeError("dense expects a (N,features) tensor");
        if (x.dim(1) != in_) {
            throw ShapeError("dense: input has " + std::to_string(x.dim(1)) +
                             " features, layer expects " + std::to_string(in_));
        }
        const int n = x.dim(0);
        TensorT<T> y({n, out_}, T(0));
        for (int i = 0; i < n; ++i) {
            const T* xrow = &x.at(i, 0);
            for (int o = 0; o < out_; ++o) {
                const T* wrow = &w_.at(o, 0);
                double acc = static_cast<double>(b_[o]);
                for (int j = 0; j < in_; ++j) {
                    acc += static_cast<double>(xrow[j]) * static_cast<double>(wrow[j]);
                }
                y.at(i, o) = static_cast<T>(acc);
            }
        }
        if (mode == Mode::Train) {
            x_ = x;
            has_cache_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "dense");
        const int n = x_.dim(0);
        if (grad_out.shape() != std::vector<int>{n, out_}) {
            throw ShapeError("dense: grad_out shape does not match cached output");
        }
        TensorT<T> gx({n, in_}, T(0));
        for (int i = 0; i < n; ++i) {
            const T* grow = &grad_out.at(i, 0);
            T* gxrow = &gx.at(i, 0);
            for (int j = 0; j < in_; ++j) {
                double acc = 0.0;
                for (int o = 0; o < out_; ++o) {
                    acc += static_cast<double>(grow[o]) * static_cast<double>(w_.at(o, j));
                }
                gxrow[j] = static_cast<T>(acc);
            }
        }
        for (int o = 0; o < out_; ++o) {
            for (int j = 0; j < in_; ++j) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    acc += static_cast<double>(grad_out.at(i, o)) * static_cast<double>(x_.at(i, j));
                }
                gw_.at(o, j) = static_cast<T>(acc);
            }
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += static_cast<double>(grad_out.at(i, o));
            gb_[o] = static_cast<T>(acc);
        }
        has_cache_ = false;
        return gx;
    }

    std::vector<TensorT<T>*> params() override { return {&w_, &b_}; }
    std::vector<TensorT<T>*> grads() override { return {&gw_, &gb_}; }
    const char* kind() const override { return "dense"; }

    TensorT<T>& weights() { return w_; }
    TensorT<T>& bias() { return b_; }

private:
    int in_, out_;
    TensorT<T> w_, b_, gw_, gb_;
    TensorT<T> x_;
    bool has_cache_ = false;
};

template <typename T>
class ReLU : public Layer<T> {
public:
    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        TensorT<T> y(x.shape(), T(0));
        for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        if (mode == Mode::Train) {
            x_ = x;
            has_cache_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "relu");
        if (!grad_out.same_shape(x_)) {
            throw ShapeError("relu: grad_out shape does not match cached input");
        }
        TensorT<T> gx(grad_out.shape(), T(0));
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            gx[i] = x_[i] > T(0) ? grad_out[i] : T(0);
        }
        has_cache_ = false;
        return gx;
    }

    const char* kind() const override { return "relu"; }

private:
    TensorT<T> x_;
    bool has_cache_ = false;
};

template <typename T>
class Sigmoid : public Layer<T> {
public:
    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        TensorT<T> y(x.shape(), T(0));
        for (std::size_t i = 0; i < x.numel(); ++i) {
            y[i] = T(1) / (T(1) + std::exp(-x[i]));
        }
        if (mode == Mode::Train) {
            s_ = y;
            has_cache_ = true;
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "sigmoid");
        if (!grad_out.same_shape(s_)) {
            throw ShapeError("sigmoid: grad_out shape does not match cached output");
        }
        TensorT<T> gx(grad_out.shape(), T(0));
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            gx[i] = grad_out[i] * s_[i] * (T(1) - s_[i]);
        }
        has_cache_ = false;
        return gx;
    }

    const char* kind() const override { return "sigmoid"; }

private:
    TensorT<T> s_;
    bool has_cache_ = false;
};

// (N,C,H,W) -> (N, C*H*W)
template <typename T>
class Flatten : public Layer<T> {
public:
    TensorT<T> forward(const TensorT<T>& x, Mode mode, SeededRng* = nullptr) override {
        if (x.ndim() != 4) throw ShapeError("flatten expects a (N,C,H,W) tensor");
        std::vector<int> flat{x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)};
        if (mode == Mode::Train) {
            in_shape_ = x.shape();
            has_cache_ = true;
        }
        return x.reshaped(std::move(flat));
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->require_cache(has_cache_, "flatten");
        has_cache_ = false;
        return grad_out.reshaped(in_shape_);
    }

    const char* kind() const override { return "flatten"; }

private:
    std::vector<int> in_shape_;
    bool has_cache_ = false;
};

} // namespace pneumo

#endif
