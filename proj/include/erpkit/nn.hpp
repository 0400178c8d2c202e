#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "erpkit/common.hpp"
#include "erpkit/gemm.hpp"
#include "erpkit/rng.hpp"
#include "erpkit/tensor.hpp"

namespace erpkit {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int> shape)
        : name(std::move(n)), value(shape), grad(shape) {}
};

// "Same"-style zero padding chosen so out_len = ceil(in_len / stride); the
// 256 -> 128 -> 64 encoder ladder then mirrors exactly in the decoder.
struct ConvGeom {
    int in_len = 0;
    int out_len = 0;
    int kernel = 0;
    int stride = 0;
    int pad_left = 0;
};

inline ConvGeom conv_geometry(int in_len, int kernel, int stride) {
    require(in_len > 0 && kernel > 0 && stride > 0, "conv geometry arguments must be positive");
    ConvGeom g;
    g.in_len = in_len;
    g.kernel = kernel;
    g.stride = stride;
    g.out_len = (in_len + stride - 1) / stride;
    const int pad_total = std::max(0, (g.out_len - 1) * stride + kernel - in_len);
    g.pad_left = pad_total / 2;
    return g;
}

namespace detail {

// x [ch, in_len] -> col [ch*kernel, out_len]
template <typename T>
void im2col(const T* x, int ch, const ConvGeom& g, T* col) {
    for (int c = 0; c < ch; ++c) {
        for (int k = 0; k < g.kernel; ++k) {
            T* row = col + (std::size_t(c) * g.kernel + k) * g.out_len;
            for (int t = 0; t < g.out_len; ++t) {
                const int src = t * g.stride + k - g.pad_left;
                row[t] = (src >= 0 && src < g.in_len) ? x[std::size_t(c) * g.in_len + src] : T(0);
            }
        }
    }
}

// col [ch*kernel, out_len] -> accumulate into x [ch, in_len]
template <typename T>
void col2im_add(const T* col, int ch, const ConvGeom& g, T* x) {
    for (int c = 0; c < ch; ++c) {
        for (int k = 0; k < g.kernel; ++k) {
            const T* row = col + (std::size_t(c) * g.kernel + k) * g.out_len;
            for (int t = 0; t < g.out_len; ++t) {
                const int dst = t * g.stride + k - g.pad_left;
                if (dst >= 0 && dst < g.in_len) x[std::size_t(c) * g.in_len + dst] += row[t];
            }
        }
    }
}

} // namespace detail

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x) = 0;
    virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
    virtual void collect_params(std::vector<Param<T>*>& out) {}
    virtual void init(Rng& rng) {}
};

namespace detail {

template <typename T>
void glorot_uniform(Tensor<T>& w, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w.values) v = static_cast<T>(rng.uniform(-limit, limit));
}

} // namespace detail

/// 1-D convolution over the time axis. Input [N, in_ch, L], output
/// [N, out_ch, ceil(L/stride)]. Weight layout [out_ch, in_ch*kernel].
template <typename T>
class Conv1d : public Layer<T> {
public:
    Conv1d(std::string name, int in_ch, int out_ch, int kernel, int stride)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
          w_(name + ".w", {out_ch, in_ch * kernel}), b_(name + ".b", {out_ch}) {}

    void init(Rng& rng) override {
        detail::glorot_uniform(w_.value, in_ch_ * kernel_, out_ch_ * kernel_, rng);
        b_.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        require(x.shape.size() == 3 && x.shape[1] == in_ch_, "conv1d input shape mismatch");
        const int n = x.shape[0];
        geom_ = conv_geometry(x.shape[2], kernel_, stride_);
        const int ck = in_ch_ * kernel_;
        col_ = Tensor<T>({n, ck, geom_.out_len});
        Tensor<T> y({n, out_ch_, geom_.out_len});
        for (int i = 0; i < n; ++i) {
            T* col_i = col_.data() + std::size_t(i) * ck * geom_.out_len;
            detail::im2col(x.data() + std::size_t(i) * in_ch_ * geom_.in_len, in_ch_, geom_, col_i);
            T* y_i = y.data() + std::size_t(i) * out_ch_ * geom_.out_len;
            gemm<T>(false, false, out_ch_, geom_.out_len, ck, T(1), w_.value.data(), ck,
                    col_i, geom_.out_len, T(0), y_i, geom_.out_len);
            for (int oc = 0; oc < out_ch_; ++oc) {
                const T bias = b_.value[oc];
                T* row = y_i + std::size_t(oc) * geom_.out_len;
                for (int t = 0; t < geom_.out_len; ++t) row[t] += bias;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        require(dy.shape.size() == 3 && dy.shape[1] == out_ch_ && dy.shape[2] == geom_.out_len,
                "conv1d upstream gradient shape mismatch");
        const int n = dy.shape[0];
        const int ck = in_ch_ * kernel_;
        Tensor<T> dx({n, in_ch_, geom_.in_len});
        std::vector<T> dcol(std::size_t(ck) * geom_.out_len);
        for (int i = 0; i < n; ++i) {
            const T* dy_i = dy.data() + std::size_t(i) * out_ch_ * geom_.out_len;
            const T* col_i = col_.data() + std::size_t(i) * ck * geom_.out_len;
            gemm<T>(true, false, ck, geom_.out_len, out_ch_, T(1), w_.value.data(), ck,
                    dy_i, geom_.out_len, T(0), dcol.data(), geom_.out_len);
            detail::col2im_add(dcol.data(), in_ch_, geom_,
                               dx.data() + std::size_t(i) * in_ch_ * geom_.in_len);
            gemm<T>(false, true, out_ch_, ck, geom_.out_len, T(1), dy_i, geom_.out_len,
                    col_i, geom_.out_len, T(1), w_.grad.data(), ck);
            for (int oc = 0; oc < out_ch_; ++oc) {
                double acc = 0.0;
                const T* row = dy_i + std::size_t(oc) * geom_.out_len;
                for (int t = 0; t < geom_.out_len; ++t) acc += double(row[t]);
                b_.grad[oc] += static_cast<T>(acc);
            }
        }
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

    Param<T>& weight() { return w_; }
    Param<T>& bias() { return b_; }

private:
    int in_ch_, out_ch_, kernel_, stride_;
    Param<T> w_, b_;
    ConvGeom geom_{};
    Tensor<T> col_;
};

/// Exact adjoint of Conv1d with the same padding rule. Input [N, in_ch, L],
/// output [N, out_ch, out_len] with ceil(out_len/stride) == L. Weight layout
/// [in_ch, out_ch*kernel] so a Conv1d and its transpose can share kernels.
template <typename T>
class ConvTranspose1d : public Layer<T> {
public:
    ConvTranspose1d(std::string name, int in_ch, int out_ch, int kernel, int stride, int out_len)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
          geom_(conv_geometry(out_len, kernel, stride)),
          w_(name + ".w", {in_ch, out_ch * kernel}), b_(name + ".b", {out_ch}) {}

    void init(Rng& rng) override {
        detail::glorot_uniform(w_.value, in_ch_ * kernel_, out_ch_ * kernel_, rng);
        b_.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        require(x.shape.size() == 3 && x.shape[1] == in_ch_ && x.shape[2] == geom_.out_len,
                "conv1d_transpose input shape mismatch");
        const int n = x.shape[0];
        const int ck = out_ch_ * kernel_;
        input_ = x;
        Tensor<T> y({n, out_ch_, geom_.in_len});
        std::vector<T> tmp(std::size_t(ck) * geom_.out_len);
        for (int i = 0; i < n; ++i) {
            const T* x_i = x.data() + std::size_t(i) * in_ch_ * geom_.out_len;
            gemm<T>(true, false, ck, geom_.out_len, in_ch_, T(1), w_.value.data(), ck,
                    x_i, geom_.out_len, T(0), tmp.data(), geom_.out_len);
            T* y_i = y.data() + std::size_t(i) * out_ch_ * geom_.in_len;
            detail::col2im_add(tmp.data(), out_ch_, geom_, y_i);
            for (int oc = 0; oc < out_ch_; ++oc) {
                const T bias = b_.value[oc];
                T* row = y_i + std::size_t(oc) * geom_.in_len;
                for (int t = 0; t < geom_.in_len; ++t) row[t] += bias;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        require(dy.shape.size() == 3 && dy.shape[1] == out_ch_ && dy.shape[2] == geom_.in_len,
                "conv1d_transpose upstream gradient shape mismatch");
        const int n = dy.shape[0];
        const int ck = out_ch_ * kernel_;
        Tensor<T> dx({n, in_ch_, geom_.out_len});
        std::vector<T> colg(std::size_t(ck) * geom_.out_len);
        for (int i = 0; i < n; ++i) {
            const T* dy_i = dy.data() + std::size_t(i) * out_ch_ * geom_.in_len;
            detail::im2col(dy_i, out_ch_, geom_, colg.data());
            T* dx_i = dx.data() + std::size_t(i) * in_ch_ * geom_.out_len;
            gemm<T>(false, false, in_ch_, geom_.out_len, ck, T(1), w_.value.data(), ck,
                    colg.data(), geom_.out_len, T(0), dx_i, geom_.out_len);
            const T* x_i = input_.data() + std::size_t(i) * in_ch_ * geom_.out_len;
            gemm<T>(false, true, in_ch_, ck, geom_.out_len, T(1), x_i, geom_.out_len,
                    colg.data(), geom_.out_len, T(1), w_.grad.data(), ck);
            for (int oc = 0; oc < out_ch_; ++oc) {
                double acc = 0.0;
                const T* row = dy_i + std::size_t(oc) * geom_.in_len;
                for (int t = 0; t < geom_.in_len; ++t) acc += double(row[t]);
                b_.grad[oc] += static_cast<T>(acc);
            }
        }
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

    Param<T>& weight() { return w_; }
    Param<T>& bias() { return b_; }

private:
    int in_ch_, out_ch_, kernel_, stride_;
    ConvGeom geom_;
    Param<T> w_, b_;
    Tensor<T> input_;
};

/// Affine layer. Input [N, in_f], output [N, out_f]. Weight [out_f, in_f].
template <typename T>
class Dense : public Layer<T> {
public:
    Dense(std::string name, int in_f, int out_f)
        : in_f_(in_f), out_f_(out_f), w_(name + ".w", {out_f, in_f}), b_(name + ".b", {out_f}) {}

    void init(Rng& rng) override {
        detail::glorot_uniform(w_.value, in_f_, out_f_, rng);
        b_.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        require(x.shape.size() == 2 && x.shape[1] == in_f_, "dense input shape mismatch");
        const int n = x.shape[0];
        input_ = x;
        Tensor<T> y({n, out_f_});
        gemm<T>(false, true, n, out_f_, in_f_, T(1), x.data(), in_f_, w_.value.data(), in_f_,
                T(0), y.data(), out_f_);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_f_; ++j) y.at(i, j) += b_.value[j];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        require(dy.shape.size() == 2 && dy.shape[1] == out_f_, "dense upstream gradient shape mismatch");
        const int n = dy.shape[0];
        Tensor<T> dx({n, in_f_});
        gemm<T>(false, false, n, in_f_, out_f_, T(1), dy.data(), out_f_, w_.value.data(), in_f_,
                T(0), dx.data(), in_f_);
        gemm<T>(true, false, out_f_, in_f_, n, T(1), dy.data(), out_f_, input_.data(), in_f_,
                T(1), w_.grad.data(), in_f_);
        for (int j = 0; j < out_f_; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += double(dy.at(i, j));
            b_.grad[j] += static_cast<T>(acc);
        }
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

    Param<T>& weight() { return w_; }
    Param<T>& bias() { return b_; }

private:
    int in_f_, out_f_;
    Param<T> w_, b_;
    Tensor<T> input_;
};

template <typename T>
class Relu : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        input_ = x;
        Tensor<T> y = x;
        for (auto& v : y.values) v = std::max(v, T(0));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        require(dy.same_shape(input_), "relu upstream gradient shape mismatch");
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.values.size(); ++i)
            if (input_[i] <= T(0)) dx[i] = T(0);
        return dx;
    }

private:
    Tensor<T> input_;
};

template <typename T>
class Sigmoid : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> y = x;
        for (auto& v : y.values) v = T(1) / (T(1) + std::exp(-v));
        output_ = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        require(dy.same_shape(output_), "sigmoid upstream gradient shape mismatch");
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.values.size(); ++i) {
            const T y = output_[i];
            dx[i] *= y * (T(1) - y);
        }
        return dx;
    }

private:
    Tensor<T> output_;
};

/// Reshapes [N, ...] to [N, inner...]; the batch axis is preserved.
template <typename T>
class Reshape : public Layer<T> {
public:
    explicit Reshape(std::vector<int> inner) : inner_(std::move(inner)) {}

    Tensor<T> forward(const Tensor<T>& x) override {
        in_shape_ = x.shape;
        std::vector<int> shape{x.shape[0]};
        shape.insert(shape.end(), inner_.begin(), inner_.end());
        return x.reshaped(std::move(shape));
    }

    Tensor<T> backward(const Tensor<T>& dy) override { return dy.reshaped(in_shape_); }

private:
    std::vector<int> inner_;
    std::vector<int> in_shape_;
};

template <typename T>
class Sequential {
public:
    Sequential() = default;

    template <typename L, typename... Args>
    L* add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers_.push_back(std::move(layer));
        return raw;
    }

    Tensor<T> forward(Tensor<T> x) {
        for (auto& l : layers_) x = l->forward(x);
        return x;
    }

    Tensor<T> backward(Tensor<T> dy) {
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) dy = (*it)->backward(dy);
        return dy;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto& l : layers_) l->collect_params(out);
        return out;
    }

    void init(Rng& rng) {
        for (auto& l : layers_) l->init(rng);
    }

    void zero_grad() {
        std::vector<Param<T>*> ps = params();
        for (auto* p : ps) p->grad.zero();
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// ---- Loss terms. Values accumulate at 64-bit regardless of parameter type.

inline constexpr double kBernoulliClamp = 1e-7;

template <typename T>
double bernoulli_nll(const Tensor<T>& pred, const Tensor<T>& target) {
    require(pred.same_shape(target), "bernoulli_nll shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double p = std::clamp(double(pred[i]), kBernoulliClamp, 1.0 - kBernoulliClamp);
        const double t = double(target[i]);
        acc -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
    }
    return acc;
}

template <typename T>
Tensor<T> bernoulli_nll_grad(const Tensor<T>& pred, const Tensor<T>& target) {
    require(pred.same_shape(target), "bernoulli_nll shape mismatch");
    Tensor<T> dp(pred.shape);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double p = std::clamp(double(pred[i]), kBernoulliClamp, 1.0 - kBernoulliClamp);
        const double t = double(target[i]);
        dp[i] = static_cast<T>(-t / p + (1.0 - t) / (1.0 - p));
    }
    return dp;
}

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& target) {
    require(pred.same_shape(target), "mse shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = double(pred[i]) - double(target[i]);
        acc += d * d;
    }
    return acc;
}

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& pred, const Tensor<T>& target) {
    require(pred.same_shape(target), "mse shape mismatch");
    Tensor<T> dp(pred.shape);
    for (std::size_t i = 0; i < pred.numel(); ++i)
        dp[i] = static_cast<T>(2.0 * (double(pred[i]) - double(target[i])));
    return dp;
}

/// KL( N(mean, exp(logvar)) || N(0, I) ), summed over all elements.
template <typename T>
double gaussian_kl_prior(const Tensor<T>& mean, const Tensor<T>& logvar) {
    require(mean.same_shape(logvar), "gaussian_kl_prior shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mean.numel(); ++i) {
        const double mu = double(mean[i]);
        const double lv = double(logvar[i]);
        acc += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
    }
    return acc;
}

template <typename T>
void gaussian_kl_prior_grad(const Tensor<T>& mean, const Tensor<T>& logvar,
                            Tensor<T>& dmean, Tensor<T>& dlogvar) {
    require(mean.same_shape(logvar), "gaussian_kl_prior shape mismatch");
    dmean = Tensor<T>(mean.shape);
    dlogvar = Tensor<T>(logvar.shape);
    for (std::size_t i = 0; i < mean.numel(); ++i) {
        dmean[i] = mean[i];
        dlogvar[i] = static_cast<T>(0.5 * (std::exp(double(logvar[i])) - 1.0));
    }
}

/// KL( N(mean_a, exp(logvar_a)) || N(mean_b, exp(logvar_b)) ), summed.
/// The first distribution is the reference; the divergence is asymmetric.
template <typename T>
double gaussian_kl_pair(const Tensor<T>& mean_a, const Tensor<T>& logvar_a,
                        const Tensor<T>& mean_b, const Tensor<T>& logvar_b) {
    require(mean_a.same_shape(logvar_a) && mean_a.same_shape(mean_b) &&
                mean_a.same_shape(logvar_b),
            "gaussian_kl_pair shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mean_a.numel(); ++i) {
        const double ma = double(mean_a[i]);
        const double la = double(logvar_a[i]);
        const double mb = double(mean_b[i]);
        const double lb = double(logvar_b[i]);
        const double va = std::exp(la);
        const double vb = std::exp(lb);
        const double dm = ma - mb;
        acc += 0.5 * ((va + dm * dm) / vb - 1.0 + lb - la);
    }
    return acc;
}

/// Gradient of gaussian_kl_pair with respect to the second (argument)
/// distribution only; the reference side stays frozen.
template <typename T>
void gaussian_kl_pair_grad_b(const Tensor<T>& mean_a, const Tensor<T>& logvar_a,
                             const Tensor<T>& mean_b, const Tensor<T>& logvar_b,
                             Tensor<T>& dmean_b, Tensor<T>& dlogvar_b) {
    dmean_b = Tensor<T>(mean_b.shape);
    dlogvar_b = Tensor<T>(logvar_b.shape);
    for (std::size_t i = 0; i < mean_a.numel(); ++i) {
        const double ma = double(mean_a[i]);
        const double la = double(logvar_a[i]);
        const double mb = double(mean_b[i]);
        const double lb = double(logvar_b[i]);
        const double va = std::exp(la);
        const double vb = std::exp(lb);
        const double dm = ma - mb;
        dmean_b[i] = static_cast<T>((mb - ma) / vb);
        dlogvar_b[i] = static_cast<T>(0.5 * (1.0 - (va + dm * dm) / vb));
    }
}

} // namespace erpkit
