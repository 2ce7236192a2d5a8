#pragma once

#include "defield/common.hpp"

#include <random>
#include <vector>

namespace defield {

/// Sinusoidal frequency encoding: [x, sin(2^k pi x), cos(2^k pi x) for k < L].
struct Encoding {
    int num_frequencies = 4;
    bool include_input = true;

    int output_dim(int input_dim) const { return input_dim * (2 * num_frequencies + (include_input ? 1 : 0)); }

    template <typename S>
    void encode(const S* x, int input_dim, S* out) const {
        int o = 0;
        if (include_input)
            for (int d = 0; d < input_dim; ++d) out[o++] = x[d];
        S freq = static_cast<S>(M_PI);
        for (int k = 0; k < num_frequencies; ++k, freq *= S(2)) {
            for (int d = 0; d < input_dim; ++d) out[o++] = std::sin(freq * x[d]);
            for (int d = 0; d < input_dim; ++d) out[o++] = std::cos(freq * x[d]);
        }
    }

    template <typename S>
    std::vector<S> encode(const std::vector<S>& x) const {
        std::vector<S> out(static_cast<std::size_t>(output_dim(static_cast<int>(x.size()))));
        encode(x.data(), static_cast<int>(x.size()), out.data());
        return out;
    }

    /// d(out)/d(x), output_dim x input_dim.
    template <typename S>
    MatrixX<S> jacobian(const std::vector<S>& x) const {
        const int n = static_cast<int>(x.size());
        MatrixX<S> j = MatrixX<S>::Zero(output_dim(n), n);
        int o = 0;
        if (include_input)
            for (int d = 0; d < n; ++d) j(o++, d) = S(1);
        S freq = static_cast<S>(M_PI);
        for (int k = 0; k < num_frequencies; ++k, freq *= S(2)) {
            for (int d = 0; d < n; ++d) j(o++, d) = freq * std::cos(freq * x[static_cast<std::size_t>(d)]);
            for (int d = 0; d < n; ++d) j(o++, d) = -freq * std::sin(freq * x[static_cast<std::size_t>(d)]);
        }
        return j;
    }
};

template <typename S>
struct DenseLayer {
    MatrixX<S> weight;  // out x in
    VectorX<S> bias;    // out
};

/// Activations kept from a batched forward pass.
template <typename S>
struct MLPCache {
    std::vector<MatrixX<S>> inputs;  // input of every layer, rows = batch
};

/// Fully connected network with ReLU hidden layers and a linear output.
/// Batches are row-major matrices, one sample per row.
template <typename S>
class TinyMLP {
public:
    TinyMLP() = default;

    TinyMLP(int input_dim, const std::vector<int>& hidden, int output_dim) {
        int in = input_dim;
        auto add = [&](int out) {
            layers_.push_back({MatrixX<S>::Zero(out, in), VectorX<S>::Zero(out)});
            in = out;
        };
        for (int h : hidden) add(h);
        add(output_dim);
    }

    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& l : layers_) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<S>(dist(rng));
            for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = static_cast<S>(dist(rng));
        }
    }

    int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
    int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
    std::vector<DenseLayer<S>>& layers() { return layers_; }
    const std::vector<DenseLayer<S>>& layers() const { return layers_; }

    MLPCache<S> forward(const MatrixX<S>& x, MatrixX<S>& out) const {
        MLPCache<S> cache;
        forward(x, out, cache);
        return cache;
    }

    void forward(const MatrixX<S>& x, MatrixX<S>& out, MLPCache<S>& cache) const {
        cache.inputs.resize(layers_.size());
        cache.inputs[0] = x;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const auto& l = layers_[k];
            MatrixX<S>& z = k + 1 < layers_.size() ? cache.inputs[k + 1] : out;
            z.resize(x.rows(), l.weight.rows());
            z.noalias() = cache.inputs[k] * l.weight.transpose();
            z.rowwise() += l.bias.transpose();
            if (k + 1 < layers_.size()) z = z.cwiseMax(S(0));
        }
    }

    /// Single-sample convenience wrapper.
    VectorX<S> operator()(const VectorX<S>& x) const {
        MatrixX<S> in = x.transpose();
        MatrixX<S> out;
        forward(in, out);
        return out.row(0).transpose();
    }

    /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input)
    /// when `input_grad` is non-null. `touched` (2 flags per layer: W, b) is set for
    /// every array that received an accumulation.
    void backward(const MLPCache<S>& cache, const MatrixX<S>& out_grad, TinyMLP& grads, MatrixX<S>* input_grad,
                  std::uint8_t* touched = nullptr) const {
        MatrixX<S> g = out_grad;
        for (std::size_t k = layers_.size(); k-- > 0;) {
            const auto& a = cache.inputs[k];
            auto& gl = grads.layers_[k];
            gl.weight.noalias() += g.transpose() * a;
            gl.bias.noalias() += g.colwise().sum().transpose();
            if (touched) touched[2 * k] = touched[2 * k + 1] = 1;
            if (k == 0 && !input_grad) break;
            MatrixX<S> gin = g * layers_[k].weight;
            if (k > 0) gin = gin.cwiseProduct((a.array() > S(0)).template cast<S>().matrix());
            g = std::move(gin);
        }
        if (input_grad) *input_grad = std::move(g);
    }

    TinyMLP zeros_like() const {
        TinyMLP z = *this;
        for (auto& l : z.layers_) {
            l.weight.setZero();
            l.bias.setZero();
        }
        return z;
    }

    template <typename T>
    TinyMLP<T> cast() const {
        TinyMLP<T> m;
        for (const auto& l : layers_)
            m.layers().push_back({l.weight.template cast<T>(), l.bias.template cast<T>()});
        return m;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

private:
    std::vector<DenseLayer<S>> layers_;
};

}  // namespace defield
