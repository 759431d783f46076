#pragma once

#include <string>

#include "uamf/ops.hpp"
#include "uamf/rng.hpp"
#include "uamf/tensor.hpp"

namespace uamf {

enum class Mode { train, eval };

/// Uniform(-bound, bound) with bound = sqrt(3 / fan_in): unit-variance preserving.
template <typename T>
Tensor<T> init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<T> weight;  // (in, out)
    Tensor<T> bias;    // (out), may be undefined
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, shift); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    Tensor<T> gain;
    Tensor<T> shift;
};

template <typename T>
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng,
           Conv3dOptions options = {});

    Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, options); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    Tensor<T> weight;  // (out, in / groups, k, k, k)
    Tensor<T> bias;
    Conv3dOptions options;
};

/// Two dense layers with GELU in between.
template <typename T>
class Mlp {
public:
    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    Linear<T> fc1;
    Linear<T> fc2;
};

} // namespace uamf
