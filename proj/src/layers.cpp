#include "uamf/layers.hpp"

#include <cmath>

namespace uamf {

template <typename T>
Tensor<T> init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::vector<T> v(shape_numel(shape));
    for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(shape, std::move(v), true);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(init_uniform<T>(Shape{in, out}, in, rng)) {
    if (with_bias) bias = Tensor<T>::zeros(Shape{out}, true);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim)
    : gain(Tensor<T>::full(Shape{dim}, T(1), true)), shift(Tensor<T>::zeros(Shape{dim}, true)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".norm_gain", gain});
    out.push_back({prefix + ".norm_shift", shift});
}

template <typename T>
Conv3d<T>::Conv3d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng,
                  Conv3dOptions opts)
    : options(opts) {
    const std::size_t per_group = in_channels / std::max<std::size_t>(opts.groups, 1);
    weight = init_uniform<T>(Shape{out_channels, per_group, kernel, kernel, kernel},
                             per_group * kernel * kernel * kernel, rng);
    bias = Tensor<T>::zeros(Shape{out_channels}, true);
}

template <typename T>
void Conv3d<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template <typename T>
Mlp<T>::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

template Tensor<float> init_uniform(const Shape&, std::size_t, Rng&);
template Tensor<double> init_uniform(const Shape&, std::size_t, Rng&);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Conv3d<float>;
template class Conv3d<double>;
template class Mlp<float>;
template class Mlp<double>;

} // namespace uamf
