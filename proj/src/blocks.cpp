#include "uamf/blocks.hpp"

#include <cmath>

#include "uamf/error.hpp"

namespace uamf {

namespace {

thread_local AttentionObserver attention_observer;

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    for (T v : t.data()) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
    }
}

} // namespace

void set_attention_observer(AttentionObserver observer) {
    attention_observer = std::move(observer);
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& sigma, const Tensor<T>& noise) {
    return add(mu, mul(noise.detach(), sigma));
}

template <typename T>
GaussianMessage<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& sigma, Rng& rng, Mode mode) {
    if (mode == Mode::eval) return {mu, sigma, mu};
    const Tensor<T> noise = gaussian_sample<T>(mu.shape(), rng);
    return {mu, sigma, reparameterize(mu, sigma, noise)};
}

template <typename T>
UaBridge<T>::UaBridge(std::size_t dim, Rng& rng, std::string p)
    : mean_mlp(dim, dim, dim, rng), scale_mlp(dim, dim, dim, rng), path(std::move(p)) {
    for (T& b : scale_mlp.fc2.bias.mutable_data()) b = static_cast<T>(kSigmaInitBias);
}

template <typename T>
GaussianMessage<T> UaBridge<T>::forward(const Tensor<T>& features, Rng& rng, Mode mode) const {
    const Tensor<T> mu = mean_mlp(features);
    require_finite(mu, path + ".mean");
    const Tensor<T> raw_scale = scale_mlp(features);
    require_finite(raw_scale, path + ".scale");
    const Tensor<T> sigma = add_scalar(softplus(raw_scale), static_cast<T>(kSigmaFloor));
    return reparameterize(mu, sigma, rng, mode);
}

template <typename T>
void UaBridge<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    mean_mlp.collect(prefix + ".mean", out);
    scale_mlp.collect(prefix + ".scale", out);
}

template <typename T>
CrossAttention<T>::CrossAttention(std::size_t dim, std::size_t h, Rng& rng)
    : heads(h), query(dim, dim, rng), key(dim, dim, rng), value(dim, dim, rng), output(dim, dim, rng) {
    if (h == 0 || dim % h != 0) {
        throw ConfigError("attention: dimension " + std::to_string(dim) +
                          " not divisible by " + std::to_string(h) + " heads");
    }
}

template <typename T>
Tensor<T> CrossAttention<T>::operator()(const Tensor<T>& q_src, const Tensor<T>& kv_src) const {
    const std::size_t d = dim();
    if (q_src.rank() < 2 || kv_src.rank() < 2 || q_src.dim(-1) != d || kv_src.dim(-1) != d) {
        throw DimensionError("attention: query source " + shape_str(q_src.shape()) +
                             " and key/value source " + shape_str(kv_src.shape()) +
                             " must both end in dimension " + std::to_string(d));
    }
    const std::size_t dh = d / heads;
    auto split_heads = [&](const Tensor<T>& t) {
        Shape s = t.shape();
        s.back() = dh;
        s.insert(s.end() - 1, heads);  // (..., n, heads, dh)
        return transpose(reshape(t, s), -3, -2);
    };
    const Tensor<T> q = split_heads(query(q_src));
    const Tensor<T> k = split_heads(key(kv_src));
    const Tensor<T> v = split_heads(value(kv_src));
    const Tensor<T> scores =
        scale(matmul(q, transpose(k, -1, -2)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    const Tensor<T> weights = softmax(scores, -1);
    if (attention_observer) {
        AttentionRecord rec{weights.shape(), {weights.data().begin(), weights.data().end()}};
        attention_observer(rec);
    }
    Tensor<T> ctx = transpose(matmul(weights, v), -3, -2);
    Shape out_shape = ctx.shape();
    out_shape.pop_back();
    out_shape.back() = d;
    return output(reshape(ctx, out_shape));
}

template <typename T>
void CrossAttention<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
}

template <typename T>
Tensor<T> dynamic_relu(const Tensor<T>& x, const Tensor<T>& a1, const Tensor<T>& b1,
                       const Tensor<T>& a2, const Tensor<T>& b2) {
    if (x.rank() != 5) {
        throw DimensionError("dynamic_relu: expected (B, C, T, H, W), got " + shape_str(x.shape()));
    }
    const Shape coeff{x.dim(0), x.dim(1)};
    const Shape view{x.dim(0), x.dim(1), 1, 1, 1};
    auto expand = [&](const Tensor<T>& c) {
        if (c.shape() != coeff) {
            throw DimensionError("dynamic_relu: coefficient " + shape_str(c.shape()) +
                                 " for input " + shape_str(x.shape()));
        }
        return reshape(c, view);
    };
    return maximum(add(mul(expand(a1), x), expand(b1)), add(mul(expand(a2), x), expand(b2)));
}

template <typename T>
DyRelu<T>::DyRelu(std::size_t c, std::size_t token_dim, Rng& rng)
    : channels(c), fc1(token_dim, token_dim, rng), fc2(token_dim, 4 * c, rng) {
    std::fill(fc2.weight.mutable_data().begin(), fc2.weight.mutable_data().end(), T(0));
}

template <typename T>
std::array<Tensor<T>, 4> DyRelu<T>::coefficients(const Tensor<T>& tokens) const {
    if (tokens.rank() != 3) {
        throw DimensionError("dy_relu: tokens must be (B, N, d), got " + shape_str(tokens.shape()));
    }
    const std::size_t batch = tokens.dim(0);
    const Tensor<T> context = mean(tokens, -2);
    const Tensor<T> residual = reshape(tanh(fc2(relu(fc1(context)))), Shape{batch, 4, channels});
    auto part = [&](std::size_t k) { return reshape(slice(residual, 1, k, 1), Shape{batch, channels}); };
    const T slope = static_cast<T>(kSlopeRange);
    const T offset = static_cast<T>(kOffsetRange);
    return {add_scalar(scale(part(0), slope), T(1)), scale(part(1), offset), scale(part(2), slope),
            scale(part(3), offset)};
}

template <typename T>
Tensor<T> DyRelu<T>::operator()(const Tensor<T>& x, const Tensor<T>& tokens) const {
    const auto c = coefficients(tokens);
    return dynamic_relu(x, c[0], c[1], c[2], c[3]);
}

template <typename T>
void DyRelu<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

void BlockConfig::validate() const {
    if (in_channels == 0 || out_channels == 0) throw ConfigError("block: channel counts must be positive");
    if (expansion == 0 || ffn_expansion == 0) throw ConfigError("block: expansion must be positive");
    if (stride != 1 && stride != 2) throw ConfigError("block: stride must be 1 or 2");
    if (!enable_mobile && !enable_former) {
        throw ConfigError("block: at least one of the Mobile and Former branches must be enabled");
    }
    if (enable_former && (token_dim == 0 || num_heads == 0 || token_dim % num_heads != 0)) {
        throw ConfigError("block: token_dim " + std::to_string(token_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (enable_cross_attention && !(enable_mobile && enable_former)) {
        throw ConfigError("block: cross attention needs both branches");
    }
    if (enable_bridge && !enable_cross_attention) {
        throw ConfigError("block: the uncertainty-aware bridge feeds cross attention, enable it too");
    }
    if (enable_dy_relu && !(enable_mobile && enable_former)) {
        throw ConfigError("block: dynamic ReLU needs both branches (tokens drive its coefficients)");
    }
}

template <typename T>
MobileToFormer<T>::MobileToFormer(const BlockConfig& cfg, Rng& rng, const std::string& path)
    : use_bridge(cfg.enable_bridge) {
    if (use_bridge) bridge = UaBridge<T>(cfg.in_channels, rng, path + ".bridge");
    proj = Linear<T>(cfg.in_channels, cfg.token_dim, rng);
    attn = CrossAttention<T>(cfg.token_dim, cfg.num_heads, rng);
}

template <typename T>
TokenSet<T> MobileToFormer<T>::operator()(const Tensor<T>& f_emb, const TokenSet<T>& z, Rng& rng,
                                          Mode mode) const {
    const Tensor<T> message = use_bridge ? bridge.forward(f_emb, rng, mode).sample : f_emb;
    return {add(z.tokens, attn(z.tokens, proj(message)))};
}

template <typename T>
void MobileToFormer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    if (use_bridge) bridge.collect(prefix + ".bridge", out);
    proj.collect(prefix + ".proj", out);
    attn.collect(prefix + ".attn", out);
}

template <typename T>
FormerSublayer<T>::FormerSublayer(const BlockConfig& cfg, Rng& rng)
    : norm1(cfg.token_dim),
      attn(cfg.token_dim, cfg.num_heads, rng),
      norm2(cfg.token_dim),
      ffn1(cfg.token_dim, cfg.ffn_expansion * cfg.token_dim, rng),
      ffn2(cfg.ffn_expansion * cfg.token_dim, cfg.token_dim, rng) {}

template <typename T>
TokenSet<T> FormerSublayer<T>::operator()(const TokenSet<T>& z) const {
    const Tensor<T> n1 = norm1(z.tokens);
    const Tensor<T> z1 = add(z.tokens, attn(n1, n1));
    return {add(z1, ffn2(gelu(ffn1(norm2(z1)))))};
}

template <typename T>
void FormerSublayer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    norm1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".ln2", out);
    ffn1.collect(prefix + ".ffn1", out);
    ffn2.collect(prefix + ".ffn2", out);
}

template <typename T>
MobileSublayer<T>::MobileSublayer(const BlockConfig& cfg, Rng& rng)
    : residual(cfg.in_channels == cfg.out_channels && cfg.stride == 1),
      use_dy_relu(cfg.enable_dy_relu) {
    const std::size_t hidden = cfg.expansion * cfg.in_channels;
    expand = Conv3d<T>(cfg.in_channels, hidden, 1, rng);
    if (use_dy_relu) act1 = DyRelu<T>(hidden, cfg.token_dim, rng);
    depthwise1 = Conv3d<T>(hidden, hidden, 3, rng, {{1, cfg.stride, cfg.stride}, hidden});
    depthwise2 = Conv3d<T>(hidden, hidden, 3, rng, {{1, 1, 1}, hidden});
    if (use_dy_relu) act2 = DyRelu<T>(hidden, cfg.token_dim, rng);
    project = Conv3d<T>(hidden, cfg.out_channels, 1, rng);
    mix = Conv3d<T>(cfg.out_channels, cfg.out_channels, 1, rng);
}

template <typename T>
Tensor<T> MobileSublayer<T>::operator()(const Tensor<T>& x, const TokenSet<T>& z) const {
    auto activate = [&](const DyRelu<T>& act, const Tensor<T>& h) {
        return use_dy_relu ? act(h, z.tokens) : relu(h);
    };
    Tensor<T> h = activate(act1, expand(x));
    h = activate(act2, depthwise2(depthwise1(h)));
    h = mix(project(h));
    return residual ? add(x, h) : h;
}

template <typename T>
void MobileSublayer<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    expand.collect(prefix + ".expand", out);
    if (use_dy_relu) act1.collect(prefix + ".act1", out);
    depthwise1.collect(prefix + ".depthwise1", out);
    depthwise2.collect(prefix + ".depthwise2", out);
    if (use_dy_relu) act2.collect(prefix + ".act2", out);
    project.collect(prefix + ".project", out);
    mix.collect(prefix + ".mix", out);
}

template <typename T>
FormerToMobile<T>::FormerToMobile(const BlockConfig& cfg, Rng& rng, const std::string& path)
    : use_bridge(cfg.enable_bridge) {
    if (use_bridge) bridge = UaBridge<T>(cfg.token_dim, rng, path + ".bridge");
    to_token = Linear<T>(cfg.out_channels, cfg.token_dim, rng);
    attn = CrossAttention<T>(cfg.token_dim, cfg.num_heads, rng);
    back = Linear<T>(cfg.token_dim, cfg.out_channels, rng);
}

template <typename T>
Tensor<T> FormerToMobile<T>::operator()(const Tensor<T>& x_local, const TokenSet<T>& z, Rng& rng,
                                        Mode mode) const {
    const Tensor<T> message = use_bridge ? bridge.forward(z.tokens, rng, mode).sample : z.tokens;
    return add(x_local, back(attn(to_token(x_local), message)));
}

template <typename T>
void FormerToMobile<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    if (use_bridge) bridge.collect(prefix + ".bridge", out);
    to_token.collect(prefix + ".to_token", out);
    attn.collect(prefix + ".attn", out);
    back.collect(prefix + ".back", out);
}

template <typename T>
Tensor<T> flatten_positions(const Tensor<T>& x) {
    if (x.rank() != 5) {
        throw DimensionError("flatten_positions: expected (B, C, T, H, W), got " + shape_str(x.shape()));
    }
    const Shape& s = x.shape();
    return reshape(permute(x, {0, 2, 3, 4, 1}), Shape{s[0], s[2] * s[3] * s[4], s[1]});
}

template <typename T>
Tensor<T> unflatten_positions(const Tensor<T>& f, const Shape& shape) {
    if (shape.size() != 5) throw DimensionError("unflatten_positions: target must be 5-d");
    return permute(reshape(f, Shape{shape[0], shape[2], shape[3], shape[4], shape[1]}), {0, 4, 1, 2, 3});
}

template <typename T>
MobileFormerBlock<T>::MobileFormerBlock(const BlockConfig& cfg, Rng& rng, const std::string& path)
    : config(cfg) {
    config.validate();
    if (cfg.enable_cross_attention) m2f = MobileToFormer<T>(cfg, rng, path + ".m2f");
    if (cfg.enable_former) former = FormerSublayer<T>(cfg, rng);
    if (cfg.enable_mobile) mobile = MobileSublayer<T>(cfg, rng);
    if (cfg.enable_cross_attention) f2m = FormerToMobile<T>(cfg, rng, path + ".f2m");
}

template <typename T>
std::pair<Tensor<T>, TokenSet<T>> MobileFormerBlock<T>::forward(const Tensor<T>& x,
                                                                const TokenSet<T>& z, Rng& rng,
                                                                Mode mode) const {
    if (config.enable_mobile && (x.rank() != 5 || x.dim(1) != config.in_channels)) {
        throw DimensionError("block expects (B, " + std::to_string(config.in_channels) +
                             ", T, H, W) features, got " + shape_str(x.shape()));
    }
    TokenSet<T> z1 = z;
    if (config.enable_cross_attention) z1 = m2f(flatten_positions(x), z, rng, mode);
    const TokenSet<T> z2 = config.enable_former ? former(z1) : z1;
    const Tensor<T> x1 = config.enable_mobile ? mobile(x, z2) : x;
    if (!config.enable_cross_attention) return {x1, z2};
    const Tensor<T> x2 = unflatten_positions(f2m(flatten_positions(x1), z2, rng, mode), x1.shape());
    return {x2, z2};
}

template <typename T>
void MobileFormerBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
    if (config.enable_cross_attention) m2f.collect(prefix + ".m2f", out);
    if (config.enable_former) former.collect(prefix + ".former", out);
    if (config.enable_mobile) mobile.collect(prefix + ".mobile", out);
    if (config.enable_cross_attention) f2m.collect(prefix + ".f2m", out);
}

template <typename T>
std::array<std::size_t, 3> MobileFormerBlock<T>::output_extents(std::array<std::size_t, 3> in) const {
    if (!config.enable_mobile || config.stride == 1) return in;
    return {in[0], (in[1] - 1) / config.stride + 1, (in[2] - 1) / config.stride + 1};
}

#define UAMF_INSTANTIATE_BLOCKS(T)                                                             \
    template Tensor<T> reparameterize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    template GaussianMessage<T> reparameterize(const Tensor<T>&, const Tensor<T>&, Rng&, Mode); \
    template Tensor<T> dynamic_relu(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                    const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> flatten_positions(const Tensor<T>&);                                    \
    template Tensor<T> unflatten_positions(const Tensor<T>&, const Shape&);                    \
    template class UaBridge<T>;                                                                \
    template class CrossAttention<T>;                                                          \
    template class DyRelu<T>;                                                                  \
    template class MobileToFormer<T>;                                                          \
    template class FormerSublayer<T>;                                                          \
    template class MobileSublayer<T>;                                                          \
    template class FormerToMobile<T>;                                                          \
    template class MobileFormerBlock<T>;

UAMF_INSTANTIATE_BLOCKS(float)
UAMF_INSTANTIATE_BLOCKS(double)

#undef UAMF_INSTANTIATE_BLOCKS

} // namespace uamf
