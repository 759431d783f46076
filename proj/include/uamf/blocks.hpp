#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uamf/layers.hpp"

namespace uamf {

/// Global tokens of the Former branch, shape (..., N_tok, d).
template <typename T>
struct TokenSet {
    Tensor<T> tokens;
};

/// Diagonal Gaussian over an inter-branch message and the message drawn from it.
template <typename T>
struct GaussianMessage {
    Tensor<T> mu;
    Tensor<T> sigma;
    Tensor<T> sample;
};

/// Lower bound added to the softplus scale.
inline constexpr double kSigmaFloor = 1e-6;

/// Initial bias of the scale MLP output. softplus(-3) ~ 0.05, so early
/// training is not swamped by sampling noise; the scale is learned from there.
inline constexpr double kSigmaInitBias = -3.0;

/// sample = mu + noise * sigma; noise is a constant (no gradient flows into it).
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& sigma, const Tensor<T>& noise);

/// Train mode draws standard-normal noise per element from `rng`; eval mode
/// returns mu itself and consumes no randomness.
template <typename T>
GaussianMessage<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& sigma, Rng& rng, Mode mode);

/// Uncertainty-aware bridge: position-wise mean and scale MLPs followed by a
/// reparameterized draw.
template <typename T>
class UaBridge {
public:
    UaBridge() = default;
    UaBridge(std::size_t dim, Rng& rng, std::string path);

    /// features (..., P, C) -> message of the same shape.
    GaussianMessage<T> forward(const Tensor<T>& features, Rng& rng, Mode mode) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    Mlp<T> mean_mlp;
    Mlp<T> scale_mlp;
    std::string path;  // used in error messages
};

struct AttentionRecord {
    Shape shape;                  // (..., heads, queries, keys)
    std::vector<double> weights;  // row-major, rows over keys sum to one
};

using AttentionObserver = std::function<void(const AttentionRecord&)>;

/// Installs a per-thread hook that sees every attention weight matrix.
/// Pass an empty function to remove it.
void set_attention_observer(AttentionObserver observer);

/// Multi-head softmax(QK^T / sqrt(d_head)) V. The receiver supplies queries,
/// the sender supplies keys and values.
template <typename T>
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(std::size_t dim, std::size_t heads, Rng& rng);

    /// q_src (..., A, d), kv_src (..., B, d) -> (..., A, d).
    Tensor<T> operator()(const Tensor<T>& q_src, const Tensor<T>& kv_src) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t dim() const { return query.in_features(); }
    std::size_t heads = 1;
    Linear<T> query, key, value, output;
};

/// max(a1*x + b1, a2*x + b2) with per-(batch, channel) coefficients.
/// x (B, C, T, H, W); each coefficient (B, C).
template <typename T>
Tensor<T> dynamic_relu(const Tensor<T>& x, const Tensor<T>& a1, const Tensor<T>& b1,
                       const Tensor<T>& a2, const Tensor<T>& b2);

/// Dynamic ReLU whose coefficients come from the token mean. The last layer is
/// zero-initialized so the layer starts as a plain ReLU.
template <typename T>
class DyRelu {
public:
    static constexpr double kSlopeRange = 1.0;
    static constexpr double kOffsetRange = 0.5;

    DyRelu() = default;
    DyRelu(std::size_t channels, std::size_t token_dim, Rng& rng);

    /// Coefficients (a1, b1, a2, b2), each (B, C), from tokens (B, N, d).
    std::array<Tensor<T>, 4> coefficients(const Tensor<T>& tokens) const;
    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& tokens) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    std::size_t channels = 0;
    Linear<T> fc1, fc2;
};

struct BlockConfig {
    std::size_t in_channels = 24;
    std::size_t out_channels = 24;
    std::size_t token_dim = 192;
    std::size_t num_heads = 8;
    std::size_t expansion = 2;      // Mobile hidden width multiplier
    std::size_t ffn_expansion = 2;  // Former feed-forward width multiplier
    std::size_t stride = 1;         // spatial stride of the first depthwise conv
    bool enable_mobile = true;
    bool enable_former = true;
    bool enable_cross_attention = true;
    bool enable_bridge = true;
    bool enable_dy_relu = true;

    void validate() const;
};

/// Mobile -> Former: z' = z + CrossAttn(q = z, kv = proj(bridge(f).sample)).
template <typename T>
class MobileToFormer {
public:
    MobileToFormer() = default;
    MobileToFormer(const BlockConfig& cfg, Rng& rng, const std::string& path);

    /// f_emb (..., P, C), tokens (..., N, d).
    TokenSet<T> operator()(const Tensor<T>& f_emb, const TokenSet<T>& z, Rng& rng, Mode mode) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    bool use_bridge = true;
    UaBridge<T> bridge;
    Linear<T> proj;
    CrossAttention<T> attn;
};

/// Pre-norm self-attention and feed-forward over the tokens, both residual.
template <typename T>
class FormerSublayer {
public:
    FormerSublayer() = default;
    FormerSublayer(const BlockConfig& cfg, Rng& rng);

    TokenSet<T> operator()(const TokenSet<T>& z) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    LayerNorm<T> norm1;
    CrossAttention<T> attn;
    LayerNorm<T> norm2;
    Linear<T> ffn1, ffn2;
};

/// pw -> act -> dw3 -> dw3 -> act -> pw -> pw, residual when shapes allow.
template <typename T>
class MobileSublayer {
public:
    MobileSublayer() = default;
    MobileSublayer(const BlockConfig& cfg, Rng& rng);

    /// x (B, C_in, T, H, W); tokens (B, N, d) are only read when DY-ReLU is on.
    Tensor<T> operator()(const Tensor<T>& x, const TokenSet<T>& z) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    bool residual = false;
    bool use_dy_relu = true;
    Conv3d<T> expand, depthwise1, depthwise2, project, mix;
    DyRelu<T> act1, act2;
};

/// Former -> Mobile: x' = x + back(CrossAttn(q = to_token(x), kv = bridge(z).sample)).
template <typename T>
class FormerToMobile {
public:
    FormerToMobile() = default;
    FormerToMobile(const BlockConfig& cfg, Rng& rng, const std::string& path);

    /// x_local (..., P, C), tokens (..., N, d).
    Tensor<T> operator()(const Tensor<T>& x_local, const TokenSet<T>& z, Rng& rng, Mode mode) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    bool use_bridge = true;
    UaBridge<T> bridge;
    Linear<T> to_token;
    CrossAttention<T> attn;
    Linear<T> back;
};

/// (B, C, T, H, W) -> (B, T*H*W, C)
template <typename T>
Tensor<T> flatten_positions(const Tensor<T>& x);
/// Inverse of flatten_positions for the given (B, C, T, H, W) shape.
template <typename T>
Tensor<T> unflatten_positions(const Tensor<T>& f, const Shape& shape);

template <typename T>
class MobileFormerBlock {
public:
    MobileFormerBlock() = default;
    MobileFormerBlock(const BlockConfig& cfg, Rng& rng, const std::string& path);

    /// z1 = m2f(x, z); z2 = former(z1); x1 = mobile(x, z2); x2 = f2m(x1, z2).
    /// Disabled components pass their input through.
    std::pair<Tensor<T>, TokenSet<T>> forward(const Tensor<T>& x, const TokenSet<T>& z, Rng& rng,
                                              Mode mode) const;
    void collect(const std::string& prefix, ParameterList<T>& out) const;

    /// Output spatial-temporal extents for an input of (T, H, W).
    std::array<std::size_t, 3> output_extents(std::array<std::size_t, 3> in) const;

    BlockConfig config;
    MobileToFormer<T> m2f;
    FormerSublayer<T> former;
    MobileSublayer<T> mobile;
    FormerToMobile<T> f2m;
};

} // namespace uamf
