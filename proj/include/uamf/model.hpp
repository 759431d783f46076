#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "uamf/blocks.hpp"

namespace uamf {

/// Architecture hyperparameters. Defaults are the full-size network
/// (224x224 input, 12 blocks, 6 tokens of width 192); desk() is the small
/// variant used for CPU experiments.
struct ModelConfig {
    std::size_t num_frames = 8;
    std::size_t input_height = 224;
    std::size_t input_width = 224;
    std::size_t stem_channels = 24;
    std::vector<std::size_t> channel_schedule{24, 48, 96, 128};
    std::size_t num_blocks = 12;
    std::size_t num_tokens = 6;
    std::size_t token_dim = 192;
    std::size_t num_heads = 8;
    std::size_t num_classes = 101;
    std::size_t expansion = 2;
    std::size_t ffn_expansion = 2;
    std::size_t head_hidden = 256;
    bool enable_bridge = true;
    bool enable_cross_attention = true;
    bool enable_dy_relu = true;
    bool enable_mobile = true;
    bool enable_former = true;

    static ModelConfig desk();
    /// Smallest configuration that still exercises every code path.
    static ModelConfig tiny();

    void validate() const;
    /// One entry per block: stages split the blocks as evenly as possible
    /// (earlier stages take the remainder); the first block of every stage
    /// after the first downsamples H and W by 2.
    std::vector<BlockConfig> block_configs() const;

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;                    // (B, K)
    TokenSet<T> tokens;                  // final tokens; undefined without the Former branch
    Tensor<T> features;                  // final CNN features (B, C, T, H, W)
    std::vector<Tensor<T>> block_features;
    std::vector<Tensor<T>> block_tokens;
};

/// Stem -> stacked Mobile-Former blocks -> concat(pooled CNN, first token) -> two dense layers.
template <typename T>
class UaMobileFormer {
public:
    UaMobileFormer(const ModelConfig& config, Rng& rng);

    /// frames (B, 2, M, H, W) -> F_emb (B, stem_channels, ceil(M/2), ceil(H/2), ceil(W/2)).
    Tensor<T> stem(const Tensor<T>& frames) const;
    ForwardResult<T> forward(const Tensor<T>& frames, Rng& rng, Mode mode) const;

    /// Stable, hierarchically named parameter inventory.
    ParameterList<T> parameters() const;
    std::size_t parameter_count() const;
    const ModelConfig& config() const noexcept { return config_; }

private:
    ModelConfig config_;
    Conv3d<T> stem_;
    Tensor<T> tokens_;       // (N, d)
    Linear<T> token_input_;  // Former-only: pooled stem features -> tokens
    std::vector<MobileFormerBlock<T>> blocks_;
    Linear<T> head1_, head2_;
};

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Stacks FrameStacks of shape (M, 2, H, W) into a (B, 2, M, H, W) batch.
template <typename T>
Tensor<T> frames_to_batch(const std::vector<Tensor<T>>& stacks);

struct FeatureMapExport {
    std::size_t block = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    double min = 0.0;
    double max = 0.0;
    std::vector<double> values;  // channel- and time-averaged map, row-major
    std::filesystem::path image;
};

/// Eval-mode forward on one (1, 2, M, H, W) input. Writes block_XX.pgm
/// (min-max scaled 8-bit), feature_maps.csv and token_norms.csv into `dir`.
template <typename T>
std::vector<FeatureMapExport> export_feature_maps(const UaMobileFormer<T>& model,
                                                  const Tensor<T>& frames,
                                                  const std::filesystem::path& dir);

/// Reads a binary (P5) portable graymap; returns (width, height, pixels).
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);

} // namespace uamf
