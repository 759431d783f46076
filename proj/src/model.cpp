#include "uamf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uamf/error.hpp"

namespace uamf {

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.num_frames = 8;
    c.input_height = 64;
    c.input_width = 64;
    c.stem_channels = 8;
    c.channel_schedule = {8, 16, 24, 32};
    c.num_blocks = 4;
    c.num_tokens = 4;
    c.token_dim = 32;
    c.num_heads = 2;
    c.num_classes = 4;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.num_frames = 4;
    c.input_height = 8;
    c.input_width = 8;
    c.stem_channels = 4;
    c.channel_schedule = {4, 4};
    c.num_blocks = 2;
    c.num_tokens = 2;
    c.token_dim = 8;
    c.num_heads = 2;
    c.num_classes = 3;
    c.head_hidden = 16;
    return c;
}

void ModelConfig::validate() const {
    if (num_frames < 2 || input_height < 2 || input_width < 2) {
        throw ConfigError("model: the stem needs at least 2 frames and 2x2 pixels, got " +
                          std::to_string(num_frames) + " frames of " + std::to_string(input_height) +
                          "x" + std::to_string(input_width));
    }
    if (stem_channels == 0) throw ConfigError("model: stem_channels must be positive");
    if (channel_schedule.empty()) throw ConfigError("model: channel_schedule is empty");
    for (auto c : channel_schedule)
        if (c == 0) throw ConfigError("model: channel_schedule entries must be positive");
    if (num_blocks < 1 || num_blocks < channel_schedule.size()) {
        throw ConfigError("model: " + std::to_string(num_blocks) + " blocks cannot cover " +
                          std::to_string(channel_schedule.size()) + " stages");
    }
    if (num_classes < 1) throw ConfigError("model: num_classes must be positive");
    if (head_hidden < 1) throw ConfigError("model: head_hidden must be positive");
    if (enable_former && num_tokens < 1) throw ConfigError("model: num_tokens must be positive");
    for (const auto& b : block_configs()) b.validate();
}

std::vector<BlockConfig> ModelConfig::block_configs() const {
    std::vector<BlockConfig> out;
    const std::size_t stages = channel_schedule.size();
    if (stages == 0) return out;
    const std::size_t base = num_blocks / stages, extra = num_blocks % stages;
    std::size_t in = stem_channels;
    for (std::size_t s = 0; s < stages; ++s) {
        const std::size_t count = base + (s < extra ? 1 : 0);
        for (std::size_t i = 0; i < count; ++i) {
            BlockConfig b;
            b.in_channels = in;
            b.out_channels = channel_schedule[s];
            b.token_dim = token_dim;
            b.num_heads = num_heads;
            b.expansion = expansion;
            b.ffn_expansion = ffn_expansion;
            b.stride = (s > 0 && i == 0) ? 2 : 1;
            b.enable_mobile = enable_mobile;
            b.enable_former = enable_former;
            b.enable_cross_attention = enable_cross_attention;
            b.enable_bridge = enable_bridge;
            b.enable_dy_relu = enable_dy_relu;
            out.push_back(b);
            in = b.out_channels;
        }
    }
    return out;
}

template <typename T>
UaMobileFormer<T>::UaMobileFormer(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    stem_ = Conv3d<T>(2, config_.stem_channels, 3, rng, {{2, 2, 2}, 1});
    if (config_.enable_former) {
        std::vector<T> init(config_.num_tokens * config_.token_dim);
        for (auto& v : init) v = static_cast<T>(0.02 * rng.normal());
        tokens_ = Tensor<T>(Shape{config_.num_tokens, config_.token_dim}, std::move(init), true);
        if (!config_.enable_mobile) {
            token_input_ = Linear<T>(config_.stem_channels, config_.token_dim, rng);
        }
    }
    const auto cfgs = config_.block_configs();
    blocks_.reserve(cfgs.size());
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        blocks_.emplace_back(cfgs[i], rng, "blocks." + std::to_string(i));
    }
    std::size_t features = 0;
    if (config_.enable_mobile) features += cfgs.back().out_channels;
    if (config_.enable_former) features += config_.token_dim;
    head1_ = Linear<T>(features, config_.head_hidden, rng);
    head2_ = Linear<T>(config_.head_hidden, config_.num_classes, rng);
}

template <typename T>
Tensor<T> UaMobileFormer<T>::stem(const Tensor<T>& frames) const {
    const Shape& s = frames.shape();
    if (s.size() != 5 || s[1] != 2) {
        throw DimensionError("stem: expected (batch, 2, M, H, W) frames, got " + shape_str(s));
    }
    if (s[2] < 2 || s[3] < 2 || s[4] < 2) {
        throw ConfigError("stem: every input extent must be at least 2, got " + shape_str(s));
    }
    return stem_(frames);
}

namespace {

template <typename T>
Tensor<T> pool_positions(const Tensor<T>& x) {
    const Shape& s = x.shape();
    return mean(reshape(x, Shape{s[0], s[1], s[2] * s[3] * s[4]}), 2);
}

[[noreturn]] void rethrow_for_block(std::size_t index) {
    const std::string where = "block " + std::to_string(index) + ": ";
    try {
        throw;
    } catch (const DimensionError& e) {
        throw DimensionError(where + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
    } catch (const NumericError& e) {
        throw NumericError(where + e.what());
    }
}

} // namespace

template <typename T>
ForwardResult<T> UaMobileFormer<T>::forward(const Tensor<T>& frames, Rng& rng, Mode mode) const {
    const Shape& s = frames.shape();
    if (s.size() != 5 || s[2] != config_.num_frames || s[3] != config_.input_height ||
        s[4] != config_.input_width) {
        throw DimensionError("model expects (batch, 2, " + std::to_string(config_.num_frames) + ", " +
                             std::to_string(config_.input_height) + ", " +
                             std::to_string(config_.input_width) + ") frames, got " + shape_str(s));
    }
    const std::size_t batch = s[0];
    ForwardResult<T> r;
    Tensor<T> x = stem(frames);
    TokenSet<T> z;
    if (config_.enable_former) {
        const Shape ts{batch, config_.num_tokens, config_.token_dim};
        z.tokens = add(Tensor<T>::zeros(ts),
                       reshape(tokens_, Shape{1, config_.num_tokens, config_.token_dim}));
        if (!config_.enable_mobile) {
            z.tokens = add(z.tokens, reshape(token_input_(pool_positions(x)),
                                             Shape{batch, 1, config_.token_dim}));
        }
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        try {
            std::tie(x, z) = blocks_[i].forward(x, z, rng, mode);
        } catch (const Error&) {
            rethrow_for_block(i);
        }
        r.block_features.push_back(x);
        r.block_tokens.push_back(z.tokens);
    }
    std::vector<Tensor<T>> parts;
    if (config_.enable_mobile) parts.push_back(pool_positions(x));
    if (config_.enable_former) {
        parts.push_back(reshape(slice(z.tokens, 1, 0, 1), Shape{batch, config_.token_dim}));
    }
    const Tensor<T> joined = parts.size() == 1 ? parts.front() : concat(parts, 1);
    r.logits = head2_(gelu(head1_(joined)));
    r.tokens = z;
    r.features = x;
    return r;
}

template <typename T>
ParameterList<T> UaMobileFormer<T>::parameters() const {
    ParameterList<T> out;
    stem_.collect("stem", out);
    if (config_.enable_former) {
        out.push_back({"tokens", tokens_});
        if (!config_.enable_mobile) token_input_.collect("token_input", out);
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("blocks." + std::to_string(i), out);
    }
    head1_.collect("head.fc1", out);
    head2_.collect("head.fc2", out);
    return out;
}

template <typename T>
std::size_t UaMobileFormer<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    std::vector<T> onehot(batch * classes, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
            throw DataError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                            std::to_string(classes) + ")");
        }
        onehot[b * classes + static_cast<std::size_t>(labels[b])] = T(1);
    }
    const Tensor<T> picked = mul(log_softmax(logits, 1), Tensor<T>(logits.shape(), std::move(onehot)));
    return scale(sum(picked), T(-1) / static_cast<T>(batch));
}

template <typename T>
Tensor<T> frames_to_batch(const std::vector<Tensor<T>>& stacks) {
    if (stacks.empty()) throw DimensionError("frames_to_batch: empty batch");
    const Shape first = stacks.front().shape();
    if (first.size() != 4) {
        throw DimensionError("frames_to_batch: expected (M, 2, H, W) stacks, got " + shape_str(first));
    }
    const std::size_t m = first[0], c = first[1], plane = first[2] * first[3];
    std::vector<T> out;
    out.reserve(stacks.size() * shape_numel(first));
    for (const auto& st : stacks) {
        if (st.shape() != first) {
            throw DimensionError("frames_to_batch: mixed stack shapes " + shape_str(first) + " and " +
                                 shape_str(st.shape()));
        }
        const auto d = st.data();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t f = 0; f < m; ++f) {
                const T* src = d.data() + (f * c + ch) * plane;
                out.insert(out.end(), src, src + plane);
            }
    }
    return Tensor<T>(Shape{stacks.size(), c, m, first[2], first[3]}, std::move(out));
}

template <typename T>
std::vector<FeatureMapExport> export_feature_maps(const UaMobileFormer<T>& model,
                                                  const Tensor<T>& frames,
                                                  const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    NoGradGuard no_grad;
    Rng rng(0);  // eval mode draws nothing
    const auto result = model.forward(frames, rng, Mode::eval);

    std::vector<FeatureMapExport> maps;
    std::ofstream summary(dir / "feature_maps.csv");
    std::ofstream norms(dir / "token_norms.csv");
    if (!summary || !norms) throw IoError("cannot write feature exports into " + dir.string());
    summary << "block,height,width,min,max,image\n";
    norms << "block,token,norm\n";
    summary << std::setprecision(17);
    norms << std::setprecision(17);

    for (std::size_t b = 0; b < result.block_features.size(); ++b) {
        const auto& f = result.block_features[b];
        const Shape& s = f.shape();
        const std::size_t channels = s[1], frames_t = s[2], h = s[3], w = s[4];
        FeatureMapExport e;
        e.block = b;
        e.height = h;
        e.width = w;
        e.values.assign(h * w, 0.0);
        const auto data = f.data();  // sample 0 is the leading slab
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = 0; t < frames_t; ++t)
                for (std::size_t i = 0; i < h * w; ++i)
                    e.values[i] += static_cast<double>(data[(c * frames_t + t) * h * w + i]);
        for (auto& v : e.values) v /= static_cast<double>(channels * frames_t);
        const auto [lo, hi] = std::minmax_element(e.values.begin(), e.values.end());
        e.min = *lo;
        e.max = *hi;

        std::ostringstream name;
        name << "block_" << std::setw(2) << std::setfill('0') << b << ".pgm";
        e.image = dir / name.str();
        std::ofstream img(e.image, std::ios::binary);
        if (!img) throw IoError("cannot write " + e.image.string());
        img << "P5\n" << w << ' ' << h << "\n255\n";
        const double range = e.max - e.min;
        for (double v : e.values) {
            const double q = range > 0.0 ? std::round((v - e.min) / range * 255.0) : 0.0;
            img.put(static_cast<char>(static_cast<std::uint8_t>(q)));
        }
        summary << b << ',' << h << ',' << w << ',' << e.min << ',' << e.max << ',' << name.str()
                << '\n';

        if (b < result.block_tokens.size() && result.block_tokens[b].defined()) {
            const auto& z = result.block_tokens[b];
            const std::size_t n = z.dim(1), d = z.dim(2);
            const auto zd = z.data();
            for (std::size_t k = 0; k < n; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double v = static_cast<double>(zd[k * d + j]);
                    acc += v * v;
                }
                norms << b << ',' << k << ',' << std::sqrt(acc) << '\n';
            }
        }
        maps.push_back(std::move(e));
    }
    return maps;
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string magic;
    int maxval = 0;
    GrayImage img;
    is >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255) throw DataError(path.string() + ": not an 8-bit P5 image");
    is.get();
    img.pixels.resize(img.width * img.height);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw DataError(path.string() + ": truncated image");
    return img;
}

#define UAMF_INSTANTIATE_MODEL(T)                                                              \
    template class UaMobileFormer<T>;                                                          \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                  \
    template Tensor<T> frames_to_batch(const std::vector<Tensor<T>>&);                         \
    template std::vector<FeatureMapExport> export_feature_maps(                                \
        const UaMobileFormer<T>&, const Tensor<T>&, const std::filesystem::path&);

UAMF_INSTANTIATE_MODEL(float)
UAMF_INSTANTIATE_MODEL(double)

#undef UAMF_INSTANTIATE_MODEL

} // namespace uamf
