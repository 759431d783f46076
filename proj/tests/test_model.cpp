#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

#include "support.hpp"
#include "uamf/checkpoint.hpp"
#include "uamf/error.hpp"
#include "uamf/model.hpp"
#include "uamf/training.hpp"

using namespace uamf;

namespace {

template <typename T>
std::vector<T> copy(const Tensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

Tensor<float> frames_for(const ModelConfig& c, std::size_t batch, Rng& rng) {
    std::vector<float> v(batch * 2 * c.num_frames * c.input_height * c.input_width);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor<float>({batch, 2, c.num_frames, c.input_height, c.input_width}, std::move(v));
}

std::set<std::string> names(const ModelConfig& c) {
    Rng rng(0);
    UaMobileFormer<float> m(c, rng);
    std::set<std::string> out;
    for (const auto& p : m.parameters()) out.insert(p.name);
    return out;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("stem on full-size input gives 4x112x112 with 24 channels") {
    ModelConfig c;  // full-size defaults
    c.num_blocks = 4;
    Rng rng(61);
    UaMobileFormer<float> m(c, rng);
    const auto f = m.stem(frames_for(c, 1, rng));
    CHECK(f.shape() == Shape{1, 24, 4, 112, 112});
}

TEST_CASE("stem at desk scale") {
    const auto c = ModelConfig::desk();
    Rng rng(62);
    UaMobileFormer<float> m(c, rng);
    const auto f = m.stem(frames_for(c, 2, rng));
    CHECK(f.shape() == Shape{2, c.stem_channels, 4, 32, 32});
}

TEST_CASE("stem rejects inputs below 2 per axis") {
    auto c = ModelConfig::tiny();
    c.num_frames = 1;
    Rng rng(63);
    CHECK_THROWS_AS(UaMobileFormer<float>(c, rng), ConfigError);
}

TEST_CASE("stem gradient") {
    const auto c = ModelConfig::tiny();
    Rng rng(64);
    UaMobileFormer<double> m(c, rng);
    auto x = testing::random_leaf({1, 2, c.num_frames, c.input_height, c.input_width}, rng);
    ParameterList<double> params = m.parameters();
    std::vector<Tensor<double>> inputs{x};
    for (auto& p : params)
        if (p.name.rfind("stem.", 0) == 0) inputs.push_back(p.tensor);
    CHECK(inputs.size() == 3);
    CHECK(testing::fd_error([&](const std::vector<Tensor<double>>& in) { return testing::weighted_sum(m.stem(in[0])); },
                            inputs) < 1e-4);
}

TEST_CASE("logits have shape (batch, K) across random configs") {
    Rng rng(65);
    for (int trial = 0; trial < 6; ++trial) {
        ModelConfig c = ModelConfig::tiny();
        c.num_frames = 2 + rng.below(4);
        c.input_height = 4 + rng.below(6);
        c.input_width = 4 + rng.below(6);
        c.num_classes = 2 + rng.below(6);
        c.num_tokens = 1 + rng.below(3);
        c.num_blocks = 2 + rng.below(2);
        Rng init(trial);
        UaMobileFormer<float> m(c, init);
        const std::size_t batch = 1 + rng.below(3);
        const auto r = m.forward(frames_for(c, batch, rng), rng, Mode::train);
        CHECK(r.logits.shape() == Shape{batch, c.num_classes});
        CHECK(r.block_features.size() == c.num_blocks);
    }
}

TEST_CASE("wrong input extents name the expectation") {
    const auto c = ModelConfig::tiny();
    Rng rng(66);
    UaMobileFormer<float> m(c, rng);
    CHECK_THROWS_AS(m.forward(Tensor<float>::zeros({1, 2, 3, 8, 8}), rng, Mode::eval), DimensionError);
}

TEST_CASE("eval-mode forward is bitwise repeatable") {
    const auto c = ModelConfig::tiny();
    Rng rng(67);
    UaMobileFormer<float> m(c, rng);
    const auto x = frames_for(c, 3, rng);
    Rng a(1), b(2);
    CHECK(copy(m.forward(x, a, Mode::eval).logits) == copy(m.forward(x, b, Mode::eval).logits));
}

TEST_CASE("softmax of logits is a distribution and the loss is non-negative") {
    const auto c = ModelConfig::tiny();
    Rng rng(68);
    UaMobileFormer<double> m(c, rng);
    std::vector<double> v(2 * 2 * c.num_frames * c.input_height * c.input_width);
    for (auto& x : v) x = rng.uniform();
    const Tensor<double> x({2, 2, c.num_frames, c.input_height, c.input_width}, v);
    const auto logits = m.forward(x, rng, Mode::train).logits;
    const auto p = softmax(logits, -1);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < c.num_classes; ++k) s += p.data()[r * c.num_classes + k];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    const std::vector<int> labels{0, 2};
    CHECK(cross_entropy(logits, labels).item() >= 0.0);
}

TEST_CASE("cross-entropy analytics") {
    for (std::size_t k : {2u, 10u, 101u}) {
        const auto logits = Tensor<double>::full({3, k}, 0.7);
        const std::vector<int> labels{0, int(k / 2), int(k - 1)};
        CHECK(std::abs(cross_entropy(logits, labels).item() - std::log(double(k))) < 1e-9);
    }
    const auto sharp = Tensor<double>({1, 3}, {0.0, 80.0, 0.0});
    const std::vector<int> one{1};
    CHECK(cross_entropy(sharp, one).item() < 1e-30);
}

TEST_CASE("cross-entropy matches a direct evaluation") {
    Rng rng(69);
    const auto logits = testing::random_leaf({4, 5}, rng, 2.0);
    const std::vector<int> labels{3, 0, 4, 1};
    double ref = 0.0;
    for (std::size_t b = 0; b < 4; ++b) {
        double z = 0.0;
        for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits.data()[b * 5 + k]);
        ref -= logits.data()[b * 5 + labels[b]] - std::log(z);
    }
    ref /= 4;
    CHECK(cross_entropy(logits, labels).item() == doctest::Approx(ref).epsilon(1e-12));
    CHECK(testing::fd_error([&](const std::vector<Tensor<double>>& in) { return cross_entropy(in[0], labels); },
                            {logits}) < 1e-4);
}

TEST_CASE("cross-entropy rejects labels out of range") {
    const auto logits = Tensor<double>::zeros({2, 3});
    const std::vector<int> bad{0, 3};
    CHECK_THROWS_AS(cross_entropy(logits, bad), DataError);
    const std::vector<int> neg{-1, 0};
    CHECK_THROWS_AS(cross_entropy(logits, neg), DataError);
}

TEST_CASE("parameter names are unique and counts are stable") {
    struct Golden {
        ModelConfig config;
        std::size_t count;
    };
    const std::vector<Golden> goldens = {
        {ModelConfig::tiny(), 6343},
        {ModelConfig::desk(), 165500},
        {ModelConfig{}, 13566997},
    };
    for (const auto& g : goldens) {
        Rng a(1), b(2);
        UaMobileFormer<float> m(g.config, a);
        UaMobileFormer<double> n(g.config, b);
        CHECK(m.parameter_count() == g.count);
        CHECK(n.parameter_count() == g.count);
        std::set<std::string> seen;
        for (const auto& p : m.parameters()) {
            CHECK(seen.insert(p.name).second);
            CHECK(p.tensor.requires_grad());
        }
    }
}

TEST_CASE("mobile-only and full configs differ only in the toggled components") {
    const auto base = ModelConfig::desk();
    const auto& rows = ablation_rows();
    const auto row1 = names(apply_ablation_row(base, rows[0]));
    const auto row5 = names(apply_ablation_row(base, rows[4]));
    for (const auto& n : row1) CHECK(row5.count(n) == 1);
    for (const auto& n : row5) {
        if (row1.count(n)) continue;
        const bool toggled = n == "tokens" || n.find(".m2f.") != std::string::npos ||
                             n.find(".f2m.") != std::string::npos || n.find(".former.") != std::string::npos ||
                             n.find(".act1.") != std::string::npos || n.find(".act2.") != std::string::npos;
        INFO(n);
        CHECK(toggled);
    }
}

TEST_CASE("without the Former branch there are no tokens to depend on") {
    auto c = ModelConfig::tiny();
    c.enable_former = false;
    c.enable_cross_attention = false;
    c.enable_bridge = false;
    c.enable_dy_relu = false;
    Rng rng(70);
    UaMobileFormer<float> m(c, rng);
    for (const auto& p : m.parameters()) CHECK(p.name != "tokens");
    const auto x = frames_for(c, 2, rng);
    const auto r = m.forward(x, rng, Mode::eval);
    CHECK_FALSE(r.tokens.tokens.defined());

    // Two models that share every Mobile parameter but were built from different
    // token streams produce identical logits.
    Rng other(71);
    UaMobileFormer<float> twin(c, other);
    auto dst = twin.parameters();
    const auto src = m.parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
    CHECK(copy(twin.forward(x, rng, Mode::eval).logits) == copy(r.logits));
}

TEST_CASE("checkpoint round-trip is bitwise") {
    testing::TempDir dir("ckpt");
    const auto c = ModelConfig::tiny();
    Rng rng(72);
    UaMobileFormer<float> m(c, rng);
    const auto x = frames_for(c, 2, rng);
    const auto before = copy(m.forward(x, rng, Mode::eval).logits);
    save_checkpoint(dir.path() / "m.ckpt", make_checkpoint(m, rng.state()));
    const auto ck = load_checkpoint(dir.path() / "m.ckpt");
    CHECK(ck.config == c);
    CHECK(ck.rng_state == rng.state());
    const auto back = model_from_checkpoint<float>(ck);
    const auto pa = m.parameters(), pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(copy(pa[i].tensor) == copy(pb[i].tensor));
    }
    CHECK(copy(back.forward(x, rng, Mode::eval).logits) == before);

    // 64-bit parameters survive as well.
    Rng r64(73);
    UaMobileFormer<double> d(c, r64);
    const auto bytes = encode_checkpoint(make_checkpoint(d));
    const auto d2 = model_from_checkpoint<double>(decode_checkpoint(bytes));
    CHECK(copy(d2.parameters()[0].tensor) == copy(d.parameters()[0].tensor));
}

TEST_CASE("checkpoint errors are distinct") {
    const auto c = ModelConfig::tiny();
    Rng rng(74);
    UaMobileFormer<float> m(c, rng);
    const std::string bytes = encode_checkpoint(make_checkpoint(m));
    CHECK(bytes.substr(0, 4) == "UAMF");

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointVersionError);
    std::string bad_version = bytes;
    bad_version[4] = 99;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointVersionError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointTruncatedError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 2)), CheckpointVersionError);

    auto other = c;
    other.token_dim = 12;
    Rng r2(75);
    UaMobileFormer<float> target(other, r2);
    try {
        apply_checkpoint(target, decode_checkpoint(bytes));
        FAIL("expected CheckpointShapeError");
    } catch (const CheckpointShapeError& e) {
        CHECK(std::string(e.what()).find("tokens") != std::string::npos);
    }
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), DataError);
}

TEST_CASE("feature export matches in-memory activations") {
    testing::TempDir dir("export");
    const auto c = ModelConfig::tiny();
    Rng rng(76);
    UaMobileFormer<float> m(c, rng);
    const auto x = frames_for(c, 1, rng);
    const auto maps = export_feature_maps(m, x, dir.path());
    const auto r = m.forward(x, rng, Mode::eval);
    REQUIRE(maps.size() == c.num_blocks);
    for (std::size_t b = 0; b < maps.size(); ++b) {
        const auto& f = r.block_features[b];
        const std::size_t ch = f.dim(1), t = f.dim(2), h = f.dim(3), w = f.dim(4);
        CHECK(maps[b].height == h);
        CHECK(maps[b].width == w);
        const auto img = read_pgm(maps[b].image);
        CHECK(img.height == h);
        CHECK(img.width == w);
        const double range = maps[b].max - maps[b].min;
        for (std::size_t i = 0; i < h * w; ++i) {
            double mean = 0.0;
            for (std::size_t k = 0; k < ch * t; ++k) mean += f.data()[k * h * w + i];
            mean /= double(ch * t);
            CHECK(maps[b].values[i] == doctest::Approx(mean).epsilon(1e-6));
            const double decoded = maps[b].min + range * img.pixels[i] / 255.0;
            CHECK(std::abs(decoded - mean) <= range / 255.0 * 0.5 + 1e-6);
        }
    }
    CHECK(std::filesystem::exists(dir.path() / "feature_maps.csv"));
    CHECK(std::filesystem::exists(dir.path() / "token_norms.csv"));

    // Exporting leaves the model untouched.
    CHECK(copy(m.forward(x, rng, Mode::eval).logits) == copy(r.logits));
}

TEST_CASE("all-zero input gives a flat first-block map") {
    testing::TempDir dir("export_zero");
    const auto c = ModelConfig::tiny();
    Rng rng(77);
    UaMobileFormer<float> m(c, rng);
    const auto maps =
        export_feature_maps(m, Tensor<float>::zeros({1, 2, c.num_frames, c.input_height, c.input_width}), dir.path());
    CHECK(maps[0].max - maps[0].min <= 1e-6 * (1.0 + std::abs(maps[0].max)));
}

TEST_CASE("loss falls while overfitting a 16-sample batch") {
    auto c = ModelConfig::tiny();
    c.num_classes = 4;
    c.num_frames = 4;
    c.input_height = 16;
    c.input_width = 16;
    GeneratorConfig g;
    g.sensor_width = 16;
    g.sensor_height = 16;
    std::vector<EventStream> streams;
    for (int i = 0; i < 16; ++i) streams.push_back(synth_stream(i % 4, 100 + i, g));
    const auto data = make_dataset<float>(streams, c);
    std::vector<std::size_t> idx(16);
    for (std::size_t i = 0; i < 16; ++i) idx[i] = i;
    const auto [x, y] = collate(data, std::span<const std::size_t>(idx));

    Rng rng(78);
    UaMobileFormer<float> m(c, rng);
    AdamWHyper h;
    h.lr = 1e-3;
    AdamW<float> opt(m.parameters(), h);
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step) {
        opt.zero_grad();
        const auto loss = cross_entropy(m.forward(x, rng, Mode::train).logits, y);
        loss.backward();
        opt.step();
        losses.push_back(loss.item());
    }
    const double head = (losses[0] + losses[1] + losses[2]) / 3;
    const double tail = (losses[47] + losses[48] + losses[49]) / 3;
    CHECK(tail < 0.8 * head);
}

} // TEST_SUITE
