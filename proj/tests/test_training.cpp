#include "doctest.h"

#include <cmath>
#include <limits>
#include <set>

#include "support.hpp"
#include "uamf/checkpoint.hpp"
#include "uamf/error.hpp"
#include "uamf/harness.hpp"
#include "uamf/training.hpp"

using namespace uamf;

namespace {

// Textbook AdamW on one scalar, written out step by step.
struct RefAdamW {
    double lr, wd, b1, b2, eps;
    double m = 0.0, v = 0.0;
    int t = 0;
    double step(double p, double g) {
        ++t;
        p -= lr * wd * p;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return p - lr * mh / (std::sqrt(vh) + eps);
    }
};

ModelConfig small_model() {
    auto c = ModelConfig::tiny();
    c.num_classes = 4;
    c.input_height = 16;
    c.input_width = 16;
    return c;
}

std::pair<Dataset<float>, Dataset<float>> small_data(const ModelConfig& c, std::size_t per_class = 4) {
    DataConfig d;
    d.generator.sensor_width = 16;
    d.generator.sensor_height = 16;
    d.train_per_class = per_class;
    d.val_per_class = 2;
    d.seed = 5;
    auto [tr, va] = load_streams(d);
    return {make_dataset<float>(tr, c), make_dataset<float>(va, c)};
}

template <typename T>
std::vector<T> flat(const UaMobileFormer<T>& m) {
    std::vector<T> out;
    for (const auto& p : m.parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("AdamW on p^2 follows an independent reference") {
    for (double wd : {0.0, 0.1}) {
        AdamWHyper h;
        h.lr = 0.05;
        h.weight_decay = wd;
        RefAdamW ref{h.lr, wd, h.beta1, h.beta2, h.eps};
        std::vector<double> p{1.0}, m{0.0}, v{0.0};
        double q = 1.0;
        for (std::size_t t = 1; t <= 5; ++t) {
            const std::vector<double> g{2.0 * p[0]};
            q = ref.step(q, 2.0 * q);
            adamw_update<double>(p, g, m, v, t, h);
            CHECK(std::abs(p[0] - q) < 1e-12);
        }
    }
}

TEST_CASE("AdamW with zero decay equals Adam") {
    AdamWHyper h;
    h.lr = 0.01;
    h.weight_decay = 0.0;
    // Adam written in its original bias-corrected form.
    double q = 1.0, m = 0.0, v = 0.0;
    std::vector<double> p{1.0}, mm{0.0}, vv{0.0};
    for (int t = 1; t <= 20; ++t) {
        const double g = 2.0 * q;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double alpha = h.lr * std::sqrt(1 - std::pow(0.999, t)) / (1 - std::pow(0.9, t));
        const double eps_hat = h.eps * std::sqrt(1 - std::pow(0.999, t));
        q -= alpha * m / (std::sqrt(v) + eps_hat);
        const std::vector<double> gp{2.0 * p[0]};
        adamw_update<double>(p, gp, mm, vv, static_cast<std::size_t>(t), h);
        CHECK(std::abs(p[0] - q) < 1e-12);
    }
}

TEST_CASE("zero gradient cases") {
    AdamWHyper h;
    h.weight_decay = 0.0;
    std::vector<double> p{1.5, -2.0}, g{0.0, 0.0}, m{0.0, 0.0}, v{0.0, 0.0};
    adamw_update<double>(p, g, m, v, 1, h);
    CHECK(p == std::vector<double>{1.5, -2.0});

    h.lr = 0.1;
    h.weight_decay = 0.1;
    adamw_update<double>(p, g, m, v, 1, h);
    CHECK(p[0] == 1.5 * (1.0 - 0.1 * 0.1));
    CHECK(p[0] == doctest::Approx(1.5 * 0.99).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-2.0 * 0.99).epsilon(1e-15));

    // Decay is skipped for excluded parameters.
    std::vector<double> b{3.0};
    std::vector<double> gb{0.0}, mb{0.0}, vb{0.0};
    adamw_update<double>(b, gb, mb, vb, 1, h, false);
    CHECK(b[0] == 3.0);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    AdamWHyper h;
    h.lr = 0.0;
    std::vector<float> p{0.25f, -7.0f, 3.5f}, g{1.0f, -2.0f, 0.5f}, m(3, 0.0f), v(3, 0.0f);
    const auto before = p;
    for (std::size_t t = 1; t <= 3; ++t) adamw_update<float>(p, g, m, v, t, h);
    CHECK(p == before);
    h.weight_decay = 0.0;
    for (std::size_t t = 4; t <= 6; ++t) adamw_update<float>(p, g, m, v, t, h);
    CHECK(p == before);
}

TEST_CASE("decay exclusions") {
    CHECK_FALSE(uses_weight_decay("blocks.0.m2f.proj.bias"));
    CHECK_FALSE(uses_weight_decay("blocks.1.former.ln1.norm_gain"));
    CHECK_FALSE(uses_weight_decay("blocks.1.former.ln2.norm_shift"));
    CHECK_FALSE(uses_weight_decay("tokens"));
    CHECK(uses_weight_decay("blocks.0.m2f.proj.weight"));
    CHECK(uses_weight_decay("stem.weight"));
}

TEST_CASE("non-finite gradient names the parameter and changes nothing") {
    const auto c = ModelConfig::tiny();
    Rng rng(81);
    UaMobileFormer<float> m(c, rng);
    AdamW<float> opt(m.parameters(), AdamWHyper{});
    auto params = m.parameters();
    for (auto& p : params) {
        auto g = p.tensor.mutable_grad();
        std::fill(g.begin(), g.end(), 0.5f);
    }
    params[3].tensor.mutable_grad()[0] = std::numeric_limits<float>::infinity();
    const auto before = flat(m);
    try {
        opt.step();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find(params[3].name) != std::string::npos);
    }
    CHECK(flat(m) == before);
    CHECK(opt.steps() == 0);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
    const auto c = ModelConfig::tiny();
    Rng rng(82);
    UaMobileFormer<double> m(c, rng);
    AdamW<double> opt(m.parameters(), AdamWHyper{});
    for (auto& p : m.parameters()) {
        auto g = p.tensor.mutable_grad();
        for (auto& x : g) x = rng.normal();
    }
    const double before = opt.clip_grad_norm(1.0);
    CHECK(before > 1.0);
    double sq = 0.0;
    for (const auto& p : m.parameters())
        for (double g : p.tensor.grad()) sq += g * g;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("train config validation and JSON round-trip") {
    TrainConfig t;
    CHECK(t.lr == 1e-4);
    CHECK(t.weight_decay == 0.1);
    CHECK(t.epochs == 60);
    CHECK(t.batch_size == 16);
    t.grad_clip = 2.5;
    t.max_steps = 7;
    t.seed = 99;
    CHECK(train_config_from_json(to_json(t)) == t);

    TrainConfig bad;
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"learning_rate", 1.0}}), ConfigError);
}

TEST_CASE("argmax ties go to the lowest index and top-1 is monotone invariant") {
    const Tensor<float> logits({3, 4}, {1, 5, 5, 0, 2, 2, 2, 2, -1, -3, 0, -0.5f});
    CHECK(argmax_rows(logits) == std::vector<int>{1, 0, 2});

    Rng rng(83);
    const auto x = testing::random_f32({50, 7}, rng, 3.0);
    std::vector<float> t(x.data().begin(), x.data().end());
    for (auto& v : t) v = std::exp(v) * 3.0f + 7.0f;
    CHECK(argmax_rows(x) == argmax_rows(Tensor<float>({50, 7}, t)));
}

TEST_CASE("constant predictions on uniform labels score about 1/K") {
    const std::size_t n = 20000, k = 5;
    Rng rng(84);
    std::vector<float> logits(n * k, 0.0f);
    for (std::size_t i = 0; i < n; ++i) logits[i * k + 2] = 1.0f;
    const auto pred = argmax_rows(Tensor<float>({n, k}, logits));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += pred[i] == static_cast<int>(rng.below(k));
    const double p = 1.0 / k, acc = double(hits) / n;
    CHECK(std::abs(acc - p) < 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("evaluate_top1 bounds and the self-labelled case") {
    const auto c = small_model();
    auto [train_set, val] = small_data(c);
    Rng rng(85);
    UaMobileFormer<float> m(c, rng);
    const double acc = evaluate_top1(m, train_set);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    // Relabel every sample with the model's own prediction.
    Dataset<float> own = train_set;
    for (auto& s : own) {
        const auto x = reshape(s.input, Shape{1, 2, c.num_frames, c.input_height, c.input_width});
        s.label = argmax_rows(m.forward(x, rng, Mode::eval).logits)[0];
    }
    CHECK(evaluate_top1(m, own, 5) == 1.0);
    CHECK_THROWS_AS(evaluate_top1(m, Dataset<float>{}), DataError);
}

TEST_CASE("collate stacks samples in order") {
    const auto c = small_model();
    auto [train_set, val] = small_data(c);
    const std::vector<std::size_t> idx{3, 0};
    const auto [x, y] = collate(train_set, std::span<const std::size_t>(idx));
    CHECK(x.shape() == Shape{2, 2, c.num_frames, 16, 16});
    CHECK(y == std::vector<int>{train_set[3].label, train_set[0].label});
    CHECK(std::equal(train_set[0].input.data().begin(), train_set[0].input.data().end(),
                     x.data().begin() + train_set[0].input.numel()));
    CHECK_THROWS_AS(collate(train_set, std::span<const std::size_t>()), DataError);
}

TEST_CASE("make_sample rejects labels outside the class range") {
    auto c = small_model();
    GeneratorConfig g;
    g.sensor_width = 16;
    g.sensor_height = 16;
    auto s = synth_stream(3, 1, g);
    c.num_classes = 3;
    CHECK_THROWS_AS(make_sample<float>(s, c), DataError);
    s.label.reset();
    CHECK_THROWS_AS(make_sample<float>(s, c), DataError);
}

TEST_CASE("training is deterministic given the seed") {
    const auto c = small_model();
    auto [train_set, val] = small_data(c);
    TrainConfig t;
    t.epochs = 2;
    t.batch_size = 5;
    t.lr = 1e-3;
    auto run = [&](std::uint64_t seed) {
        t.seed = seed;
        Rng rng(seed);
        UaMobileFormer<float> m(c, rng);
        const auto report = train(m, train_set, val, t);
        std::vector<double> curve;
        for (const auto& e : report.epochs) curve.push_back(e.train_loss);
        return std::make_pair(curve, flat(m));
    };
    const auto a = run(3), b = run(3), d = run(4);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first != d.first);
}

TEST_CASE("split accumulation matches a single batch") {
    const auto c = small_model();
    GeneratorConfig g;
    g.sensor_width = 16;
    g.sensor_height = 16;
    Dataset<double> train_set;
    for (int i = 0; i < 4; ++i) train_set.push_back(make_sample<double>(synth_stream(i, 40 + i, g), c));
    Rng init(86);
    UaMobileFormer<double> m(c, init);
    const std::vector<std::size_t> all{0, 1, 2, 3}, lo{0, 1}, hi{2, 3};
    auto grads = [&] {
        std::vector<double> out;
        for (auto& p : m.parameters()) {
            if (!p.tensor.has_grad()) continue;
            out.insert(out.end(), p.tensor.grad().begin(), p.tensor.grad().end());
        }
        return out;
    };
    auto zero = [&] {
        for (auto& p : m.parameters()) p.tensor.zero_grad();
    };

    zero();
    {
        const auto [x, y] = collate(train_set, std::span<const std::size_t>(all));
        Rng rng(1);
        cross_entropy(m.forward(x, rng, Mode::eval).logits, y).backward();
    }
    const auto whole = grads();
    zero();
    for (const auto* part : {&hi, &lo}) {
        const auto [x, y] = collate(train_set, std::span<const std::size_t>(*part));
        Rng rng(1);
        scale(cross_entropy(m.forward(x, rng, Mode::eval).logits, y), 0.5).backward();
    }
    const auto split = grads();
    REQUIRE(whole.size() == split.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < whole.size(); ++i) {
        num = std::max(num, std::abs(whole[i] - split[i]));
        den = std::max(den, std::abs(whole[i]));
    }
    CHECK(num / den < 1e-6);
}

TEST_CASE("run report and checkpoints") {
    testing::TempDir dir("train");
    const auto c = small_model();
    auto [train_set, val] = small_data(c);
    TrainConfig t;
    t.epochs = 3;
    t.batch_size = 4;
    t.max_steps = 5;  // 4 steps per epoch: stops inside the second epoch
    Rng rng(0);
    UaMobileFormer<float> m(c, rng);
    TrainOptions opt;
    opt.checkpoint_dir = dir.path();
    std::size_t callbacks = 0;
    opt.on_epoch = [&](const EpochRecord&) { ++callbacks; };
    const auto r = train(m, train_set, val, t, opt);
    CHECK(r.steps == 5);
    CHECK(r.epochs.size() == 2);
    CHECK(callbacks == 2);
    CHECK(r.config_hash == run_config_hash(c, t));
    CHECK(std::filesystem::exists(dir.path() / "best.ckpt"));
    CHECK(std::filesystem::exists(dir.path() / "last.ckpt"));
    CHECK(r.checkpoint_path == (dir.path() / "best.ckpt").string());
    for (const auto& e : r.epochs) {
        CHECK(e.val_top1 >= 0.0);
        CHECK(e.val_top1 <= 1.0);
    }
    // The best checkpoint reproduces the best recorded val top-1.
    const auto best = model_from_checkpoint<float>(load_checkpoint(dir.path() / "best.ckpt"));
    CHECK(evaluate_top1(best, val) == r.best_val_top1);

    write_report_csv(dir.path() / "report.csv", r);
    const auto csv = testing::read_file(dir.path() / "report.csv");
    CHECK(csv.rfind("epoch,train_loss,train_top1,val_top1,seconds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(report_to_json(r)["epochs"].size() == 2);

    CHECK_THROWS_AS(train(m, Dataset<float>{}, val, t), DataError);
}

TEST_CASE("ablation rows mirror the component table") {
    const auto& rows = ablation_rows();
    REQUIRE(rows.size() == 5);
    const auto r1 = apply_ablation_row(ModelConfig::desk(), rows[0]);
    CHECK(r1.enable_mobile);
    CHECK_FALSE(r1.enable_former);
    const auto r5 = apply_ablation_row(ModelConfig::desk(), rows[4]);
    CHECK((r5.enable_mobile && r5.enable_former && r5.enable_bridge && r5.enable_cross_attention &&
           r5.enable_dy_relu));
    const std::vector<double> ref{76.53, 58.01, 76.83, 77.94, 79.80};
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(rows[i].number == int(i + 1));
        CHECK(rows[i].reference == ref[i]);
    }
    CHECK((rows[1].former && !rows[1].mobile));
    CHECK((rows[2].mobile && rows[2].former && rows[2].cross_attention && !rows[2].bridge && !rows[2].dy_relu));
    CHECK((rows[3].dy_relu && !rows[3].bridge));
}

TEST_CASE("ablation suite writes five distinct rows") {
    testing::TempDir dir("ablate");
    const auto c = small_model();
    TrainConfig t;
    t.epochs = 1;
    t.batch_size = 8;
    t.max_steps = 1;
    const DataProvider data = [](const ModelConfig& m) { return small_data(m, 2); };
    const auto results = run_ablation(ablation_rows(), c, t, data, dir.path());
    REQUIRE(results.size() == 5);
    std::set<std::string> hashes;
    std::set<std::size_t> counts;
    for (const auto& r : results) {
        hashes.insert(r.config_hash);
        counts.insert(r.parameter_count);
        CHECK(std::filesystem::exists(dir.path() / "checkpoints" / ("row_" + std::to_string(r.row.number))));
    }
    CHECK(hashes.size() == 5);
    CHECK(counts.size() == 5);
    write_ablation_csv(dir.path() / "ablation.csv", results);
    const auto csv = testing::read_file(dir.path() / "ablation.csv");
    CHECK(csv.rfind("No.,Mobile,Former,UAB,CA,DY-ReLU,Results,Reference,ConfigHash\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    CHECK(csv.find("79.80") != std::string::npos);
}

TEST_CASE("sweep grids and single-value sweeps") {
    CHECK(default_sweep_grid(SweepAxis::tokens) == std::vector<std::size_t>{1, 3, 6, 9});
    CHECK(default_sweep_grid(SweepAxis::frames) == std::vector<std::size_t>{4, 8, 12});
    CHECK(default_sweep_grid(SweepAxis::token_dim) == std::vector<std::size_t>{64, 128, 192, 256});
    CHECK(default_sweep_grid(SweepAxis::blocks) == std::vector<std::size_t>{9, 12, 14});
    CHECK(parse_sweep_axis("token_dim") == SweepAxis::token_dim);
    CHECK(sweep_axis_name(SweepAxis::blocks) == "blocks");
    CHECK_THROWS_AS(parse_sweep_axis("depth"), ConfigError);
    CHECK(apply_sweep_value(ModelConfig::desk(), SweepAxis::tokens, 6).num_tokens == 6);
    CHECK(apply_sweep_value(ModelConfig::desk(), SweepAxis::frames, 12).num_frames == 12);

    testing::TempDir dir("sweep");
    const auto c = small_model();
    TrainConfig t;
    t.epochs = 1;
    t.max_steps = 1;
    t.batch_size = 8;
    std::size_t calls = 0;
    const DataProvider data = [&](const ModelConfig& m) {
        ++calls;
        return small_data(m, 2);
    };
    const auto pts = run_sweep(SweepAxis::tokens, {3}, c, t, data, dir.path());
    REQUIRE(pts.size() == 1);
    CHECK(calls == 1);
    CHECK(pts[0].config.num_tokens == 3);
    CHECK(pts[0].report.steps == 1);
    write_sweep_csv(dir.path() / "sweep.csv", SweepAxis::tokens, pts);
    const auto csv = testing::read_file(dir.path() / "sweep.csv");
    CHECK(csv.rfind("tokens,top1,ConfigHash\n", 0) == 0);
}

} // TEST_SUITE
