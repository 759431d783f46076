// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "uamf/blocks.hpp"
#include "uamf/checkpoint.hpp"
#include "uamf/gradcheck.hpp"
#include "uamf/harness.hpp"
#include "uamf/model.hpp"
#include "uamf/ops.hpp"
#include "uamf/training.hpp"

using namespace uamf;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& what, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " [" << n << "] " << what << ": " << detail << std::endl;
    if (!ok) ++failures;
}

double seconds_since(clock_type::time_point t) {
    return std::chrono::duration<double>(clock_type::now() - t).count();
}

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

void run_guarded(int n, const std::string& what, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(n, false, what, std::string("threw: ") + e.what());
    }
}

void gradients() {
    const auto t0 = clock_type::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    for (const auto& r : gradcheck_ops(1, 1e-5)) {
        ++checks;
        if (!(r.max_rel_error <= worst)) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
    }
    ModelConfig tiny = ModelConfig::tiny();
    ModelGradcheckOptions opt;
    opt.eps = 1e-5;
    const auto m = gradcheck_model(tiny, opt);
    if (!(m.max_rel_error <= worst)) {
        worst = m.max_rel_error;
        worst_name = "model/" + m.worst;
    }
    const double secs = seconds_since(t0);
    report(1, worst < 1e-4 && secs < 120.0, "gradient correctness",
           std::to_string(checks) + " op checks + tiny model (" + std::to_string(m.entries) +
               " entries), max rel err " + fmt(worst) + " (" + worst_name + "), " + fmt(secs) + " s");
}

void reparameterization() {
    const std::size_t n = 100000;
    const auto mu = Tensor<double>::full({n}, 2.0);
    const auto sigma = Tensor<double>::full({n}, 3.0);
    Rng rng(2024);
    const auto draw = reparameterize(mu, sigma, rng, Mode::train);
    const auto xs = draw.sample.data();
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= double(n);
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / double(n - 1));
    const auto ev = reparameterize(mu, sigma, rng, Mode::eval);
    bool exact = true;
    for (std::size_t i = 0; i < n; ++i) exact = exact && ev.sample.data()[i] == 2.0;
    report(2, std::abs(mean - 2.0) <= 0.02 && std::abs(sd - 3.0) <= 0.06 && exact, "reparameterization",
           "mean " + fmt(mean) + ", std " + fmt(sd) + ", eval returns mu " + (exact ? "exactly" : "NOT exactly"));
}

void attention_rows() {
    std::size_t calls = 0, rows = 0;
    double worst = 0.0;
    set_attention_observer([&](const AttentionRecord& r) {
        ++calls;
        const std::size_t keys = r.shape.back();
        for (std::size_t start = 0; start < r.weights.size(); start += keys) {
            double s = 0.0;
            for (std::size_t j = 0; j < keys; ++j) s += r.weights[start + j];
            worst = std::max(worst, std::abs(s - 1.0));
            ++rows;
        }
    });
    Rng rng(3);
    const std::size_t shapes = 1000;
    for (std::size_t i = 0; i < shapes; ++i) {
        const std::size_t heads = 1 + rng.below(4);
        const std::size_t d = heads * (1 + rng.below(4));
        const std::size_t batch = 1 + rng.below(3);
        const std::size_t a = 1 + rng.below(12), b = 1 + rng.below(12);
        const double scale = 0.1 + 10.0 * rng.uniform();
        CrossAttention<float> attn(d, heads, rng);
        std::vector<float> q(batch * a * d), kv(batch * b * d);
        for (auto& v : q) v = static_cast<float>(scale * rng.normal());
        for (auto& v : kv) v = static_cast<float>(scale * rng.normal());
        attn(Tensor<float>({batch, a, d}, q), Tensor<float>({batch, b, d}, kv));
    }
    // The attention calls inside a full forward pass are observed too.
    const auto cfg = ModelConfig::desk();
    UaMobileFormer<float> model(cfg, rng);
    std::vector<float> x(2 * 2 * cfg.num_frames * cfg.input_height * cfg.input_width);
    for (auto& v : x) v = static_cast<float>(rng.uniform());
    model.forward(Tensor<float>({2, 2, cfg.num_frames, cfg.input_height, cfg.input_width}, x), rng, Mode::train);
    set_attention_observer({});
    report(3, calls >= shapes && worst <= 1e-6, "attention normalization",
           std::to_string(shapes) + " random shapes + desk forward, " + std::to_string(calls) + " calls, " +
               std::to_string(rows) + " rows, max |sum - 1| " + fmt(worst));
}

void loss_analytics() {
    double worst = 0.0;
    for (std::size_t k : {2, 10, 101}) {
        const auto logits = Tensor<double>::zeros({3, k});
        const double loss = cross_entropy(logits, std::vector<int>{0, int(k / 2), int(k - 1)}).item();
        worst = std::max(worst, std::abs(loss - std::log(double(k))));
    }
    report(4, worst <= 1e-9, "loss analytics", "K in {2, 10, 101}, max |loss - ln K| " + fmt(worst));
}

std::set<std::string> groups_of(const ModelConfig& c) {
    Rng rng(0);
    UaMobileFormer<float> m(c, rng);
    std::set<std::string> g;
    for (const auto& p : m.parameters()) {
        const auto& n = p.name;
        if (n == "tokens" || n.find(".former.") != std::string::npos) g.insert("former");
        if (n.find(".mobile.") != std::string::npos) g.insert("mobile");
        if (n.find(".bridge.") != std::string::npos) g.insert("bridge");
        if (n.find("2f.attn.") != std::string::npos || n.find("2m.attn.") != std::string::npos) g.insert("ca");
        if (n.find(".act1.") != std::string::npos || n.find(".act2.") != std::string::npos) g.insert("dy_relu");
    }
    return g;
}

void ablation(const fs::path& dir) {
    bool ok = true;
    std::string detail;
    for (const auto& row : ablation_rows()) {
        const auto cfg = apply_ablation_row(ModelConfig::desk(), row);
        const auto g = groups_of(cfg);
        ok = ok && (g.count("mobile") == 1) == row.mobile && (g.count("former") == 1) == row.former &&
             (g.count("bridge") == 1) == row.bridge && (g.count("ca") == 1) == row.cross_attention &&
             (g.count("dy_relu") == 1) == row.dy_relu;
        detail += "row " + std::to_string(row.number) + " {";
        for (const auto& s : g) detail += " " + s;
        detail += " } ";
    }

    auto base = ModelConfig::tiny();
    base.num_classes = 4;
    base.input_height = 16;
    base.input_width = 16;
    TrainConfig t;
    t.epochs = 1;
    t.max_steps = 1;
    t.batch_size = 8;
    DataConfig d;
    d.generator.sensor_width = 16;
    d.generator.sensor_height = 16;
    d.train_per_class = 2;
    d.val_per_class = 1;
    const auto streams = load_streams(d);
    const DataProvider data = [&](const ModelConfig& m) {
        return std::make_pair(make_dataset<float>(streams.first, m), make_dataset<float>(streams.second, m));
    };
    const auto results = run_ablation(ablation_rows(), base, t, data, dir / "ablation");
    write_ablation_csv(dir / "ablation.csv", results);
    std::ifstream is(dir / "ablation.csv");
    std::string header, line;
    std::getline(is, header);
    std::size_t lines = 0;
    std::set<std::string> hashes;
    while (std::getline(is, line)) {
        ++lines;
        hashes.insert(line.substr(line.rfind(',') + 1));
    }
    const bool csv_ok = header == "No.,Mobile,Former,UAB,CA,DY-ReLU,Results,Reference,ConfigHash" && lines == 5 &&
                        hashes.size() == 5;
    report(7, ok && csv_ok, "ablation harness",
           detail + "| csv header " + (csv_ok ? "ok" : "WRONG") + ", " + std::to_string(lines) + " rows, " +
               std::to_string(hashes.size()) + " distinct config hashes");
}

void stem_shape() {
    ModelConfig c;  // full-size preset
    c.num_blocks = 4;
    Rng rng(8);
    UaMobileFormer<float> m(c, rng);
    const auto f = m.stem(Tensor<float>::zeros({1, 2, 8, 224, 224}));
    report(8, f.shape() == Shape{1, 24, 4, 112, 112}, "stem shape parity",
           "(1, 2, 8, 224, 224) -> " + shape_str(f.shape()));
}

void not_reproducible(const fs::path& dir) {
    // The published tables need the real datasets. What can be checked here
    // is that the sweep harness that would regenerate the figure runs.
    auto base = ModelConfig::tiny();
    base.num_classes = 4;
    base.input_height = 16;
    base.input_width = 16;
    TrainConfig t;
    t.epochs = 1;
    t.max_steps = 1;
    t.batch_size = 8;
    DataConfig d;
    d.generator.sensor_width = 16;
    d.generator.sensor_height = 16;
    d.train_per_class = 2;
    d.val_per_class = 1;
    const auto streams = load_streams(d);
    const DataProvider data = [&](const ModelConfig& m) {
        return std::make_pair(make_dataset<float>(streams.first, m), make_dataset<float>(streams.second, m));
    };
    const std::vector<std::pair<SweepAxis, std::size_t>> probes{
        {SweepAxis::tokens, 3}, {SweepAxis::token_dim, 16}, {SweepAxis::frames, 8}, {SweepAxis::blocks, 3}};
    bool ok = true;
    for (const auto& [axis, value] : probes) {
        const auto pts = run_sweep(axis, {value}, base, t, data, dir / "sweeps");
        write_sweep_csv(dir / ("sweep_" + sweep_axis_name(axis) + ".csv"), axis, pts);
        ok = ok && pts.size() == 1 && pts[0].report.steps == 1;
    }
    report(9, ok, "published benchmark numbers",
           "not reproducible without the real datasets (documented); sweep harness runs on all 4 axes");
}

struct DeskRun {
    std::vector<double> curve;
    std::vector<float> logits_at_5;
};

Tensor<float> val_batch(const Dataset<float>& val) {
    std::vector<std::size_t> idx(std::min<std::size_t>(val.size(), 16));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return collate(val, std::span<const std::size_t>(idx)).first;
}

std::vector<float> eval_logits(const UaMobileFormer<float>& m, const Tensor<float>& x) {
    NoGradGuard guard;
    Rng rng(12345);
    const auto out = m.forward(x, rng, Mode::eval).logits;
    return {out.data().begin(), out.data().end()};
}

void desk_learning_and_determinism(const fs::path& dir) {
    const HarnessConfig h;  // desk model, 200 train / 80 val synthetic streams
    const auto streams = load_streams(h.data);
    const auto train_set = make_dataset<float>(streams.first, h.model);
    const auto val = make_dataset<float>(streams.second, h.model);
    const auto xb = val_batch(val);

    TrainConfig t = h.train;
    t.epochs = 30;
    DeskRun first;
    RunReport r;
    {
        Rng init(t.seed);
        UaMobileFormer<float> model(h.model, init);
        TrainOptions opt;
        opt.checkpoint_dir = dir / "desk";
        opt.on_epoch = [&](const EpochRecord& e) {
            first.curve.push_back(e.train_loss);
            if (e.epoch == 5) first.logits_at_5 = eval_logits(model, xb);
            std::cout << "  epoch " << e.epoch << " loss " << e.train_loss << " train " << e.train_top1 << " val "
                      << e.val_top1 << " (" << e.seconds << " s)" << std::endl;
        };
        const auto t0 = clock_type::now();
        r = train(model, train_set, val, t, opt);
        const double secs = seconds_since(t0);
        std::size_t reached = 0;
        for (const auto& e : r.epochs) {
            if (reached == 0 && e.train_top1 >= 0.95 && e.val_top1 >= 0.80) reached = e.epoch;
        }
        const auto best = model_from_checkpoint<float>(load_checkpoint(r.checkpoint_path));
        const double best_eval = evaluate_top1(best, val);
        report(6, reached != 0 && secs < 600.0, "desk-scale learning",
               std::to_string(train_set.size()) + "/" + std::to_string(val.size()) + " samples, " +
                   (reached != 0 ? "train>=0.95 and val>=0.80 first at epoch " + std::to_string(reached)
                                 : std::string("thresholds never reached")) +
                   ", final train " + fmt(r.epochs.back().train_top1) + " val " + fmt(r.epochs.back().val_top1) +
                   ", best val " + fmt(r.best_val_top1) + " (checkpoint re-eval " + fmt(best_eval) + "), " +
                   fmt(secs) + " s");
    }

    // Same seed, 5 epochs: the curve and eval logits must match the first
    // five epochs of the run above bit for bit.
    TrainConfig t5 = t;
    t5.epochs = 5;
    Rng init(t5.seed);
    UaMobileFormer<float> model(h.model, init);
    TrainOptions opt;
    opt.checkpoint_dir = dir / "desk5";
    const auto r5 = train(model, train_set, val, t5, opt);
    bool same_curve = r5.epochs.size() == 5 && first.curve.size() >= 5;
    for (std::size_t i = 0; same_curve && i < 5; ++i) same_curve = r5.epochs[i].train_loss == first.curve[i];
    const auto logits = eval_logits(model, xb);
    const bool stable = logits == eval_logits(model, xb);
    const bool across_runs = logits == first.logits_at_5;
    const auto reloaded = model_from_checkpoint<float>(load_checkpoint(dir / "desk5" / "last.ckpt"));
    const bool round_trip = eval_logits(reloaded, xb) == logits;
    report(5, same_curve && stable && across_runs && round_trip, "determinism",
           std::string("5-epoch loss curves ") + (same_curve ? "bitwise identical" : "DIFFER") +
               ", eval logits stable " + (stable ? "yes" : "NO") + ", across runs " + (across_runs ? "yes" : "NO") +
               ", across checkpoint round-trip " + (round_trip ? "yes" : "NO"));
}

} // namespace

int main() {
    const fs::path dir = fs::temp_directory_path() / ("uamf_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);

    run_guarded(1, "gradient correctness", gradients);
    run_guarded(2, "reparameterization", reparameterization);
    run_guarded(3, "attention normalization", attention_rows);
    run_guarded(4, "loss analytics", loss_analytics);
    run_guarded(7, "ablation harness", [&] { ablation(dir); });
    run_guarded(8, "stem shape parity", stem_shape);
    run_guarded(9, "published benchmark numbers", [&] { not_reproducible(dir); });
    run_guarded(6, "desk-scale learning and determinism", [&] { desk_learning_and_determinism(dir); });

    std::error_code ec;
    fs::remove_all(dir, ec);
    std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
