#include "uamf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uamf/error.hpp"

namespace uamf {

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor) {
    if (analytic.size() != numeric.size()) throw DimensionError("relative_error: size mismatch");
    double diff = 0.0, scale = std::max(floor, 1e-8);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

namespace {

using TD = Tensor<double>;

double eval_scalar(const std::function<TD()>& f) {
    NoGradGuard guard;
    return f().item();
}

// Shared core: `params` are perturbed in place, `loss` rebuilds the scalar.
GradcheckResult check_tensors(const std::string& name, const std::function<TD()>& loss,
                              std::vector<std::pair<std::string, TD>> params, double eps,
                              std::size_t entries_per_tensor, Rng* pick, std::size_t refinements = 0) {
    for (auto& [n, p] : params) p.zero_grad();
    {
        TD l = loss();
        if (l.rank() != 0) throw UsageError("gradcheck: function must return a scalar");
        l.backward();
    }
    double grad_scale = 0.0;
    for (auto& [n, p] : params) {
        if (p.has_grad()) {
            for (double g : p.grad()) grad_scale = std::max(grad_scale, std::abs(g));
        }
    }
    const double consistency_floor = kScaleFloor * grad_scale;
    GradcheckResult r;
    r.name = name;
    std::vector<std::vector<double>> analytic(params.size()), numeric(params.size());
    double overall = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = params[t].second;
        const std::size_t n = p.numel();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (entries_per_tensor != 0 && entries_per_tensor < n && pick != nullptr) {
            for (std::size_t i = 0; i < entries_per_tensor; ++i) {
                std::swap(idx[i], idx[i + pick->below(n - i)]);
            }
            idx.resize(entries_per_tensor);
        }
        const auto grad = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(n, 0.0);
        auto data = p.mutable_data();
        for (std::size_t i : idx) {
            const double orig = data[i];
            auto central = [&](double h) {
                data[i] = orig + h;
                const double up = eval_scalar(loss);
                data[i] = orig - h;
                const double down = eval_scalar(loss);
                data[i] = orig;
                return (up - down) / (2.0 * h);
            };
            double h = eps;
            double d = central(h);
            for (std::size_t k = 0; k < refinements; ++k) {
                // Steps h and h/2 agree to O(h^2) on smooth stretches. A larger
                // gap means a kink lies within the step, so shrink it.
                const double half = central(h / 2.0);
                if (std::abs(d - half) <= kConsistencyTol * std::max(std::abs(d), consistency_floor)) break;
                if (k == 0) ++r.refined;
                h /= 10.0;
                d = central(h);
            }
            numeric[t].push_back(d);
            analytic[t].push_back(grad[i]);
            overall = std::max({overall, std::abs(numeric[t].back()), std::abs(analytic[t].back())});
        }
        r.entries += idx.size();
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        const double err = relative_error(analytic[t], numeric[t], kScaleFloor * overall);
        if (err >= r.max_rel_error) {
            r.max_rel_error = err;
            r.worst = params[t].first;
        }
    }
    return r;
}

TD randn(const Shape& shape, Rng& rng, bool grad = true, double s = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = s * rng.normal();
    return TD(shape, std::move(v), grad);
}

// Values bounded away from zero, for kinked ops.
TD away_from_zero(const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        const double n = rng.normal();
        x = (n < 0 ? -1.0 : 1.0) * (0.1 + std::abs(n));
    }
    return TD(shape, std::move(v), true);
}

TD positive(const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = 0.2 + std::abs(rng.normal());
    return TD(shape, std::move(v), true);
}

// Reduces an arbitrary output to a scalar with fixed random weights, so that
// ops whose plain sum is constant (softmax) still get checked.
TD weighted(const TD& out, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(out, randn(out.shape(), rng, false)));
}

} // namespace

GradcheckResult gradcheck(const std::string& name, const ScalarFn& f, std::vector<TD> inputs,
                          double eps, std::size_t max_refinements) {
    std::vector<std::pair<std::string, TD>> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        params.emplace_back("input " + std::to_string(i), inputs[i]);
    }
    return check_tensors(name, [&] { return f(inputs); }, std::move(params), eps, 0, nullptr,
                         max_refinements);
}

std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed, double eps) {
    Rng rng(seed);
    std::vector<GradcheckResult> out;
    std::uint64_t w = seed * 1000;
    auto run = [&](const std::string& name, std::vector<TD> inputs,
                   std::function<TD(const std::vector<TD>&)> op) {
        const std::uint64_t ws = ++w;
        out.push_back(gradcheck(
            name, [&, ws](const std::vector<TD>& in) { return weighted(op(in), ws); }, std::move(inputs), eps));
    };
    using V = std::vector<TD>;

    run("add", {randn({3, 4}, rng), randn({4}, rng)}, [](const V& x) { return add(x[0], x[1]); });
    run("sub", {randn({2, 1, 3}, rng), randn({4, 1}, rng)}, [](const V& x) { return sub(x[0], x[1]); });
    run("mul", {randn({2, 3, 4}, rng), randn({3, 1}, rng)}, [](const V& x) { return mul(x[0], x[1]); });
    {
        TD a = randn({3, 5}, rng);
        TD off = away_from_zero({3, 5}, rng);
        std::vector<double> b(a.data().begin(), a.data().end());
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += off.data()[i];
        run("maximum", {a, TD({3, 5}, b, true)}, [](const V& x) { return maximum(x[0], x[1]); });
    }
    run("scale", {randn({4, 3}, rng)}, [](const V& x) { return scale(x[0], -1.7); });
    run("add_scalar", {randn({4, 3}, rng)}, [](const V& x) { return add_scalar(x[0], 0.3); });
    run("relu", {away_from_zero({5, 4}, rng)}, [](const V& x) { return relu(x[0]); });
    run("gelu", {randn({5, 4}, rng, true, 2.0)}, [](const V& x) { return gelu(x[0]); });
    run("tanh", {randn({5, 4}, rng)}, [](const V& x) { return tanh(x[0]); });
    run("softplus", {randn({5, 4}, rng, true, 3.0)}, [](const V& x) { return softplus(x[0]); });
    run("sum", {randn({3, 4}, rng)}, [](const V& x) { return sum(x[0]); });
    run("mean", {randn({3, 4}, rng)}, [](const V& x) { return mean(x[0]); });
    run("sum_axis", {randn({2, 3, 4}, rng)}, [](const V& x) { return sum(x[0], 1); });
    run("mean_axis_keepdim", {randn({2, 3, 4}, rng)}, [](const V& x) { return mean(x[0], -1, true); });
    run("reshape", {randn({2, 6}, rng)}, [](const V& x) { return reshape(x[0], {3, 4}); });
    run("permute", {randn({2, 3, 4}, rng)}, [](const V& x) { return permute(x[0], {2, 0, 1}); });
    run("transpose", {randn({2, 3, 4}, rng)}, [](const V& x) { return transpose(x[0], 0, 2); });
    run("concat", {randn({2, 3}, rng), randn({2, 2}, rng)}, [](const V& x) { return concat(V{x[0], x[1]}, 1); });
    run("slice", {randn({4, 5}, rng)}, [](const V& x) { return slice(x[0], 1, 1, 3); });
    run("matmul", {randn({2, 3, 4}, rng), randn({4, 5}, rng)}, [](const V& x) { return matmul(x[0], x[1]); });
    run("linear", {randn({2, 3, 4}, rng), randn({4, 5}, rng), randn({5}, rng)},
        [](const V& x) { return linear(x[0], x[1], x[2]); });
    run("layer_norm", {randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)},
        [](const V& x) { return layer_norm(x[0], x[1], x[2]); });
    run("softmax", {randn({3, 5}, rng)}, [](const V& x) { return softmax(x[0], 1); });
    run("softmax_axis0", {randn({4, 3}, rng)}, [](const V& x) { return softmax(x[0], 0); });
    run("log_softmax", {randn({3, 5}, rng)}, [](const V& x) { return log_softmax(x[0], -1); });
    run("conv3d", {randn({2, 3, 3, 4, 4}, rng), randn({4, 3, 3, 3, 3}, rng, true, 0.3), randn({4}, rng)},
        [](const V& x) { return conv3d(x[0], x[1], x[2]); });
    run("conv3d_stride2", {randn({1, 2, 4, 5, 5}, rng), randn({3, 2, 3, 3, 3}, rng, true, 0.3), randn({3}, rng)},
        [](const V& x) { return conv3d(x[0], x[1], x[2], Conv3dOptions{{2, 2, 2}, 1}); });
    run("conv3d_depthwise", {randn({1, 4, 3, 4, 4}, rng), randn({4, 1, 3, 3, 3}, rng, true, 0.3), randn({4}, rng)},
        [](const V& x) { return conv3d(x[0], x[1], x[2], Conv3dOptions{{1, 2, 2}, 4}); });
    run("conv3d_pointwise", {randn({2, 3, 2, 3, 3}, rng), randn({5, 3, 1, 1, 1}, rng), randn({5}, rng)},
        [](const V& x) { return conv3d(x[0], x[1], x[2]); });
    {
        const std::vector<int> labels{2, 0, 4};
        run("cross_entropy", {randn({3, 5}, rng, true, 2.0)},
            [labels](const V& x) { return cross_entropy(x[0], labels); });
    }
    {
        TD noise = randn({3, 4}, rng, false);
        run("reparameterize", {randn({3, 4}, rng), positive({3, 4}, rng)},
            [noise](const V& x) { return reparameterize(x[0], x[1], noise); });
    }
    run("dynamic_relu",
        {randn({2, 3, 2, 2, 2}, rng), randn({2, 3}, rng), randn({2, 3}, rng), randn({2, 3}, rng),
         randn({2, 3}, rng)},
        [](const V& x) { return dynamic_relu(x[0], x[1], x[2], x[3], x[4]); });

    // Module-level checks: weights are perturbed through the module's own handles.
    auto module_check = [&](const std::string& name, ParameterList<double> params,
                            std::vector<TD> extra, const std::function<TD()>& fwd) {
        std::vector<std::pair<std::string, TD>> all;
        for (auto& p : params) {
            // Overwrite zero-initialized weights so every path carries gradient.
            for (auto& v : p.tensor.mutable_data()) v = 0.5 * rng.normal();
            all.emplace_back(p.name, p.tensor);
        }
        for (std::size_t i = 0; i < extra.size(); ++i) all.emplace_back("input " + std::to_string(i), extra[i]);
        const std::uint64_t ws = ++w;
        out.push_back(check_tensors(name, [&, ws] { return weighted(fwd(), ws); }, std::move(all), eps, 0,
                                    nullptr));
    };
    {
        CrossAttention<double> attn(8, 2, rng);
        ParameterList<double> ps;
        attn.collect("attn", ps);
        TD q = randn({2, 3, 8}, rng), kv = randn({2, 5, 8}, rng);
        module_check("cross_attention", ps, {q, kv}, [&] { return attn(q, kv); });
    }
    {
        UaBridge<double> bridge(6, rng, "bridge");
        ParameterList<double> ps;
        bridge.collect("bridge", ps);
        TD f = randn({2, 4, 6}, rng);
        module_check("ua_bridge", ps, {f}, [&] {
            Rng noise(99);
            return bridge.forward(f, noise, Mode::train).sample;
        });
    }
    {
        DyRelu<double> dy(3, 4, rng);
        ParameterList<double> ps;
        dy.collect("dy", ps);
        TD x = randn({2, 3, 2, 2, 2}, rng), z = randn({2, 2, 4}, rng);
        module_check("dy_relu", ps, {x, z}, [&] { return dy(x, z); });
    }
    return out;
}

GradcheckResult gradcheck_model(const ModelConfig& config, const ModelGradcheckOptions& options) {
    Rng rng(options.seed);
    UaMobileFormer<double> model(config, rng);
    auto params = model.parameters();
    for (auto& p : params) {
        auto data = p.tensor.mutable_data();
        double mean = 0.0, sq = 0.0;
        for (double v : data) mean += v;
        mean /= static_cast<double>(data.size());
        for (double v : data) sq += (v - mean) * (v - mean);
        const double sd = std::max(std::sqrt(sq / static_cast<double>(data.size())), 0.1);
        for (auto& v : data) v += options.param_scale * sd * rng.normal();
    }
    std::vector<double> frames(options.batch * 2 * config.num_frames * config.input_height *
                               config.input_width);
    for (auto& v : frames) v = rng.uniform();
    TD x({options.batch, 2, config.num_frames, config.input_height, config.input_width},
         std::move(frames), true);
    std::vector<int> labels(options.batch);
    for (std::size_t b = 0; b < options.batch; ++b) {
        labels[b] = static_cast<int>(rng.below(config.num_classes));
    }
    const std::uint64_t noise_seed = rng.next_u64();
    auto loss = [&] {
        Rng noise(noise_seed);
        return cross_entropy(model.forward(x, noise, Mode::train).logits, labels);
    };
    std::vector<std::pair<std::string, TD>> all;
    for (auto& p : params) all.emplace_back(p.name, p.tensor);
    all.emplace_back("input", x);
    Rng pick(options.seed + 1);
    return check_tensors("model", loss, std::move(all), options.eps, options.entries_per_tensor, &pick,
                         options.max_refinements);
}

} // namespace uamf
