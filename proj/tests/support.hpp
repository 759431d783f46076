#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "uamf/ops.hpp"
#include "uamf/rng.hpp"
#include "uamf/tensor.hpp"

namespace testing {

using uamf::Shape;
using uamf::Tensor;

inline Tensor<double> random_leaf(const Shape& shape, uamf::Rng& rng, double scale = 1.0) {
    std::vector<double> v(uamf::shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor<double>(shape, std::move(v), true);
}

inline Tensor<float> random_f32(const Shape& shape, uamf::Rng& rng, double scale = 1.0) {
    std::vector<float> v(uamf::shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(scale * rng.normal());
    return Tensor<float>(shape, std::move(v));
}

// Plain central differences, kept separate from the library's own checker.
// Per input, error = max |analytic - numeric| / max(max |numeric|, max |analytic|, 1e-3 * G),
// where G is the largest gradient entry over all inputs. The floor keeps inputs whose exact
// gradient is zero (a key bias under softmax) from being judged on round-off alone.
inline double fd_error(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                       std::vector<Tensor<double>> inputs, double eps = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    f(inputs).backward();
    std::vector<std::vector<double>> analytic, numeric;
    double global = 1e-8;
    for (auto& t : inputs) {
        std::vector<double> a(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), a.begin());
        std::vector<double> n(t.numel());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + eps;
            const double up = f(inputs).item();
            data[i] = keep - eps;
            const double down = f(inputs).item();
            data[i] = keep;
            n[i] = (up - down) / (2 * eps);
            global = std::max({global, std::abs(n[i]), std::abs(a[i])});
        }
        analytic.push_back(std::move(a));
        numeric.push_back(std::move(n));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        double diff = 0.0, scale = 1e-3 * global;
        for (std::size_t i = 0; i < numeric[k].size(); ++i) {
            diff = std::max(diff, std::abs(analytic[k][i] - numeric[k][i]));
            scale = std::max({scale, std::abs(numeric[k][i]), std::abs(analytic[k][i])});
        }
        worst = std::max(worst, diff / scale);
    }
    return worst;
}

// Scalar that depends on every output entry with distinct weights.
inline Tensor<double> weighted_sum(const Tensor<double>& y) {
    std::vector<double> w(y.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.37 * std::sin(1.3 * double(i) + 0.2);
    return uamf::sum(uamf::mul(y, Tensor<double>(y.shape(), std::move(w))));
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("uamf_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testing
