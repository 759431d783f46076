#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uamf/model.hpp"

namespace uamf {

struct GradcheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::string worst;          // input or parameter holding the largest error
    std::size_t entries = 0;    // perturbed scalars
    std::size_t refined = 0;    // entries whose step was shrunk around a kink
};

/// Per-tensor error: max |analytic - numeric| / max(max |numeric|, max |analytic|, floor, 1e-8).
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor = 0.0);

/// Within one check, a tensor's denominator is at least this fraction of the
/// largest gradient entry seen anywhere in the check. Tensors whose exact
/// gradient vanishes (a key bias under softmax, say) are then judged against
/// the problem's scale instead of against finite-difference round-off.
inline constexpr double kScaleFloor = 1e-3;

/// With step refinement on, central differences at h and h/2 must agree to
/// this relative tolerance (a tenth of the pass mark) or h is cut by 10.
inline constexpr double kConsistencyTol = 1e-5;

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps` for every entry of every input. Inputs must be leaves.
/// `max_refinements` works as in ModelGradcheckOptions.
GradcheckResult gradcheck(const std::string& name, const ScalarFn& f,
                          std::vector<Tensor<double>> inputs, double eps = 1e-5,
                          std::size_t max_refinements = 0);

/// One check per differentiable op and block-level function.
std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed = 1, double eps = 1e-5);

struct ModelGradcheckOptions {
    std::size_t batch = 2;
    /// Entries perturbed per parameter tensor, sampled without replacement;
    /// 0 checks every entry.
    std::size_t entries_per_tensor = 0;
    double eps = 1e-5;
    /// Every parameter gets Gaussian noise of this many initial standard
    /// deviations (at least 0.1 absolute), so zero-initialized weights also
    /// carry gradient signal while activations keep their initial scale.
    double param_scale = 1.0;
    std::uint64_t seed = 1;
    /// Times a step may be cut by 10 when it straddles a ReLU or max kink.
    /// Wide models have so many kinked units that some perturbation almost
    /// always crosses one; 0 keeps the plain fixed-step check.
    std::size_t max_refinements = 0;
};

/// Whole-network check at 64-bit in train mode, with the sampling noise
/// reseeded identically for every evaluation.
GradcheckResult gradcheck_model(const ModelConfig& config, const ModelGradcheckOptions& options = {});

} // namespace uamf
