#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crisisfuse/tensor.hpp"

namespace crisisfuse {

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-3;
    /// Tensors with more elements are checked on this many sampled coordinates.
    std::size_t max_coords = 48;
    std::uint64_t seed = 17;
    /// Denominator floor for the relative error, so exact-zero gradients compare sanely.
    double abs_floor = 1e-6;
};

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Coordinates whose one-sided differences disagree (the step crossed a kink).
    std::size_t skipped = 0;
    bool passed = true;
    std::string failure;
};

struct GradCheckReport {
    double tolerance = 0.0;
    std::vector<ParamCheck> params;

    bool passed() const;
    double max_rel_error() const;
};

struct NamedTensor {
    std::string name;
    Tensor<double> tensor;
};

/// Compares analytic gradients of `loss_fn` against central differences for
/// each named parameter. `loss_fn` must rebuild the graph from the current
/// parameter values on every call and return a scalar.
GradCheckReport gradient_check(const std::vector<NamedTensor>& params, const std::function<Tensor<double>()>& loss_fn,
                               const GradCheckOptions& options = {});

}  // namespace crisisfuse
