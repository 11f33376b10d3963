#include "crisisfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crisisfuse/rng.hpp"

namespace crisisfuse {

bool GradCheckReport::passed() const
{
    return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
}

double GradCheckReport::max_rel_error() const
{
    double worst = 0.0;
    for (const auto& p : params) {
        worst = std::max(worst, p.max_rel_error);
    }
    return worst;
}

namespace {

double evaluate(const std::function<Tensor<double>()>& loss_fn)
{
    const Tensor<double> loss = loss_fn();
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("gradient_check: loss function must return a scalar");
    }
    return loss.item();
}

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t max_coords, Rng& rng)
{
    std::vector<std::size_t> coords(numel);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (numel > max_coords) {
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(max_coords);
        std::sort(coords.begin(), coords.end());
    }
    return coords;
}

}  // namespace

GradCheckReport gradient_check(const std::vector<NamedTensor>& params, const std::function<Tensor<double>()>& loss_fn,
                               const GradCheckOptions& options)
{
    GradCheckReport report;
    report.tolerance = options.tolerance;

    for (const auto& p : params) {
        auto t = p.tensor;
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const Tensor<double> loss = loss_fn();
    backward(loss);
    const double base = loss.item();

    Rng rng(options.seed);
    const double h = options.step;
    for (const auto& p : params) {
        ParamCheck check;
        check.name = p.name;
        Tensor<double> t = p.tensor;
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        for (const std::size_t i : pick_coords(t.numel(), options.max_coords, rng)) {
            const double original = t.data()[i];
            t.data()[i] = original + h;
            const double plus = evaluate(loss_fn);
            t.data()[i] = original - h;
            const double minus = evaluate(loss_fn);
            t.data()[i] = original;

            const double numeric = (plus - minus) / (2.0 * h);
            const double a = analytic[i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                check.passed = false;
                check.failure = "non-finite gradient for " + p.name + " at coordinate " + std::to_string(i);
                break;
            }
            // A ReLU or max-pool switch inside [x-h, x+h] makes the two one-sided
            // slopes disagree by far more than smooth curvature would.
            const double fwd = (plus - base) / h;
            const double bwd = (base - minus) / h;
            const double scale = std::max({std::abs(fwd), std::abs(bwd), options.abs_floor});
            if (std::abs(fwd - bwd) > 0.05 * scale && std::abs(fwd - bwd) > 1e-3) {
                ++check.skipped;
                continue;
            }
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const double rel = std::abs(a - numeric) / denom;
            check.max_rel_error = std::max(check.max_rel_error, rel);
            ++check.checked;
        }
        if (check.passed) {
            if (check.max_rel_error > options.tolerance) {
                check.passed = false;
                check.failure = "relative error " + std::to_string(check.max_rel_error) + " exceeds " +
                                std::to_string(options.tolerance) + " for " + p.name;
            } else if (check.checked == 0 || check.skipped > check.checked) {
                check.passed = false;
                check.failure = "too many non-differentiable coordinates for " + p.name;
            }
        }
        report.params.push_back(std::move(check));
    }
    return report;
}

}  // namespace crisisfuse
