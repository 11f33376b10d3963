#include "crisisfuse/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace crisisfuse {

void AdamState::save_to(Checkpoint& ckpt, const ParameterSet<float>& params) const
{
    for (const auto& p : params.items()) {
        const auto mi = m.find(p.name);
        const auto vi = v.find(p.name);
        if (mi == m.end() || vi == v.end()) continue;
        ckpt.put("opt/m/" + p.name, p.tensor.shape(), mi->second);
        ckpt.put("opt/v/" + p.name, p.tensor.shape(), vi->second);
    }
    ckpt.put("opt/t", {1}, {static_cast<float>(step)});
}

void AdamState::load_from(const Checkpoint& ckpt, const ParameterSet<float>& params)
{
    const auto* t = ckpt.find("opt/t");
    if (t == nullptr) {
        throw IncompatibilityError("checkpoint carries no optimizer state");
    }
    step = static_cast<std::uint64_t>(t->values.at(0));
    m.clear();
    v.clear();
    for (const auto& p : params.items()) {
        const auto* me = ckpt.find("opt/m/" + p.name);
        const auto* ve = ckpt.find("opt/v/" + p.name);
        if (me == nullptr || ve == nullptr) continue;
        if (me->shape != p.tensor.shape() || ve->shape != p.tensor.shape()) {
            throw IncompatibilityError("optimizer moments for " + p.name + " have the wrong shape");
        }
        m[p.name] = me->values;
        v[p.name] = ve->values;
    }
}

void adam_step(ParameterSet<float>& params, AdamState& state)
{
    for (const auto& p : params.items()) {
        if (p.kind == ParamKind::trainable && !p.tensor.has_grad()) {
            throw ContractError("adam_step: parameter " + p.name + " has no gradient");
        }
    }
    const auto& cfg = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);

    for (auto& p : params.items()) {
        if (p.kind != ParamKind::trainable) continue;
        auto values = p.tensor.data();
        const auto grad = p.tensor.grad();
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) {
            m.assign(values.size(), 0.0f);
            v.assign(values.size(), 0.0f);
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            const float g = grad[i];
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            values[i] = static_cast<float>(values[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
        }
    }
}

TrainingMonitor::TrainingMonitor(MonitorConfig config) : config_(config), lr_(config.initial_lr)
{
    if (config_.patience == 0) {
        throw ParameterError("early-stopping patience must be >= 1");
    }
    if (config_.plateau_patience && *config_.plateau_patience == 0) {
        throw ParameterError("plateau patience must be >= 1");
    }
    if (!(config_.plateau_factor > 0.0 && config_.plateau_factor < 1.0)) {
        throw ParameterError("plateau factor must be in (0, 1)");
    }
}

bool TrainingMonitor::lr_at_floor() const
{
    return lr_ <= config_.min_lr * (1.0 + 1e-9);
}

bool TrainingMonitor::record(double dev_accuracy)
{
    history_.push_back(dev_accuracy);
    if (history_.size() == 1 || dev_accuracy > best_) {
        best_ = dev_accuracy;
        best_epoch_ = history_.size();
        stale_ = 0;
        plateau_stale_ = 0;
        floor_stale_ = 0;
        return true;
    }
    ++stale_;
    ++plateau_stale_;
    if (lr_at_floor()) ++floor_stale_;
    return false;
}

bool TrainingMonitor::should_stop() const
{
    if (history_.empty()) return false;
    const std::size_t counter = config_.stop_counts_at_lr_floor ? floor_stale_ : stale_;
    return counter >= config_.patience;
}

double TrainingMonitor::plateau_lr()
{
    if (config_.plateau_patience && plateau_stale_ >= *config_.plateau_patience) {
        plateau_stale_ = 0;
        if (!lr_at_floor()) {
            const double reduced = lr_ * config_.plateau_factor;
            lr_ = reduced < config_.min_lr * (1.0 + 1e-9) ? config_.min_lr : reduced;
        }
    }
    return lr_;
}

}  // namespace crisisfuse
