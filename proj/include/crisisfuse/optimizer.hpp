#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crisisfuse/checkpoint.hpp"
#include "crisisfuse/params.hpp"

namespace crisisfuse {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates keyed by parameter name.
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::map<std::string, std::vector<float>> m;
    std::map<std::string, std::vector<float>> v;

    explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}

    /// Stores the moments under "opt/m/<param>", "opt/v/<param>" and the step
    /// counter under "opt/t".
    void save_to(Checkpoint& ckpt, const ParameterSet<float>& params) const;
    void load_from(const Checkpoint& ckpt, const ParameterSet<float>& params);
};

/// One bias-corrected Adam update of every trainable parameter:
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(ParameterSet<float>& params, AdamState& state);

struct MonitorConfig {
    double initial_lr = 1e-3;
    std::size_t patience = 10;
    /// Non-improving epochs before the learning rate is cut; disabled when empty.
    std::optional<std::size_t> plateau_patience;
    double plateau_factor = 0.1;
    double min_lr = 1e-9;
    /// Only count non-improving epochs toward early stopping once the learning
    /// rate has reached min_lr.
    bool stop_counts_at_lr_floor = false;
};

/// Dev-accuracy bookkeeping for early stopping and plateau LR reduction.
/// Only strict improvements reset the counters.
class TrainingMonitor {
public:
    explicit TrainingMonitor(MonitorConfig config);

    /// Appends one epoch's dev accuracy; returns true on a new best.
    bool record(double dev_accuracy);

    bool should_stop() const;

    /// Cuts the learning rate after plateau_patience stale epochs and returns it.
    double plateau_lr();

    double lr() const { return lr_; }
    bool lr_at_floor() const;
    double best() const { return best_; }
    /// 1-based epoch of the best value, 0 before any record.
    std::size_t best_epoch() const { return best_epoch_; }
    std::size_t stale_epochs() const { return stale_; }
    const std::vector<double>& history() const { return history_; }
    const MonitorConfig& config() const { return config_; }

private:
    MonitorConfig config_;
    double lr_;
    std::vector<double> history_;
    double best_ = 0.0;
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
    std::size_t plateau_stale_ = 0;
    std::size_t floor_stale_ = 0;
};

}  // namespace crisisfuse
