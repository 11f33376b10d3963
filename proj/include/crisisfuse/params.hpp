#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "crisisfuse/checkpoint.hpp"
#include "crisisfuse/tensor.hpp"

namespace crisisfuse {

enum class ParamKind {
    trainable,
    frozen,  // parameter excluded from optimization
    buffer,  // running statistics
};

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    ParamKind kind = ParamKind::trainable;
};

/// Ordered, named view over the tensors a model owns. Entries are handles, so
/// updates through the set are visible to the model.
template <typename T>
class ParameterSet {
public:
    void add(std::string name, Tensor<T> tensor, ParamKind kind = ParamKind::trainable)
    {
        for (const auto& p : params_) {
            if (p.name == name) {
                throw ContractError("duplicate parameter name " + name);
            }
        }
        tensor.set_requires_grad(kind == ParamKind::trainable);
        params_.push_back({std::move(name), std::move(tensor), kind});
    }

    const std::vector<Parameter<T>>& items() const { return params_; }
    std::vector<Parameter<T>>& items() { return params_; }
    std::size_t size() const { return params_.size(); }

    const Parameter<T>* find(std::string_view name) const
    {
        for (const auto& p : params_) {
            if (p.name == name) return &p;
        }
        return nullptr;
    }

    /// Marks every parameter whose name starts with prefix as frozen.
    void freeze_prefix(std::string_view prefix)
    {
        for (auto& p : params_) {
            if (p.kind == ParamKind::trainable && std::string_view(p.name).substr(0, prefix.size()) == prefix) {
                p.kind = ParamKind::frozen;
                p.tensor.set_requires_grad(false);
                p.tensor.clear_grad();
            }
        }
    }

    void zero_grad()
    {
        for (auto& p : params_) {
            if (p.kind == ParamKind::trainable) p.tensor.zero_grad();
        }
    }

    std::size_t trainable_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) {
            if (p.kind == ParamKind::trainable) n += p.tensor.numel();
        }
        return n;
    }

    void save_to(Checkpoint& ckpt) const
    {
        for (const auto& p : params_) {
            std::vector<float> values(p.tensor.data().begin(), p.tensor.data().end());
            ckpt.put(p.name, p.tensor.shape(), std::move(values));
        }
    }

    /// Copies every entry whose name starts with prefix (all entries when the
    /// prefix is empty), skipping names listed in `except`. Shapes must match
    /// exactly; missing entries are an error when `require_all` is set.
    void load_from(const Checkpoint& ckpt, std::string_view prefix = {}, bool require_all = true,
                   const std::vector<std::string>& except = {})
    {
        for (auto& p : params_) {
            if (std::string_view(p.name).substr(0, prefix.size()) != prefix) continue;
            bool skip = false;
            for (const auto& e : except) skip = skip || e == p.name;
            if (skip) continue;
            const auto* entry = ckpt.find(p.name);
            if (entry == nullptr) {
                if (require_all) throw IncompatibilityError("checkpoint lacks tensor " + p.name);
                continue;
            }
            if (entry->shape != p.tensor.shape()) {
                throw IncompatibilityError("checkpoint tensor " + p.name + " has shape " +
                                           shape_to_string(entry->shape) + ", model expects " +
                                           shape_to_string(p.tensor.shape()));
            }
            auto dst = p.tensor.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(entry->values[i]);
        }
    }

    /// Deep copy of every value, used for best-epoch snapshots.
    std::vector<std::vector<T>> snapshot() const
    {
        std::vector<std::vector<T>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        return out;
    }

    void restore(const std::vector<std::vector<T>>& values)
    {
        if (values.size() != params_.size()) throw ContractError("snapshot does not match parameter set");
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.values().assign(values[i].begin(), values[i].end());
    }

private:
    std::vector<Parameter<T>> params_;
};

}  // namespace crisisfuse
