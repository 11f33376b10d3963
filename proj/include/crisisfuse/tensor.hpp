#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "crisisfuse/errors.hpp"

namespace crisisfuse {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage. Vectorized kernels peel a number of leading
/// scalars that depends on the buffer address; a fixed alignment keeps the
/// rounding, and so every result, independent of where the heap puts things.
inline constexpr std::size_t kBufferAlignment = 64;

template <typename T>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n)
    {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
bool operator==(const Buffer<T>& a, const std::vector<T>& b)
{
    return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

template <typename T>
Buffer<T> to_buffer(const std::vector<T>& v)
{
    return Buffer<T>(v.begin(), v.end());
}

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// One vertex of the differentiation graph. Owned through shared_ptr by the
/// Tensor handles that reference it and by the nodes computed from it.
template <typename T>
struct Node {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into inputs' grads.
    std::function<void(Node&)> backward;

    Buffer<T>& grad_buffer()
    {
        if (grad.empty()) {
            grad.assign(data.size(), T(0));
        }
        return grad;
    }
};

/// Dense row-major tensor handle. Copies share the underlying node, which is
/// what lets optimizers update parameters that models hold.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
    Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false);
    Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false);
    Tensor(Shape shape, Buffer<T> values, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    Buffer<T>& values() { return node_->data; }
    const Buffer<T>& values() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad() { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }
    void clear_grad() { node_->grad.clear(); }

    /// Value of a single-element tensor.
    T item() const;

    /// Fresh leaf holding a copy of the values, detached from any graph.
    Tensor detach() const;

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Reverse-reachable part of the graph below a root, in topological order
/// (every node after all of its inputs). Only nodes that require gradients
/// are recorded.
template <typename T>
class Tape {
public:
    explicit Tape(const Tensor<T>& root);

    const std::vector<Node<T>*>& nodes() const { return order_; }
    std::size_t size() const { return order_.size(); }

    /// Runs every recorded backward rule once, last node first. The root's
    /// grad must already be seeded.
    void run_backward(bool keep_intermediate_grads = false);

private:
    std::vector<Node<T>*> order_;
};

/// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable leaf that
/// requires gradients. Leaves not on a path to the loss are left untouched,
/// so callers zero parameter grads beforehand.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace crisisfuse
