#include "crisisfuse/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace crisisfuse {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

void validate_shape(const Shape& shape)
{
    for (auto d : shape) {
        if (d == 0) {
            throw DimensionError("tensor shape " + shape_to_string(shape) + " has a zero dimension");
        }
    }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>())
{
    validate_shape(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& values, bool requires_grad)
    : Tensor(std::move(shape), to_buffer(values), requires_grad)
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad)
    : Tensor(std::move(shape), Buffer<T>(values), requires_grad)
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values, bool requires_grad) : node_(std::make_shared<Node<T>>())
{
    validate_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("tensor shape " + shape_to_string(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
    }
    for (const T v : values) {
        if (!std::isfinite(v)) {
            throw NumericError("tensor created with non-finite value");
        }
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const
{
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    }
    return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return Tensor<T>(node_->shape, node_->data, false);
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root)
{
    if (!root.defined() || !root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS; a node is emitted after all of its inputs.
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

template <typename T>
void Tape<T>::run_backward(bool keep_intermediate_grads)
{
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>* node = *it;
        if (!node->backward || node->grad.empty()) {
            continue;
        }
        node->backward(*node);
        if (!keep_intermediate_grads) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

template <typename T>
void backward(const Tensor<T>& loss)
{
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        return;
    }
    Tape<T> tape(loss);
    auto& seed = loss.node()->grad_buffer();
    seed[0] += T(1);
    tape.run_backward();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace crisisfuse
