#include "uamf/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "uamf/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace uamf {

namespace {

#if defined(__GLIBC__)
// Activations and gradients are multi-megabyte buffers freed every step. Left
// to its defaults glibc maps and unmaps them each time, paying a page fault
// per fresh page; keeping them on the heap lets the next step reuse them.
const bool kAllocatorTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
}();
#endif

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_enabled; }
void GradMode::set_enabled(bool enabled) noexcept { grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& data, bool requires_grad)
    : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::initializer_list<T> data, bool requires_grad)
    : Tensor(std::move(shape), Buffer<T>(data), requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> data, bool requires_grad)
    : node_(std::make_shared<NodeT>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                             std::to_string(data.size()) + " elements");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{}, Buffer<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, Buffer<T> data,
                                 const std::vector<Tensor>& parents, BackwardFn fn) {
    Tensor out(std::move(shape), std::move(data));
    if (!GradMode::enabled()) return out;
    const bool track = std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor& p) { return p.requires_grad(); });
    if (!track) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (const auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(fn);
    return out;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
    return shape_numel(shape());
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    }
    return shape()[static_cast<std::size_t>(a)];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_) throw UsageError("use of an undefined tensor");
    if (node_->backward_fn) throw UsageError("cannot mutate a tensor produced by an op");
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    if (!node_) throw UsageError("use of an undefined tensor");
    return std::span<T>(node_->grad_buffer(), node_->data.size());
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
    if (!node_) throw UsageError("backward() on an undefined tensor");
    if (numel() != 1) {
        throw UsageError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            NodeT* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (NodeT* n : order) {
        if (n->backward_fn) n->grad.clear();
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), node_->data, false);
}

template class Tensor<float>;
template class Tensor<double>;

} // namespace uamf
