#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace uamf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Global switch for graph recording. Evaluation code disables it through
/// NoGradGuard so forward passes do not retain the graph.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool enabled) noexcept;
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Allocator with a fixed 64-byte alignment. Vectorized kernels pick their
/// loop peeling from pointer alignment, so a fixed alignment keeps summation
/// order, and therefore results, independent of where malloc puts a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), alignment));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    T* grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad.data();
    }
};

} // namespace detail

/// Dense row-major array with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Values produced by ops are never mutated afterwards; only leaves (model
/// parameters) are updated in place, and only outside graph construction.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodeT = detail::Node<T>;
    using BackwardFn = std::function<void(NodeT&)>;

    Tensor() = default;
    Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false);
    Tensor(Shape shape, Buffer<T> data, bool requires_grad = false);
    Tensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    /// Builds an op result. The node keeps its parents and backward function
    /// only when grad mode is on and at least one parent requires grad.
    static Tensor make_result(Shape shape, Buffer<T> data,
                              const std::vector<Tensor>& parents, BackwardFn fn);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    /// Extent of one axis; negative values count from the end.
    std::size_t dim(int axis) const;

    std::span<const T> data() const;
    /// Writable view of a leaf's storage. Throws UsageError on op results.
    std::span<T> mutable_data();
    T item() const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    /// Reverse-mode sweep from this scalar. Gradients accumulate into leaves
    /// across calls; interior nodes are reset at the start of each sweep.
    void backward() const;

    /// Same values, no graph history, no grad.
    Tensor detach() const;

    NodeT* node() const noexcept { return node_.get(); }
    const std::shared_ptr<NodeT>& node_ptr() const noexcept { return node_; }

private:
    std::shared_ptr<NodeT> node_;
};

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace uamf
