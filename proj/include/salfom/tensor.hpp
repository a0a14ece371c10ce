#pragma once

// Minimal reverse-mode autodiff tensor.  Values are dense row-major doubles;
// every differentiable op records a closure that pushes the output gradient
// back into its inputs.  Graphs are built only while grad mode is enabled and
// at least one input requires a gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace salfom {

using Shape = std::vector<std::int64_t>;

// Storage with a fixed 64-byte start address, so vectorized kernels split
// every buffer the same way and results do not depend on where it landed.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{alignment}));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{alignment}); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Buffer& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
    static Tensor from(Shape shape, std::span<const double> values, bool requires_grad = false);
    static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false) {
        return from(std::move(shape), std::span<const double>(values), requires_grad);
    }
    static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false) {
        return from(std::move(shape), std::span<const double>(values.begin(), values.size()), requires_grad);
    }
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(int axis) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    std::span<const double> data() const { return node_->value; }
    // Direct write access; only meaningful for leaves (parameters, inputs).
    std::span<double> mutable_data() { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient accumulated by backward(); zeros if none reached this tensor.
    std::vector<double> grad() const;
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    // Seeds d(self)/d(self) = 1 for a scalar and propagates through the graph.
    void backward() const;

    // Same values, no history.
    Tensor detach() const;

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    friend Tensor make_result(Shape, Buffer, std::vector<Tensor>,
                              std::function<void(Node&)>);

    std::shared_ptr<Node> node_;
};

// Builds an op output.  The backward closure is attached only when the graph
// is being recorded and one of `inputs` requires a gradient.
Tensor make_result(Shape shape, Buffer value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace salfom
