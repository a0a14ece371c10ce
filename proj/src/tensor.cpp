#include "salfom/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "salfom/error.hpp"

namespace salfom {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto n = numel_of(shape);
    return from(std::move(shape), Buffer(static_cast<std::size_t>(n), fill),
                requires_grad);
}

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    }
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::span<const double> values, bool requires_grad) {
    return from(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::scalar(double v) { return from({}, Buffer{v}); }

std::int64_t Tensor::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
    return {node_->grad.begin(), node_->grad.end()};
}

void Tensor::backward() const {
    if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order without recursion.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor make_result(Shape shape, Buffer value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
        if (any) {
            node->requires_grad = true;
            for (auto& t : inputs) {
                if (t.defined()) node->parents.push_back(t.node_ptr());
            }
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace salfom
