#include "mvps/nn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "mvps/errors.hpp"

namespace mvps::nn {

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->val.assign(static_cast<size_t>(shape_numel(shape)), value);
    node->requires_grad = requires_grad && grad_enabled();
    return Tensor(node);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw SchemaError("from_data: " + std::to_string(data.size()) +
                          " values for shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->val = std::move(data);
    node->requires_grad = requires_grad && grad_enabled();
    return Tensor(node);
}

float Tensor::item() const {
    if (!node_ || node_->val.size() != 1)
        throw SchemaError("item(): tensor is not scalar");
    return node_->val[0];
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->val = node_->val;
    node->requires_grad = false;
    return Tensor(node);
}

void Tensor::backward() const {
    if (!node_ || node_->val.size() != 1)
        throw SchemaError("backward(): root must be scalar");

    // iterative post-order DFS -> topological order
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : topo) n->ensure_grad();
    node_->grad[0] = 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            for (auto& p : n->parents) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

Tensor make_node(Shape shape, std::vector<float> val,
                 std::vector<Tensor> parents,
                 std::function<void(Node&)> backward_fn) {
    if (static_cast<int64_t>(val.size()) != shape_numel(shape))
        throw SchemaError("make_node: value size mismatch for " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->val = std::move(val);
    bool track = grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        track = any;
    }
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(node);
}

}  // namespace mvps::nn
