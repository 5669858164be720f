#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mvps::nn {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One vertex of the define-by-run graph. `backward_fn` reads this node's
// grad and accumulates into the parents' grads (allocated by the driver).
struct Node {
    Shape shape;
    std::vector<float> val;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0f);
    }
};

// Tensors inside the guard's scope record no graph (inference mode).
class NoGradGuard {
 public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

class Tensor {
 public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[i]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->val.size()); }

    float* data() { return node_->val.data(); }
    const float* data() const { return node_->val.data(); }
    std::vector<float>& values() { return node_->val; }
    const std::vector<float>& values() const { return node_->val; }

    float item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    float* grad_data() { node_->ensure_grad(); return node_->grad.data(); }
    const std::vector<float>& grad() const { return node_->grad; }
    void zero_grad() { if (node_) node_->grad.assign(node_->val.size(), 0.0f); }

    // Reverse-mode sweep from a scalar root.
    void backward() const;

    // Same values, no history.
    Tensor detach() const;

    const std::shared_ptr<Node>& node() const { return node_; }

 private:
    std::shared_ptr<Node> node_;
};

// Builds an op result node: forward value precomputed by the caller.
Tensor make_node(Shape shape, std::vector<float> val,
                 std::vector<Tensor> parents,
                 std::function<void(Node&)> backward_fn);

}  // namespace mvps::nn
