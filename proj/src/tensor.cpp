#include "pf/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "pf/error.hpp"
#include "pf/kernels.hpp"

namespace pf {

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void TensorData::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
}

static void validate_shape(const std::vector<int>& shape) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    validate_shape(shape);
    auto d = std::make_shared<TensorData>();
    d->data.assign(numel(shape), 0.0f);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return wrap(std::move(d));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.d_->data.begin(), t.d_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    validate_shape(shape);
    if (numel(shape) != values.size())
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->data = std::move(values);
    d->requires_grad = requires_grad;
    return wrap(std::move(d));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

float Tensor::item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->data[0];
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->data = d_->data;
    d->requires_grad = false;
    return wrap(std::move(d));
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

void check_finite(const Tensor& t, const char* op_name) {
    if (!kern::all_finite(t.size(), t.data().data()))
        throw NumericError(std::string(op_name) + " produced non-finite values");
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward requires a scalar loss");
    TensorData* root = loss.node();
    if (!root->requires_grad)
        throw ContractError("backward on a tensor with no gradient path");

    // Post-order DFS over nodes that participate in the gradient.
    std::vector<TensorData*> order;
    std::unordered_set<TensorData*> visited;
    std::vector<std::pair<TensorData*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorData* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are scratch for this pass; leaf grads persist so that
    // separate backward calls accumulate.
    for (TensorData* n : order) {
        if (n->backward_fn) {
            n->grad.assign(n->data.size(), 0.0f);
        } else {
            n->ensure_grad();
        }
    }
    root->grad[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorData* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace pf
