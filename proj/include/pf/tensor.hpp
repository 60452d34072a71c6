#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pf {

std::size_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// One node of the autograd graph. Values are written once by the op that
// creates the node; only `grad` mutates afterwards. backward_fn reads
// this->grad and accumulates into the parents' grads (additively).
struct TensorData {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until touched; data.size() once allocated
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorData>> parents;
    std::function<void(TensorData&)> backward_fn;

    std::size_t size() const { return data.size(); }
    void ensure_grad();
};

using NodePtr = std::shared_ptr<TensorData>;

// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> values,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    std::size_t size() const { return d_->data.size(); }

    std::span<const float> data() const { return d_->data; }
    std::span<float> mutable_data() { return d_->data; }
    float item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }
    bool has_grad() const { return !d_->grad.empty(); }
    std::span<const float> grad() const { return d_->grad; }
    std::span<float> mutable_grad() { return d_->grad; }
    void ensure_grad() { d_->ensure_grad(); }
    void zero_grad();

    // Value copy with no graph attached.
    Tensor detach() const;

    TensorData* node() const { return d_.get(); }
    const NodePtr& handle() const { return d_; }

    static Tensor wrap(NodePtr p) {
        Tensor t;
        t.d_ = std::move(p);
        return t;
    }

private:
    NodePtr d_;
};

// Runs reverse-mode accumulation from a scalar loss. Grad buffers of interior
// nodes are reset per call; leaf grads accumulate across calls until zeroed
// by the caller (adam_step does this after each update).
void backward(const Tensor& loss);

// While alive, ops do not record the graph (sampling/inference paths).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    static bool grad_enabled();

private:
    bool prev_;
};

// Throws NumericError if any element is NaN/Inf. Every op calls this on its
// output.
void check_finite(const Tensor& t, const char* op_name);

}  // namespace pf
