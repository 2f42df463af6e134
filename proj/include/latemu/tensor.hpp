#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace latemu {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Gradients;

namespace detail {

// One node of the computation graph. Value nodes without a backward
// function are leaves (parameters or inputs).
struct Node {
    Shape shape;
    std::vector<float> value;
    bool requires_grad = false;
    std::string name;  // non-empty for named parameters
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const std::vector<float>&, Gradients&)> backward;
    bool consumed = false;
};

}  // namespace detail

// Scoped switch that disables graph recording (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Dense f32 tensor handle with value semantics over a shared graph node.
// Values are immutable once created except through data_mut(), which is
// reserved for optimizer updates on leaf parameters between steps.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor param(std::string name, Shape shape, std::vector<float> data);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }

    const std::vector<float>& data() const { return node_->value; }
    std::vector<float>& data_mut() { return node_->value; }
    float item() const;

    // Throws NonFiniteError if any element is NaN/Inf.
    void ensure_finite(const char* context) const;

    const detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Gradient buffers produced by backward(), keyed by graph node.
class Gradients {
public:
    bool contains(const Tensor& t) const { return store_.count(t.node()) != 0; }
    const std::vector<float>& at(const Tensor& t) const;

    // Create-or-fetch a zero-initialized buffer (used by backward functions).
    std::vector<float>& buffer(const detail::Node* node, const Shape& shape);
    void drop(const detail::Node* node) { store_.erase(node); }
    size_t size() const { return store_.size(); }

private:
    std::unordered_map<const detail::Node*, std::vector<float>> store_;
};

// Reverse-mode sweep from a scalar loss. The traversed graph is consumed:
// a second call through the same nodes throws.
Gradients backward(const Tensor& loss);

namespace detail {

using BackwardFn = std::function<void(const std::vector<float>&, Gradients&)>;

// Assemble an op result node; records the graph edge only when gradients
// are enabled and some parent requires them. Checks output finiteness.
Tensor make_op(const char* op_name, Shape shape, std::vector<float> value,
               std::vector<Tensor> parents, BackwardFn backward_fn);

}  // namespace detail

}  // namespace latemu
