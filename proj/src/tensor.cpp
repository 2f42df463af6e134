#include "latemu/tensor.hpp"

#include <cmath>
#include <sstream>

namespace latemu {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    std::vector<float> data(static_cast<size_t>(latemu::numel(shape)), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    const int64_t n = latemu::numel(shape);
    if (data.empty()) data.assign(static_cast<size_t>(n), 0.0f);
    if (static_cast<int64_t>(data.size()) != n) {
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::param(std::string name, Shape shape, std::vector<float> data) {
    Tensor t = from_data(std::move(shape), std::move(data), true);
    const_cast<detail::Node*>(t.node())->name = std::move(name);
    return t;
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

void Tensor::ensure_finite(const char* context) const {
    for (float v : node_->value) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string(context) + ": non-finite value in tensor " +
                                 shape_str(shape()));
        }
    }
}

const std::vector<float>& Gradients::at(const Tensor& t) const {
    auto it = store_.find(t.node());
    if (it == store_.end()) {
        throw std::runtime_error("no gradient recorded for tensor" +
                                 (t.name().empty() ? std::string() : " '" + t.name() + "'"));
    }
    return it->second;
}

std::vector<float>& Gradients::buffer(const detail::Node* node, const Shape& shape) {
    auto it = store_.find(node);
    if (it == store_.end()) {
        it = store_.emplace(node, std::vector<float>(static_cast<size_t>(latemu::numel(shape)), 0.0f))
                 .first;
    }
    return it->second;
}

Gradients backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() expects a defined scalar loss");
    }
    auto* root = const_cast<detail::Node*>(loss.node());
    if (root->consumed) {
        throw std::runtime_error("backward() called twice on the same graph; re-run the forward pass");
    }
    if (!std::isfinite(root->value[0])) throw NonFiniteError("backward(): loss is non-finite");

    // Iterative post-order DFS: producers complete before their consumers.
    // The order holds owning pointers; nodes must outlive the whole sweep
    // even after their consumers drop their parent links.
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_map<detail::Node*, int> state;  // 0=new, 1=open, 2=done
    std::vector<std::shared_ptr<detail::Node>> stack{loss.node_ptr()};
    while (!stack.empty()) {
        std::shared_ptr<detail::Node> n = stack.back();
        int& st = state[n.get()];
        if (st == 0) {
            st = 1;
            for (auto& p : n->parents) {
                if (state[p.get()] == 0) stack.push_back(p);
            }
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                order.push_back(std::move(n));
            }
        }
    }

    Gradients grads;
    grads.buffer(root, root->shape)[0] = 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = it->get();
        if (n->consumed) {
            throw std::runtime_error("backward() reached an already-consumed graph node");
        }
        if (!n->backward) continue;  // leaf: keep its gradient buffer
        const std::vector<float>& grad_out = grads.buffer(n, n->shape);
        n->backward(grad_out, grads);
        n->consumed = true;
        n->backward = nullptr;  // release captured activations
        grads.drop(n);          // interior gradients are not reported
        n->parents.clear();
    }
    root->consumed = true;
    return grads;
}

namespace detail {

Tensor make_op(const char* op_name, Shape shape, std::vector<float> value,
               std::vector<Tensor> parents, BackwardFn backward_fn) {
    const int64_t n = latemu::numel(shape);
    if (static_cast<int64_t>(value.size()) != n) {
        throw ShapeError(std::string(op_name) + ": output buffer does not match shape " +
                         shape_str(shape));
    }
    for (float v : value) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string(op_name) + ": non-finite output");
        }
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);

    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            if (p.requires_grad()) {
                needs_grad = true;
                break;
            }
        }
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(node));
}

}  // namespace detail

}  // namespace latemu
