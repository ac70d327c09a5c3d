#include "slfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace slfm {

namespace {
Precision g_precision = Precision::f64;
thread_local bool g_grad_enabled = true;
}  // namespace

Precision global_precision() { return g_precision; }
void set_global_precision(Precision p) { g_precision = p; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

static NodePtr make_leaf(Shape shape, std::vector<double> data) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::make_shared<std::vector<double>>(std::move(data));
    return n;
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(make_leaf(std::move(shape), std::move(d)));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)),
                          detail::apply_precision_one(value, g_precision));
    return Tensor(make_leaf(std::move(shape), std::move(d)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    detail::apply_precision(data);
    return Tensor(make_leaf(std::move(shape), std::move(data)));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (double& x : d) x = stddev * rng.normal();
    detail::apply_precision(d);
    return Tensor(make_leaf(std::move(shape), std::move(d)));
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor of shape " + shape_str(shape()) + " is not scalar");
    return (*node_->values)[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    node_->tracked = v || !node_->parents.empty();
    return *this;
}

Tensor Tensor::grad() const {
    if (node_->grad.empty()) return Tensor::zeros(node_->shape);
    return Tensor::from(node_->shape, node_->grad);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->values = node_->values;  // immutable, safe to share
    return Tensor(n);
}

Tensor Tensor::clone() const {
    return Tensor::from(node_->shape, *node_->values);
}

namespace detail {

void apply_precision(std::vector<double>& xs) {
    if (g_precision == Precision::f32) {
        for (double& x : xs) x = static_cast<double>(static_cast<float>(x));
    }
}

Tensor make_op(const char* op, Shape shape, std::vector<double>&& out,
               std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
    if (shape_numel(shape) != static_cast<int64_t>(out.size())) {
        throw ShapeError(std::string(op) + ": internal output shape " + shape_str(shape) +
                         " does not match buffer length " + std::to_string(out.size()));
    }
    for (size_t i = 0; i < out.size(); ++i) {
        if (!std::isfinite(out[i])) {
            throw NumericError(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
    apply_precision(out);

    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::make_shared<std::vector<double>>(std::move(out));

    if (g_grad_enabled) {
        bool any_tracked = false;
        for (const Tensor& t : inputs) {
            if (t.defined() && t.node()->tracked) { any_tracked = true; break; }
        }
        if (any_tracked) {
            n->tracked = true;
            n->parents.reserve(inputs.size());
            for (const Tensor& t : inputs) {
                if (t.defined()) n->parents.push_back(t.node());
            }
            n->backward = std::move(backward_fn);
        }
    }
    return Tensor(n);
}

std::vector<double>& grad_buffer(Node& p) {
    if (p.grad.empty()) p.grad.assign(p.values->size(), 0.0);
    return p.grad;
}

void accumulate_grad(Node& p, const double* delta, int64_t n) {
    if (!p.tracked) return;
    auto& g = grad_buffer(p);
    if (g_precision == Precision::f32) {
        for (int64_t i = 0; i < n; ++i)
            g[i] = apply_precision_one(g[i] + apply_precision_one(delta[i], Precision::f32), Precision::f32);
    } else {
        for (int64_t i = 0; i < n; ++i) g[i] += delta[i];
    }
}

}  // namespace detail

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar tensor, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    }
    Node* root = loss.node().get();
    if (!root->tracked) return;  // nothing reachable requires grad

    // Iterative post-order DFS; graphs from long training batches can be deep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        Node* node = stack.back().first;
        size_t next = stack.back().second;
        if (next < node->parents.size()) {
            ++stack.back().second;
            Node* p = node->parents[next].get();
            if (p->tracked && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }

    // Free the tape: drop edges, closures, and interior gradients. Leaf
    // parameters keep their accumulated grads for the optimizer.
    for (Node* node : order) {
        node->parents.clear();
        node->backward = nullptr;
        if (!node->requires_grad) {
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->tracked = false;
        }
    }
}

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& params) {
    backward(loss);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Tensor& p : params) out.push_back(p.grad());
    return out;
}

}  // namespace slfm
