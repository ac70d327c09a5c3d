#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slfm/error.hpp"
#include "slfm/rng.hpp"

namespace slfm {

// Global scalar precision. Storage is always double; in f32 mode every
// primitive output and gradient accumulation is rounded to float precision,
// so a run has genuine 32-bit numerics while the code stays single-typed.
enum class Precision { f64, f32 };

Precision global_precision();
void set_global_precision(Precision p);

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded primitive application (or a leaf). `values` is shared between
// nodes that alias the same storage (reshape), so tensors are immutable once
// produced.
struct Node {
    Shape shape;
    std::shared_ptr<std::vector<double>> values;
    std::vector<double> grad;  // sized lazily during backward
    bool requires_grad = false;    // leaf marker
    bool tracked = false;          // on the tape (leaf with grad, or op over tracked inputs)
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    int64_t size() const { return static_cast<int64_t>(values->size()); }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double value) { return full({1}, value); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const double* data() const { return node_->values->data(); }
    double* data() { return node_->values->data(); }
    const std::vector<double>& values() const { return *node_->values; }

    double item() const;  // scalar tensors only

    Tensor& set_requires_grad(bool v);
    bool requires_grad() const { return node_->requires_grad; }

    // Gradient accumulated by the last backward pass; zeros if this tensor was
    // not reachable from the loss.
    Tensor grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    void clear_grad() { node_->grad.clear(); }

    // New leaf sharing this tensor's storage, cut off from the tape.
    Tensor detach() const;
    Tensor clone() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// --- tape control ---------------------------------------------------------

bool grad_enabled();

// Disables taping for its scope (sampling, evaluation, oracle evaluation).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Reverse-mode sweep from a scalar loss. Visits the recorded graph in exact
// reverse topological order, accumulating additively across fan-out, then
// frees the tape (backward is single-shot per forward pass).
void backward(const Tensor& loss);

// d(loss)/d(param) for each param; params not reachable from the loss yield
// zero tensors. Loss must be scalar.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& params);

// --- internals shared by op implementations --------------------------------

namespace detail {

// Round to float precision when the global mode is f32.
inline double apply_precision_one(double x, Precision p) {
    return p == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

void apply_precision(std::vector<double>& xs);

// Validates finiteness (throws NumericError naming `op`), applies precision
// rounding, and records the node on the tape when gradients are enabled and
// some input is tracked.
Tensor make_op(const char* op, Shape shape, std::vector<double>&& out,
               std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn);

// Accumulate `delta` into p's grad buffer (no-op for untracked nodes).
void accumulate_grad(Node& p, const double* delta, int64_t n);
std::vector<double>& grad_buffer(Node& p);

}  // namespace detail

}  // namespace slfm
