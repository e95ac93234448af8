#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "routelab/autodiff/tensor.hpp"

namespace routelab::ad {

// A trainable array that outlives any single tape. Gradients accumulate into
// `grad` during Tape::backward and are cleared by the optimizer.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive and has not been reset.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) { }

    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Append-only record of operations for reverse-mode differentiation. Nodes are
// created in evaluation order, so inputs always precede their consumers and
// backward() can visit nodes once, in reverse index order.
class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> inputs;
        Backward backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
        const char* op = "const";
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var param(Parameter& p);

    // Records an op output. The node requires grad iff any input does; when
    // none do, the backward closure is dropped and the output is a constant.
    Var record(const char* op, Tensor value, std::vector<int> inputs, Backward backward);

    // Propagates d(loss)/d(node) for every node reachable from `loss` and adds
    // the result into each reachable Parameter::grad.
    void backward(const Var& loss);
    void reset();

    std::size_t size() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    // Gradient buffer of node `id`, allocated as zeros on first use.
    Tensor& grad_of(int id);

private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// --- op set ------------------------------------------------------------------
// Shapes are 2-D views (rows x cols). Binary elementwise ops broadcast a
// dimension of size 1 against the other operand.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var softmax(const Var& a);
Var concat(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var mean(const Var& a);
Var row_sum(const Var& a);  // [R, C] -> [R, 1]

// Embedding lookup: row i of the result is row indices[i] of `table`.
Var gather_rows(const Var& table, std::span<const int> indices);
Var sum(const Var& a);
Var mse_loss(const Var& prediction, const Var& target);

// Mean negative log-softmax of the labelled class over rows. A label of -1
// skips the row. With `weights`, row i contributes weights[i] * loss_i and the
// mean is taken over rows with a label and a non-zero weight.
Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const double> weights = {});

Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// Plain (non-recorded) helpers shared by ops and metrics.
Tensor softmax_rows(const Tensor& logits);
double gelu_value(double x);
double sigmoid_value(double x);

} // namespace routelab::ad
