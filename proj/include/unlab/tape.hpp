#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unlab/tensor.hpp"

namespace unlab {

class Tape;

// Handle into the active tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
};

// Named parameter tensor. Gradients accumulate into `grad` when the
// parameter is trainable and used as a tape leaf.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}
};

struct GradCheckReport {
    std::string op_name;
    double max_relative_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Define-by-run tape: nodes are appended in topological order, so the
// backward pass is a single reverse sweep. A tape is single-use — calling
// backward() twice throws.
class Tape {
public:
    // recording=false skips all backward closures (inference mode).
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Parameter& p);

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);                  // elementwise
    Var scale(Var a, double s);
    Var add_row_broadcast(Var x, Var bias); // x[m×n] + bias[n] per row
    Var gelu(Var a);                        // tanh approximation
    Var softmax_rows(Var a);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var embedding(Var table, std::span<const int> ids);
    // scaled q·kᵀ with entries above the diagonal masked to -1e30
    Var causal_masked_scores(Var q, Var k, double score_scale);
    Var mse(Var a, Var b);
    Var cross_entropy(Var logits, std::span<const int> targets,
                      std::span<const std::uint8_t> mask);
    Var sum(Var a);
    Var l2_norm(Var a);
    Var concat_rows(Var a, Var b);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_cols(Var a, std::size_t start, std::size_t len);

    // Seeds d(root)=1 and sweeps the tape once; gradients of trainable
    // leaves are accumulated into their Parameter::grad.
    void backward(Var root);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    bool backward_done() const { return backward_done_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> backprop; // empty for leaves/constants
        Parameter* param = nullptr;
    };

    Var push(Tensor value, bool needs_grad, std::function<void()> backprop);
    Node& node(Var v);
    bool track(Var v) const;

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool backward_done_ = false;
};

// Central finite-difference gradient check of a scalar-valued function of
// one tensor input. Relative error denominator: max(|analytic|, |numeric|, 1e-8).
GradCheckReport finite_diff_check(const std::string& op_name,
                                  const std::function<Var(Tape&, Var)>& f,
                                  const Tensor& x, double tol, double h = 1e-5);

} // namespace unlab
