#pragma once

#include <functional>
#include <vector>

#include "cla/tensor.hpp"

namespace cla::ad {

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid for the graph's
/// lifetime (the graph is rebuilt per forward pass, define-by-run).
struct Var {
    Graph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
};

/// Append-only reverse-mode tape. Nodes are visited in reverse append
/// order exactly once during backward; nodes whose requires_grad flag is
/// false are constants: they receive no gradient and propagate none.
class Graph {
public:
    struct Node {
        Tensor value;
        std::vector<double> grad;  // sized lazily, same length as value.data
        bool requires_grad = false;
        Tensor* bound = nullptr;   // leaf write-back target
        std::vector<int> parents;
        std::function<void(Graph&, int)> pull;  // pushes this node's grad into parents
    };

    struct Diagnostics {
        std::size_t zero_norm_rows = 0;  // epsilon-stabilized normalizations
    };

    /// Mounts a parameter tensor. Its gradient is accumulated into
    /// t.grad when backward() runs, if t.requires_grad is set.
    Var leaf(Tensor& t);

    /// Mounts a constant (stop-gradient) value.
    Var constant(Tensor t);

    /// Runs reverse-mode accumulation from a scalar loss. Every
    /// requires_grad leaf bound to this graph receives (accumulates) its
    /// gradient; constant subgraphs are untouched.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    double scalar_value(Var v) const;

    /// Gradient sitting on a node after backward (empty if never reached).
    const std::vector<double>& node_grad(Var v) const;

    int append(Node&& n);
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    /// Adds `src` (length of parent's data) into the parent's grad buffer.
    void accumulate(int parent, const std::vector<double>& src);
    double* grad_buffer(int id);

    Diagnostics diagnostics;

    /// Invoked once at the start of every backward(); used by the budget
    /// ledger so no backward pass can go uncounted.
    std::function<void()> backward_hook;

private:
    std::vector<Node> nodes_;
};

// ---- graph construction ops -------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var relu(Var a);

/// Broadcast-add of a rank-1 bias [n] onto every row of [b x n].
Var add_rowvec(Var m, Var v);

/// Row-wise Euclidean normalization with epsilon stabilization
/// (epsilon = 1e-12 added to the norm). Zero-norm rows are counted in
/// graph diagnostics.
Var l2_normalize(Var a);

/// Batch normalization over rows. Train mode normalizes with batch
/// statistics (variance epsilon 1e-5) and updates the caller-owned
/// running stats with momentum 0.1; eval mode uses the running stats.
/// Train mode requires at least two rows.
Var batch_norm(Var x, Var gamma, Var beta, bool training,
               std::vector<double>& running_mean, std::vector<double>& running_var,
               double momentum = 0.1, double eps = 1e-5);

Var sum_all(Var a);
Var detach(Var a);

Var concat_rows(Var a, Var b);
Var slice_rows(Var a, std::size_t start, std::size_t count);

/// Mean over rows of softmax cross-entropy against integer targets.
Var softmax_cross_entropy_rows(Var logits, std::vector<int> targets);

// ---- finite-difference oracle -------------------------------------------

/// A scalar function under test: builds a loss from the mounted input.
/// The builder must be pure: repeated calls with the same input value
/// must produce the same loss value.
using ScalarFn = std::function<Var(Graph&, Var)>;

/// Central finite differences against the autodiff gradient of f at x.
/// Returns the max elementwise relative error, with an absolute floor of
/// 1e-6 on the denominator.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps = 1e-4);

}  // namespace cla::ad
