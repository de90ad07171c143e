#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Graph is an append-only tape. Every op appends one node holding its
// forward value; nodes whose inputs include a tracked node also keep a
// backward closure. Graph::backward walks the tape in reverse append order,
// which is a valid reverse topological order because inputs always precede
// their consumers.

#include "driftgate/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace driftgate::ad {

enum class OpKind {
    leaf,
    matmul,
    add,
    mul,
    scale,
    concat,
    slice,
    transpose,
    reshape,
    softmax,
    relu,
    tanh,
    exp,
    layer_norm,
    batch_norm,
    mean,
    sum,
    squared_difference,
    embedding_lookup,
    positional_add,
    pairwise_sq_dist,
};

std::string_view op_name(OpKind kind) noexcept;
/// Throws ValidationError for names that are not op kinds.
OpKind parse_op_kind(std::string_view name);

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool tracked() const;

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradient buffers for the parameter leaves of one backward pass.
class Gradients {
public:
    /// Gradient of the loss w.r.t. a parameter leaf (zeros if unreachable).
    const Tensor& operator[](Var parameter) const;
    const Tensor& at(std::size_t node_id) const;
    std::size_t count() const noexcept;

private:
    friend class Graph;
    std::vector<std::size_t> ids_;
    std::vector<Tensor> grads_;
};

/// Receives the node's forward value, the upstream gradient and the gradient
/// buffers of the inputs; entries are null for untracked inputs.
using BackwardFn = std::function<void(const Tensor& output, const Tensor& upstream,
                                      std::span<Tensor* const> input_grads)>;

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    const Tensor& value(Var v) const { return nodes_[v.id()].value; }
    bool tracked(Var v) const { return nodes_[v.id()].tracked; }
    OpKind kind(Var v) const { return nodes_[v.id()].kind; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Appends an op result. The backward closure is kept only when some
    /// input is tracked.
    Var record(OpKind kind, std::span<const Var> inputs, Tensor value, BackwardFn backward);

    /// Loss must hold exactly one value (shape [] or [1]).
    Gradients backward(Var loss) const;

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        bool tracked = false;
        bool parameter = false;
        BackwardFn backward;
    };
    // deque keeps node values at stable addresses while the tape grows
    std::deque<Node> nodes_;
};

struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
};

struct BatchNormOptions {
    bool training = true;
    bool update_running = true;
    double epsilon = 1e-5;
    double momentum = 0.1;
};

// Shape rules. Matrices live in the last two axes; a leading axis, if any,
// is a batch axis.
//   matmul      [m,k]x[k,n], [B,m,k]x[k,n], [B,m,k]x[B,k,n]
//   add, mul    equal shapes, or rhs shape a suffix of lhs shape (broadcast)
//   transpose   swaps the last two axes
//   softmax     along the last axis
//   layer_norm  over the last axis; gamma/beta of shape [d]
//   batch_norm  per feature of the last axis over all leading rows
//   mean, sum   reduce everything to shape [1]
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var softmax(Var a);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double epsilon = 1e-5);
Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, const BatchNormOptions& options);
Var mean(Var a);
Var sum(Var a);
Var squared_difference(Var a, Var b);
/// Gathers rows of a [V,d] table.
Var embedding_lookup(Var table, std::span<const std::size_t> indices);
/// Adds the fixed sinusoidal encoding over (position, dim) = the last two axes.
Var positional_add(Var x);
/// [n,d] x [m,d] -> [n,m] squared Euclidean distances.
Var pairwise_sq_dist(Var a, Var b);

Tensor sinusoidal_encoding(std::size_t positions, std::size_t dims);

struct OpAttrs {
    std::size_t axis = 0;
    std::size_t start = 0;
    std::size_t length = 0;
    double factor = 1.0;
    double epsilon = 1e-5;
    Shape shape;
    std::vector<std::size_t> indices;
    BatchNormStats* stats = nullptr;
    BatchNormOptions batch_norm;
};

/// Generic dispatch by op kind; used by tooling and tests that iterate kinds.
Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

} // namespace driftgate::ad
