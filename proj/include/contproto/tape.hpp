#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contproto/tensor.hpp"

namespace contproto {

using NodeId = std::uint32_t;

// Fixed op catalog. Backward rules exist for exactly these ops; there is no
// way to register new ones.
enum class OpKind {
    Input,
    Matmul,       // optional transposed right operand
    Add,
    Scale,        // by a compile-time-constant scalar
    Concat,       // column-wise, same row count
    RowSelect,    // gather rows by index, repeats allowed
    Exp,
    Log,          // log(max(x, eps)), clamp events counted
    SoftmaxRows,
    L2NormalizeRows,
    Dot,          // flattened inner product -> scalar
    DropoutApply, // x * mask, mask is a non-differentiable input
    Tanh,
    Relu,
};

const char* op_name(OpKind k);

struct TapeNode {
    OpKind kind = OpKind::Input;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    // Per-op extras.
    double scalar = 0.0;               // Scale factor / Log eps
    bool transpose_rhs = false;        // Matmul
    std::vector<std::size_t> indices;  // RowSelect rows / Concat column offsets
};

// Append-only record of one forward computation. Node ids are issued in
// construction order, so inputs always precede their consumers and a single
// reverse sweep propagates all gradients.
class Tape {
public:
    static constexpr double kLogEps = 1e-12;

    NodeId input(Tensor value, bool requires_grad = false);
    NodeId constant(Tensor value) { return input(std::move(value), false); }
    NodeId param(Tensor value) { return input(std::move(value), true); }

    NodeId matmul(NodeId a, NodeId b, bool transpose_rhs = false);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId row_select(NodeId a, std::vector<std::size_t> rows);
    NodeId exp(NodeId a);
    NodeId log(NodeId a, double eps = kLogEps);
    NodeId softmax_rows(NodeId a);
    NodeId l2_normalize_rows(NodeId a);
    NodeId dot(NodeId a, NodeId b);
    NodeId dropout_apply(NodeId a, NodeId mask);
    NodeId tanh(NodeId a);
    NodeId relu(NodeId a);

    // Generic dispatch; the named builders above are thin wrappers.
    NodeId forward(OpKind kind, const std::vector<NodeId>& inputs, double scalar = 0.0,
                   bool transpose_rhs = false, std::vector<std::size_t> indices = {});

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const TapeNode& node(NodeId id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Gradients accumulate (sum) across all
    // uses of a node; each node's rule runs exactly once.
    void backward(NodeId loss);

    bool has_grad(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }
    // Gradient of the last backward() loss w.r.t. node id; zeros if the node
    // did not influence the loss.
    Tensor grad(NodeId id) const;

    std::size_t log_clamp_events() const { return log_clamp_events_; }

private:
    NodeId push(TapeNode node);
    Tensor& grad_buf(NodeId id);

    std::vector<TapeNode> nodes_;
    std::vector<Tensor> grads_;
    std::size_t log_clamp_events_ = 0;
};

} // namespace contproto
