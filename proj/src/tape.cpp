#include "contproto/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "contproto/kernels.hpp"

namespace contproto {

const char* op_name(OpKind k) {
    switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Concat: return "concat";
    case OpKind::RowSelect: return "row_select";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::L2NormalizeRows: return "l2_normalize_rows";
    case OpKind::Dot: return "dot";
    case OpKind::DropoutApply: return "dropout_apply";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    }
    return "?";
}

namespace {

[[noreturn]] void op_error(OpKind k, const std::string& msg) {
    throw std::runtime_error(std::string(op_name(k)) + ": " + msg);
}

void check_same_shape(OpKind k, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        op_error(k, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

} // namespace

NodeId Tape::push(TapeNode node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(NodeId id) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    if (grads_[id].empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape());
    return grads_[id];
}

NodeId Tape::input(Tensor value, bool requires_grad) {
    TapeNode n;
    n.kind = OpKind::Input;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b, bool transpose_rhs) {
    return forward(OpKind::Matmul, {a, b}, 0.0, transpose_rhs);
}
NodeId Tape::add(NodeId a, NodeId b) { return forward(OpKind::Add, {a, b}); }
NodeId Tape::scale(NodeId a, double s) { return forward(OpKind::Scale, {a}, s); }
NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    return forward(OpKind::Concat, parts);
}
NodeId Tape::row_select(NodeId a, std::vector<std::size_t> rows) {
    return forward(OpKind::RowSelect, {a}, 0.0, false, std::move(rows));
}
NodeId Tape::exp(NodeId a) { return forward(OpKind::Exp, {a}); }
NodeId Tape::log(NodeId a, double eps) { return forward(OpKind::Log, {a}, eps); }
NodeId Tape::softmax_rows(NodeId a) { return forward(OpKind::SoftmaxRows, {a}); }
NodeId Tape::l2_normalize_rows(NodeId a) { return forward(OpKind::L2NormalizeRows, {a}); }
NodeId Tape::dot(NodeId a, NodeId b) { return forward(OpKind::Dot, {a, b}); }
NodeId Tape::dropout_apply(NodeId a, NodeId mask) {
    return forward(OpKind::DropoutApply, {a, mask});
}
NodeId Tape::tanh(NodeId a) { return forward(OpKind::Tanh, {a}); }
NodeId Tape::relu(NodeId a) { return forward(OpKind::Relu, {a}); }

NodeId Tape::forward(OpKind kind, const std::vector<NodeId>& inputs, double scalar,
                     bool transpose_rhs, std::vector<std::size_t> indices) {
    for (NodeId id : inputs) {
        if (id >= nodes_.size()) op_error(kind, "input node id out of range");
    }
    TapeNode n;
    n.kind = kind;
    n.inputs = inputs;
    n.scalar = scalar;
    n.transpose_rhs = transpose_rhs;
    for (NodeId id : inputs) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;

    auto val = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i]].value; };
    auto need = [&](std::size_t k) {
        if (inputs.size() != k) {
            op_error(kind, "expected " + std::to_string(k) + " inputs, got " +
                               std::to_string(inputs.size()));
        }
    };

    switch (kind) {
    case OpKind::Input:
        op_error(kind, "use input() to create leaf nodes");
    case OpKind::Matmul:
        need(2);
        n.value = kernels::matmul(val(0), val(1), false, transpose_rhs);
        break;
    case OpKind::Add:
        need(2);
        check_same_shape(kind, val(0), val(1));
        n.value = kernels::add(val(0), val(1));
        break;
    case OpKind::Scale:
        need(1);
        n.value = kernels::scale(val(0), scalar);
        break;
    case OpKind::Concat: {
        if (inputs.empty()) op_error(kind, "needs at least one input");
        std::size_t rows = val(0).rows(), cols = 0;
        n.indices.clear();
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (val(i).rows() != rows) {
                op_error(kind, "row count mismatch " + val(0).shape_str() + " vs " +
                                   val(i).shape_str());
            }
            n.indices.push_back(cols); // column offset of part i in the output
            cols += val(i).cols();
        }
        Tensor out({rows, cols});
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const Tensor& p = val(i);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < p.cols(); ++c)
                    out.at(r, n.indices[i] + c) = p.at(r, c);
        }
        n.value = std::move(out);
        break;
    }
    case OpKind::RowSelect: {
        need(1);
        n.indices = std::move(indices);
        const Tensor& a = val(0);
        for (std::size_t r : n.indices) {
            if (r >= a.rows()) {
                op_error(kind, "row " + std::to_string(r) + " out of range for " +
                                   a.shape_str());
            }
        }
        Tensor out({n.indices.size(), a.cols()});
        for (std::size_t i = 0; i < n.indices.size(); ++i)
            for (std::size_t c = 0; c < a.cols(); ++c)
                out.at(i, c) = a.at(n.indices[i], c);
        n.value = std::move(out);
        break;
    }
    case OpKind::Exp:
        need(1);
        n.value = kernels::elementwise_exp(val(0));
        break;
    case OpKind::Log: {
        need(1);
        if (scalar <= 0.0) op_error(kind, "eps must be positive");
        std::size_t clamped = 0;
        n.value = kernels::elementwise_log(val(0), scalar, &clamped);
        log_clamp_events_ += clamped;
        break;
    }
    case OpKind::SoftmaxRows:
        need(1);
        n.value = kernels::softmax_rows(val(0));
        break;
    case OpKind::L2NormalizeRows:
        need(1);
        n.value = kernels::l2_normalize_rows(val(0));
        break;
    case OpKind::Dot:
        need(2);
        check_same_shape(kind, val(0), val(1));
        n.value = Tensor::scalar(kernels::dot(val(0), val(1)));
        break;
    case OpKind::DropoutApply:
        need(2);
        check_same_shape(kind, val(0), val(1));
        n.value = kernels::elementwise_mul(val(0), val(1));
        // The mask is data, not a differentiable input.
        n.requires_grad = nodes_[inputs[0]].requires_grad;
        break;
    case OpKind::Tanh:
        need(1);
        n.value = kernels::tanh_forward(val(0));
        break;
    case OpKind::Relu:
        need(1);
        n.value = kernels::relu_forward(val(0));
        break;
    }
    return push(std::move(n));
}

void Tape::backward(NodeId loss) {
    if (loss >= nodes_.size()) throw std::runtime_error("backward: node id out of range");
    if (nodes_[loss].value.size() != 1) {
        throw std::runtime_error("backward: loss must be a scalar, got shape " +
                                 nodes_[loss].value.shape_str());
    }
    grads_.clear();
    grads_.resize(nodes_.size());
    grad_buf(loss).vec()[0] = 1.0;

    // Node ids are topologically ordered by construction, so one reverse pass
    // sees every consumer before its producers.
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const NodeId id = static_cast<NodeId>(i);
        const TapeNode& n = nodes_[id];
        if (!n.requires_grad || grads_[id].empty()) continue;
        const Tensor& g = grads_[id];

        auto in = [&](std::size_t k) -> const TapeNode& { return nodes_[n.inputs[k]]; };
        auto add_grad = [&](std::size_t k, const Tensor& delta) {
            if (!in(k).requires_grad) return;
            Tensor& buf = grad_buf(n.inputs[k]);
            double* dst = buf.data();
            const double* src = delta.data();
            for (std::size_t j = 0; j < buf.size(); ++j) dst[j] += src[j];
        };

        switch (n.kind) {
        case OpKind::Input:
            break;
        case OpKind::Matmul: {
            const Tensor& a = in(0).value;
            const Tensor& b = in(1).value;
            if (!n.transpose_rhs) {
                // C = A B:  dA = G B^T, dB = A^T G
                if (in(0).requires_grad) add_grad(0, kernels::matmul(g, b, false, true));
                if (in(1).requires_grad) add_grad(1, kernels::matmul(a, g, true, false));
            } else {
                // C = A B^T: dA = G B, dB = G^T A
                if (in(0).requires_grad) add_grad(0, kernels::matmul(g, b, false, false));
                if (in(1).requires_grad) add_grad(1, kernels::matmul(g, a, true, false));
            }
            break;
        }
        case OpKind::Add:
            add_grad(0, g);
            add_grad(1, g);
            break;
        case OpKind::Scale:
            add_grad(0, kernels::scale(g, n.scalar));
            break;
        case OpKind::Concat: {
            for (std::size_t p = 0; p < n.inputs.size(); ++p) {
                if (!in(p).requires_grad) continue;
                const Tensor& part = in(p).value;
                Tensor slice({part.rows(), part.cols()});
                for (std::size_t r = 0; r < part.rows(); ++r)
                    for (std::size_t c = 0; c < part.cols(); ++c)
                        slice.at(r, c) = g.at(r, n.indices[p] + c);
                add_grad(p, slice);
            }
            break;
        }
        case OpKind::RowSelect: {
            if (!in(0).requires_grad) break;
            // Scatter-add; rows may repeat, so this stays serial.
            Tensor& buf = grad_buf(n.inputs[0]);
            const std::size_t cols = buf.cols();
            for (std::size_t i2 = 0; i2 < n.indices.size(); ++i2)
                for (std::size_t c = 0; c < cols; ++c)
                    buf.at(n.indices[i2], c) += g.at(i2, c);
            break;
        }
        case OpKind::Exp:
            add_grad(0, kernels::elementwise_mul(g, n.value));
            break;
        case OpKind::Log: {
            if (!in(0).requires_grad) break;
            const Tensor& x = in(0).value;
            Tensor d(g.shape());
            for (std::size_t j = 0; j < d.size(); ++j) {
                // Inside the clamp the output is constant, so the gradient is 0.
                d.vec()[j] = x.data()[j] > n.scalar ? g.data()[j] / x.data()[j] : 0.0;
            }
            add_grad(0, d);
            break;
        }
        case OpKind::SoftmaxRows:
            add_grad(0, kernels::softmax_rows_backward(n.value, g));
            break;
        case OpKind::L2NormalizeRows:
            add_grad(0, kernels::l2_normalize_rows_backward(in(0).value, n.value, g));
            break;
        case OpKind::Dot: {
            const double gs = g.data()[0];
            if (in(0).requires_grad) add_grad(0, kernels::scale(in(1).value, gs));
            if (in(1).requires_grad) add_grad(1, kernels::scale(in(0).value, gs));
            break;
        }
        case OpKind::DropoutApply:
            if (in(0).requires_grad) add_grad(0, kernels::elementwise_mul(g, in(1).value));
            break;
        case OpKind::Tanh: {
            if (!in(0).requires_grad) break;
            Tensor d(g.shape());
            for (std::size_t j = 0; j < d.size(); ++j) {
                const double y = n.value.data()[j];
                d.vec()[j] = g.data()[j] * (1.0 - y * y);
            }
            add_grad(0, d);
            break;
        }
        case OpKind::Relu: {
            if (!in(0).requires_grad) break;
            const Tensor& x = in(0).value;
            Tensor d(g.shape());
            for (std::size_t j = 0; j < d.size(); ++j)
                d.vec()[j] = x.data()[j] > 0.0 ? g.data()[j] : 0.0;
            add_grad(0, d);
            break;
        }
        }
    }
}

Tensor Tape::grad(NodeId id) const {
    if (id >= nodes_.size()) throw std::runtime_error("grad: node id out of range");
    if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
    return Tensor::zeros(nodes_[id].value.shape());
}

} // namespace contproto
