#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "contproto/tape.hpp"
#include "contproto/tensor.hpp"

namespace contproto {

// Classification-loss inputs for a subset of batch spans. rows index into
// the class-probability matrix; targets holds one distribution per selected
// row; weights carries the per-span factor 1/(sentence count * spans in the
// span's sentence), so the loss is a plain weighted sum.
struct CeSpec {
    std::vector<std::size_t> rows;
    Tensor targets; // rows.size() x num_classes
    std::vector<double> weights;
};

// Source-language cross-entropy over gold one-hot targets.
NodeId loss_src(Tape& tape, NodeId p, const CeSpec& spec);

// Target-language soft cross-entropy over (possibly refined) pseudo labels.
NodeId loss_tgt(Tape& tape, NodeId p, const CeSpec& spec);

// Supervised contrastive loss over a multi-viewed span set. zeta holds 2m
// unit-norm rows: row i and row i + m are the two dropout views of span i,
// and span_labels[i] is that span's label (gold for source spans, the
// current-step argmax for target spans). Anchors whose positive set is
// empty are skipped; the average runs over the anchors that remain. With
// include_o_anchors=false, non-entity (label 0) entries never serve as
// anchors but still appear in other anchors' denominators.
NodeId loss_cont(Tape& tape, NodeId zeta, const std::vector<std::size_t>& span_labels,
                 double tau, bool include_o_anchors);

// Consistency regularization: mean KL(P_i || P'_i) between the two views'
// class distributions. p holds 2m rows paired as in loss_cont.
NodeId loss_reg(Tape& tape, NodeId p, std::size_t m);

// Which loss terms make up the training objective.
enum class LossMode {
    ContProto, // src + tgt + cont + reg
    Vanilla,   // src + tgt
    NoReg,     // src + tgt + cont
    NoCont,    // src + tgt (contrastive head and regularizer both off)
};

const char* loss_mode_name(LossMode m);

struct LossParts {
    std::optional<NodeId> src, tgt, cont, reg;
};

// Sums the parts the mode requires; missing required parts are an error.
NodeId total_loss(Tape& tape, const LossParts& parts, LossMode mode);

struct LossReport {
    double l_src = 0.0, l_tgt = 0.0, l_cont = 0.0, l_reg = 0.0, total = 0.0;
};

} // namespace contproto
