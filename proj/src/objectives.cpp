#include "contproto/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace contproto {

namespace {

void check_ce_spec(const char* what, const Tensor& p, const CeSpec& spec) {
    if (spec.rows.size() != spec.targets.rows() || spec.rows.size() != spec.weights.size()) {
        throw std::runtime_error(std::string(what) + ": rows/targets/weights sizes disagree");
    }
    if (spec.targets.cols() != p.cols()) {
        throw std::runtime_error(std::string(what) + ": target width " +
                                 std::to_string(spec.targets.cols()) +
                                 " does not match class count " + std::to_string(p.cols()));
    }
    for (std::size_t r : spec.rows) {
        if (r >= p.rows()) {
            throw std::runtime_error(std::string(what) + ": row index out of range");
        }
    }
}

// -sum_s w_s sum_c targets[s,c] log p[rows[s],c] as one tape expression.
NodeId weighted_soft_ce(Tape& tape, NodeId p, const CeSpec& spec) {
    NodeId lp = tape.log(tape.row_select(p, spec.rows));
    Tensor w(spec.targets.shape());
    for (std::size_t s = 0; s < spec.targets.rows(); ++s) {
        for (std::size_t c = 0; c < spec.targets.cols(); ++c) {
            w.at(s, c) = spec.weights[s] * spec.targets.at(s, c);
        }
    }
    return tape.scale(tape.dot(lp, tape.constant(w)), -1.0);
}

} // namespace

NodeId loss_src(Tape& tape, NodeId p, const CeSpec& spec) {
    check_ce_spec("loss_src", tape.value(p), spec);
    for (std::size_t s = 0; s < spec.targets.rows(); ++s) {
        std::size_t ones = 0;
        for (std::size_t c = 0; c < spec.targets.cols(); ++c) {
            const double v = spec.targets.at(s, c);
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                throw std::runtime_error("loss_src: target row " + std::to_string(s) +
                                         " is not one-hot");
            }
        }
        if (ones != 1) {
            throw std::runtime_error("loss_src: target row " + std::to_string(s) +
                                     " must have exactly one gold class");
        }
    }
    return weighted_soft_ce(tape, p, spec);
}

NodeId loss_tgt(Tape& tape, NodeId p, const CeSpec& spec) {
    check_ce_spec("loss_tgt", tape.value(p), spec);
    for (std::size_t s = 0; s < spec.targets.rows(); ++s) {
        double sum = 0.0;
        for (std::size_t c = 0; c < spec.targets.cols(); ++c) {
            const double v = spec.targets.at(s, c);
            if (v < 0.0) {
                throw std::runtime_error("loss_tgt: negative pseudo-label entry in row " +
                                         std::to_string(s));
            }
            sum += v;
        }
        if (std::fabs(sum - 1.0) > 1e-6) {
            throw std::runtime_error("loss_tgt: pseudo label row " + std::to_string(s) +
                                     " sums to " + std::to_string(sum) + ", not 1");
        }
    }
    return weighted_soft_ce(tape, p, spec);
}

NodeId loss_cont(Tape& tape, NodeId zeta, const std::vector<std::size_t>& span_labels,
                 double tau, bool include_o_anchors) {
    const Tensor& z = tape.value(zeta);
    const std::size_t two_m = z.rows();
    const std::size_t m = span_labels.size();
    if (two_m != 2 * m) {
        throw std::runtime_error("loss_cont: zeta has " + std::to_string(two_m) +
                                 " rows for " + std::to_string(m) + " spans (want 2m)");
    }
    if (two_m < 2) throw std::runtime_error("loss_cont: need at least 2 entries");
    if (tau <= 0.0) throw std::runtime_error("loss_cont: temperature must be positive");
    if (1.0 / tau > 690.0) {
        // exp(s / tau) with |s| <= 1 must stay inside double range.
        throw std::runtime_error("loss_cont: temperature too small, exp would overflow");
    }

    auto label_of = [&](std::size_t entry) { return span_labels[entry % m]; };

    // Positive sets and the set of anchors that actually contribute.
    std::vector<std::size_t> pos_count(two_m, 0);
    std::vector<bool> anchor(two_m, false);
    std::size_t active = 0;
    for (std::size_t i = 0; i < two_m; ++i) {
        if (!include_o_anchors && label_of(i) == 0) continue;
        for (std::size_t j = 0; j < two_m; ++j) {
            if (j != i && label_of(j) == label_of(i)) ++pos_count[i];
        }
        if (pos_count[i] > 0) {
            anchor[i] = true;
            ++active;
        }
    }
    if (active == 0) return tape.constant(Tensor::scalar(0.0));

    // Similarities once; both the positive-pair term and the normalizer
    // share this node, so gradients accumulate through it.
    NodeId sim = tape.scale(tape.matmul(zeta, zeta, true), 1.0 / tau);

    // Self-similarities leave every denominator via a -1e9 shift whose exp
    // underflows to exactly zero.
    Tensor diag_mask = Tensor::zeros({two_m, two_m});
    for (std::size_t i = 0; i < two_m; ++i) diag_mask.at(i, i) = -1e9;
    NodeId denom = tape.matmul(tape.exp(tape.add(sim, tape.constant(diag_mask))),
                               tape.constant(Tensor::full({two_m, 1}, 1.0)));
    NodeId log_denom = tape.log(denom);

    const double inv_active = 1.0 / static_cast<double>(active);
    Tensor w_pos = Tensor::zeros({two_m, two_m});
    Tensor w_anchor = Tensor::zeros({two_m, 1});
    for (std::size_t i = 0; i < two_m; ++i) {
        if (!anchor[i]) continue;
        w_anchor.at(i, 0) = inv_active;
        const double w = inv_active / static_cast<double>(pos_count[i]);
        for (std::size_t j = 0; j < two_m; ++j) {
            if (j != i && label_of(j) == label_of(i)) w_pos.at(i, j) = w;
        }
    }
    NodeId pos_term = tape.dot(sim, tape.constant(w_pos));
    NodeId denom_term = tape.dot(log_denom, tape.constant(w_anchor));
    return tape.add(tape.scale(pos_term, -1.0), denom_term);
}

NodeId loss_reg(Tape& tape, NodeId p, std::size_t m) {
    const Tensor& pv = tape.value(p);
    if (pv.rows() != 2 * m || m == 0) {
        throw std::runtime_error("loss_reg: expected 2m probability rows with m > 0, got " +
                                 pv.shape_str());
    }
    std::vector<std::size_t> first(m), second(m);
    for (std::size_t i = 0; i < m; ++i) {
        first[i] = i;
        second[i] = m + i;
    }
    NodeId p1 = tape.row_select(p, first);
    NodeId p2 = tape.row_select(p, second);
    // KL(P || P') = sum P (log P - log P'), averaged over spans. Logs are
    // eps-clamped; the tape counts any clamp events.
    NodeId diff = tape.add(tape.log(p1), tape.scale(tape.log(p2), -1.0));
    return tape.scale(tape.dot(p1, diff), 1.0 / static_cast<double>(m));
}

const char* loss_mode_name(LossMode m) {
    switch (m) {
    case LossMode::ContProto: return "contproto";
    case LossMode::Vanilla: return "vanilla";
    case LossMode::NoReg: return "no_reg";
    case LossMode::NoCont: return "no_cont";
    }
    return "?";
}

NodeId total_loss(Tape& tape, const LossParts& parts, LossMode mode) {
    auto require = [&](const std::optional<NodeId>& part, const char* name) {
        if (!part) {
            throw std::runtime_error(std::string("total_loss: mode ") +
                                     loss_mode_name(mode) + " needs " + name);
        }
        return *part;
    };
    NodeId total = tape.add(require(parts.src, "l_src"), require(parts.tgt, "l_tgt"));
    if (mode == LossMode::ContProto || mode == LossMode::NoReg) {
        total = tape.add(total, require(parts.cont, "l_cont"));
    }
    if (mode == LossMode::ContProto) {
        total = tape.add(total, require(parts.reg, "l_reg"));
    }
    return total;
}

} // namespace contproto
