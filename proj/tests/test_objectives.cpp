#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "contproto/objectives.hpp"
#include "contproto/rng.hpp"
#include "contproto/tape.hpp"
#include "contproto/tensor.hpp"

using namespace contproto;

namespace {

// ---------------------------------------------------------------------------
// Naive reference implementations, written as plain double loops with no
// shared code with the tape-based versions. These are the ground truth the
// fast implementations are held to.
// ---------------------------------------------------------------------------

double naive_weighted_ce(const Tensor& p, const CeSpec& spec) {
    double loss = 0.0;
    for (std::size_t s = 0; s < spec.rows.size(); ++s) {
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double t = spec.targets.at(s, c);
            if (t != 0.0) {
                loss -= spec.weights[s] * t * std::log(p.at(spec.rows[s], c));
            }
        }
    }
    return loss;
}

double naive_supcon(const Tensor& zeta, const std::vector<std::size_t>& labels,
                    double tau, bool include_o_anchors) {
    const std::size_t two_m = zeta.rows();
    const std::size_t m = labels.size();
    auto label_of = [&](std::size_t i) { return labels[i % m]; };
    auto sim = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t d = 0; d < zeta.cols(); ++d) s += zeta.at(i, d) * zeta.at(j, d);
        return s / tau;
    };

    double total = 0.0;
    std::size_t active = 0;
    for (std::size_t i = 0; i < two_m; ++i) {
        if (!include_o_anchors && label_of(i) == 0) continue;
        std::vector<std::size_t> positives;
        for (std::size_t j = 0; j < two_m; ++j) {
            if (j != i && label_of(j) == label_of(i)) positives.push_back(j);
        }
        if (positives.empty()) continue;
        ++active;
        double denom = 0.0;
        for (std::size_t a = 0; a < two_m; ++a) {
            if (a != i) denom += std::exp(sim(i, a));
        }
        double anchor = 0.0;
        for (std::size_t p : positives) {
            anchor += -sim(i, p) + std::log(denom);
        }
        total += anchor / static_cast<double>(positives.size());
    }
    return active == 0 ? 0.0 : total / static_cast<double>(active);
}

double naive_kl_pairs(const Tensor& p, std::size_t m) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double a = p.at(i, c);
            const double b = p.at(m + i, c);
            total += a * (std::log(a) - std::log(b));
        }
    }
    return total / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Random input builders.
// ---------------------------------------------------------------------------

Tensor random_rows_simplex(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            t.at(r, c) = 0.05 + rng.next_double();
            sum += t.at(r, c);
        }
        for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= sum;
    }
    return t;
}

Tensor random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        double norm = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            t.at(r, c) = rng.uniform(-1.0, 1.0);
            norm += t.at(r, c) * t.at(r, c);
        }
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= norm;
    }
    return t;
}

CeSpec random_onehot_spec(Rng& rng, std::size_t p_rows, std::size_t cols,
                          std::size_t picks) {
    CeSpec spec;
    spec.targets = Tensor::zeros({picks, cols});
    for (std::size_t s = 0; s < picks; ++s) {
        spec.rows.push_back(rng.next_below(p_rows));
        spec.targets.at(s, rng.next_below(cols)) = 1.0;
        spec.weights.push_back(0.05 + rng.next_double());
    }
    return spec;
}

CeSpec random_soft_spec(Rng& rng, std::size_t p_rows, std::size_t cols,
                        std::size_t picks) {
    CeSpec spec;
    spec.targets = random_rows_simplex(rng, picks, cols);
    for (std::size_t s = 0; s < picks; ++s) {
        spec.rows.push_back(rng.next_below(p_rows));
        spec.weights.push_back(0.05 + rng.next_double());
    }
    return spec;
}

// Central-difference gradient of a scalar tape expression with respect to
// one input tensor, rebuilt per evaluation.
void gradcheck(const std::function<NodeId(Tape&, NodeId)>& build, Tensor x,
               double h = 1e-6, double tol = 1e-5) {
    Tape tape;
    NodeId xin = tape.param(x);
    NodeId loss = build(tape, xin);
    tape.backward(loss);
    Tensor analytic = tape.grad(xin);

    for (std::size_t i = 0; i < x.size(); ++i) {
        auto eval = [&](double v) {
            Tensor xv = x;
            xv[i] = v;
            Tape t2;
            NodeId id = t2.param(xv);
            return t2.value(build(t2, id)).data()[0];
        };
        const double fd = (eval(x[i] + h) - eval(x[i] - h)) / (2.0 * h);
        const double rel = std::fabs(analytic[i] - fd) /
                           std::max(1e-6, std::fabs(analytic[i]) + std::fabs(fd));
        CHECK(rel < tol);
    }
}

} // namespace

TEST_CASE("classification losses match the naive loops on random inputs") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t rows = 2 + rng.next_below(6);
        const std::size_t cols = 2 + rng.next_below(4);
        Tensor p = random_rows_simplex(rng, rows, cols);

        CeSpec hard = random_onehot_spec(rng, rows, cols, 1 + rng.next_below(rows));
        Tape t1;
        NodeId pn1 = t1.constant(p);
        const double got_src = t1.value(loss_src(t1, pn1, hard)).data()[0];
        CHECK(got_src == doctest::Approx(naive_weighted_ce(p, hard)).epsilon(1e-10));

        CeSpec soft = random_soft_spec(rng, rows, cols, 1 + rng.next_below(rows));
        Tape t2;
        NodeId pn2 = t2.constant(p);
        const double got_tgt = t2.value(loss_tgt(t2, pn2, soft)).data()[0];
        CHECK(got_tgt == doctest::Approx(naive_weighted_ce(p, soft)).epsilon(1e-10));
    }
}

TEST_CASE("classification loss trivial cases") {
    // p equals the one-hot target: loss is exactly -log(1) = 0.
    Tensor p({2, 3});
    p.at(0, 1) = 1.0;
    p.at(1, 2) = 1.0;
    CeSpec spec;
    spec.rows = {0, 1};
    spec.targets = p;
    spec.weights = {1.0, 1.0};
    Tape tape;
    CHECK(tape.value(loss_src(tape, tape.constant(p), spec)).data()[0] ==
          doctest::Approx(0.0).epsilon(1e-12));

    // Uniform predictions against a one-hot target: log(num_classes).
    Tensor u = Tensor::full({1, 4}, 0.25);
    CeSpec one;
    one.rows = {0};
    one.targets = Tensor::zeros({1, 4});
    one.targets.at(0, 2) = 1.0;
    one.weights = {1.0};
    Tape t2;
    CHECK(t2.value(loss_src(t2, t2.constant(u), one)).data()[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // Soft target equal to p: the loss equals the entropy of p.
    Tensor q({1, 3});
    q.at(0, 0) = 0.5;
    q.at(0, 1) = 0.3;
    q.at(0, 2) = 0.2;
    double entropy = 0.0;
    for (std::size_t c = 0; c < 3; ++c) entropy -= q[c] * std::log(q[c]);
    CeSpec softspec;
    softspec.rows = {0};
    softspec.targets = q;
    softspec.weights = {1.0};
    Tape t3;
    CHECK(t3.value(loss_tgt(t3, t3.constant(q), softspec)).data()[0] ==
          doctest::Approx(entropy).epsilon(1e-12));
}

TEST_CASE("classification losses validate their targets") {
    Tensor p = Tensor::full({2, 2}, 0.5);
    CeSpec bad;
    bad.rows = {0};
    bad.targets = Tensor::full({1, 2}, 0.5); // not one-hot
    bad.weights = {1.0};
    Tape tape;
    NodeId pn = tape.constant(p);
    CHECK_THROWS_AS(loss_src(tape, pn, bad), std::runtime_error);
    CHECK_NOTHROW(loss_tgt(tape, pn, bad)); // fine as a soft label

    CeSpec negative = bad;
    negative.targets.at(0, 0) = -0.25;
    negative.targets.at(0, 1) = 1.25;
    CHECK_THROWS_AS(loss_tgt(tape, pn, negative), std::runtime_error);

    CeSpec not_normalized = bad;
    not_normalized.targets.at(0, 0) = 0.9;
    not_normalized.targets.at(0, 1) = 0.9;
    CHECK_THROWS_AS(loss_tgt(tape, pn, not_normalized), std::runtime_error);

    CeSpec out_of_range = bad;
    out_of_range.targets = Tensor::zeros({1, 2});
    out_of_range.targets.at(0, 0) = 1.0;
    out_of_range.rows = {5};
    CHECK_THROWS_AS(loss_src(tape, pn, out_of_range), std::runtime_error);
}

TEST_CASE("contrastive loss matches the naive loop on random inputs") {
    Rng rng(202);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 2 + rng.next_below(5);
        const std::size_t dim = 3 + rng.next_below(4);
        const bool include_o = trial % 2 == 0;
        Tensor zeta = random_unit_rows(rng, 2 * m, dim);
        std::vector<std::size_t> labels;
        for (std::size_t i = 0; i < m; ++i) labels.push_back(rng.next_below(3));

        Tape tape;
        NodeId zn = tape.constant(zeta);
        const double got =
            tape.value(loss_cont(tape, zn, labels, 0.07, include_o)).data()[0];
        const double want = naive_supcon(zeta, labels, 0.07, include_o);
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("contrastive loss structural properties") {
    Rng rng(303);

    SUBCASE("a single span still has its twin as positive") {
        Tensor zeta = random_unit_rows(rng, 2, 4);
        Tape tape;
        const double got =
            tape.value(loss_cont(tape, tape.constant(zeta), {1}, 0.07, true)).data()[0];
        CHECK(got == doctest::Approx(naive_supcon(zeta, {1}, 0.07, true)).epsilon(1e-10));
        // Identical views: sim(i, twin) = 1/tau and the denominator is one
        // term, so the loss is exactly zero.
        Tensor same({2, 3});
        same.at(0, 0) = same.at(1, 0) = 1.0;
        Tape t2;
        CHECK(t2.value(loss_cont(t2, t2.constant(same), {2}, 0.07, true)).data()[0] ==
              doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("excluding O anchors drops exactly the label-0 anchor terms") {
        const std::size_t m = 5;
        Tensor zeta = random_unit_rows(rng, 2 * m, 4);
        std::vector<std::size_t> labels{0, 1, 0, 1, 2};
        Tape t1, t2;
        const double with_o =
            t1.value(loss_cont(t1, t1.constant(zeta), labels, 0.1, true)).data()[0];
        const double without_o =
            t2.value(loss_cont(t2, t2.constant(zeta), labels, 0.1, false)).data()[0];
        CHECK(with_o == doctest::Approx(naive_supcon(zeta, labels, 0.1, true)));
        CHECK(without_o == doctest::Approx(naive_supcon(zeta, labels, 0.1, false)));
        CHECK(with_o != doctest::Approx(without_o).epsilon(1e-12));
    }

    SUBCASE("anchor order does not matter") {
        const std::size_t m = 4;
        Tensor zeta = random_unit_rows(rng, 2 * m, 5);
        std::vector<std::size_t> labels{1, 2, 1, 0};
        // Permute spans (and both their views consistently).
        std::vector<std::size_t> perm{2, 0, 3, 1};
        Tensor zp({2 * m, 5});
        std::vector<std::size_t> lp(m);
        for (std::size_t i = 0; i < m; ++i) {
            lp[i] = labels[perm[i]];
            for (std::size_t d = 0; d < 5; ++d) {
                zp.at(i, d) = zeta.at(perm[i], d);
                zp.at(m + i, d) = zeta.at(m + perm[i], d);
            }
        }
        Tape t1, t2;
        const double a =
            t1.value(loss_cont(t1, t1.constant(zeta), labels, 0.07, true)).data()[0];
        const double b =
            t2.value(loss_cont(t2, t2.constant(zp), lp, 0.07, true)).data()[0];
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }

    SUBCASE("pulling a positive pair closer lowers the loss") {
        // Two spans, same label. Configuration A: the pair's views point in
        // different directions; configuration B: all four aligned.
        auto build = [&](double off_angle) {
            Tensor z({4, 2});
            z.at(0, 0) = 1.0;
            z.at(1, 0) = std::cos(off_angle);
            z.at(1, 1) = std::sin(off_angle);
            z.at(2, 0) = 1.0;
            z.at(3, 0) = std::cos(off_angle);
            z.at(3, 1) = -std::sin(off_angle);
            Tape t;
            return t.value(loss_cont(t, t.constant(z), {1, 1}, 0.2, true)).data()[0];
        };
        CHECK(build(0.3) < build(1.2));
    }

    SUBCASE("no positives anywhere gives exactly zero") {
        Tensor zeta = random_unit_rows(rng, 2, 3);
        // One span: its twin always shares the label, so to exercise the
        // zero path exclude O anchors and give the span label 0.
        Tape tape;
        CHECK(tape.value(loss_cont(tape, tape.constant(zeta), {0}, 0.07, false))
                  .data()[0] == 0.0);
    }

    SUBCASE("input validation") {
        Tensor zeta = random_unit_rows(rng, 4, 3);
        Tape tape;
        NodeId zn = tape.constant(zeta);
        CHECK_THROWS_AS(loss_cont(tape, zn, {1, 1, 1}, 0.07, true), std::runtime_error);
        CHECK_THROWS_AS(loss_cont(tape, zn, {1, 1}, 0.0, true), std::runtime_error);
        CHECK_THROWS_AS(loss_cont(tape, zn, {1, 1}, 1e-4, true), std::runtime_error);
    }
}

TEST_CASE("consistency loss matches the naive KL and its closed forms") {
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.next_below(6);
        const std::size_t cols = 2 + rng.next_below(4);
        Tensor p = random_rows_simplex(rng, 2 * m, cols);
        Tape tape;
        const double got = tape.value(loss_reg(tape, tape.constant(p), m)).data()[0];
        CHECK(got == doctest::Approx(naive_kl_pairs(p, m)).epsilon(1e-10));
        CHECK(got >= -1e-12); // KL is non-negative
    }

    // Identical views: exactly zero.
    Tensor p = random_rows_simplex(rng, 3, 4);
    Tensor doubled({6, 4});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t c = 0; c < 4; ++c) {
            doubled.at(i, c) = p.at(i, c);
            doubled.at(3 + i, c) = p.at(i, c);
        }
    }
    Tape tape;
    CHECK(tape.value(loss_reg(tape, tape.constant(doubled), 3)).data()[0] == 0.0);

    // KL([1, 0] || [0.5, 0.5]) = log 2. The zero entry is clamped inside
    // log, but its coefficient is zero, so the value is unaffected.
    Tensor q({2, 2});
    q.at(0, 0) = 1.0;
    q.at(0, 1) = 0.0;
    q.at(1, 0) = 0.5;
    q.at(1, 1) = 0.5;
    Tape t2;
    CHECK(t2.value(loss_reg(t2, t2.constant(q), 1)).data()[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tape t3;
    CHECK_THROWS_AS(loss_reg(t3, t3.constant(q), 3), std::runtime_error);
}

TEST_CASE("loss gradients agree with finite differences") {
    Rng rng(505);

    SUBCASE("soft cross entropy through softmax") {
        Tensor logits({3, 4});
        for (double& v : logits.vec()) v = rng.uniform(-1.0, 1.0);
        CeSpec spec = random_soft_spec(rng, 3, 4, 3);
        gradcheck(
            [&](Tape& t, NodeId x) {
                return loss_tgt(t, t.softmax_rows(x), spec);
            },
            logits);
    }

    SUBCASE("contrastive loss through row normalization") {
        const std::size_t m = 3;
        Tensor raw({2 * m, 4});
        for (double& v : raw.vec()) v = rng.uniform(-1.0, 1.0);
        std::vector<std::size_t> labels{1, 0, 1};
        gradcheck(
            [&](Tape& t, NodeId x) {
                return loss_cont(t, t.l2_normalize_rows(x), labels, 0.2, true);
            },
            raw);
    }

    SUBCASE("consistency loss through softmax") {
        const std::size_t m = 2;
        Tensor logits({2 * m, 3});
        for (double& v : logits.vec()) v = rng.uniform(-1.0, 1.0);
        gradcheck(
            [&](Tape& t, NodeId x) { return loss_reg(t, t.softmax_rows(x), m); },
            logits);
    }
}

TEST_CASE("total_loss composes exactly the mode's terms") {
    Tensor p = Tensor::full({2, 2}, 0.5);
    Tensor zeta({2, 2});
    zeta.at(0, 0) = 1.0;
    zeta.at(1, 1) = 1.0;

    Tape tape;
    NodeId pn = tape.constant(p);
    CeSpec spec;
    spec.rows = {0};
    spec.targets = Tensor::zeros({1, 2});
    spec.targets.at(0, 1) = 1.0;
    spec.weights = {1.0};

    LossParts parts;
    parts.src = loss_src(tape, pn, spec);
    parts.tgt = loss_tgt(tape, pn, spec);
    parts.cont = loss_cont(tape, tape.constant(zeta), {1}, 0.07, true);
    parts.reg = loss_reg(tape, pn, 1);

    auto value = [&](NodeId id) { return tape.value(id).data()[0]; };
    const double s = value(*parts.src), t = value(*parts.tgt), c = value(*parts.cont),
                 r = value(*parts.reg);

    CHECK(value(total_loss(tape, parts, LossMode::ContProto)) ==
          doctest::Approx(s + t + c + r).epsilon(1e-15));
    CHECK(value(total_loss(tape, parts, LossMode::NoReg)) ==
          doctest::Approx(s + t + c).epsilon(1e-15));
    CHECK(value(total_loss(tape, parts, LossMode::Vanilla)) ==
          doctest::Approx(s + t).epsilon(1e-15));
    CHECK(value(total_loss(tape, parts, LossMode::NoCont)) ==
          doctest::Approx(s + t).epsilon(1e-15));

    LossParts missing;
    missing.src = parts.src;
    CHECK_THROWS_AS(total_loss(tape, missing, LossMode::Vanilla), std::runtime_error);
    missing.tgt = parts.tgt;
    CHECK_THROWS_AS(total_loss(tape, missing, LossMode::ContProto), std::runtime_error);
    CHECK_NOTHROW(total_loss(tape, missing, LossMode::NoCont));

    CHECK(std::string(loss_mode_name(LossMode::ContProto)) == "contproto");
    CHECK(std::string(loss_mode_name(LossMode::NoCont)) == "no_cont");
}
