#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contproto/corpus.hpp"
#include "contproto/rng.hpp"
#include "contproto/tape.hpp"
#include "contproto/tensor.hpp"

namespace contproto {

// Shape of the span classifier: per-token embedding + position embedding,
// a small feedforward stack, span features [h_start; h_end; len_emb], a
// linear classifier over classes (index 0 = "O"), and a two-layer
// projection head whose unit-norm output feeds the contrastive machinery.
struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t num_classes = 0; // includes "O"
    std::size_t d_tok = 32;
    std::size_t d_h = 64;
    std::size_t n_layers = 2;
    std::size_t d_len = 8;
    std::size_t d_proj = 32;
    std::size_t max_span_len = 8;  // longest classifiable span
    std::size_t max_positions = 64; // longest supported sentence
    double dropout = 0.1;

    std::size_t z_dim() const { return 2 * d_h + d_len; }
    void validate() const;
};

struct EncoderParams {
    Tensor tok_emb;  // vocab_size x d_tok
    Tensor pos_emb;  // max_positions x d_tok
    std::vector<Tensor> ff_w; // layer 0: d_tok x d_h, rest: d_h x d_h
    std::vector<Tensor> ff_b; // 1 x d_h each
    Tensor len_emb;  // max_span_len x d_len
    Tensor cls_w;    // num_classes x z_dim
    Tensor cls_b;    // 1 x num_classes
    Tensor proj_w1;  // z_dim x d_proj
    Tensor proj_b1;  // 1 x d_proj
    Tensor proj_w2;  // d_proj x d_proj
    Tensor proj_b2;  // 1 x d_proj

    // Fixed traversal order shared by the optimizer, checkpoints, and
    // gradient collection.
    std::vector<Tensor*> all();
    std::vector<const Tensor*> all() const;
    std::vector<std::string> names() const;
};

EncoderParams init_params(const EncoderConfig& cfg, Rng& rng);

// Parameter leaves registered on one tape, in EncoderParams::all() order.
struct ParamNodes {
    std::vector<NodeId> ids;
};

ParamNodes put_params_on_tape(Tape& tape, const EncoderParams& params);

// A span to classify: sentence index within the batch plus inclusive token
// endpoints.
struct SpanRef {
    std::size_t sent = 0;
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const SpanRef& o) const {
        return sent == o.sent && start == o.start && end == o.end;
    }
};

struct EncodeResult {
    NodeId z = 0;      // spans x z_dim
    NodeId zeta = 0;   // spans x d_proj, unit-norm rows (a span whose
                       // projection head is fully inactive yields an exact
                       // zero row, which normalization keeps at zero)
    NodeId logits = 0; // spans x num_classes
    NodeId p = 0;      // spans x num_classes, rows sum to 1
};

// One forward pass over a batch. With dropout_on the masks are drawn from
// rng (inverted scaling), so two calls with independent rng draws realize
// the two stochastic views; with dropout off the pass is deterministic.
EncodeResult encode_pass(Tape& tape, const EncoderConfig& cfg, const ParamNodes& nodes,
                         const std::vector<const Sentence*>& batch,
                         const std::vector<SpanRef>& spans, bool dropout_on, Rng& rng);

// Gradients for every parameter in all() order after tape.backward().
std::vector<Tensor> collect_grads(const Tape& tape, const ParamNodes& nodes);

// Class probabilities for every enumerated span of one sentence, dropout
// off. Row i corresponds to spans[i].
struct SentenceScores {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    Tensor p; // spans x num_classes
};

SentenceScores score_sentence(const EncoderConfig& cfg, const EncoderParams& params,
                              const Sentence& sentence);

// Greedy flat-NER decoding: argmax per span, "O" dropped, overlaps resolved
// by probability (ties: earlier start, then shorter span).
std::vector<Span> resolve_spans(const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                                const Tensor& p);

std::vector<Span> predict(const EncoderConfig& cfg, const EncoderParams& params,
                          const Sentence& sentence);

// Binary checkpoint: config + tensor manifest header, then raw
// little-endian doubles. Reload is bit-exact.
void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     const EncoderParams& params);
void load_checkpoint(const std::string& path, EncoderConfig& cfg, EncoderParams& params);

} // namespace contproto
