#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "contproto/corpus.hpp"
#include "contproto/encoder.hpp"
#include "contproto/prototypes.hpp"

namespace contproto {

struct ClassScore {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct EvalReport {
    std::vector<ClassScore> per_class; // indexed by entity class (index 0 unused)
    ClassScore micro;                  // pooled over all entity classes
};

// Exact-match span micro-F1; predictions[i] and gold[i] belong to sentence
// i. Gold spans must be non-overlapping within a sentence.
EvalReport span_micro_f1(const std::vector<std::vector<Span>>& predictions,
                         const std::vector<std::vector<Span>>& gold,
                         std::size_t num_classes);

// Decodes the store (argmax + the predict-time greedy overlap resolution)
// and scores it against the corpus's hidden gold. Errors if the corpus
// carries no hidden gold at all.
EvalReport oracle_pseudo_eval(const PseudoLabelStore& store, const Corpus& corpus,
                              std::size_t num_classes);
double oracle_pseudo_f1(const PseudoLabelStore& store, const Corpus& corpus,
                        std::size_t num_classes);

// Micro-F1 of predict() over a corpus with visible gold.
EvalReport evaluate_predictions(const EncoderConfig& cfg, const EncoderParams& params,
                                const Corpus& corpus, bool use_hidden_gold = false);

enum class EmbeddingKind { Z, Zeta };

// One JSON record per enumerated span: sentence id, span, label (gold class
// if annotated, else the model argmax), language, and the vector.
void export_embeddings(const EncoderConfig& cfg, const EncoderParams& params,
                       const Corpus& corpus, const LabelSet& labels, EmbeddingKind kind,
                       const std::string& path);

} // namespace contproto
