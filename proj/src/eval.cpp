#include "contproto/eval.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "contproto/kernels.hpp"
#include "contproto/tape.hpp"

namespace contproto {

using nlohmann::json;

namespace {

void check_gold(const std::vector<Span>& gold, std::size_t sentence) {
    for (std::size_t a = 0; a < gold.size(); ++a) {
        if (gold[a].label == 0) {
            throw std::runtime_error("span_micro_f1: gold span labeled O in sentence " +
                                     std::to_string(sentence));
        }
        for (std::size_t b = a + 1; b < gold.size(); ++b) {
            if (gold[a].overlaps(gold[b])) {
                throw std::runtime_error("span_micro_f1: overlapping gold spans in sentence " +
                                         std::to_string(sentence));
            }
        }
    }
}

void fill_rates(ClassScore& s) {
    s.precision = s.tp + s.fp == 0 ? 0.0
                                   : static_cast<double>(s.tp) /
                                         static_cast<double>(s.tp + s.fp);
    s.recall = s.tp + s.fn == 0 ? 0.0
                                : static_cast<double>(s.tp) /
                                      static_cast<double>(s.tp + s.fn);
    s.f1 = s.precision + s.recall == 0.0
               ? 0.0
               : 2.0 * s.precision * s.recall / (s.precision + s.recall);
}

} // namespace

EvalReport span_micro_f1(const std::vector<std::vector<Span>>& predictions,
                         const std::vector<std::vector<Span>>& gold,
                         std::size_t num_classes) {
    if (predictions.size() != gold.size()) {
        throw std::runtime_error("span_micro_f1: prediction/gold sentence counts differ");
    }
    EvalReport rep;
    rep.per_class.resize(num_classes);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        check_gold(gold[i], i);
        std::vector<bool> matched(gold[i].size(), false);
        for (const Span& p : predictions[i]) {
            if (p.label == 0 || p.label >= num_classes) {
                throw std::runtime_error("span_micro_f1: bad predicted label");
            }
            bool hit = false;
            for (std::size_t g = 0; g < gold[i].size(); ++g) {
                if (!matched[g] && gold[i][g] == p) {
                    matched[g] = true;
                    hit = true;
                    break;
                }
            }
            auto& cs = rep.per_class[p.label];
            (hit ? cs.tp : cs.fp) += 1;
        }
        for (std::size_t g = 0; g < gold[i].size(); ++g) {
            if (!matched[g]) rep.per_class[gold[i][g].label].fn += 1;
        }
    }
    for (std::size_t c = 1; c < num_classes; ++c) {
        rep.micro.tp += rep.per_class[c].tp;
        rep.micro.fp += rep.per_class[c].fp;
        rep.micro.fn += rep.per_class[c].fn;
        fill_rates(rep.per_class[c]);
    }
    fill_rates(rep.micro);
    return rep;
}

EvalReport oracle_pseudo_eval(const PseudoLabelStore& store, const Corpus& corpus,
                              std::size_t num_classes) {
    bool any_gold = false;
    for (const Sentence& s : corpus) any_gold = any_gold || !s.hidden_gold.empty();
    if (!any_gold) {
        throw std::runtime_error("oracle unavailable: corpus has no hidden gold labels");
    }
    if (store.num_sentences() != corpus.size()) {
        throw std::runtime_error("oracle_pseudo_eval: store covers " +
                                 std::to_string(store.num_sentences()) +
                                 " sentences, corpus has " + std::to_string(corpus.size()));
    }

    std::vector<std::vector<Span>> decoded(corpus.size()), gold(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        gold[i] = corpus[i].hidden_gold;
        const auto& spans = store.sentence_spans(i);
        Tensor p({spans.size(), num_classes});
        for (std::size_t r = 0; r < spans.size(); ++r) {
            const double* y = store.label_row(i, spans[r].first, spans[r].second);
            for (std::size_t c = 0; c < num_classes; ++c) p.at(r, c) = y[c];
        }
        decoded[i] = resolve_spans(spans, p);
    }
    return span_micro_f1(decoded, gold, num_classes);
}

double oracle_pseudo_f1(const PseudoLabelStore& store, const Corpus& corpus,
                        std::size_t num_classes) {
    return oracle_pseudo_eval(store, corpus, num_classes).micro.f1;
}

EvalReport evaluate_predictions(const EncoderConfig& cfg, const EncoderParams& params,
                                const Corpus& corpus, bool use_hidden_gold) {
    std::vector<std::vector<Span>> preds(corpus.size()), gold(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        preds[i] = predict(cfg, params, corpus[i]);
        gold[i] = use_hidden_gold ? corpus[i].hidden_gold : corpus[i].gold;
    }
    return span_micro_f1(preds, gold, cfg.num_classes);
}

void export_embeddings(const EncoderConfig& cfg, const EncoderParams& params,
                       const Corpus& corpus, const LabelSet& labels, EmbeddingKind kind,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);

    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Sentence& sent = corpus[i];
        const auto spans = enumerate_spans(sent.tokens.size(), cfg.max_span_len);
        std::vector<SpanRef> refs;
        for (const auto& [j, k] : spans) refs.push_back({0, j, k});

        Tape tape;
        ParamNodes nodes = put_params_on_tape(tape, params);
        Rng unused(0);
        EncodeResult enc = encode_pass(tape, cfg, nodes, {&sent}, refs, false, unused);
        const Tensor& vecs =
            kind == EmbeddingKind::Z ? tape.value(enc.z) : tape.value(enc.zeta);
        const Tensor& p = tape.value(enc.p);

        const std::vector<Span>& annotated =
            !sent.gold.empty() ? sent.gold : sent.hidden_gold;
        for (std::size_t r = 0; r < spans.size(); ++r) {
            std::size_t label = 0;
            bool from_gold = false;
            for (const Span& g : annotated) {
                if (g.start == spans[r].first && g.end == spans[r].second) {
                    label = g.label;
                    from_gold = true;
                    break;
                }
            }
            if (!from_gold && annotated.empty()) {
                // Unannotated corpus: fall back to the model's argmax.
                for (std::size_t c = 1; c < p.cols(); ++c) {
                    if (p.at(r, c) > p.at(r, label)) label = c;
                }
            }
            json rec;
            rec["sentence"] = i;
            rec["span"] = {spans[r].first, spans[r].second};
            rec["label"] = labels.name(label);
            rec["language"] = language_name(sent.language);
            rec["vector"] = std::vector<double>(vecs.data() + r * vecs.cols(),
                                                vecs.data() + (r + 1) * vecs.cols());
            out << rec.dump() << "\n";
        }
    }
}

} // namespace contproto
