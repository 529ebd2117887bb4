#include "contproto/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"


namespace contproto {

namespace fs = std::filesystem;
using nlohmann::json;

TrainMode parse_train_mode(const std::string& s) {
    if (s == "contproto") return TrainMode::ContProto;
    if (s == "vanilla") return TrainMode::Vanilla;
    if (s == "no_proto") return TrainMode::NoProto;
    if (s == "no_proto_no_cl") return TrainMode::NoProtoNoCl;
    if (s == "no_reg") return TrainMode::NoReg;
    if (s == "fixed_margin") return TrainMode::FixedMargin;
    if (s == "proto_no_cl") return TrainMode::ProtoNoCl;
    throw std::runtime_error(
        "unknown mode \"" + s +
        "\" (want contproto|vanilla|no_proto|no_proto_no_cl|no_reg|fixed_margin|proto_no_cl)");
}

const char* train_mode_name(TrainMode m) {
    switch (m) {
    case TrainMode::ContProto: return "contproto";
    case TrainMode::Vanilla: return "vanilla";
    case TrainMode::NoProto: return "no_proto";
    case TrainMode::NoProtoNoCl: return "no_proto_no_cl";
    case TrainMode::NoReg: return "no_reg";
    case TrainMode::FixedMargin: return "fixed_margin";
    case TrainMode::ProtoNoCl: return "proto_no_cl";
    }
    return "?";
}

bool mode_uses_prototypes(TrainMode m) {
    return m == TrainMode::ContProto || m == TrainMode::NoReg ||
           m == TrainMode::FixedMargin || m == TrainMode::ProtoNoCl;
}

bool mode_uses_dual_pass(TrainMode m) {
    return m == TrainMode::ContProto || m == TrainMode::NoProto ||
           m == TrainMode::NoReg || m == TrainMode::FixedMargin;
}

LossMode mode_loss_terms(TrainMode m) {
    switch (m) {
    case TrainMode::ContProto:
    case TrainMode::FixedMargin:
    case TrainMode::NoProto: return LossMode::ContProto;
    case TrainMode::NoReg: return LossMode::NoReg;
    case TrainMode::Vanilla: return LossMode::Vanilla;
    case TrainMode::NoProtoNoCl:
    case TrainMode::ProtoNoCl: return LossMode::NoCont;
    }
    return LossMode::Vanilla;
}

void TrainConfig::validate() const {
    if (epochs == 0 || teacher_epochs == 0) {
        throw std::runtime_error("TrainConfig: epochs must be positive");
    }
    if (batch_source == 0 || batch_target == 0) {
        throw std::runtime_error("TrainConfig: batch sizes must be positive");
    }
    if (lr <= 0.0) throw std::runtime_error("TrainConfig: lr must be positive");
    if (weight_decay < 0.0) throw std::runtime_error("TrainConfig: weight_decay < 0");
    if (alpha <= 0.0 || alpha >= 1.0) throw std::runtime_error("TrainConfig: alpha in (0,1)");
    if (beta <= 0.0 || beta > 1.0) throw std::runtime_error("TrainConfig: beta in (0,1]");
    if (tau <= 0.0) throw std::runtime_error("TrainConfig: tau must be positive");
    enc.validate();
}

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

TrainConfig read_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    TrainConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": expected key=value");
        }
        auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = strip(line.substr(0, eq));
        const std::string val = strip(line.substr(eq + 1));
        auto fail = [&](const std::string& why) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " + why);
        };
        auto as_size = [&]() -> std::size_t {
            try {
                return std::stoull(val);
            } catch (...) {
                fail("bad integer \"" + val + "\"");
            }
            return 0;
        };
        auto as_double = [&]() -> double {
            try {
                return std::stod(val);
            } catch (...) {
                fail("bad number \"" + val + "\"");
            }
            return 0;
        };
        auto as_bool = [&]() -> bool {
            if (val == "true") return true;
            if (val == "false") return false;
            fail("bad boolean \"" + val + "\" (want true|false)");
            return false;
        };

        if (key == "epochs") cfg.epochs = as_size();
        else if (key == "teacher_epochs") cfg.teacher_epochs = as_size();
        else if (key == "batch_source") cfg.batch_source = as_size();
        else if (key == "batch_target") cfg.batch_target = as_size();
        else if (key == "lr") cfg.lr = as_double();
        else if (key == "weight_decay") cfg.weight_decay = as_double();
        else if (key == "alpha") cfg.alpha = as_double();
        else if (key == "beta") cfg.beta = as_double();
        else if (key == "tau") cfg.tau = as_double();
        else if (key == "fixed_margin_r") cfg.fixed_margin_r = as_double();
        else if (key == "mode") cfg.mode = parse_train_mode(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "neg_per_pos") cfg.neg_per_pos = std::stol(val);
        else if (key == "include_o_anchors") cfg.include_o_anchors = as_bool();
        else if (key == "warm_start_student") cfg.warm_start_student = as_bool();
        else if (key == "enc.d_tok") cfg.enc.d_tok = as_size();
        else if (key == "enc.d_h") cfg.enc.d_h = as_size();
        else if (key == "enc.n_layers") cfg.enc.n_layers = as_size();
        else if (key == "enc.d_len") cfg.enc.d_len = as_size();
        else if (key == "enc.d_proj") cfg.enc.d_proj = as_size();
        else if (key == "enc.max_span_len") cfg.enc.max_span_len = as_size();
        else if (key == "enc.max_positions") cfg.enc.max_positions = as_size();
        else if (key == "enc.dropout") cfg.enc.dropout = as_double();
        else fail("unknown config key \"" + key + "\"");
    }
    return cfg;
}

void write_train_config(const std::string& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "mode=" << train_mode_name(cfg.mode) << "\n"
        << "epochs=" << cfg.epochs << "\n"
        << "teacher_epochs=" << cfg.teacher_epochs << "\n"
        << "batch_source=" << cfg.batch_source << "\n"
        << "batch_target=" << cfg.batch_target << "\n"
        << "lr=" << format_double(cfg.lr) << "\n"
        << "weight_decay=" << format_double(cfg.weight_decay) << "\n"
        << "alpha=" << format_double(cfg.alpha) << "\n"
        << "beta=" << format_double(cfg.beta) << "\n"
        << "tau=" << format_double(cfg.tau) << "\n"
        << "fixed_margin_r=" << format_double(cfg.fixed_margin_r) << "\n"
        << "seed=" << cfg.seed << "\n"
        << "neg_per_pos=" << cfg.neg_per_pos << "\n"
        << "include_o_anchors=" << (cfg.include_o_anchors ? "true" : "false") << "\n"
        << "warm_start_student=" << (cfg.warm_start_student ? "true" : "false") << "\n"
        << "enc.d_tok=" << cfg.enc.d_tok << "\n"
        << "enc.d_h=" << cfg.enc.d_h << "\n"
        << "enc.n_layers=" << cfg.enc.n_layers << "\n"
        << "enc.d_len=" << cfg.enc.d_len << "\n"
        << "enc.d_proj=" << cfg.enc.d_proj << "\n"
        << "enc.max_span_len=" << cfg.enc.max_span_len << "\n"
        << "enc.max_positions=" << cfg.enc.max_positions << "\n"
        << "enc.dropout=" << format_double(cfg.enc.dropout) << "\n";
}

MetricsWriter::MetricsWriter(const std::string& path, std::string run_id)
    : path_(path), run_id_(std::move(run_id)) {
    std::ofstream out(path_, std::ios::trunc); // start fresh for this run
    if (!out) throw std::runtime_error("cannot write " + path_);
}

void MetricsWriter::step(std::size_t epoch, std::size_t step, const LossReport& losses) {
    if (!active()) return;
    json rec;
    rec["run_id"] = run_id_;
    rec["kind"] = "step";
    rec["epoch"] = epoch;
    rec["step"] = step;
    rec["l_src"] = losses.l_src;
    rec["l_tgt"] = losses.l_tgt;
    if (losses.l_cont != 0.0) rec["l_cont"] = losses.l_cont;
    if (losses.l_reg != 0.0) rec["l_reg"] = losses.l_reg;
    rec["total"] = losses.total;
    std::ofstream out(path_, std::ios::app);
    out << rec.dump() << "\n";
}

void MetricsWriter::epoch(std::size_t epoch, std::optional<double> dev_f1,
                          std::optional<double> oracle_f1,
                          const std::vector<double>& margins) {
    if (!active()) return;
    json rec;
    rec["run_id"] = run_id_;
    rec["kind"] = "epoch";
    rec["epoch"] = epoch;
    if (dev_f1) rec["dev_f1"] = *dev_f1;
    if (oracle_f1) rec["oracle_f1"] = *oracle_f1;
    if (!margins.empty()) {
        json arr = json::array();
        for (double m : margins) {
            if (std::isnan(m)) arr.push_back(nullptr);
            else arr.push_back(m);
        }
        rec["margins"] = arr;
    }
    std::ofstream out(path_, std::ios::app);
    out << rec.dump() << "\n";
}

namespace {

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    return order;
}

struct Batch {
    std::vector<const Sentence*> sentences; // sources first, then targets
    std::vector<std::size_t> sentence_ids;  // corpus indices, parallel to sentences
    std::size_t n_src_sentences = 0;
    std::vector<SpanRef> spans;             // source spans first, then target spans
    std::size_t n_src_spans = 0;
    std::vector<std::size_t> src_gold;      // label per source span
    std::vector<std::size_t> spans_in_sentence; // per batch sentence, its span count
};

// Assembles one training batch; consumes rng only for source-side negative
// sampling (nothing when neg_per_pos < 0).
Batch build_batch(const Corpus& src, const std::vector<std::size_t>& src_ids,
                  const Corpus* tgt, const std::vector<std::size_t>& tgt_ids,
                  std::size_t max_span_len, long neg_per_pos, Rng& rng) {
    Batch b;
    b.n_src_sentences = src_ids.size();
    for (std::size_t id : src_ids) {
        b.sentences.push_back(&src[id]);
        b.sentence_ids.push_back(id);
    }
    if (tgt) {
        for (std::size_t id : tgt_ids) {
            b.sentences.push_back(&(*tgt)[id]);
            b.sentence_ids.push_back(id);
        }
    }
    b.spans_in_sentence.assign(b.sentences.size(), 0);
    for (std::size_t i = 0; i < src_ids.size(); ++i) {
        const auto sampled =
            sample_training_spans(src[src_ids[i]], max_span_len, neg_per_pos, rng);
        b.spans_in_sentence[i] = sampled.size();
        for (const Span& sp : sampled) {
            b.spans.push_back({i, sp.start, sp.end});
            b.src_gold.push_back(sp.label);
        }
    }
    b.n_src_spans = b.spans.size();
    if (tgt) {
        for (std::size_t t = 0; t < tgt_ids.size(); ++t) {
            const std::size_t local = src_ids.size() + t;
            const Sentence& s = (*tgt)[tgt_ids[t]];
            const auto all = enumerate_spans(s.tokens.size(), max_span_len);
            b.spans_in_sentence[local] = all.size();
            for (const auto& [j, k] : all) b.spans.push_back({local, j, k});
        }
    }
    return b;
}

CeSpec source_ce_spec(const Batch& b, std::size_t num_classes) {
    CeSpec spec;
    spec.targets = Tensor::zeros({b.n_src_spans, num_classes});
    const double inv_n = 1.0 / static_cast<double>(b.n_src_sentences);
    for (std::size_t i = 0; i < b.n_src_spans; ++i) {
        spec.rows.push_back(i);
        spec.targets.at(i, b.src_gold[i]) = 1.0;
        spec.weights.push_back(
            inv_n / static_cast<double>(b.spans_in_sentence[b.spans[i].sent]));
    }
    return spec;
}

CeSpec target_ce_spec(const Batch& b, const PseudoLabelStore& store,
                      std::size_t num_classes) {
    CeSpec spec;
    const std::size_t n_tgt_spans = b.spans.size() - b.n_src_spans;
    const std::size_t n_tgt_sents = b.sentences.size() - b.n_src_sentences;
    spec.targets = Tensor::zeros({n_tgt_spans, num_classes});
    const double inv_n = 1.0 / static_cast<double>(n_tgt_sents);
    for (std::size_t i = 0; i < n_tgt_spans; ++i) {
        const SpanRef& ref = b.spans[b.n_src_spans + i];
        spec.rows.push_back(b.n_src_spans + i);
        const double* y =
            store.label_row(b.sentence_ids[ref.sent], ref.start, ref.end);
        for (std::size_t c = 0; c < num_classes; ++c) spec.targets.at(i, c) = y[c];
        spec.weights.push_back(inv_n /
                               static_cast<double>(b.spans_in_sentence[ref.sent]));
    }
    return spec;
}

double dev_micro_f1(const EncoderConfig& enc, const EncoderParams& params,
                    const Corpus& dev) {
    return evaluate_predictions(enc, params, dev).micro.f1;
}

[[noreturn]] void nan_abort(const char* where, std::size_t epoch, std::size_t step,
                            const LossReport& losses, const Batch& batch) {
    std::ostringstream os;
    os << where << ": non-finite loss at epoch " << epoch << " step " << step
       << " (l_src=" << losses.l_src << " l_tgt=" << losses.l_tgt
       << " l_cont=" << losses.l_cont << " l_reg=" << losses.l_reg << "); batch sentences:";
    for (std::size_t i = 0; i < batch.sentence_ids.size(); ++i) {
        os << (i == 0 ? " " : ",") << (i < batch.n_src_sentences ? "s" : "t")
           << batch.sentence_ids[i];
    }
    throw std::runtime_error(os.str());
}

} // namespace

TeacherResult train_teacher(const TrainConfig& cfg, const Corpus& src_train,
                            const Corpus& src_dev, MetricsWriter* metrics) {
    cfg.validate();
    if (src_train.empty()) throw std::runtime_error("train_teacher: empty source corpus");

    Rng root(cfg.seed);
    Rng init_rng = root.fork(1);
    EncoderParams params = init_params(cfg.enc, init_rng);

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(ocfg);
    for (Tensor* t : params.all()) opt.add_param(t);

    TeacherResult result;
    result.best_dev_f1 = -1.0;
    for (std::size_t epoch = 0; epoch < cfg.teacher_epochs; ++epoch) {
        Rng erng = root.fork(100 + epoch);
        const auto order = shuffled_order(src_train.size(), erng);
        const std::size_t steps =
            (src_train.size() + cfg.batch_source - 1) / cfg.batch_source;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t lo = step * cfg.batch_source;
            const std::size_t hi = std::min(lo + cfg.batch_source, order.size());
            std::vector<std::size_t> ids(order.begin() + lo, order.begin() + hi);

            Batch batch = build_batch(src_train, ids, nullptr, {}, cfg.enc.max_span_len,
                                      cfg.neg_per_pos, erng);
            Tape tape;
            ParamNodes nodes = put_params_on_tape(tape, params);
            EncodeResult enc =
                encode_pass(tape, cfg.enc, nodes, batch.sentences, batch.spans, true, erng);
            NodeId l = loss_src(tape, enc.p, source_ce_spec(batch, cfg.enc.num_classes));

            LossReport rep;
            rep.l_src = rep.total = tape.value(l).data()[0];
            if (!std::isfinite(rep.total)) nan_abort("train_teacher", epoch, step, rep, batch);
            tape.backward(l);
            opt.step(collect_grads(tape, nodes));
            if (metrics) metrics->step(epoch, step, rep);
        }
        const double f1 = dev_micro_f1(cfg.enc, params, src_dev);
        result.dev_f1_history.push_back(f1);
        if (metrics) metrics->epoch(epoch, f1, std::nullopt, {});
        if (f1 > result.best_dev_f1) {
            result.best_dev_f1 = f1;
            result.best_epoch = epoch;
            result.params = params;
        }
    }
    return result;
}

PseudoLabelStore assign_initial_pseudo_labels(const EncoderConfig& enc,
                                              const EncoderParams& teacher,
                                              const Corpus& tgt) {
    PseudoLabelStore store(enc.num_classes);
    for (std::size_t i = 0; i < tgt.size(); ++i) {
        SentenceScores sc = score_sentence(enc, teacher, tgt[i]);
        store.add_sentence(i, sc.spans, sc.p);
    }
    return store;
}

StudentResult train_student(const TrainConfig& cfg, const Corpus& src_train,
                            const Corpus& tgt_train, PseudoLabelStore& store,
                            const Corpus& src_dev, MetricsWriter* metrics,
                            const EpochHook& on_epoch_end,
                            const EncoderParams* warm_start_from) {
    cfg.validate();
    if (src_train.empty() || tgt_train.empty()) {
        throw std::runtime_error("train_student: empty corpus");
    }
    if (store.num_sentences() != tgt_train.size()) {
        throw std::runtime_error("train_student: store does not cover the target corpus");
    }

    const bool dual = mode_uses_dual_pass(cfg.mode);
    const bool protos = mode_uses_prototypes(cfg.mode);
    const LossMode terms = mode_loss_terms(cfg.mode);
    const std::size_t C = cfg.enc.num_classes;

    Rng root(cfg.seed);
    EncoderParams params;
    if (cfg.warm_start_student) {
        if (warm_start_from == nullptr) {
            throw std::runtime_error(
                "train_student: warm_start_student needs teacher params");
        }
        params = *warm_start_from;
    } else {
        Rng init_rng = root.fork(2);
        params = init_params(cfg.enc, init_rng);
    }

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(ocfg);
    for (Tensor* t : params.all()) opt.add_param(t);

    const std::size_t proto_dim = cfg.enc.d_proj;
    StudentResult result;
    result.best_dev_f1 = -1.0;
    if (protos) {
        result.bank = PrototypeBank(C, proto_dim, cfg.alpha);
        result.margins = cfg.mode == TrainMode::FixedMargin
                             ? MarginTable::fixed(C, cfg.fixed_margin_r)
                             : MarginTable(C);
    }

    const bool have_oracle = [&] {
        for (const Sentence& s : tgt_train) {
            if (!s.hidden_gold.empty()) return true;
        }
        return false;
    }();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.fork(1000 + epoch);
        const auto tgt_order = shuffled_order(tgt_train.size(), erng);
        const auto src_order = shuffled_order(src_train.size(), erng);
        const std::size_t steps =
            (tgt_train.size() + cfg.batch_target - 1) / cfg.batch_target;

        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t lo = step * cfg.batch_target;
            const std::size_t hi = std::min(lo + cfg.batch_target, tgt_order.size());
            std::vector<std::size_t> tgt_ids(tgt_order.begin() + lo, tgt_order.begin() + hi);
            std::vector<std::size_t> src_ids;
            for (std::size_t i = 0; i < cfg.batch_source; ++i) {
                src_ids.push_back(src_order[(step * cfg.batch_source + i) % src_order.size()]);
            }

            Batch batch = build_batch(src_train, src_ids, &tgt_train, tgt_ids,
                                      cfg.enc.max_span_len, cfg.neg_per_pos, erng);
            const std::size_t m = batch.spans.size();

            // One pass over the doubled batch realizes both dropout views;
            // span i and span i + m are the same span under the two views.
            std::vector<const Sentence*> pass_sents = batch.sentences;
            std::vector<SpanRef> pass_spans = batch.spans;
            if (dual) {
                pass_sents.insert(pass_sents.end(), batch.sentences.begin(),
                                  batch.sentences.end());
                for (const SpanRef& sp : batch.spans) {
                    pass_spans.push_back(
                        {sp.sent + batch.sentences.size(), sp.start, sp.end});
                }
            }

            Tape tape;
            ParamNodes nodes = put_params_on_tape(tape, params);
            EncodeResult enc =
                encode_pass(tape, cfg.enc, nodes, pass_sents, pass_spans, true, erng);
            const Tensor& p_val = tape.value(enc.p);

            // Span labels: gold on the source side, the current prediction
            // (first view) on the target side.
            std::vector<std::size_t> span_labels(m, 0);
            for (std::size_t i = 0; i < m; ++i) {
                if (i < batch.n_src_spans) {
                    span_labels[i] = batch.src_gold[i];
                } else {
                    std::size_t best = 0;
                    for (std::size_t c = 1; c < C; ++c) {
                        if (p_val.at(i, c) > p_val.at(i, best)) best = c;
                    }
                    span_labels[i] = best;
                }
            }

            LossParts parts;
            parts.src = loss_src(tape, enc.p, source_ce_spec(batch, C));
            parts.tgt = loss_tgt(tape, enc.p, target_ce_spec(batch, store, C));
            if (dual) {
                parts.cont =
                    loss_cont(tape, enc.zeta, span_labels, cfg.tau, cfg.include_o_anchors);
                if (terms == LossMode::ContProto) parts.reg = loss_reg(tape, enc.p, m);
            }
            NodeId total = total_loss(tape, parts, terms);

            LossReport rep;
            rep.l_src = tape.value(*parts.src).data()[0];
            rep.l_tgt = tape.value(*parts.tgt).data()[0];
            if (parts.cont) rep.l_cont = tape.value(*parts.cont).data()[0];
            if (parts.reg) rep.l_reg = tape.value(*parts.reg).data()[0];
            rep.total = tape.value(total).data()[0];
            if (!std::isfinite(rep.total)) nan_abort("train_student", epoch, step, rep, batch);

            tape.backward(total);
            opt.step(collect_grads(tape, nodes));
            result.step_losses.push_back(rep);
            if (metrics) metrics->step(epoch, step, rep);

            if (protos) {
                // First-view projections drive all prototype machinery. In
                // modes without the contrastive loss the projection head
                // simply keeps its starting weights; the ablation removes
                // the training signal, not the space.
                Tensor view(Tensor::zeros({m, proto_dim}));
                const Tensor& zeta = tape.value(enc.zeta);
                for (std::size_t i = 0; i < m * proto_dim; ++i) {
                    view.vec()[i] = zeta.data()[i];
                }
                result.bank.update_batch(view, span_labels);

                const bool refine = !warmup_gate(epoch) && result.bank.complete();
                for (std::size_t i = batch.n_src_spans; i < m; ++i) {
                    const SpanRef& ref = batch.spans[i];
                    const std::size_t sid = batch.sentence_ids[ref.sent];
                    const double* zrow = view.data() + i * proto_dim;
                    if (refine) {
                        refine_pseudo_label(store.label_row(sid, ref.start, ref.end), C,
                                            zrow, result.bank, result.margins, cfg.beta);
                    }
                    // Margin statistics from the current model's predictions.
                    const std::size_t pred = span_labels[i];
                    if (!result.margins.is_fixed() && pred != 0 &&
                        result.bank.initialized(pred)) {
                        const double* phi = result.bank.prototype(pred);
                        double sim = 0.0;
                        for (std::size_t d = 0; d < proto_dim; ++d) sim += phi[d] * zrow[d];
                        result.margins.accumulate(pred, sim);
                    }
                }
            }
        }

        if (protos) result.margins.finalize();

        const double f1 = dev_micro_f1(cfg.enc, params, src_dev);
        result.dev_f1_history.push_back(f1);
        std::optional<double> oracle;
        if (have_oracle) {
            oracle = oracle_pseudo_f1(store, tgt_train, C);
            result.oracle_f1_history.push_back(*oracle);
        }
        std::vector<double> margin_row;
        if (protos) {
            for (std::size_t c = 1; c < C; ++c) {
                margin_row.push_back(result.margins.has_margin(c)
                                         ? result.margins.margin(c)
                                         : std::nan(""));
            }
        }
        if (metrics) metrics->epoch(epoch, f1, oracle, margin_row);
        if (f1 > result.best_dev_f1) {
            result.best_dev_f1 = f1;
            result.best_epoch = epoch;
            result.params = params;
        }
        if (on_epoch_end) on_epoch_end(epoch, store);
    }
    return result;
}

DataBundle bundle_from_synth(SynthData&& synth) {
    DataBundle d;
    d.labels = std::move(synth.labels);
    d.src_train = std::move(synth.src_train);
    d.src_dev = std::move(synth.src_dev);
    d.tgt_train = std::move(synth.tgt_train);
    d.tgt_test = std::move(synth.tgt_test);
    d.vocab_size = synth.vocab_size;
    return d;
}

void save_data_bundle(const std::string& dir, const DataBundle& data) {
    fs::create_directories(dir);
    {
        json labels;
        json arr = json::array();
        for (std::size_t c = 1; c < data.labels.size(); ++c) arr.push_back(data.labels.name(c));
        labels["entity_types"] = arr;
        std::ofstream out(dir + "/labels.json");
        if (!out) throw std::runtime_error("cannot write " + dir + "/labels.json");
        out << labels.dump(2) << "\n";
    }
    {
        json meta;
        meta["vocab_size"] = data.vocab_size;
        std::ofstream out(dir + "/meta.json");
        if (!out) throw std::runtime_error("cannot write " + dir + "/meta.json");
        out << meta.dump(2) << "\n";
    }
    write_corpus_jsonl(dir + "/src_train.jsonl", data.src_train, data.labels);
    write_corpus_jsonl(dir + "/src_dev.jsonl", data.src_dev, data.labels);
    write_corpus_jsonl(dir + "/tgt_train.jsonl", data.tgt_train, data.labels);
    write_corpus_jsonl(dir + "/tgt_test.jsonl", data.tgt_test, data.labels);
}

DataBundle load_data_bundle(const std::string& dir) {
    DataBundle d;
    {
        std::ifstream in(dir + "/labels.json");
        if (!in) throw std::runtime_error("cannot open " + dir + "/labels.json");
        json labels = json::parse(in);
        d.labels = LabelSet(labels.at("entity_types").get<std::vector<std::string>>());
    }
    {
        std::ifstream in(dir + "/meta.json");
        if (!in) throw std::runtime_error("cannot open " + dir + "/meta.json");
        json meta = json::parse(in);
        d.vocab_size = meta.at("vocab_size").get<std::size_t>();
    }
    d.src_train = read_corpus_jsonl(dir + "/src_train.jsonl", d.labels);
    d.src_dev = read_corpus_jsonl(dir + "/src_dev.jsonl", d.labels);
    d.tgt_train = read_corpus_jsonl(dir + "/tgt_train.jsonl", d.labels);
    d.tgt_test = read_corpus_jsonl(dir + "/tgt_test.jsonl", d.labels);
    return d;
}

std::string resolve_out_dir(const std::string& out_dir) {
    if (out_dir.empty() || fs::path(out_dir).is_absolute()) return out_dir;
    const char* root = std::getenv("CONTPROTO_OUT_ROOT");
    if (root == nullptr || *root == '\0') return out_dir;
    return (fs::path(root) / out_dir).string();
}

PipelineResult run_pipeline(TrainConfig cfg, const DataBundle& data,
                            const std::string& out_dir) {
    cfg.enc.vocab_size = data.vocab_size;
    cfg.enc.num_classes = data.labels.size();
    cfg.validate();

    const std::string out = resolve_out_dir(out_dir);
    MetricsWriter metrics;
    if (!out.empty()) {
        fs::create_directories(out);
        write_train_config(out + "/config.txt", cfg);
        metrics = MetricsWriter(out + "/metrics.jsonl",
                                std::string(train_mode_name(cfg.mode)) + "-seed" +
                                    std::to_string(cfg.seed));
    }

    PipelineResult result;
    result.teacher = train_teacher(cfg, data.src_train, data.src_dev,
                                   metrics.active() ? &metrics : nullptr);
    if (!out.empty()) save_checkpoint(out + "/teacher.ckpt", cfg.enc, result.teacher.params);

    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, result.teacher.params, data.tgt_train);
    if (!out.empty()) store.save_jsonl(out + "/store_initial.jsonl");

    const bool have_oracle = [&] {
        for (const Sentence& s : data.tgt_train) {
            if (!s.hidden_gold.empty()) return true;
        }
        return false;
    }();
    if (have_oracle) {
        result.initial_oracle_f1 =
            oracle_pseudo_f1(store, data.tgt_train, cfg.enc.num_classes);
    }

    EpochHook hook;
    if (!out.empty()) {
        hook = [&out](std::size_t epoch, const PseudoLabelStore& st) {
            st.save_jsonl(out + "/store_epoch" + std::to_string(epoch) + ".jsonl");
        };
    }
    result.student = train_student(cfg, data.src_train, data.tgt_train, store, data.src_dev,
                                   metrics.active() ? &metrics : nullptr, hook,
                                   cfg.warm_start_student ? &result.teacher.params : nullptr);
    if (!out.empty()) {
        save_checkpoint(out + "/student.ckpt", cfg.enc, result.student.params);
        if (mode_uses_prototypes(cfg.mode)) {
            save_bank_jsonl(out + "/bank.jsonl", result.student.bank,
                            result.student.margins);
        }
    }
    if (have_oracle) {
        result.final_oracle_f1 =
            oracle_pseudo_f1(store, data.tgt_train, cfg.enc.num_classes);
    }

    const bool test_has_gold = [&] {
        for (const Sentence& s : data.tgt_test) {
            if (!s.hidden_gold.empty() || !s.gold.empty()) return true;
        }
        return false;
    }();
    if (test_has_gold) {
        const bool hidden = !data.tgt_test.empty() && data.tgt_test[0].gold.empty();
        result.final_target_f1 =
            evaluate_predictions(cfg.enc, result.student.params, data.tgt_test, hidden)
                .micro.f1;
    }

    if (!out.empty()) {
        json report;
        report["mode"] = train_mode_name(cfg.mode);
        report["seed"] = cfg.seed;
        report["teacher_best_dev_f1"] = result.teacher.best_dev_f1;
        report["teacher_dev_f1_per_epoch"] = result.teacher.dev_f1_history;
        report["student_best_dev_f1"] = result.student.best_dev_f1;
        report["student_dev_f1_per_epoch"] = result.student.dev_f1_history;
        if (result.initial_oracle_f1 >= 0.0) {
            report["initial_oracle_f1"] = result.initial_oracle_f1;
            report["oracle_f1_per_epoch"] = result.student.oracle_f1_history;
            report["final_oracle_f1"] = result.final_oracle_f1;
        }
        if (result.final_target_f1 >= 0.0) {
            report["final_target_f1"] = result.final_target_f1;
        }
        std::ofstream rep(out + "/report.json");
        if (!rep) throw std::runtime_error("cannot write " + out + "/report.json");
        rep << report.dump(2) << "\n";
    }
    return result;
}

} // namespace contproto
