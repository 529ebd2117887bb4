#include "contproto/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace contproto {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

void EncoderConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw std::runtime_error(std::string("EncoderConfig: ") + what +
                                             " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(d_tok, "d_tok");
    positive(d_h, "d_h");
    positive(n_layers, "n_layers");
    positive(d_len, "d_len");
    positive(d_proj, "d_proj");
    positive(max_span_len, "max_span_len");
    positive(max_positions, "max_positions");
    if (num_classes < 2) {
        throw std::runtime_error("EncoderConfig: need at least one entity class plus O");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::runtime_error("EncoderConfig: dropout must be in [0, 1)");
    }
}

std::vector<Tensor*> EncoderParams::all() {
    std::vector<Tensor*> out{&tok_emb, &pos_emb};
    for (std::size_t l = 0; l < ff_w.size(); ++l) {
        out.push_back(&ff_w[l]);
        out.push_back(&ff_b[l]);
    }
    out.insert(out.end(), {&len_emb, &cls_w, &cls_b, &proj_w1, &proj_b1, &proj_w2, &proj_b2});
    return out;
}

std::vector<const Tensor*> EncoderParams::all() const {
    auto mut = const_cast<EncoderParams*>(this)->all();
    return {mut.begin(), mut.end()};
}

std::vector<std::string> EncoderParams::names() const {
    std::vector<std::string> out{"tok_emb", "pos_emb"};
    for (std::size_t l = 0; l < ff_w.size(); ++l) {
        out.push_back("ff_w" + std::to_string(l));
        out.push_back("ff_b" + std::to_string(l));
    }
    out.insert(out.end(),
               {"len_emb", "cls_w", "cls_b", "proj_w1", "proj_b1", "proj_w2", "proj_b2"});
    return out;
}

namespace {

Tensor uniform_init(Rng& rng, std::vector<std::size_t> shape, double bound) {
    Tensor t(std::move(shape));
    for (double& x : t.vec()) x = rng.uniform(-bound, bound);
    return t;
}

Tensor xavier_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_init(rng, {fan_in, fan_out}, bound);
}

} // namespace

EncoderParams init_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    p.tok_emb = uniform_init(rng, {cfg.vocab_size, cfg.d_tok}, 0.1);
    p.pos_emb = uniform_init(rng, {cfg.max_positions, cfg.d_tok}, 0.1);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::size_t in = l == 0 ? cfg.d_tok : cfg.d_h;
        p.ff_w.push_back(xavier_init(rng, in, cfg.d_h));
        p.ff_b.push_back(Tensor::zeros({1, cfg.d_h}));
    }
    p.len_emb = uniform_init(rng, {cfg.max_span_len, cfg.d_len}, 0.1);
    // Classifier weight follows the (classes x features) convention.
    {
        const double bound = std::sqrt(6.0 / static_cast<double>(cfg.z_dim() + cfg.num_classes));
        p.cls_w = uniform_init(rng, {cfg.num_classes, cfg.z_dim()}, bound);
    }
    p.cls_b = Tensor::zeros({1, cfg.num_classes});
    p.proj_w1 = xavier_init(rng, cfg.z_dim(), cfg.d_proj);
    p.proj_b1 = Tensor::zeros({1, cfg.d_proj});
    p.proj_w2 = xavier_init(rng, cfg.d_proj, cfg.d_proj);
    p.proj_b2 = Tensor::zeros({1, cfg.d_proj});
    return p;
}

ParamNodes put_params_on_tape(Tape& tape, const EncoderParams& params) {
    ParamNodes nodes;
    for (const Tensor* t : params.all()) nodes.ids.push_back(tape.param(*t));
    return nodes;
}

namespace {

// Index positions inside ParamNodes::ids, mirroring EncoderParams::all().
struct NodeView {
    const ParamNodes& n;
    std::size_t n_layers;
    NodeId tok_emb() const { return n.ids[0]; }
    NodeId pos_emb() const { return n.ids[1]; }
    NodeId ff_w(std::size_t l) const { return n.ids[2 + 2 * l]; }
    NodeId ff_b(std::size_t l) const { return n.ids[3 + 2 * l]; }
    NodeId len_emb() const { return n.ids[2 + 2 * n_layers]; }
    NodeId cls_w() const { return n.ids[3 + 2 * n_layers]; }
    NodeId cls_b() const { return n.ids[4 + 2 * n_layers]; }
    NodeId proj_w1() const { return n.ids[5 + 2 * n_layers]; }
    NodeId proj_b1() const { return n.ids[6 + 2 * n_layers]; }
    NodeId proj_w2() const { return n.ids[7 + 2 * n_layers]; }
    NodeId proj_b2() const { return n.ids[8 + 2 * n_layers]; }
};

// b is 1 x d; broadcast it over rows with a ones column: rows x d.
NodeId add_bias(Tape& tape, NodeId x, NodeId b) {
    const std::size_t rows = tape.value(x).rows();
    NodeId ones = tape.constant(Tensor::full({rows, 1}, 1.0));
    return tape.add(x, tape.matmul(ones, b));
}

NodeId dropout_node(Tape& tape, NodeId x, double p, Rng& rng) {
    const Tensor& v = tape.value(x);
    Tensor mask(v.shape());
    const double keep = 1.0 - p;
    for (double& m : mask.vec()) m = rng.next_double() < keep ? 1.0 / keep : 0.0;
    return tape.dropout_apply(x, tape.constant(mask));
}

} // namespace

EncodeResult encode_pass(Tape& tape, const EncoderConfig& cfg, const ParamNodes& nodes,
                         const std::vector<const Sentence*>& batch,
                         const std::vector<SpanRef>& spans, bool dropout_on, Rng& rng) {
    if (batch.empty()) throw std::runtime_error("encode_pass: empty batch");
    NodeView v{nodes, cfg.n_layers};

    // Stack all tokens of the batch into one matrix; sentence i's token t
    // lands at row offset[i] + t.
    std::vector<std::size_t> offset(batch.size(), 0);
    std::vector<std::size_t> tok_rows, pos_rows;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        offset[i] = tok_rows.size();
        const Sentence& s = *batch[i];
        if (s.tokens.empty()) throw std::runtime_error("encode_pass: empty sentence");
        if (s.tokens.size() > cfg.max_positions) {
            throw std::runtime_error("encode_pass: sentence length " +
                                     std::to_string(s.tokens.size()) +
                                     " exceeds max_positions " +
                                     std::to_string(cfg.max_positions));
        }
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
            if (s.tokens[t] >= cfg.vocab_size) {
                throw std::runtime_error("encode_pass: token id " +
                                         std::to_string(s.tokens[t]) +
                                         " outside vocab of size " +
                                         std::to_string(cfg.vocab_size));
            }
            tok_rows.push_back(s.tokens[t]);
            pos_rows.push_back(t);
        }
    }

    NodeId h = tape.add(tape.row_select(v.tok_emb(), tok_rows),
                        tape.row_select(v.pos_emb(), pos_rows));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        h = tape.tanh(add_bias(tape, tape.matmul(h, v.ff_w(l)), v.ff_b(l)));
        if (dropout_on && cfg.dropout > 0.0) h = dropout_node(tape, h, cfg.dropout, rng);
    }

    // Span features: [h_start ; h_end ; len_emb[k - j]].
    std::vector<std::size_t> starts, ends, lens;
    for (const SpanRef& sp : spans) {
        if (sp.sent >= batch.size()) throw std::runtime_error("encode_pass: bad span sentence");
        const std::size_t n = batch[sp.sent]->tokens.size();
        if (sp.start > sp.end || sp.end >= n) {
            throw std::runtime_error("encode_pass: span out of bounds");
        }
        const std::size_t len_bucket = sp.end - sp.start;
        if (len_bucket >= cfg.max_span_len) {
            throw std::runtime_error("encode_pass: span length " +
                                     std::to_string(len_bucket + 1) +
                                     " exceeds max_span_len " +
                                     std::to_string(cfg.max_span_len));
        }
        starts.push_back(offset[sp.sent] + sp.start);
        ends.push_back(offset[sp.sent] + sp.end);
        lens.push_back(len_bucket);
    }
    if (spans.empty()) throw std::runtime_error("encode_pass: no spans requested");

    EncodeResult out;
    out.z = tape.concat_cols({tape.row_select(h, starts), tape.row_select(h, ends),
                              tape.row_select(v.len_emb(), lens)});
    out.logits = add_bias(tape, tape.matmul(out.z, v.cls_w(), true), v.cls_b());
    out.p = tape.softmax_rows(out.logits);
    NodeId a1 = tape.relu(add_bias(tape, tape.matmul(out.z, v.proj_w1()), v.proj_b1()));
    NodeId a2 = add_bias(tape, tape.matmul(a1, v.proj_w2()), v.proj_b2());
    out.zeta = tape.l2_normalize_rows(a2);
    return out;
}

std::vector<Tensor> collect_grads(const Tape& tape, const ParamNodes& nodes) {
    std::vector<Tensor> out;
    out.reserve(nodes.ids.size());
    for (NodeId id : nodes.ids) out.push_back(tape.grad(id));
    return out;
}

SentenceScores score_sentence(const EncoderConfig& cfg, const EncoderParams& params,
                              const Sentence& sentence) {
    SentenceScores out;
    out.spans = enumerate_spans(sentence.tokens.size(), cfg.max_span_len);
    std::vector<SpanRef> refs;
    for (const auto& [j, k] : out.spans) refs.push_back({0, j, k});

    Tape tape;
    ParamNodes nodes = put_params_on_tape(tape, params);
    Rng unused(0);
    EncodeResult enc = encode_pass(tape, cfg, nodes, {&sentence}, refs, false, unused);
    out.p = tape.value(enc.p);
    return out;
}

std::vector<Span> resolve_spans(const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                                const Tensor& p) {
    if (spans.size() != p.rows()) {
        throw std::runtime_error("resolve_spans: " + std::to_string(spans.size()) +
                                 " spans vs " + p.shape_str() + " probabilities");
    }
    struct Cand {
        std::size_t start, end, label;
        double prob;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        // First maximum wins, so exact ties fall back to "O" (class 0).
        std::size_t best = 0;
        for (std::size_t c = 1; c < p.cols(); ++c) {
            if (p.at(i, c) > p.at(i, best)) best = c;
        }
        if (best == 0) continue;
        cands.push_back({spans[i].first, spans[i].second, best, p.at(i, best)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.prob != b.prob) return a.prob > b.prob;
        if (a.start != b.start) return a.start < b.start;
        return (a.end - a.start) < (b.end - b.start);
    });
    std::vector<Span> kept;
    for (const Cand& c : cands) {
        bool clash = false;
        for (const Span& k : kept) {
            if (k.overlaps({c.start, c.end, c.label})) {
                clash = true;
                break;
            }
        }
        if (!clash) kept.push_back({c.start, c.end, c.label});
    }
    std::sort(kept.begin(), kept.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    return kept;
}

std::vector<Span> predict(const EncoderConfig& cfg, const EncoderParams& params,
                          const Sentence& sentence) {
    SentenceScores sc = score_sentence(cfg, params, sentence);
    return resolve_spans(sc.spans, sc.p);
}

namespace {

json config_to_json(const EncoderConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"num_classes", c.num_classes},
                {"d_tok", c.d_tok},           {"d_h", c.d_h},
                {"n_layers", c.n_layers},     {"d_len", c.d_len},
                {"d_proj", c.d_proj},         {"max_span_len", c.max_span_len},
                {"max_positions", c.max_positions}, {"dropout", c.dropout}};
}

EncoderConfig config_from_json(const json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.d_tok = j.at("d_tok").get<std::size_t>();
    c.d_h = j.at("d_h").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_len = j.at("d_len").get<std::size_t>();
    c.d_proj = j.at("d_proj").get<std::size_t>();
    c.max_span_len = j.at("max_span_len").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    return c;
}

constexpr char kMagic[8] = {'C', 'P', 'T', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

} // namespace

void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     const EncoderParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);

    json header;
    header["config"] = config_to_json(cfg);
    json manifest = json::array();
    const auto tensors = params.all();
    const auto names = params.names();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        manifest.push_back({{"name", names[i]}, {"shape", tensors[i]->shape()}});
    }
    header["tensors"] = manifest;
    const std::string head = header.dump();

    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    const std::uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof head_len);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const Tensor* t : tensors) {
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

void load_checkpoint(const std::string& path, EncoderConfig& cfg, EncoderParams& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);

    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kMagic)) {
        throw std::runtime_error(path + ": not a checkpoint file");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kVersion) {
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    std::uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof head_len);
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw std::runtime_error(path + ": truncated header");

    json header = json::parse(head);
    cfg = config_from_json(header.at("config"));

    // Rebuild tensors with checkpointed shapes, then bulk-read the payload.
    EncoderParams fresh;
    Rng unused(0);
    fresh = init_params(cfg, unused);
    params = std::move(fresh);

    const auto tensors = params.all();
    const auto names = params.names();
    const json& manifest = header.at("tensors");
    if (manifest.size() != tensors.size()) {
        throw std::runtime_error(path + ": tensor manifest size mismatch");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (manifest[i].at("name").get<std::string>() != names[i]) {
            throw std::runtime_error(path + ": unexpected tensor \"" +
                                     manifest[i].at("name").get<std::string>() + "\"");
        }
        const auto shape = manifest[i].at("shape").get<std::vector<std::size_t>>();
        if (shape != tensors[i]->shape()) {
            throw std::runtime_error(path + ": shape mismatch for " + names[i]);
        }
        in.read(reinterpret_cast<char*>(tensors[i]->data()),
                static_cast<std::streamsize>(tensors[i]->size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error(path + ": truncated tensor payload");
}

} // namespace contproto
