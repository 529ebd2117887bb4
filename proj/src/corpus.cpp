#include "contproto/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace contproto {

using nlohmann::json;

LabelSet::LabelSet(std::vector<std::string> entity_names) : names_{"O"} {
    for (auto& n : entity_names) {
        if (n == "O") throw std::runtime_error("LabelSet: \"O\" is reserved");
        add_entity(n);
    }
}

const std::string& LabelSet::name(std::size_t idx) const {
    if (idx >= names_.size()) {
        throw std::runtime_error("LabelSet: index " + std::to_string(idx) +
                                 " out of range (" + std::to_string(names_.size()) +
                                 " classes)");
    }
    return names_[idx];
}

std::size_t LabelSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    throw std::runtime_error("LabelSet: unknown class \"" + name + "\"");
}

bool LabelSet::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t LabelSet::add_entity(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    names_.push_back(name);
    return names_.size() - 1;
}

const char* language_name(Language l) {
    return l == Language::Source ? "source" : "target";
}

Language parse_language(const std::string& s) {
    if (s == "source") return Language::Source;
    if (s == "target") return Language::Target;
    throw std::runtime_error("unknown language \"" + s + "\" (want source|target)");
}

std::size_t Vocab::add_or_get(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    words_.push_back(word);
    index_[word] = words_.size() - 1;
    return words_.size() - 1;
}

std::optional<std::size_t> Vocab::lookup(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocab::word(std::size_t id) const {
    if (id >= words_.size()) {
        throw std::runtime_error("Vocab: id " + std::to_string(id) + " out of range");
    }
    return words_[id];
}

std::vector<std::pair<std::size_t, std::size_t>> enumerate_spans(std::size_t n,
                                                                 std::size_t max_len) {
    if (n == 0) throw std::runtime_error("enumerate_spans: empty sentence");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t cap = max_len == 0 ? n : max_len;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t klim = std::min(n - 1, j + cap - 1);
        for (std::size_t k = j; k <= klim; ++k) out.emplace_back(j, k);
    }
    return out;
}

std::size_t count_spans(std::size_t n, std::size_t max_len) {
    const std::size_t cap = max_len == 0 ? n : std::min(max_len, n);
    std::size_t total = 0;
    for (std::size_t l = 1; l <= cap; ++l) total += n - l + 1;
    return total;
}

namespace {

struct BioTag {
    char kind; // 'O', 'B', 'I'
    std::string cls;
};

BioTag parse_bio(const std::string& tag, std::size_t line_no) {
    if (tag == "O") return {'O', ""};
    if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
        return {tag[0], tag.substr(2)};
    }
    throw std::runtime_error("line " + std::to_string(line_no) + ": bad BIO tag \"" +
                             tag + "\" (want O, B-X or I-X)");
}

} // namespace

ConllData read_conll(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    ConllData data;
    std::vector<std::string> toks;
    std::vector<BioTag> tags;

    auto flush_sentence = [&]() {
        if (toks.empty()) return;
        Sentence s;
        for (const auto& t : toks) s.tokens.push_back(data.vocab.add_or_get(t));
        // BIO -> spans; a dangling I-X opens a new span (IOB2 repair).
        std::size_t open_start = 0;
        std::string open_cls;
        bool open = false;
        auto close = [&](std::size_t end) {
            if (!open) return;
            s.gold.push_back({open_start, end, data.labels.add_entity(open_cls)});
            open = false;
        };
        for (std::size_t i = 0; i < tags.size(); ++i) {
            const BioTag& t = tags[i];
            if (t.kind == 'O') {
                close(i == 0 ? 0 : i - 1);
            } else if (t.kind == 'B' || (t.kind == 'I' && (!open || open_cls != t.cls))) {
                close(i == 0 ? 0 : i - 1);
                open = true;
                open_start = i;
                open_cls = t.cls;
            }
            // I-X continuing the open span of the same class: nothing to do.
        }
        close(tags.empty() ? 0 : tags.size() - 1);
        data.sentences.push_back(std::move(s));
        toks.clear();
        tags.clear();
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::vector<std::string> cols;
        std::string col;
        while (ls >> col) cols.push_back(col);
        if (cols.empty()) {
            flush_sentence();
            continue;
        }
        if (cols.size() < 2) {
            throw std::runtime_error("line " + std::to_string(line_no) +
                                     ": expected token and BIO tag columns");
        }
        toks.push_back(cols.front());
        tags.push_back(parse_bio(cols.back(), line_no));
    }
    flush_sentence();
    return data;
}

std::vector<std::string> spans_to_bio(const Sentence& s, const LabelSet& labels) {
    std::vector<std::string> tags(s.tokens.size(), "O");
    for (const Span& sp : s.gold) {
        if (sp.end >= s.tokens.size()) {
            throw std::runtime_error("spans_to_bio: span past sentence end");
        }
        tags[sp.start] = "B-" + labels.name(sp.label);
        for (std::size_t i = sp.start + 1; i <= sp.end; ++i) {
            tags[i] = "I-" + labels.name(sp.label);
        }
    }
    return tags;
}

void SynthConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw std::runtime_error(std::string("SynthConfig: ") + what +
                                             " must be positive");
    };
    positive(classes, "classes");
    positive(singles_per_class, "singles_per_class");
    positive(heads_per_class, "heads_per_class");
    positive(ambig_heads, "ambig_heads");
    positive(tails_per_class, "tails_per_class");
    positive(context_tokens, "context_tokens");
    positive(min_sentence_len, "min_sentence_len");
    if (max_sentence_len < min_sentence_len) {
        throw std::runtime_error("SynthConfig: sentence length range is empty");
    }
    if (max_entities < min_entities || min_entities == 0) {
        throw std::runtime_error("SynthConfig: entity count range is invalid");
    }
    // Worst case every entity is two tokens wide; they must fit.
    if (max_entities * 2 > min_sentence_len) {
        throw std::runtime_error(
            "SynthConfig: lexicon/shape too small: max_entities * 2 exceeds "
            "min_sentence_len, entities cannot always be placed");
    }
    if (frac_single < 0 || frac_headed < 0 || frac_single + frac_headed > 1.0) {
        throw std::runtime_error("SynthConfig: surface-shape fractions out of range");
    }
    if (noise_rate < 0.0 || noise_rate > 1.0) {
        throw std::runtime_error("SynthConfig: noise_rate must be in [0, 1]");
    }
    if (classes < 2 && noise_rate > 0.0) {
        throw std::runtime_error("SynthConfig: class swap noise needs >= 2 classes");
    }
}

namespace {

// Deterministic vocabulary layout for the generator. Shared tokens come
// first, then one private block per language; the target block sits at a
// fixed shift above the source block.
struct SynthVocab {
    const SynthConfig& cfg;
    std::size_t shared_size;
    std::size_t private_size;

    explicit SynthVocab(const SynthConfig& c) : cfg(c) {
        shared_size =
            c.classes * (c.singles_per_class + c.heads_per_class) + c.ambig_heads;
        private_size = c.classes * c.tails_per_class + c.context_tokens;
    }
    std::size_t total() const { return shared_size + 2 * private_size; }

    std::size_t single_id(std::size_t c, std::size_t i) const {
        return c * cfg.singles_per_class + i;
    }
    std::size_t head_id(std::size_t c, std::size_t i) const {
        return cfg.classes * cfg.singles_per_class + c * cfg.heads_per_class + i;
    }
    std::size_t ambig_id(std::size_t i) const {
        return cfg.classes * (cfg.singles_per_class + cfg.heads_per_class) + i;
    }
    std::size_t private_base(Language lang) const {
        return shared_size + (lang == Language::Source ? 0 : private_size);
    }
    std::size_t tail_id(Language lang, std::size_t c, std::size_t i) const {
        return private_base(lang) + c * cfg.tails_per_class + i;
    }
    std::size_t context_id(Language lang, std::size_t i) const {
        return private_base(lang) + cfg.classes * cfg.tails_per_class + i;
    }
};

enum class Shape { Single, Headed, Ambiguous };

Sentence make_sentence(const SynthConfig& cfg, const SynthVocab& voc, Language lang,
                       bool visible_gold, Rng& rng) {
    const std::size_t n =
        cfg.min_sentence_len + rng.next_below(cfg.max_sentence_len - cfg.min_sentence_len + 1);
    const std::size_t want =
        cfg.min_entities + rng.next_below(cfg.max_entities - cfg.min_entities + 1);

    Sentence s;
    s.language = lang;
    s.tokens.assign(n, 0);
    std::vector<bool> used(n, false);

    std::vector<Span> gold;
    for (std::size_t e = 0; e < want; ++e) {
        const std::size_t cls = rng.next_below(cfg.classes);
        const double u = rng.next_double();
        const Shape shape = u < cfg.frac_single             ? Shape::Single
                            : u < cfg.frac_single + cfg.frac_headed ? Shape::Headed
                                                                    : Shape::Ambiguous;
        const std::size_t width = shape == Shape::Single ? 1 : 2;

        // Surface class may differ from the true class under label noise.
        std::size_t surf = cls;
        if (lang == Language::Target && cfg.noise_rate > 0.0 &&
            rng.next_double() < cfg.noise_rate) {
            surf = (cls + 1 + rng.next_below(cfg.classes - 1)) % cfg.classes;
        }

        // Place at a random free slot; a few rejections are expected when a
        // previous entity landed nearby.
        std::size_t start = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            start = rng.next_below(n - width + 1);
            placed = true;
            for (std::size_t i = start; i < start + width; ++i) placed = placed && !used[i];
        }
        if (!placed) continue;
        for (std::size_t i = start; i < start + width; ++i) used[i] = true;

        switch (shape) {
        case Shape::Single:
            s.tokens[start] = voc.single_id(surf, rng.next_below(cfg.singles_per_class));
            break;
        case Shape::Headed:
            s.tokens[start] = voc.head_id(surf, rng.next_below(cfg.heads_per_class));
            s.tokens[start + 1] =
                voc.tail_id(lang, surf, rng.next_below(cfg.tails_per_class));
            break;
        case Shape::Ambiguous:
            s.tokens[start] = voc.ambig_id(rng.next_below(cfg.ambig_heads));
            s.tokens[start + 1] =
                voc.tail_id(lang, surf, rng.next_below(cfg.tails_per_class));
            break;
        }
        gold.push_back({start, start + width - 1, cls + 1});
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (!used[i]) s.tokens[i] = voc.context_id(lang, rng.next_below(cfg.context_tokens));
    }

    std::sort(gold.begin(), gold.end(),
              [](const Span& a, const Span& b) { return a.start < b.start; });
    if (visible_gold) {
        s.gold = std::move(gold);
    } else {
        s.hidden_gold = std::move(gold);
    }
    return s;
}

Corpus make_split(const SynthConfig& cfg, const SynthVocab& voc, Language lang,
                  bool visible_gold, std::size_t count, Rng rng) {
    Corpus out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(make_sentence(cfg, voc, lang, visible_gold, rng));
    }
    return out;
}

} // namespace

SynthData generate_synthetic_pair(const SynthConfig& cfg) {
    cfg.validate();
    SynthVocab voc(cfg);
    Rng root(cfg.seed);

    SynthData data;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < cfg.classes; ++c) names.push_back("C" + std::to_string(c + 1));
    data.labels = LabelSet(names);
    data.vocab_size = voc.total();
    data.src_train = make_split(cfg, voc, Language::Source, true,
                                cfg.src_train_sentences, root.fork(1));
    data.src_dev = make_split(cfg, voc, Language::Source, true,
                              cfg.src_dev_sentences, root.fork(2));
    data.tgt_train = make_split(cfg, voc, Language::Target, false,
                                cfg.tgt_train_sentences, root.fork(3));
    data.tgt_test = make_split(cfg, voc, Language::Target, false,
                               cfg.tgt_test_sentences, root.fork(4));
    return data;
}

std::vector<Span> sample_training_spans(const Sentence& s, std::size_t max_len,
                                        long neg_per_pos, Rng& rng) {
    const auto all = enumerate_spans(s.tokens.size(), max_len);
    auto gold_label = [&](std::size_t j, std::size_t k) -> std::size_t {
        for (const Span& g : s.gold) {
            if (g.start == j && g.end == k) return g.label;
        }
        return 0;
    };

    std::vector<Span> positives, negatives;
    for (const auto& [j, k] : all) {
        const std::size_t lab = gold_label(j, k);
        (lab != 0 ? positives : negatives).push_back({j, k, lab});
    }
    if (neg_per_pos < 0) {
        // Default: train on every enumerated span.
        std::vector<Span> out;
        out.reserve(all.size());
        for (const auto& [j, k] : all) out.push_back({j, k, gold_label(j, k)});
        return out;
    }

    const std::size_t want = static_cast<std::size_t>(neg_per_pos) *
                             std::max<std::size_t>(1, positives.size());
    std::vector<Span> out = positives;
    // Partial Fisher-Yates draw without replacement.
    for (std::size_t i = 0; i < std::min(want, negatives.size()); ++i) {
        const std::size_t pick = i + rng.next_below(negatives.size() - i);
        std::swap(negatives[i], negatives[pick]);
        out.push_back(negatives[i]);
    }
    return out;
}

namespace {

json spans_to_json(const std::vector<Span>& spans, const LabelSet& labels) {
    json arr = json::array();
    for (const Span& sp : spans) {
        arr.push_back({sp.start, sp.end, labels.name(sp.label)});
    }
    return arr;
}

std::vector<Span> spans_from_json(const json& arr, const LabelSet& labels) {
    std::vector<Span> out;
    for (const auto& e : arr) {
        out.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                       labels.index_of(e.at(2).get<std::string>())});
    }
    return out;
}

} // namespace

void write_corpus_jsonl(const std::string& path, const Corpus& corpus,
                        const LabelSet& labels) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const Sentence& s : corpus) {
        json rec;
        rec["tokens"] = s.tokens;
        rec["language"] = language_name(s.language);
        if (!s.gold.empty()) rec["gold_spans"] = spans_to_json(s.gold, labels);
        if (!s.hidden_gold.empty()) {
            rec["hidden_gold_spans"] = spans_to_json(s.hidden_gold, labels);
        }
        out << rec.dump() << "\n";
    }
}

Corpus read_corpus_jsonl(const std::string& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Corpus out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
        Sentence s;
        s.tokens = rec.at("tokens").get<std::vector<std::size_t>>();
        s.language = parse_language(rec.at("language").get<std::string>());
        if (rec.contains("gold_spans")) {
            s.gold = spans_from_json(rec["gold_spans"], labels);
        }
        if (rec.contains("hidden_gold_spans")) {
            s.hidden_gold = spans_from_json(rec["hidden_gold_spans"], labels);
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace contproto
