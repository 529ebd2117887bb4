#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "contproto/rng.hpp"

namespace contproto {

// Entity class catalog. Index 0 is always the non-entity class "O"; gold
// spans carry indices >= 1.
class LabelSet {
public:
    LabelSet() : names_{"O"} {}
    // entity_names must not contain "O" or duplicates.
    explicit LabelSet(std::vector<std::string> entity_names);

    std::size_t size() const { return names_.size(); }
    std::size_t num_entity_classes() const { return names_.size() - 1; }
    const std::string& name(std::size_t idx) const;
    const std::vector<std::string>& names() const { return names_; }
    // Throws for unknown names.
    std::size_t index_of(const std::string& name) const;
    bool contains(const std::string& name) const;
    // Registers an entity class if new; returns its index either way.
    std::size_t add_entity(const std::string& name);

private:
    std::vector<std::string> names_;
};

// Token span with inclusive endpoints: covers tokens [start, end].
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t label = 0; // index into LabelSet; gold spans never use 0 ("O")

    bool operator==(const Span& o) const {
        return start == o.start && end == o.end && label == o.label;
    }
    std::size_t length() const { return end - start + 1; }
    bool overlaps(const Span& o) const { return start <= o.end && o.start <= end; }
};

enum class Language { Source, Target };

const char* language_name(Language l);
Language parse_language(const std::string& s);

struct Sentence {
    std::vector<std::size_t> tokens;
    Language language = Language::Source;
    std::vector<Span> gold;        // visible labels; empty for unlabeled data
    std::vector<Span> hidden_gold; // oracle-only side channel, never trained on
};

using Corpus = std::vector<Sentence>;

// Token string <-> id map for text-format inputs. Ids are assigned in first
// appearance order, so reading the same file twice gives the same table.
class Vocab {
public:
    std::size_t add_or_get(const std::string& word);
    std::optional<std::size_t> lookup(const std::string& word) const;
    const std::string& word(std::size_t id) const;
    std::size_t size() const { return words_.size(); }

private:
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> words_;
};

// All spans (j, k) with j <= k and length <= max_len, in lexicographic
// order. max_len = 0 means no cap.
std::vector<std::pair<std::size_t, std::size_t>> enumerate_spans(std::size_t n,
                                                                 std::size_t max_len);

std::size_t count_spans(std::size_t n, std::size_t max_len);

struct ConllData {
    Corpus sentences;
    LabelSet labels; // entity classes in first-appearance order
    Vocab vocab;
};

// Whitespace-separated columns, first column token, last column BIO tag,
// blank line between sentences. A dangling I-X (no matching B-X/I-X run
// before it) starts a new span; that repair is the standard IOB2 reading.
ConllData read_conll(const std::string& path);

// Inverse of the reader's span extraction, for round-trip checks.
std::vector<std::string> spans_to_bio(const Sentence& s, const LabelSet& labels);

// Synthetic bilingual corpus generator.
//
// Every entity mention takes one of three surface shapes:
//   single    [s_c]        one shared token used only by class c
//   headed    [h_c, t_c]   shared class-specific head + language-private tail
//   ambiguous [a, t_c]     shared head drawn by every class + private tail
// Shared tokens keep their ids across languages; private tokens (tails and
// all context filler) live in per-language id ranges offset by a fixed
// shift. A teacher trained on the source language therefore transfers
// cleanly on single/headed mentions but sees no usable evidence on
// ambiguous ones, whose tails it has never observed — those become the
// recoverable pseudo-label errors. noise_rate additionally swaps a target
// mention's surface form to a different class while the hidden gold keeps
// the original class, creating an irreducible error floor.
struct SynthConfig {
    std::size_t classes = 3;
    std::size_t singles_per_class = 6;
    std::size_t heads_per_class = 5;
    std::size_t ambig_heads = 6;
    std::size_t tails_per_class = 8;
    std::size_t context_tokens = 40;
    std::size_t min_sentence_len = 5;
    std::size_t max_sentence_len = 7;
    std::size_t min_entities = 1;
    std::size_t max_entities = 2;
    double frac_single = 0.40;  // remaining mass after frac_headed is ambiguous
    double frac_headed = 0.35;
    std::size_t src_train_sentences = 500;
    std::size_t src_dev_sentences = 100;
    std::size_t tgt_train_sentences = 500;
    std::size_t tgt_test_sentences = 200;
    double noise_rate = 0.0;
    std::uint64_t seed = 7;

    void validate() const; // throws on inconsistent settings
};

struct SynthData {
    LabelSet labels;
    Corpus src_train; // gold visible
    Corpus src_dev;   // gold visible
    Corpus tgt_train; // gold hidden
    Corpus tgt_test;  // gold hidden
    std::size_t vocab_size = 0;
};

SynthData generate_synthetic_pair(const SynthConfig& cfg);

// Spans used for the classification losses on one sentence: every gold span
// plus either all remaining spans (neg_per_pos < 0, the default) or
// neg_per_pos sampled negatives per positive. Returned labels use 0 for the
// non-entity class.
std::vector<Span> sample_training_spans(const Sentence& s, std::size_t max_len,
                                        long neg_per_pos, Rng& rng);

// Line-delimited JSON corpus files, one sentence per line with fields
// {tokens, language, gold_spans?, hidden_gold_spans?}; span labels are
// written as class names.
void write_corpus_jsonl(const std::string& path, const Corpus& corpus,
                        const LabelSet& labels);
Corpus read_corpus_jsonl(const std::string& path, const LabelSet& labels);

} // namespace contproto
