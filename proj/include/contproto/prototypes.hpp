#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "contproto/tensor.hpp"

namespace contproto {

// One unit-norm moving-average centroid per class (including "O" at index
// 0). A class's vector is meaningless until its first span arrives; the
// first span is adopted directly instead of being averaged into noise.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(std::size_t num_classes, std::size_t dim, double alpha);

    std::size_t num_classes() const { return inited_.size(); }
    std::size_t dim() const { return dim_; }
    double alpha() const { return alpha_; }
    bool initialized(std::size_t cls) const;
    bool complete() const; // every class initialized

    // phi_c <- normalize(alpha * phi_c + (1 - alpha) * zeta); adopts the
    // vector outright on first encounter. zeta must have dim() entries.
    void update(const double* zeta, std::size_t cls);
    // Entries processed in row order; labels[i] pairs with row i.
    void update_batch(const Tensor& zeta_rows, const std::vector<std::size_t>& labels);

    const double* prototype(std::size_t cls) const; // errors if uninitialized
    // Highest-similarity class over all classes; exact ties pick the lower
    // index. Errors (naming the class) if any prototype is uninitialized.
    std::pair<std::size_t, double> nearest(const double* zeta) const;
    // Highest-similarity entity class (index >= 1) and its similarity.
    std::pair<std::size_t, double> nearest_entity(const double* zeta) const;

private:
    Tensor phi_;    // num_classes x dim
    std::vector<bool> inited_;
    std::size_t dim_ = 0;
    double alpha_ = 0.99;
};

// Per-class refinement thresholds. In automatic mode each epoch's mean
// prototype-similarity of spans predicted as class c becomes next epoch's
// r_c; classes unseen in an epoch keep their previous margin, and a class
// that has never produced one blocks refinement toward itself.
class MarginTable {
public:
    MarginTable() = default;
    explicit MarginTable(std::size_t num_classes);
    static MarginTable fixed(std::size_t num_classes, double r);

    void accumulate(std::size_t cls, double similarity);
    // Installs the accumulated means and clears the accumulators. A no-op
    // for fixed tables.
    void finalize();

    bool has_margin(std::size_t cls) const;
    double margin(std::size_t cls) const; // errors if unset
    bool is_fixed() const { return fixed_; }

private:
    std::vector<double> margin_;
    std::vector<bool> set_;
    std::vector<double> sum_;
    std::vector<std::size_t> count_;
    bool fixed_ = false;
};

// Soft pseudo labels for every enumerated target span, keyed by sentence
// index and span endpoints. Created once from the teacher, then mutated
// only by refinement.
class PseudoLabelStore {
public:
    PseudoLabelStore() = default;
    explicit PseudoLabelStore(std::size_t num_classes);

    std::size_t num_classes() const { return num_classes_; }
    std::size_t size() const { return total_spans_; }

    // Registers a sentence's spans with their initial soft labels (row i of
    // p for spans[i]). Each row must be a distribution.
    void add_sentence(std::size_t sentence,
                      const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                      const Tensor& p);

    // Pointer to the span's num_classes() label entries, mutable for
    // refinement in place.
    double* label_row(std::size_t sentence, std::size_t start, std::size_t end);
    const double* label_row(std::size_t sentence, std::size_t start, std::size_t end) const;
    std::size_t argmax(std::size_t sentence, std::size_t start, std::size_t end) const;

    std::size_t num_sentences() const { return spans_.size(); }
    const std::vector<std::pair<std::size_t, std::size_t>>& sentence_spans(
        std::size_t sentence) const;

    void save_jsonl(const std::string& path) const;
    static PseudoLabelStore load_jsonl(const std::string& path, std::size_t num_classes);

private:
    std::size_t index_of(std::size_t sentence, std::size_t start, std::size_t end) const;

    std::size_t num_classes_ = 0;
    std::size_t total_spans_ = 0;
    // Per sentence: span list plus flat label storage, spans.size() x C.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> spans_;
    std::vector<std::vector<double>> labels_;
};

// One margin-gated refinement step: moves the num_classes-wide label y
// toward the nearest prototype's one-hot at rate (1 - beta) when allowed.
// Refinement toward "O" is always allowed; refinement toward an entity
// class requires its similarity to beat that class's margin. Returns the
// effective beta used (1.0 means unchanged).
double refine_pseudo_label(double* y, std::size_t num_classes, const double* zeta,
                           const PrototypeBank& bank, const MarginTable& margins,
                           double beta);

// Refinement and margin gating sit out the first epoch while the model and
// prototypes stabilize.
inline bool warmup_gate(std::size_t epoch) { return epoch == 0; }

// Bank + margin snapshot (one JSON record per class).
void save_bank_jsonl(const std::string& path, const PrototypeBank& bank,
                     const MarginTable& margins);

} // namespace contproto
