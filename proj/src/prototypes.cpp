#include "contproto/prototypes.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace contproto {

using nlohmann::json;

PrototypeBank::PrototypeBank(std::size_t num_classes, std::size_t dim, double alpha)
    : phi_(Tensor::zeros({num_classes, dim})), inited_(num_classes, false), dim_(dim),
      alpha_(alpha) {
    if (num_classes < 2 || dim == 0) {
        throw std::runtime_error("PrototypeBank: need >= 2 classes and positive dim");
    }
    if (alpha <= 0.0 || alpha >= 1.0) {
        throw std::runtime_error("PrototypeBank: alpha must be in (0, 1)");
    }
}

bool PrototypeBank::initialized(std::size_t cls) const {
    if (cls >= inited_.size()) throw std::runtime_error("PrototypeBank: class out of range");
    return inited_[cls];
}

bool PrototypeBank::complete() const {
    for (bool b : inited_) {
        if (!b) return false;
    }
    return true;
}

void PrototypeBank::update(const double* zeta, std::size_t cls) {
    if (cls >= inited_.size()) throw std::runtime_error("PrototypeBank: class out of range");
    double* phi = phi_.data() + cls * dim_;
    if (!inited_[cls]) {
        for (std::size_t d = 0; d < dim_; ++d) phi[d] = zeta[d];
        inited_[cls] = true;
    } else {
        for (std::size_t d = 0; d < dim_; ++d) {
            phi[d] = alpha_ * phi[d] + (1.0 - alpha_) * zeta[d];
        }
    }
    double norm = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) norm += phi[d] * phi[d];
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (std::size_t d = 0; d < dim_; ++d) phi[d] /= norm;
    }
}

void PrototypeBank::update_batch(const Tensor& zeta_rows,
                                 const std::vector<std::size_t>& labels) {
    if (zeta_rows.rows() != labels.size() || zeta_rows.cols() != dim_) {
        throw std::runtime_error("PrototypeBank: batch shape mismatch");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        update(zeta_rows.data() + i * dim_, labels[i]);
    }
}

const double* PrototypeBank::prototype(std::size_t cls) const {
    if (!initialized(cls)) {
        throw std::runtime_error("PrototypeBank: class " + std::to_string(cls) +
                                 " has no prototype yet");
    }
    return phi_.data() + cls * dim_;
}

std::pair<std::size_t, double> PrototypeBank::nearest(const double* zeta) const {
    std::size_t best = 0;
    double best_sim = 0.0;
    for (std::size_t c = 0; c < inited_.size(); ++c) {
        if (!inited_[c]) {
            throw std::runtime_error("PrototypeBank: class " + std::to_string(c) +
                                     " has no prototype yet");
        }
        const double* phi = phi_.data() + c * dim_;
        double sim = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) sim += phi[d] * zeta[d];
        if (c == 0 || sim > best_sim) {
            best = c;
            best_sim = sim;
        }
    }
    return {best, best_sim};
}

std::pair<std::size_t, double> PrototypeBank::nearest_entity(const double* zeta) const {
    std::size_t best = 1;
    double best_sim = 0.0;
    for (std::size_t c = 1; c < inited_.size(); ++c) {
        if (!inited_[c]) {
            throw std::runtime_error("PrototypeBank: class " + std::to_string(c) +
                                     " has no prototype yet");
        }
        const double* phi = phi_.data() + c * dim_;
        double sim = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) sim += phi[d] * zeta[d];
        if (c == 1 || sim > best_sim) {
            best = c;
            best_sim = sim;
        }
    }
    return {best, best_sim};
}

MarginTable::MarginTable(std::size_t num_classes)
    : margin_(num_classes, 0.0), set_(num_classes, false), sum_(num_classes, 0.0),
      count_(num_classes, 0) {}

MarginTable MarginTable::fixed(std::size_t num_classes, double r) {
    MarginTable t(num_classes);
    t.fixed_ = true;
    for (std::size_t c = 0; c < num_classes; ++c) {
        t.margin_[c] = r;
        t.set_[c] = true;
    }
    return t;
}

void MarginTable::accumulate(std::size_t cls, double similarity) {
    if (cls >= margin_.size()) throw std::runtime_error("MarginTable: class out of range");
    if (fixed_) return;
    sum_[cls] += similarity;
    count_[cls] += 1;
}

void MarginTable::finalize() {
    if (fixed_) return;
    for (std::size_t c = 0; c < margin_.size(); ++c) {
        if (count_[c] > 0) {
            margin_[c] = sum_[c] / static_cast<double>(count_[c]);
            set_[c] = true;
        }
        // Zero-count classes keep the previous margin (or stay unset).
        sum_[c] = 0.0;
        count_[c] = 0;
    }
}

bool MarginTable::has_margin(std::size_t cls) const {
    if (cls >= margin_.size()) throw std::runtime_error("MarginTable: class out of range");
    return set_[cls];
}

double MarginTable::margin(std::size_t cls) const {
    if (!has_margin(cls)) {
        throw std::runtime_error("MarginTable: class " + std::to_string(cls) +
                                 " has no margin yet");
    }
    return margin_[cls];
}

PseudoLabelStore::PseudoLabelStore(std::size_t num_classes) : num_classes_(num_classes) {
    if (num_classes < 2) throw std::runtime_error("PseudoLabelStore: need >= 2 classes");
}

void PseudoLabelStore::add_sentence(
    std::size_t sentence, const std::vector<std::pair<std::size_t, std::size_t>>& spans,
    const Tensor& p) {
    if (p.rows() != spans.size() || p.cols() != num_classes_) {
        throw std::runtime_error("PseudoLabelStore: label matrix shape mismatch");
    }
    for (std::size_t i = 0; i < spans.size(); ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < num_classes_; ++c) {
            const double v = p.at(i, c);
            if (v < 0.0) throw std::runtime_error("PseudoLabelStore: negative probability");
            sum += v;
        }
        if (std::fabs(sum - 1.0) > 1e-9) {
            throw std::runtime_error("PseudoLabelStore: label row sums to " +
                                     std::to_string(sum));
        }
    }
    if (sentence >= spans_.size()) {
        spans_.resize(sentence + 1);
        labels_.resize(sentence + 1);
    }
    if (!spans_[sentence].empty()) {
        throw std::runtime_error("PseudoLabelStore: sentence " + std::to_string(sentence) +
                                 " already present");
    }
    spans_[sentence] = spans;
    labels_[sentence].assign(p.data(), p.data() + p.size());
    total_spans_ += spans.size();
}

std::size_t PseudoLabelStore::index_of(std::size_t sentence, std::size_t start,
                                       std::size_t end) const {
    if (sentence >= spans_.size()) {
        throw std::runtime_error("PseudoLabelStore: unknown sentence " +
                                 std::to_string(sentence));
    }
    const auto& sp = spans_[sentence];
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i].first == start && sp[i].second == end) return i;
    }
    throw std::runtime_error("PseudoLabelStore: span (" + std::to_string(start) + ", " +
                             std::to_string(end) + ") not stored for sentence " +
                             std::to_string(sentence));
}

double* PseudoLabelStore::label_row(std::size_t sentence, std::size_t start,
                                    std::size_t end) {
    const std::size_t i = index_of(sentence, start, end);
    return labels_[sentence].data() + i * num_classes_;
}

const double* PseudoLabelStore::label_row(std::size_t sentence, std::size_t start,
                                          std::size_t end) const {
    const std::size_t i = index_of(sentence, start, end);
    return labels_[sentence].data() + i * num_classes_;
}

std::size_t PseudoLabelStore::argmax(std::size_t sentence, std::size_t start,
                                     std::size_t end) const {
    const std::size_t i = index_of(sentence, start, end);
    const double* y = labels_[sentence].data() + i * num_classes_;
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes_; ++c) {
        if (y[c] > y[best]) best = c;
    }
    return best;
}

const std::vector<std::pair<std::size_t, std::size_t>>& PseudoLabelStore::sentence_spans(
    std::size_t sentence) const {
    if (sentence >= spans_.size()) {
        throw std::runtime_error("PseudoLabelStore: unknown sentence " +
                                 std::to_string(sentence));
    }
    return spans_[sentence];
}

void PseudoLabelStore::save_jsonl(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t s = 0; s < spans_.size(); ++s) {
        for (std::size_t i = 0; i < spans_[s].size(); ++i) {
            json rec;
            rec["sentence"] = s;
            rec["span"] = {spans_[s][i].first, spans_[s][i].second};
            rec["y"] = std::vector<double>(
                labels_[s].begin() + i * num_classes_,
                labels_[s].begin() + (i + 1) * num_classes_);
            out << rec.dump() << "\n";
        }
    }
}

PseudoLabelStore PseudoLabelStore::load_jsonl(const std::string& path,
                                              std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    // Group rows per sentence first; add_sentence validates each batch.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> spans;
    std::vector<std::vector<double>> labels;
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
        const std::size_t s = rec.at("sentence").get<std::size_t>();
        if (s >= spans.size()) {
            spans.resize(s + 1);
            labels.resize(s + 1);
        }
        spans[s].emplace_back(rec.at("span").at(0).get<std::size_t>(),
                              rec.at("span").at(1).get<std::size_t>());
        const auto y = rec.at("y").get<std::vector<double>>();
        if (y.size() != num_classes) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": label width mismatch");
        }
        labels[s].insert(labels[s].end(), y.begin(), y.end());
    }
    PseudoLabelStore store(num_classes);
    for (std::size_t s = 0; s < spans.size(); ++s) {
        if (spans[s].empty()) continue;
        Tensor p({spans[s].size(), num_classes}, labels[s]);
        store.add_sentence(s, spans[s], p);
    }
    return store;
}

double refine_pseudo_label(double* y, std::size_t num_classes, const double* zeta,
                           const PrototypeBank& bank, const MarginTable& margins,
                           double beta) {
    const auto [cls, sim] = bank.nearest(zeta);
    double beta_eff = 1.0;
    if (cls == 0) {
        beta_eff = beta; // refinement toward "O" is unconditional
    } else if (margins.has_margin(cls) && sim > margins.margin(cls)) {
        beta_eff = beta;
    }
    if (beta_eff != 1.0) {
        for (std::size_t c = 0; c < num_classes; ++c) {
            y[c] = beta_eff * y[c] + (c == cls ? 1.0 - beta_eff : 0.0);
        }
    }
    return beta_eff;
}

void save_bank_jsonl(const std::string& path, const PrototypeBank& bank,
                     const MarginTable& margins) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t c = 0; c < bank.num_classes(); ++c) {
        json rec;
        rec["class"] = c;
        rec["initialized"] = bank.initialized(c);
        if (bank.initialized(c)) {
            rec["phi"] = std::vector<double>(bank.prototype(c),
                                             bank.prototype(c) + bank.dim());
        }
        if (margins.has_margin(c)) rec["margin"] = margins.margin(c);
        out << rec.dump() << "\n";
    }
}

} // namespace contproto
