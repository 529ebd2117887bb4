// Command-line surface for the contproto pipeline: data generation, the
// individual training stages, evaluation, and offline label refinement.
// Every stage is also reachable programmatically through the library; this
// binary only parses flags, wires files to the library calls, and prints
// short human-readable summaries.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "contproto/corpus.hpp"
#include "contproto/encoder.hpp"
#include "contproto/eval.hpp"
#include "contproto/prototypes.hpp"
#include "contproto/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace contproto;

namespace {

// Output paths go through the same root override as the library so that
// `train --out run1` and `report --run run1` agree when CONTPROTO_OUT_ROOT
// is set.
std::string out_path(const std::string& p) { return resolve_out_dir(p); }

void ensure_parent_dir(const std::string& file_path) {
    const fs::path parent = fs::path(file_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

bool corpus_has_hidden_gold(const Corpus& c) {
    return std::any_of(c.begin(), c.end(),
                       [](const Sentence& s) { return !s.hidden_gold.empty(); });
}

const Corpus& pick_split(const DataBundle& data, const std::string& split) {
    if (split == "src-train") return data.src_train;
    if (split == "src-dev") return data.src_dev;
    if (split == "tgt-train") return data.tgt_train;
    if (split == "tgt-test") return data.tgt_test;
    throw std::runtime_error("unknown split \"" + split + "\"");
}

void print_eval_report(const EvalReport& rep, const LabelSet& labels) {
    auto line = [](const std::string& name, const ClassScore& s) {
        std::printf("  %-12s P %.4f  R %.4f  F1 %.4f  (tp %zu fp %zu fn %zu)\n",
                    name.c_str(), s.precision, s.recall, s.f1, s.tp, s.fp, s.fn);
    };
    for (std::size_t c = 1; c < labels.size(); ++c) line(labels.name(c), rep.per_class[c]);
    line("micro", rep.micro);
}

json eval_report_json(const EvalReport& rep, const LabelSet& labels) {
    auto score = [](const ClassScore& s) {
        return json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                    {"tp", s.tp},               {"fp", s.fp},         {"fn", s.fn}};
    };
    json per_class = json::object();
    for (std::size_t c = 1; c < labels.size(); ++c) {
        per_class[labels.name(c)] = score(rep.per_class[c]);
    }
    return json{{"micro", score(rep.micro)}, {"per_class", per_class}};
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
    std::string out;
    std::uint64_t seed = 7;
    std::size_t classes = 3;
    std::size_t src_train = 500, src_dev = 100, tgt_train = 500, tgt_test = 200;
    double noise = 0.0;
    double frac_single = 0.40, frac_headed = 0.35;
    SynthConfig pools; // vocabulary / sentence-shape knobs at their defaults
};

int run_gen_data(const GenArgs& a) {
    SynthConfig sc = a.pools;
    sc.classes = a.classes;
    sc.seed = a.seed;
    sc.noise_rate = a.noise;
    sc.frac_single = a.frac_single;
    sc.frac_headed = a.frac_headed;
    sc.src_train_sentences = a.src_train;
    sc.src_dev_sentences = a.src_dev;
    sc.tgt_train_sentences = a.tgt_train;
    sc.tgt_test_sentences = a.tgt_test;
    sc.validate();

    const DataBundle data = bundle_from_synth(generate_synthetic_pair(sc));
    const std::string out = out_path(a.out);
    save_data_bundle(out, data);
    std::cout << "wrote " << out << ": " << data.src_train.size() << " src-train, "
              << data.src_dev.size() << " src-dev, " << data.tgt_train.size()
              << " tgt-train, " << data.tgt_test.size() << " tgt-test sentences; "
              << data.labels.num_entity_classes() << " entity classes, vocab "
              << data.vocab_size << "\n";
    return 0;
}

// ----------------------------------------------------------- train-teacher

struct TeacherArgs {
    std::string data, out, config;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double lr = 0.0;
    bool seed_set = false, epochs_set = false, lr_set = false;
};

int run_train_teacher(const TeacherArgs& a) {
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : read_train_config(a.config);
    if (a.seed_set) cfg.seed = a.seed;
    if (a.epochs_set) cfg.teacher_epochs = a.epochs;
    if (a.lr_set) cfg.lr = a.lr;

    const DataBundle data = load_data_bundle(a.data);
    cfg.enc.vocab_size = data.vocab_size;
    cfg.enc.num_classes = data.labels.size();
    cfg.validate();

    const std::string out = out_path(a.out);
    fs::create_directories(out);
    write_train_config(out + "/config.txt", cfg);
    MetricsWriter metrics(out + "/metrics.jsonl", "teacher-seed" + std::to_string(cfg.seed));
    const TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev, &metrics);
    save_checkpoint(out + "/teacher.ckpt", cfg.enc, teacher.params);
    std::cout << "teacher best dev F1 " << teacher.best_dev_f1 << " (epoch "
              << teacher.best_epoch << "); checkpoint " << out << "/teacher.ckpt\n";
    return 0;
}

// ------------------------------------------------------------ pseudo-label

struct PseudoArgs {
    std::string data, checkpoint, out;
};

int run_pseudo_label(const PseudoArgs& a) {
    const DataBundle data = load_data_bundle(a.data);
    EncoderConfig enc;
    EncoderParams params;
    load_checkpoint(a.checkpoint, enc, params);

    const PseudoLabelStore store = assign_initial_pseudo_labels(enc, params, data.tgt_train);
    const std::string out = out_path(a.out);
    ensure_parent_dir(out);
    store.save_jsonl(out);
    std::cout << "wrote " << out << " (" << store.size() << " spans over "
              << store.num_sentences() << " sentences)\n";
    if (corpus_has_hidden_gold(data.tgt_train)) {
        std::cout << "oracle F1 of assigned labels: "
                  << oracle_pseudo_f1(store, data.tgt_train, enc.num_classes) << "\n";
    }
    return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string data, out, config, mode;
    std::uint64_t seed = 0;
    std::size_t epochs = 0, teacher_epochs = 0;
    double lr = 0.0, alpha = 0.0, beta = 0.0, tau = 0.0, fixed_margin = 0.0;
    bool warm_start = false;
    bool seed_set = false, epochs_set = false, teacher_epochs_set = false;
    bool lr_set = false, alpha_set = false, beta_set = false, tau_set = false;
    bool fixed_margin_set = false, warm_start_set = false;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : read_train_config(a.config);
    if (!a.mode.empty()) cfg.mode = parse_train_mode(a.mode);
    if (a.seed_set) cfg.seed = a.seed;
    if (a.epochs_set) cfg.epochs = a.epochs;
    if (a.teacher_epochs_set) cfg.teacher_epochs = a.teacher_epochs;
    if (a.lr_set) cfg.lr = a.lr;
    if (a.alpha_set) cfg.alpha = a.alpha;
    if (a.beta_set) cfg.beta = a.beta;
    if (a.tau_set) cfg.tau = a.tau;
    if (a.fixed_margin_set) cfg.fixed_margin_r = a.fixed_margin;
    if (a.warm_start_set) cfg.warm_start_student = a.warm_start;

    const DataBundle data = load_data_bundle(a.data);
    const PipelineResult res = run_pipeline(cfg, data, a.out);

    std::cout << "mode " << train_mode_name(cfg.mode) << ", seed " << cfg.seed << "\n"
              << "teacher best dev F1 " << res.teacher.best_dev_f1 << " (epoch "
              << res.teacher.best_epoch << ")\n"
              << "student best dev F1 " << res.student.best_dev_f1 << " (epoch "
              << res.student.best_epoch << ")\n";
    if (res.initial_oracle_f1 >= 0.0) {
        std::cout << "oracle pseudo-label F1 " << res.initial_oracle_f1 << " -> "
                  << res.final_oracle_f1 << "\n";
    }
    if (res.final_target_f1 >= 0.0) {
        std::cout << "final target F1 " << res.final_target_f1 << "\n";
    }
    if (!a.out.empty()) std::cout << "artifacts in " << out_path(a.out) << "\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvalArgs {
    std::string data, checkpoint, out;
    std::string split = "tgt-test";
};

int run_evaluate(const EvalArgs& a) {
    const DataBundle data = load_data_bundle(a.data);
    EncoderConfig enc;
    EncoderParams params;
    load_checkpoint(a.checkpoint, enc, params);

    const Corpus& corpus = pick_split(data, a.split);
    if (corpus.empty()) throw std::runtime_error("split \"" + a.split + "\" is empty");
    // Unlabeled target splits keep their references on the hidden side.
    const bool hidden = corpus.front().gold.empty() && !corpus.front().hidden_gold.empty();
    const EvalReport rep = evaluate_predictions(enc, params, corpus, hidden);

    std::cout << "split " << a.split << (hidden ? " (hidden gold)" : "") << ", "
              << corpus.size() << " sentences\n";
    print_eval_report(rep, data.labels);
    if (!a.out.empty()) {
        json doc = eval_report_json(rep, data.labels);
        doc["split"] = a.split;
        const std::string out = out_path(a.out);
        ensure_parent_dir(out);
        std::ofstream f(out);
        if (!f) throw std::runtime_error("cannot write " + out);
        f << doc.dump(2) << "\n";
        std::cout << "report written to " << out << "\n";
    }
    return 0;
}

// ----------------------------------------------------------- refine-labels

struct RefineArgs {
    std::string embeddings, labels, out, bank_out;
    std::size_t passes = 2;
    double alpha = 0.99, beta = 0.95;
    double fixed_margin = 0.0;
    bool fixed_margin_set = false;
};

struct EmbeddingRecord {
    std::size_t sentence = 0, start = 0, end = 0;
    std::vector<double> vec;
};

std::vector<EmbeddingRecord> read_embeddings_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<EmbeddingRecord> records;
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
        EmbeddingRecord r;
        r.sentence = rec.at("sentence").get<std::size_t>();
        r.start = rec.at("span").at(0).get<std::size_t>();
        r.end = rec.at("span").at(1).get<std::size_t>();
        r.vec = rec.at("vector").get<std::vector<double>>();
        if (!records.empty() && r.vec.size() != records.front().vec.size()) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": vector width mismatch");
        }
        records.push_back(std::move(r));
    }
    if (records.empty()) throw std::runtime_error(path + ": no embedding records");
    return records;
}

// The label store does not record its own width, so peek at the first row.
std::size_t store_num_classes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        return json::parse(line).at("y").size();
    }
    throw std::runtime_error(path + ": no label records");
}

// Offline replay of the in-training refinement schedule over a fixed set of
// span vectors: the first pass only builds prototypes and margin statistics
// (warm-up); each later pass updates the prototype with the span's current
// label, then refines the stored distribution, then feeds the margin
// accumulators. Margins finalize after every pass.
int run_refine_labels(const RefineArgs& a) {
    if (a.passes == 0) throw std::runtime_error("--passes must be at least 1");
    const std::size_t num_classes = store_num_classes(a.labels);
    PseudoLabelStore store = PseudoLabelStore::load_jsonl(a.labels, num_classes);
    const std::vector<EmbeddingRecord> embeddings = read_embeddings_jsonl(a.embeddings);

    PrototypeBank bank(num_classes, embeddings.front().vec.size(), a.alpha);
    MarginTable margins = a.fixed_margin_set
                              ? MarginTable::fixed(num_classes, a.fixed_margin)
                              : MarginTable(num_classes);

    std::size_t refined = 0;
    for (std::size_t pass = 0; pass < a.passes; ++pass) {
        for (const EmbeddingRecord& r : embeddings) {
            const std::size_t label = store.argmax(r.sentence, r.start, r.end);
            bank.update(r.vec.data(), label);
            if (!warmup_gate(pass) && bank.complete()) {
                double* y = store.label_row(r.sentence, r.start, r.end);
                if (refine_pseudo_label(y, num_classes, r.vec.data(), bank, margins,
                                        a.beta) != 1.0) {
                    ++refined;
                }
            }
            if (!margins.is_fixed() && label != 0 && bank.initialized(label)) {
                const double* phi = bank.prototype(label);
                double sim = 0.0;
                for (std::size_t d = 0; d < r.vec.size(); ++d) sim += phi[d] * r.vec[d];
                margins.accumulate(label, sim);
            }
        }
        margins.finalize();
    }

    const std::string out = out_path(a.out);
    ensure_parent_dir(out);
    store.save_jsonl(out);
    std::cout << "refined " << refined << " of " << embeddings.size() * (a.passes - 1)
              << " span visits across " << a.passes << " passes; wrote " << out << "\n";
    if (!bank.complete()) {
        std::cout << "note: some classes were never predicted, so their prototypes "
                     "stayed uninitialized and refinement was skipped\n";
    }
    if (!a.bank_out.empty()) {
        const std::string bank_path = out_path(a.bank_out);
        ensure_parent_dir(bank_path);
        save_bank_jsonl(bank_path, bank, margins);
        std::cout << "prototype snapshot written to " << bank_path << "\n";
    }
    return 0;
}

// ------------------------------------------------------- export-embeddings

struct ExportArgs {
    std::string data, checkpoint, out;
    std::string split = "tgt-train";
    std::string kind = "zeta";
};

int run_export_embeddings(const ExportArgs& a) {
    const DataBundle data = load_data_bundle(a.data);
    EncoderConfig enc;
    EncoderParams params;
    load_checkpoint(a.checkpoint, enc, params);

    const Corpus& corpus = pick_split(data, a.split);
    const EmbeddingKind kind = a.kind == "z" ? EmbeddingKind::Z : EmbeddingKind::Zeta;
    const std::string out = out_path(a.out);
    ensure_parent_dir(out);
    export_embeddings(enc, params, corpus, data.labels, kind, out);

    std::size_t n = 0;
    for (const Sentence& s : corpus) n += count_spans(s.tokens.size(), enc.max_span_len);
    std::cout << "wrote " << out << " (" << n << " " << a.kind << " vectors, split "
              << a.split << ")\n";
    return 0;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
    std::string run;
};

void print_f1_history(const char* name, const json& doc, const char* key) {
    if (!doc.contains(key)) return;
    std::cout << name << ":";
    for (const auto& v : doc[key]) std::printf(" %.4f", v.get<double>());
    std::cout << "\n";
}

int run_report(const ReportArgs& a) {
    const std::string dir = out_path(a.run);
    const std::string path = dir + "/report.json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json doc = json::parse(in);

    std::cout << "run " << dir << "\n"
              << "mode " << doc.at("mode").get<std::string>() << ", seed "
              << doc.at("seed").get<std::uint64_t>() << "\n";
    std::printf("teacher best dev F1 %.4f\n", doc.at("teacher_best_dev_f1").get<double>());
    std::printf("student best dev F1 %.4f\n", doc.at("student_best_dev_f1").get<double>());
    print_f1_history("teacher dev F1 per epoch", doc, "teacher_dev_f1_per_epoch");
    print_f1_history("student dev F1 per epoch", doc, "student_dev_f1_per_epoch");
    if (doc.contains("initial_oracle_f1")) {
        std::printf("oracle pseudo-label F1 %.4f -> %.4f\n",
                    doc.at("initial_oracle_f1").get<double>(),
                    doc.at("final_oracle_f1").get<double>());
        print_f1_history("oracle F1 per epoch", doc, "oracle_f1_per_epoch");
    }
    if (doc.contains("final_target_f1")) {
        std::printf("final target F1 %.4f\n", doc.at("final_target_f1").get<double>());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"contproto: cross-lingual self-training for span-based NER"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    const std::vector<std::string> mode_names = {
        "contproto", "vanilla", "no_proto", "no_proto_no_cl",
        "no_reg",    "fixed_margin", "proto_no_cl"};
    const std::vector<std::string> split_names = {"src-train", "src-dev", "tgt-train",
                                                  "tgt-test"};

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand(
        "gen-data", "Generate a synthetic bilingual data bundle");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed");
    gen_cmd->add_option("--classes", gen.classes, "Number of entity classes");
    gen_cmd->add_option("--src-train", gen.src_train, "Source training sentences");
    gen_cmd->add_option("--src-dev", gen.src_dev, "Source dev sentences");
    gen_cmd->add_option("--tgt-train", gen.tgt_train, "Target training sentences");
    gen_cmd->add_option("--tgt-test", gen.tgt_test, "Target test sentences");
    gen_cmd->add_option("--noise", gen.noise, "Target surface-noise rate");
    gen_cmd->add_option("--frac-single", gen.frac_single, "Fraction of single-token mentions");
    gen_cmd->add_option("--frac-headed", gen.frac_headed,
                        "Fraction of headed mentions (the rest are ambiguous)");
    gen_cmd->add_option("--singles-per-class", gen.pools.singles_per_class,
                        "Single-token surface forms per class");
    gen_cmd->add_option("--heads-per-class", gen.pools.heads_per_class,
                        "Class-specific head tokens per class");
    gen_cmd->add_option("--ambig-heads", gen.pools.ambig_heads,
                        "Shared heads drawn by every class");
    gen_cmd->add_option("--tails-per-class", gen.pools.tails_per_class,
                        "Language-private tail tokens per class");
    gen_cmd->add_option("--context-tokens", gen.pools.context_tokens,
                        "Language-private filler vocabulary size");
    gen_cmd->add_option("--min-len", gen.pools.min_sentence_len, "Minimum sentence length");
    gen_cmd->add_option("--max-len", gen.pools.max_sentence_len, "Maximum sentence length");
    gen_cmd->add_option("--min-entities", gen.pools.min_entities,
                        "Minimum mentions per sentence");
    gen_cmd->add_option("--max-entities", gen.pools.max_entities,
                        "Maximum mentions per sentence");

    TeacherArgs teacher;
    CLI::App* teacher_cmd = app.add_subcommand(
        "train-teacher", "Train the source-language teacher and save its checkpoint");
    teacher_cmd->add_option("--data", teacher.data, "Data bundle directory")->required();
    teacher_cmd->add_option("--out", teacher.out, "Output directory")->required();
    teacher_cmd->add_option("--config", teacher.config, "Training config file");
    teacher_cmd->add_option("--seed", teacher.seed, "Random seed");
    teacher_cmd->add_option("--epochs", teacher.epochs, "Teacher epochs");
    teacher_cmd->add_option("--lr", teacher.lr, "Learning rate");

    PseudoArgs pseudo;
    CLI::App* pseudo_cmd = app.add_subcommand(
        "pseudo-label", "Assign teacher soft labels to every target span");
    pseudo_cmd->add_option("--data", pseudo.data, "Data bundle directory")->required();
    pseudo_cmd->add_option("--checkpoint", pseudo.checkpoint, "Teacher checkpoint")
        ->required();
    pseudo_cmd->add_option("--out", pseudo.out, "Output store file (jsonl)")->required();

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand(
        "train", "Run the full teacher -> pseudo-label -> student pipeline");
    train_cmd->add_option("--data", train.data, "Data bundle directory")->required();
    train_cmd->add_option("--out", train.out, "Output directory")->required();
    train_cmd->add_option("--config", train.config, "Training config file");
    train_cmd->add_option("--mode", train.mode, "Training mode")
        ->check(CLI::IsMember(mode_names));
    train_cmd->add_option("--seed", train.seed, "Random seed");
    train_cmd->add_option("--epochs", train.epochs, "Student epochs");
    train_cmd->add_option("--teacher-epochs", train.teacher_epochs, "Teacher epochs");
    train_cmd->add_option("--lr", train.lr, "Learning rate");
    train_cmd->add_option("--alpha", train.alpha, "Prototype EMA rate");
    train_cmd->add_option("--beta", train.beta, "Pseudo-label EMA rate");
    train_cmd->add_option("--tau", train.tau, "Contrastive temperature");
    train_cmd->add_option("--fixed-margin", train.fixed_margin,
                          "Margin value for fixed_margin mode");
    train_cmd->add_flag("--warm-start", train.warm_start,
                        "Initialize the student from the teacher weights");

    EvalArgs eval;
    CLI::App* eval_cmd =
        app.add_subcommand("evaluate", "Score a checkpoint on one corpus split");
    eval_cmd->add_option("--data", eval.data, "Data bundle directory")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
    eval_cmd->add_option("--split", eval.split, "Corpus split")
        ->check(CLI::IsMember(split_names));
    eval_cmd->add_option("--out", eval.out, "Optional JSON report path");

    RefineArgs refine;
    CLI::App* refine_cmd = app.add_subcommand(
        "refine-labels",
        "Refine a pseudo-label store offline from exported span embeddings");
    refine_cmd->add_option("--embeddings", refine.embeddings,
                           "Span embeddings file (export-embeddings --kind zeta)")
        ->required();
    refine_cmd->add_option("--labels", refine.labels, "Pseudo-label store (jsonl)")
        ->required();
    refine_cmd->add_option("--out", refine.out, "Refined store output path")->required();
    refine_cmd->add_option("--passes", refine.passes,
                           "Passes over the spans (the first is warm-up)");
    refine_cmd->add_option("--alpha", refine.alpha, "Prototype EMA rate");
    refine_cmd->add_option("--beta", refine.beta, "Pseudo-label EMA rate");
    refine_cmd->add_option("--fixed-margin", refine.fixed_margin,
                           "Use a fixed margin instead of per-pass means");
    refine_cmd->add_option("--bank", refine.bank_out, "Optional prototype snapshot path");

    ExportArgs exp;
    CLI::App* export_cmd = app.add_subcommand(
        "export-embeddings", "Dump one vector per enumerated span for inspection");
    export_cmd->add_option("--data", exp.data, "Data bundle directory")->required();
    export_cmd->add_option("--checkpoint", exp.checkpoint, "Model checkpoint")->required();
    export_cmd->add_option("--out", exp.out, "Output file (jsonl)")->required();
    export_cmd->add_option("--split", exp.split, "Corpus split")
        ->check(CLI::IsMember(split_names));
    export_cmd->add_option("--kind", exp.kind, "Vector kind")
        ->check(CLI::IsMember(std::vector<std::string>{"z", "zeta"}));

    ReportArgs report;
    CLI::App* report_cmd =
        app.add_subcommand("report", "Print the summary of a finished training run");
    report_cmd->add_option("--run", report.run, "Run output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen);
        if (teacher_cmd->parsed()) {
            teacher.seed_set = teacher_cmd->count("--seed") > 0;
            teacher.epochs_set = teacher_cmd->count("--epochs") > 0;
            teacher.lr_set = teacher_cmd->count("--lr") > 0;
            return run_train_teacher(teacher);
        }
        if (pseudo_cmd->parsed()) return run_pseudo_label(pseudo);
        if (train_cmd->parsed()) {
            train.seed_set = train_cmd->count("--seed") > 0;
            train.epochs_set = train_cmd->count("--epochs") > 0;
            train.teacher_epochs_set = train_cmd->count("--teacher-epochs") > 0;
            train.lr_set = train_cmd->count("--lr") > 0;
            train.alpha_set = train_cmd->count("--alpha") > 0;
            train.beta_set = train_cmd->count("--beta") > 0;
            train.tau_set = train_cmd->count("--tau") > 0;
            train.fixed_margin_set = train_cmd->count("--fixed-margin") > 0;
            train.warm_start_set = train_cmd->count("--warm-start") > 0;
            return run_train(train);
        }
        if (eval_cmd->parsed()) return run_evaluate(eval);
        if (refine_cmd->parsed()) {
            refine.fixed_margin_set = refine_cmd->count("--fixed-margin") > 0;
            return run_refine_labels(refine);
        }
        if (export_cmd->parsed()) return run_export_embeddings(exp);
        if (report_cmd->parsed()) return run_report(report);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
