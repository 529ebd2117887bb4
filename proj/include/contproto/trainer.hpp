#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "contproto/corpus.hpp"
#include "contproto/encoder.hpp"
#include "contproto/eval.hpp"
#include "contproto/objectives.hpp"
#include "contproto/optim.hpp"
#include "contproto/prototypes.hpp"

namespace contproto {

// Training variants. "cl" covers the contrastive head and the consistency
// regularizer together; "proto" covers the prototype bank and pseudo-label
// refinement.
enum class TrainMode {
    ContProto,   // all four losses + prototype refinement
    Vanilla,     // src + tgt self-training only
    NoProto,     // all four losses, no prototype refinement
    NoProtoNoCl, // src + tgt only (equivalent trajectory to Vanilla)
    NoReg,       // src + tgt + contrastive, prototype refinement on
    FixedMargin, // ContProto with a constant margin instead of running means
    ProtoNoCl,   // src + tgt + prototype refinement; projection head untrained
};

TrainMode parse_train_mode(const std::string& s);
const char* train_mode_name(TrainMode m);
bool mode_uses_prototypes(TrainMode m);
bool mode_uses_dual_pass(TrainMode m); // contrastive/regularizer modes
LossMode mode_loss_terms(TrainMode m);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t teacher_epochs = 10;
    std::size_t batch_source = 16;
    std::size_t batch_target = 16;
    double lr = 1e-3; // desk-scale default; the reference setting for a
                      // pretrained backbone would be 1e-5
    double weight_decay = 0.01;
    double alpha = 0.99;       // prototype EMA rate
    double beta = 0.95;        // pseudo-label EMA rate
    double tau = 0.07;         // contrastive temperature
    double fixed_margin_r = 1.0;
    TrainMode mode = TrainMode::ContProto;
    std::uint64_t seed = 1;
    long neg_per_pos = -1;     // source-side negative sampling; -1 = all spans
    bool include_o_anchors = true;
    bool warm_start_student = false; // initialize student from teacher weights
    EncoderConfig enc; // vocab_size and num_classes are filled in from data

    void validate() const;
};

// Flat key=value config file; unknown keys are an error. vocab_size and
// num_classes never appear (they come from the data).
TrainConfig read_train_config(const std::string& path);
void write_train_config(const std::string& path, const TrainConfig& cfg);

// Append-only line-delimited JSON metrics sink.
class MetricsWriter {
public:
    MetricsWriter() = default;
    explicit MetricsWriter(const std::string& path, std::string run_id);
    void step(std::size_t epoch, std::size_t step, const LossReport& losses);
    void epoch(std::size_t epoch, std::optional<double> dev_f1,
               std::optional<double> oracle_f1, const std::vector<double>& margins);
    bool active() const { return !path_.empty(); }

private:
    std::string path_;
    std::string run_id_;
};

// Deterministic randomness contract, which a reimplementation of the
// training loop must follow to reproduce a trajectory bit for bit:
//   root           = Rng(seed)
//   teacher init   = root.fork(1), consumed by init_params
//   student init   = root.fork(2) (unused under warm start)
//   teacher epoch e= root.fork(100 + e)
//   student epoch e= root.fork(1000 + e)
// An epoch stream is consumed strictly in order: first shuffle of the
// source order (teacher) or target order then source order (student), then
// per step: source-span sampling draws sentence by sentence in batch order
// (none when neg_per_pos < 0), then dropout mask draws inside encode_pass
// (none when dropout is 0).
//
// Batch schedule: teacher epochs chunk the shuffled source corpus into
// batches of batch_source (last chunk short). Student epochs chunk the
// shuffled target corpus into batches of batch_target (last chunk short);
// the step's source batch takes batch_source sentences from the shuffled
// source order at offset step * batch_source, wrapping around modulo the
// corpus size.
//
// Per-step order in the student: forward (both views share one pass over
// the doubled batch when the mode needs two views), losses, backward,
// optimizer step; then prototype updates in batch order; then pseudo-label
// refinement for the step's target spans (skipped during epoch 0); then
// margin statistics. Margins finalize at every epoch end, including the
// warm-up epoch.
struct TeacherResult {
    EncoderParams params; // best epoch by source-dev micro-F1
    std::vector<double> dev_f1_history;
    double best_dev_f1 = 0.0;
    std::size_t best_epoch = 0;
};

TeacherResult train_teacher(const TrainConfig& cfg, const Corpus& src_train,
                            const Corpus& src_dev, MetricsWriter* metrics = nullptr);

// Teacher soft distributions for every enumerated span of every target
// sentence, dropout off.
PseudoLabelStore assign_initial_pseudo_labels(const EncoderConfig& enc,
                                              const EncoderParams& teacher,
                                              const Corpus& tgt);

struct StudentResult {
    EncoderParams params; // best epoch by source-dev micro-F1
    std::vector<double> dev_f1_history;
    std::vector<double> oracle_f1_history; // store quality at each epoch end
    std::vector<LossReport> step_losses;   // full per-step trace
    double best_dev_f1 = 0.0;
    std::size_t best_epoch = 0;
    PrototypeBank bank;      // final state (empty for modes without prototypes)
    MarginTable margins;
};

// Called after each epoch's margins finalize, e.g. to snapshot the store.
using EpochHook = std::function<void(std::size_t epoch, const PseudoLabelStore&)>;

StudentResult train_student(const TrainConfig& cfg, const Corpus& src_train,
                            const Corpus& tgt_train, PseudoLabelStore& store,
                            const Corpus& src_dev, MetricsWriter* metrics = nullptr,
                            const EpochHook& on_epoch_end = {},
                            const EncoderParams* warm_start_from = nullptr);

struct DataBundle {
    LabelSet labels;
    Corpus src_train, src_dev, tgt_train, tgt_test;
    std::size_t vocab_size = 0;
};

DataBundle bundle_from_synth(SynthData&& synth);
// Reads labels.json, meta.json and the four corpus files written by
// save_data_bundle / the gen-data command.
DataBundle load_data_bundle(const std::string& dir);
void save_data_bundle(const std::string& dir, const DataBundle& data);

struct PipelineResult {
    TeacherResult teacher;
    StudentResult student;
    double initial_oracle_f1 = -1.0; // -1 when no hidden gold exists
    double final_oracle_f1 = -1.0;
    double final_target_f1 = -1.0;   // tgt_test, hidden gold
};

// Full run: teacher, initial labels, student, evaluation. With a non-empty
// out_dir writes config echo, checkpoints, store snapshots, bank snapshot,
// metrics.jsonl and report.json; outputs contain no timestamps, so a rerun
// with the same config is byte-identical.
PipelineResult run_pipeline(TrainConfig cfg, const DataBundle& data,
                            const std::string& out_dir);

// Output root for relative out_dir arguments: $CONTPROTO_OUT_ROOT or ".".
std::string resolve_out_dir(const std::string& out_dir);

} // namespace contproto
