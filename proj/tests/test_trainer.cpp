#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "contproto/trainer.hpp"

using namespace contproto;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_synth() {
    SynthConfig cfg;
    cfg.classes = 3;
    cfg.singles_per_class = 3;
    cfg.heads_per_class = 2;
    cfg.ambig_heads = 3;
    cfg.tails_per_class = 3;
    cfg.context_tokens = 12;
    cfg.src_train_sentences = 20;
    cfg.src_dev_sentences = 8;
    cfg.tgt_train_sentences = 16;
    cfg.tgt_test_sentences = 8;
    cfg.noise_rate = 0.1;
    cfg.seed = 7;
    return cfg;
}

TrainConfig tiny_train(const DataBundle& data) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.teacher_epochs = 2;
    cfg.batch_source = 4;
    cfg.batch_target = 4;
    cfg.lr = 1e-3;
    cfg.seed = 11;
    cfg.enc.vocab_size = data.vocab_size;
    cfg.enc.num_classes = data.labels.size();
    cfg.enc.d_tok = 4;
    cfg.enc.d_h = 6;
    cfg.enc.n_layers = 1;
    cfg.enc.d_len = 3;
    cfg.enc.d_proj = 4;
    cfg.enc.max_span_len = 2;
    cfg.enc.max_positions = 16;
    cfg.enc.dropout = 0.1;
    return cfg;
}

DataBundle tiny_data() {
    return bundle_from_synth(generate_synthetic_pair(tiny_synth()));
}

std::vector<double> store_snapshot(const PseudoLabelStore& store) {
    std::vector<double> out;
    for (std::size_t s = 0; s < store.num_sentences(); ++s) {
        for (const auto& [j, k] : store.sentence_spans(s)) {
            const double* y = store.label_row(s, j, k);
            out.insert(out.end(), y, y + store.num_classes());
        }
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool params_equal(const EncoderParams& a, const EncoderParams& b) {
    const auto ta = a.all();
    const auto tb = b.all();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i]->vec() != tb[i]->vec()) return false;
    }
    return true;
}

} // namespace

TEST_CASE("mode helpers agree with the ablation table") {
    CHECK(parse_train_mode("contproto") == TrainMode::ContProto);
    CHECK(parse_train_mode("no_proto_no_cl") == TrainMode::NoProtoNoCl);
    CHECK_THROWS_AS(parse_train_mode("bogus"), std::runtime_error);
    for (TrainMode m : {TrainMode::ContProto, TrainMode::Vanilla, TrainMode::NoProto,
                        TrainMode::NoProtoNoCl, TrainMode::NoReg, TrainMode::FixedMargin,
                        TrainMode::ProtoNoCl}) {
        CHECK(parse_train_mode(train_mode_name(m)) == m);
    }

    CHECK(mode_uses_prototypes(TrainMode::ContProto));
    CHECK(!mode_uses_prototypes(TrainMode::Vanilla));
    CHECK(!mode_uses_prototypes(TrainMode::NoProto));
    CHECK(!mode_uses_prototypes(TrainMode::NoProtoNoCl));
    CHECK(mode_uses_prototypes(TrainMode::NoReg));
    CHECK(mode_uses_prototypes(TrainMode::FixedMargin));
    CHECK(mode_uses_prototypes(TrainMode::ProtoNoCl));

    CHECK(mode_uses_dual_pass(TrainMode::ContProto));
    CHECK(!mode_uses_dual_pass(TrainMode::Vanilla));
    CHECK(mode_uses_dual_pass(TrainMode::NoProto));
    CHECK(!mode_uses_dual_pass(TrainMode::NoProtoNoCl));
    CHECK(mode_uses_dual_pass(TrainMode::NoReg));
    CHECK(mode_uses_dual_pass(TrainMode::FixedMargin));
    CHECK(!mode_uses_dual_pass(TrainMode::ProtoNoCl));

    CHECK(mode_loss_terms(TrainMode::ContProto) == LossMode::ContProto);
    CHECK(mode_loss_terms(TrainMode::Vanilla) == LossMode::Vanilla);
    CHECK(mode_loss_terms(TrainMode::NoProto) == LossMode::ContProto);
    CHECK(mode_loss_terms(TrainMode::NoProtoNoCl) == LossMode::NoCont);
    CHECK(mode_loss_terms(TrainMode::NoReg) == LossMode::NoReg);
    CHECK(mode_loss_terms(TrainMode::FixedMargin) == LossMode::ContProto);
    CHECK(mode_loss_terms(TrainMode::ProtoNoCl) == LossMode::NoCont);
}

TEST_CASE("train config round trips through its file format") {
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.teacher_epochs = 3;
    cfg.batch_source = 8;
    cfg.batch_target = 12;
    cfg.lr = 2.5e-4;
    cfg.weight_decay = 0.02;
    cfg.alpha = 0.97;
    cfg.beta = 0.9;
    cfg.tau = 0.05;
    cfg.fixed_margin_r = 0.8;
    cfg.mode = TrainMode::NoReg;
    cfg.seed = 42;
    cfg.neg_per_pos = 5;
    cfg.include_o_anchors = false;
    cfg.warm_start_student = true;
    cfg.enc.d_tok = 16;
    cfg.enc.dropout = 0.2;

    const std::string path = "trainer_test_config.txt";
    write_train_config(path, cfg);
    TrainConfig back = read_train_config(path);
    CHECK(back.epochs == 4);
    CHECK(back.teacher_epochs == 3);
    CHECK(back.batch_source == 8);
    CHECK(back.batch_target == 12);
    CHECK(back.lr == cfg.lr);
    CHECK(back.weight_decay == cfg.weight_decay);
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.beta == cfg.beta);
    CHECK(back.tau == cfg.tau);
    CHECK(back.fixed_margin_r == cfg.fixed_margin_r);
    CHECK(back.mode == TrainMode::NoReg);
    CHECK(back.seed == 42);
    CHECK(back.neg_per_pos == 5);
    CHECK(back.include_o_anchors == false);
    CHECK(back.warm_start_student == true);
    CHECK(back.enc.d_tok == 16);
    CHECK(back.enc.dropout == 0.2);
    std::remove(path.c_str());

    std::ofstream bad(path);
    bad << "epochs=4\nlearning_rate=0.1\n";
    bad.close();
    try {
        read_train_config(path);
        FAIL("expected an unknown-key error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("unknown config key") != std::string::npos);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("train config validation") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    CHECK_NOTHROW(cfg.validate());
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
    cfg = tiny_train(data);
    cfg.alpha = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
    cfg = tiny_train(data);
    cfg.tau = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
    cfg = tiny_train(data);
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
}

TEST_CASE("teacher training is deterministic and tracks its best dev epoch") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);

    TeacherResult a = train_teacher(cfg, data.src_train, data.src_dev);
    TeacherResult b = train_teacher(cfg, data.src_train, data.src_dev);
    CHECK(params_equal(a.params, b.params));
    CHECK(a.dev_f1_history == b.dev_f1_history);
    REQUIRE(a.dev_f1_history.size() == cfg.teacher_epochs);

    double best = -1.0;
    std::size_t best_epoch = 0;
    for (std::size_t e = 0; e < a.dev_f1_history.size(); ++e) {
        if (a.dev_f1_history[e] > best) {
            best = a.dev_f1_history[e];
            best_epoch = e;
        }
    }
    CHECK(a.best_dev_f1 == best);
    CHECK(a.best_epoch == best_epoch);

    TrainConfig other = cfg;
    other.seed = 999;
    TeacherResult c = train_teacher(other, data.src_train, data.src_dev);
    CHECK(!params_equal(a.params, c.params));
}

TEST_CASE("initial pseudo labels cover every enumerated target span") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);

    REQUIRE(store.num_sentences() == data.tgt_train.size());
    std::size_t expected = 0;
    for (const Sentence& s : data.tgt_train) {
        expected += count_spans(s.tokens.size(), cfg.enc.max_span_len);
    }
    CHECK(store.size() == expected);

    // Rows are distributions (spot check the first sentence).
    for (const auto& [j, k] : store.sentence_spans(0)) {
        const double* y = store.label_row(0, j, k);
        double sum = 0.0;
        for (std::size_t c = 0; c < store.num_classes(); ++c) {
            CHECK(y[c] >= 0.0);
            sum += y[c];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("student training is deterministic across identical runs") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::ContProto;
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore store1 =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    PseudoLabelStore store2 = store1;

    StudentResult a =
        train_student(cfg, data.src_train, data.tgt_train, store1, data.src_dev);
    StudentResult b =
        train_student(cfg, data.src_train, data.tgt_train, store2, data.src_dev);
    CHECK(params_equal(a.params, b.params));
    REQUIRE(a.step_losses.size() == b.step_losses.size());
    for (std::size_t i = 0; i < a.step_losses.size(); ++i) {
        CHECK(a.step_losses[i].total == b.step_losses[i].total);
    }
    CHECK(store_snapshot(store1) == store_snapshot(store2));
    CHECK(a.dev_f1_history == b.dev_f1_history);
    CHECK(a.oracle_f1_history == b.oracle_f1_history);

    // All four loss parts appear in the trace for the full mode.
    bool cont_seen = false, reg_seen = false;
    for (const LossReport& r : a.step_losses) {
        cont_seen = cont_seen || r.l_cont != 0.0;
        reg_seen = reg_seen || r.l_reg != 0.0;
    }
    CHECK(cont_seen);
    CHECK(reg_seen);
}

TEST_CASE("vanilla training never touches the pseudo labels") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::Vanilla;
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    const std::vector<double> before = store_snapshot(store);

    StudentResult res =
        train_student(cfg, data.src_train, data.tgt_train, store, data.src_dev);
    CHECK(store_snapshot(store) == before);
    CHECK(res.bank.num_classes() == 0); // no prototype machinery ran
    for (const LossReport& r : res.step_losses) {
        CHECK(r.l_cont == 0.0);
        CHECK(r.l_reg == 0.0);
        CHECK(r.total == r.l_src + r.l_tgt);
    }
}

TEST_CASE("vanilla and no_proto_no_cl walk the same trajectory") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::Vanilla;
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore s1 =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    PseudoLabelStore s2 = s1;

    StudentResult vanilla =
        train_student(cfg, data.src_train, data.tgt_train, s1, data.src_dev);
    cfg.mode = TrainMode::NoProtoNoCl;
    StudentResult ablated =
        train_student(cfg, data.src_train, data.tgt_train, s2, data.src_dev);
    CHECK(params_equal(vanilla.params, ablated.params));
    REQUIRE(vanilla.step_losses.size() == ablated.step_losses.size());
    for (std::size_t i = 0; i < vanilla.step_losses.size(); ++i) {
        CHECK(vanilla.step_losses[i].total == ablated.step_losses[i].total);
    }
}

TEST_CASE("the first epoch never refines the store") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::ContProto;
    cfg.epochs = 1;
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    const std::vector<double> before = store_snapshot(store);
    train_student(cfg, data.src_train, data.tgt_train, store, data.src_dev);
    CHECK(store_snapshot(store) == before);
}

TEST_CASE("later epochs do refine the store") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::ContProto;
    cfg.epochs = 3;
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    const std::vector<double> before = store_snapshot(store);
    StudentResult res =
        train_student(cfg, data.src_train, data.tgt_train, store, data.src_dev);
    CHECK(store_snapshot(store) != before);
    CHECK(res.bank.complete());
    // Margins exist for at least one entity class after finalizing.
    bool any_margin = false;
    for (std::size_t c = 1; c < res.bank.num_classes(); ++c) {
        any_margin = any_margin || res.margins.has_margin(c);
    }
    CHECK(any_margin);
}

TEST_CASE("prototype space stays the projection head in every mode") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);

    cfg.mode = TrainMode::ProtoNoCl;
    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    StudentResult res =
        train_student(cfg, data.src_train, data.tgt_train, store, data.src_dev);
    CHECK(res.bank.dim() == cfg.enc.d_proj);
    for (const LossReport& r : res.step_losses) {
        CHECK(r.l_cont == 0.0);
        CHECK(r.l_reg == 0.0);
    }

    cfg.mode = TrainMode::FixedMargin;
    cfg.fixed_margin_r = 0.9;
    PseudoLabelStore store2 =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    StudentResult fixed =
        train_student(cfg, data.src_train, data.tgt_train, store2, data.src_dev);
    CHECK(fixed.bank.dim() == cfg.enc.d_proj);
    CHECK(fixed.margins.is_fixed());
    CHECK(fixed.margins.margin(1) == 0.9);
}

TEST_CASE("warm start begins from the teacher weights") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::Vanilla;
    cfg.epochs = 1;
    cfg.lr = 1e-12; // vanishing updates: the student stays near its start
    TeacherResult teacher = train_teacher(cfg, data.src_train, data.src_dev);
    PseudoLabelStore store =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);

    cfg.warm_start_student = true;
    StudentResult res = train_student(cfg, data.src_train, data.tgt_train, store,
                                      data.src_dev, nullptr, {}, &teacher.params);
    // With lr ~ 0 the best params still differ from the teacher only by
    // negligible steps.
    const auto ta = res.params.all();
    const auto tb = teacher.params.all();
    for (std::size_t i = 0; i < ta.size(); ++i) {
        for (std::size_t j = 0; j < ta[i]->size(); ++j) {
            CHECK(ta[i]->data()[j] == doctest::Approx(tb[i]->data()[j]).epsilon(1e-6));
        }
    }

    PseudoLabelStore store2 =
        assign_initial_pseudo_labels(cfg.enc, teacher.params, data.tgt_train);
    CHECK_THROWS_AS(train_student(cfg, data.src_train, data.tgt_train, store2,
                                  data.src_dev, nullptr, {}, nullptr),
                    std::runtime_error);
}

TEST_CASE("metrics writer emits one json record per event") {
    const std::string path = "trainer_test_metrics.jsonl";
    {
        MetricsWriter w(path, "unit");
        LossReport rep;
        rep.l_src = 0.5;
        rep.l_tgt = 0.25;
        rep.total = 0.75;
        w.step(0, 3, rep);
        rep.l_cont = 0.1;
        rep.total = 0.85;
        w.step(1, 0, rep);
        w.epoch(0, 0.5, std::nullopt, {});
        w.epoch(1, 0.75, 0.5, {0.4, std::nan("")});
    }
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0].find("\"kind\":\"step\"") != std::string::npos);
    CHECK(lines[0].find("\"l_cont\"") == std::string::npos); // inactive term omitted
    CHECK(lines[1].find("\"l_cont\":0.1") != std::string::npos);
    CHECK(lines[2].find("\"kind\":\"epoch\"") != std::string::npos);
    CHECK(lines[2].find("\"oracle_f1\"") == std::string::npos);
    CHECK(lines[3].find("\"margins\":[0.4,null]") != std::string::npos);
    CHECK(lines[3].find("\"run_id\":\"unit\"") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("data bundles round trip through a directory") {
    DataBundle data = tiny_data();
    const std::string dir = "trainer_test_bundle";
    save_data_bundle(dir, data);
    DataBundle back = load_data_bundle(dir);
    CHECK(back.vocab_size == data.vocab_size);
    CHECK(back.labels.names() == data.labels.names());
    REQUIRE(back.src_train.size() == data.src_train.size());
    REQUIRE(back.tgt_test.size() == data.tgt_test.size());
    for (std::size_t i = 0; i < data.src_train.size(); ++i) {
        CHECK(back.src_train[i].tokens == data.src_train[i].tokens);
        CHECK(back.src_train[i].gold == data.src_train[i].gold);
    }
    for (std::size_t i = 0; i < data.tgt_train.size(); ++i) {
        CHECK(back.tgt_train[i].hidden_gold == data.tgt_train[i].hidden_gold);
    }
    fs::remove_all(dir);
}

TEST_CASE("output root resolution honors the environment override") {
    unsetenv("CONTPROTO_OUT_ROOT");
    CHECK(resolve_out_dir("runs/a") == "runs/a");
    CHECK(resolve_out_dir("") == "");
    setenv("CONTPROTO_OUT_ROOT", "/tmp/contproto_root", 1);
    CHECK(resolve_out_dir("runs/a") == "/tmp/contproto_root/runs/a");
    CHECK(resolve_out_dir("/abs/path") == "/abs/path");
    CHECK(resolve_out_dir("") == "");
    unsetenv("CONTPROTO_OUT_ROOT");
}

TEST_CASE("pipeline reruns are byte-identical and artifacts are complete") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::ContProto;
    cfg.epochs = 2;

    const std::string dir1 = "trainer_test_run1";
    const std::string dir2 = "trainer_test_run2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    PipelineResult r1 = run_pipeline(cfg, data, dir1);
    PipelineResult r2 = run_pipeline(cfg, data, dir2);

    for (const char* name :
         {"config.txt", "metrics.jsonl", "report.json", "teacher.ckpt", "student.ckpt",
          "store_initial.jsonl", "store_epoch0.jsonl", "store_epoch1.jsonl",
          "bank.jsonl"}) {
        INFO(name);
        REQUIRE(fs::exists(fs::path(dir1) / name));
        CHECK(read_file((fs::path(dir1) / name).string()) ==
              read_file((fs::path(dir2) / name).string()));
    }
    CHECK(r1.final_target_f1 == r2.final_target_f1);
    CHECK(r1.initial_oracle_f1 == r2.initial_oracle_f1);
    CHECK(r1.final_oracle_f1 == r2.final_oracle_f1);
    CHECK(r1.initial_oracle_f1 >= 0.0);
    CHECK(r1.final_target_f1 >= 0.0);

    // The in-memory result mirrors the report file.
    const std::string report = read_file((fs::path(dir1) / "report.json").string());
    CHECK(report.find("\"mode\": \"contproto\"") != std::string::npos);
    CHECK(report.find("final_target_f1") != std::string::npos);

    // Epoch snapshots freeze during warm-up and change afterwards.
    CHECK(read_file((fs::path(dir1) / "store_initial.jsonl").string()) ==
          read_file((fs::path(dir1) / "store_epoch0.jsonl").string()));
    CHECK(read_file((fs::path(dir1) / "store_epoch0.jsonl").string()) !=
          read_file((fs::path(dir1) / "store_epoch1.jsonl").string()));

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("pipeline without an output directory writes nothing") {
    DataBundle data = tiny_data();
    TrainConfig cfg = tiny_train(data);
    cfg.mode = TrainMode::Vanilla;
    PipelineResult res = run_pipeline(cfg, data, "");
    CHECK(res.teacher.dev_f1_history.size() == cfg.teacher_epochs);
    CHECK(res.student.dev_f1_history.size() == cfg.epochs);
    CHECK(res.final_target_f1 >= 0.0);
}
