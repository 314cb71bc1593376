// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "thinner/dataset.hpp"
#include "thinner/errors.hpp"
#include "thinner/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace thinner;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("thinner_harness_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_run() {
    RunConfig c;
    c.name = "tiny";
    c.seed = 3;
    c.model.n_layers = 3;
    c.model.d = 16;
    c.model.heads = 2;
    c.model.ff_mult = 2;
    c.model.max_seq = 16;
    c.model.combo_tokens = 2;
    c.model.preservation = 0.8;
    c.model.placement = 2;
    c.model.vocab_size = 100;
    c.data.train_size = 60;
    c.data.test_size = 20;
    c.data.seq_len = 12;
    c.train.epochs = 1;
    c.train.batch_size = 8;
    c.train.lr = 1e-3;
    return c;
}

std::size_t count_word(const std::string& text, const std::string& word) {
    std::istringstream is(text);
    std::string w;
    std::size_t n = 0;
    while (is >> w) n += w == word;
    return n;
}

std::vector<std::size_t> positions_of(const std::string& text, const std::string& word) {
    std::istringstream is(text);
    std::string w;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; is >> w; ++i) {
        if (w == word) out.push_back(i);
    }
    return out;
}

} // namespace

TEST_CASE("csv ingestion") {
    const Dataset d = ingest_text("text,label,split\n\"hello, world\",pos,train\nbye,neg,test\n", InputFormat::csv);
    REQUIRE(d.examples.size() == 2);
    CHECK(d.label_names == std::vector<std::string>{"neg", "pos"});
    CHECK(d.examples[0].text == "hello, world");
    CHECK(d.examples[0].label == 1);
    CHECK(d.examples[1].split == Split::test);

    const Dataset multi = ingest_text("label,text\n0,\"line one\nline \"\"two\"\"\"\n1,x\n", InputFormat::csv);
    CHECK(multi.examples[0].text == "line one\nline \"two\"");
    CHECK(multi.examples[1].label == 1);

    SUBCASE("errors carry the line number") {
        auto message = [](const std::string& content) {
            try {
                ingest_text(content, InputFormat::csv);
            } catch (const DataError& e) {
                return std::string(e.what());
            }
            return std::string("no error");
        };
        CHECK(message("text,label\na,0\nb\n").find("line 3") != std::string::npos);
        CHECK(message("text\na\n").find("line 1") != std::string::npos);
        CHECK(message("text,label\na,0\nb,-1\n").find("line 3") != std::string::npos);
        CHECK(message("text,label\n\"open,0\n").find("line 2") != std::string::npos);
        CHECK(message("text,label,split\na,0,holdout\n").find("line 2") != std::string::npos);
    }
}

TEST_CASE("jsonl ingestion with a label mapping") {
    IngestOptions opt;
    opt.mapping = LabelMapping{{"neg", 0}, {"pos", 1}, {"mixed", 2}};
    const Dataset d = ingest_text(
        "{\"text\": \"good\", \"label\": \"pos\", \"split\": \"train\"}\n\n"
        "{\"text\": \"bad\", \"label\": \"neg\", \"split\": \"validation\"}\n",
        InputFormat::jsonl, opt);
    REQUIRE(d.examples.size() == 2);
    CHECK(d.class_count() == 3);
    CHECK(d.label_names[2] == "mixed");
    CHECK(d.examples[0].label == 1);
    CHECK(d.examples[1].split == Split::val);

    CHECK_THROWS_AS(ingest_text("{\"text\": \"x\", \"label\": \"meh\"}\n", InputFormat::jsonl, opt), MappingError);
    try {
        ingest_text("{\"text\": \"x\", \"label\": 0}\n{\"text\": 5, \"label\": 0}\n", InputFormat::jsonl);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(ingest_text("{not json}\n", InputFormat::jsonl), DataError);
}

TEST_CASE("label mapping files") {
    TempDir dir;
    const fs::path good = dir.path / "map.json";
    std::ofstream(good) << "{\"a\": 0, \"b\": 1}";
    CHECK(load_mapping(good) == LabelMapping{{"a", 0}, {"b", 1}});
    const fs::path bad = dir.path / "bad.json";
    std::ofstream(bad) << "{\"a\": \"zero\"}";
    CHECK_THROWS_AS(load_mapping(bad), MappingError);
}

TEST_CASE("seeded train/validation split") {
    std::string csv = "text,label\n";
    for (int i = 0; i < 50; ++i) csv += "row" + std::to_string(i) + "," + std::to_string(i % 2) + "\n";
    IngestOptions opt;
    opt.seed = 9;
    const Dataset a = ingest_text(csv, InputFormat::csv, opt);
    const Dataset b = ingest_text(csv, InputFormat::csv, opt);
    CHECK(a.count(Split::val) == 10);
    CHECK(a.count(Split::train) == 40);
    for (std::size_t i = 0; i < a.examples.size(); ++i) CHECK(a.examples[i].split == b.examples[i].split);
    opt.seed = 10;
    const Dataset c = ingest_text(csv, InputFormat::csv, opt);
    bool differs = false;
    for (std::size_t i = 0; i < a.examples.size(); ++i) differs |= a.examples[i].split != c.examples[i].split;
    CHECK(differs);
}

TEST_CASE("tokenizer") {
    CHECK(segment("Hello, World!  ok") == std::vector<std::string>{"hello", ",", "world", "!", "ok"});
    std::vector<TextExample> ex = {{"b a a c", 0, Split::train}, {"c b a", 1, Split::train}};
    const Vocabulary v = Vocabulary::build(ex, 4);
    // a:3, b:2, c:2 -> keep a, then b over c alphabetically.
    CHECK(v.words() == std::vector<std::string>{"[pad]", "[unk]", "a", "b"});
    CHECK(v.id("a") == 2);
    CHECK(v.id("zzz") == kUnkId);
    CHECK(tokenize("A b c a", v, 10) == std::vector<TokenId>{2, 3, 1, 2});
    CHECK(tokenize("a b c a", v, 2) == std::vector<TokenId>{2, 3});
    const auto enc = encode({{"", 1, Split::train}}, v, 8);
    CHECK(enc[0].ids == std::vector<TokenId>{kUnkId});
    CHECK(enc[0].label == 1);
}

TEST_CASE("synthetic tasks") {
    SynthOptions opt;
    opt.size = 1000;
    opt.seq_len = 24;
    opt.seed = 5;

    SUBCASE("labels are balanced and the generator is deterministic") {
        const Dataset a = synth_task(opt);
        const Dataset b = synth_task(opt);
        std::size_t ones = 0;
        for (std::size_t i = 0; i < a.examples.size(); ++i) {
            ones += a.examples[i].label;
            CHECK(a.examples[i].text == b.examples[i].text);
        }
        CHECK(ones >= 499);
        CHECK(ones <= 501);
    }
    SUBCASE("a positive fraction of one gives only positives") {
        opt.positive_fraction = 1.0;
        for (const auto& e : synth_task(opt).examples) CHECK(e.label == 1);
    }
    SUBCASE("keyword flag labels follow keyword presence") {
        for (const auto& e : synth_task(opt).examples) {
            const std::size_t kws = count_word(e.text, "kw0") + count_word(e.text, "kw1") +
                                    count_word(e.text, "kw2") + count_word(e.text, "kw3");
            CHECK((kws > 0) == (e.label == 1));
        }
    }
    SUBCASE("majority labels follow the marker majority") {
        opt.kind = SynthKind::majority_class;
        for (const auto& e : synth_task(opt).examples) {
            const std::size_t a = count_word(e.text, "ma"), b = count_word(e.text, "mb");
            CHECK((a + b) % 2 == 1);
            CHECK((b > a) == (e.label == 1));
        }
    }
    SUBCASE("pair labels follow the gap") {
        opt.kind = SynthKind::positional_pair;
        for (const auto& e : synth_task(opt).examples) {
            const auto pa = positions_of(e.text, "pa"), pb = positions_of(e.text, "pb");
            REQUIRE(pa.size() == 1);
            REQUIRE(pb.size() == 1);
            const std::size_t gap = pa[0] > pb[0] ? pa[0] - pb[0] : pb[0] - pa[0];
            CHECK((gap <= opt.window) == (e.label == 1));
        }
    }
    CHECK_THROWS_AS(parse_synth_kind("sentiment"), ParameterError);
}

TEST_CASE("run config json") {
    TempDir dir;
    const fs::path file = dir.path / "run.json";
    std::ofstream(file) << "{ // comment\n \"seed\": 4, \"model\": {\"d\": 32, \"heads\": 4},\n"
                           " \"data\": {\"source\": \"file\", \"path\": \"d.csv\"} }";
    const RunConfig c = load_run_config(file);
    CHECK(c.seed == 4);
    CHECK(c.model.d == 32);
    CHECK(c.model.n_layers == ModelConfig{}.n_layers);
    CHECK(fs::path(c.data.path) == dir.path / "d.csv");

    const fs::path unknown = dir.path / "bad.json";
    std::ofstream(unknown) << "{\"model\": {\"depth\": 3}}";
    CHECK_THROWS_AS(load_run_config(unknown), ParameterError);

    nlohmann::json j = tiny_run();
    const RunConfig back = j.get<RunConfig>();
    CHECK(nlohmann::json(back) == j);
}

TEST_CASE("training runs") {
    SUBCASE("zero epochs keeps the initial weights") {
        RunConfig c = tiny_run();
        c.train.epochs = 0;
        const RunArtifacts a = run(c);
        CHECK(a.report.epochs.empty());
        CHECK(a.report.best_epoch == 0);
        CHECK(a.report.train_examples == 48);
        CHECK(a.report.val_examples == 12);
        CHECK(a.report.test_examples == 20);
        REQUIRE(a.model);
    }
    SUBCASE("a rerun with the same seed reproduces the outcome and artifacts") {
        TempDir dir;
        const RunArtifacts a = run(tiny_run(), dir.path / "a");
        const RunArtifacts b = run(tiny_run(), dir.path / "b");
        CHECK(same_outcome(a.report, b.report));
        CHECK(a.report.epochs.size() == 1);
        CHECK(a.report.variant == "ours-PFC");
        CHECK(fs::exists(dir.path / "a" / "report.json"));
        CHECK(fs::exists(dir.path / "a" / "vocab.txt"));
        const Model loaded = load_checkpoint(dir.path / "a" / "checkpoint.bin");
        CHECK(loaded.parameter_count() == a.model->parameter_count());

        std::ifstream is(dir.path / "a" / "report.json");
        const RunReport parsed = report_from_json(nlohmann::json::parse(is));
        CHECK(same_outcome(parsed, a.report));
        CHECK_THROWS_AS(report_from_json(nlohmann::json{{"variant", 3}}), FormatError);

        RunConfig other = tiny_run();
        other.seed = 4;
        CHECK_FALSE(same_outcome(a.report, run(other).report));
    }
    SUBCASE("token trace ends on the combination tokens") {
        const RunArtifacts a = run(tiny_run());
        REQUIRE(a.report.token_trace.size() == 3);
        CHECK(a.report.token_trace[1].kind == "combiner");
        CHECK(a.report.token_trace[2].mean_total_keys == 2.0);
        CHECK(a.report.token_trace[0].mean_total_keys > a.report.token_trace[1].mean_total_keys);
    }
}

TEST_CASE("sweeps") {
    RunConfig base = tiny_run();
    base.train.epochs = 0;

    SUBCASE("axis parsing") {
        CHECK(parse_axis("placement") == SweepAxis::placement);
        CHECK(axis_name(SweepAxis::m) == "m");
        CHECK_THROWS_AS(parse_axis("depth"), ParameterError);
        CHECK_THROWS_AS(with_axis(base, SweepAxis::m, 2.5), ParameterError);
        CHECK(with_axis(base, SweepAxis::p, 0.5).model.preservation == 0.5);
    }
    SUBCASE("lower preservation costs less") {
        const auto r = sweep(base, SweepAxis::p, {0.9, 0.7, 0.5}, std::nullopt, 2);
        REQUIRE(r.size() == 3);
        for (const auto& x : r) REQUIRE(x.ok);
        CHECK(r[1].cost->total_flops < r[0].cost->total_flops);
        CHECK(r[2].cost->total_flops < r[1].cost->total_flops);
    }
    SUBCASE("the last layer attends over exactly m tokens") {
        const auto r = sweep(base, SweepAxis::m, {1, 3, 4}, std::nullopt, 2);
        for (const auto& x : r) {
            REQUIRE(x.ok);
            CHECK(x.report->token_trace.back().mean_total_keys == x.value);
        }
    }
    SUBCASE("a failing value is recorded and the rest still run") {
        TempDir dir;
        const auto r = sweep(base, SweepAxis::placement, {2, 9}, dir.path, 2);
        REQUIRE(r.size() == 2);
        CHECK(r[0].ok);
        CHECK_FALSE(r[1].ok);
        CHECK_FALSE(r[1].error.empty());
        CHECK(fs::exists(dir.path / "summary.csv"));
        const std::string csv = summary_csv(SweepAxis::placement, r);
        CHECK(csv.find("failed") != std::string::npos);
    }
}

TEST_CASE("summary header") {
    const std::vector<std::string> expected = {
        "axis", "value", "status", "error", "variant", "best_epoch", "best_val_loss", "test_loss",
        "test_accuracy", "test_macro_f1", "test_micro_f1", "final_total_keys", "total_macs", "total_flops",
        "ratio_vs_dense", "dense_over_this", "peak_activation_bytes", "memory_ratio_vs_dense"};
    CHECK(summary_header() == expected);
    const std::string csv = summary_csv(SweepAxis::p, {});
    CHECK(csv.substr(0, csv.find('\n')) ==
          "axis,value,status,error,variant,best_epoch,best_val_loss,test_loss,test_accuracy,test_macro_f1,"
          "test_micro_f1,final_total_keys,total_macs,total_flops,ratio_vs_dense,dense_over_this,"
          "peak_activation_bytes,memory_ratio_vs_dense");
}
