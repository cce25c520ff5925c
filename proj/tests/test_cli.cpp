#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "exprfuse/checkpoint.hpp"
#include "exprfuse/data.hpp"
#include "exprfuse/errors.hpp"
#include "exprfuse/training.hpp"
#include "exprfuse/io.hpp"
#include "json.hpp"
#include "run_config.hpp"
#include "support/scratch_dir.hpp"

using namespace exprfuse;
using namespace exprfuse::cli;
using exprfuse::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

// Narrow model and fixture so whole commands run in well under a second.
const std::vector<std::string> kSmall{
    "backbone.feature_dim=6", "attention.model_dim=6", "attention.head_dim=3", "encoder.model_dim=6",
    "encoder.head_dim=3",     "encoder.ff_dim=8",      "fixture.feature_dim=6", "fixture.videos=3",
    "fixture.val_videos=2",   "fixture.frames_per_video=90", "train.epochs=3", "train.batch_size=2",
    "lr_finder.num_steps=12"};

std::vector<std::string> with_small(std::vector<std::string> args) {
    for (const auto& o : kSmall) {
        args.push_back("--override");
        args.push_back(o);
    }
    return args;
}

fs::path make_fixture(const std::string& name) {
    const auto dir = scratch_dir(name);
    const auto r = run(with_small({"make-fixture", "--out-dir", dir.string(), "--seed", "4"}));
    REQUIRE(r.code == 0);
    return dir;
}

std::vector<std::string> train_args(const fs::path& fx, const fs::path& out, const std::string& seed = "7") {
    return with_small({"train", "--seed", seed, "--out-dir", out.string(), "--override",
                       "data.train_manifest=" + (fx / "train" / "manifest.tsv").string(), "--override",
                       "data.val_manifest=" + (fx / "val" / "manifest.tsv").string()});
}

std::string slurp(const fs::path& p) { return read_file_text(p); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run config defaults, overrides and unknown keys") {
    const RunConfig defaults = load_run_config(std::nullopt, {});
    CHECK(defaults.train.batch_size == 16);
    CHECK(defaults.train.epochs == 30);
    CHECK(defaults.model.attention.num_heads == 2);
    CHECK(defaults.model.encoder.ff_dim == 512);

    const auto kv = run_config_keys(defaults);
    RunConfig rebuilt;
    for (const auto& [k, v] : kv) apply_run_key(rebuilt, k, v);
    CHECK(serialize_run_config(rebuilt) == serialize_run_config(defaults));

    const auto dir = scratch_dir("cli_config");
    write_file_atomic(dir / "a.cfg", std::string("# comment\ntrain.epochs = 5  # trailing\nadam.beta1=0.8\n"));
    const RunConfig cfg = load_run_config(dir / "a.cfg", {"train.epochs=7"});
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.train.adam.beta1 == 0.8);

    CHECK_THROWS_WITH_AS(load_run_config(std::nullopt, {"train.epoch=3"}), doctest::Contains("train.epoch"),
                         ConfigError);
    CHECK_THROWS_AS(load_run_config(std::nullopt, {"train.epochs"}), ConfigError);
    CHECK_THROWS_AS(load_run_config(std::nullopt, {"loss.class_weights=1,2"}), ConfigError);
    CHECK_THROWS_AS(load_run_config(std::nullopt, {"train.batch_size=0"}), ConfigError);
    write_file_atomic(dir / "dup.cfg", std::string("train.epochs=1\ntrain.epochs=2\n"));
    CHECK_THROWS_WITH_AS(load_run_config(dir / "dup.cfg", {}), doctest::Contains("dup.cfg:2"), ConfigError);
}

TEST_CASE("usage errors and help") {
    CHECK(run({}).code == kExitConfig);
    CHECK(run({"train", "--no-such-flag"}).code == kExitConfig);
    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("lr-find") != std::string::npos);
    const auto bad = run({"train", "--override", "nonsense.key=1"});
    CHECK(bad.code == kExitConfig);
    CHECK(bad.err.find("nonsense.key") != std::string::npos);
    CHECK(run({"train", "--config", "/nonexistent/run.cfg"}).code == kExitConfig);
}

TEST_CASE("make-fixture is reproducible") {
    const auto a = make_fixture("cli_fixture_a");
    const auto b = make_fixture("cli_fixture_b");
    const auto m = load_manifest(a / "train" / "manifest.tsv", 6);
    CHECK(m.entries.size() == 3);
    CHECK(load_manifest(a / "val" / "manifest.tsv", 6).entries.size() == 2);
    for (const auto& e : m.entries) {
        const auto rel = e.features_path.filename();
        CHECK(read_file_bytes(a / "train" / rel) == read_file_bytes(b / "train" / rel));
    }
}

TEST_CASE("train writes artifacts, is deterministic, and evaluate agrees") {
    const auto fx = make_fixture("cli_train_fx");
    const auto out1 = scratch_dir("cli_train_1");
    const auto out2 = scratch_dir("cli_train_2");
    const auto r1 = run(train_args(fx, out1));
    REQUIRE_MESSAGE(r1.code == 0, r1.err);
    REQUIRE(run(train_args(fx, out2)).code == 0);
    for (const std::string f : {"history.jsonl", "lr_curve.tsv", "model.ckpt", "metrics.json"}) {
        INFO(f);
        REQUIRE(fs::exists(out1 / f));
        CHECK(read_file_bytes(out1 / f) == read_file_bytes(out2 / f));
    }
    auto without_dir = [](std::string text) {
        std::istringstream in(text);
        std::string kept;
        for (std::string l; std::getline(in, l);)
            if (l.rfind("output.dir", 0) != 0) kept += l + "\n";
        return kept;
    };
    CHECK(without_dir(slurp(out1 / "resolved.cfg")) == without_dir(slurp(out2 / "resolved.cfg")));
    for (const auto& entry : fs::directory_iterator(out1)) CHECK(entry.path().extension() != ".tmp");

    std::istringstream lines(slurp(out1 / "history.jsonl"));
    std::string line;
    double best = -1.0;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        best = std::max(best, j.at("val_macro_f1").get<double>());
        CHECK(j.at("epoch").get<std::size_t>() == ++count);
    }
    CHECK(count == 3);

    const auto eval_dir = scratch_dir("cli_eval");
    const auto ev = run(with_small({"evaluate", "--checkpoint", (out1 / "model.ckpt").string(), "--manifest",
                                    (fx / "val" / "manifest.tsv").string(), "--out-dir", eval_dir.string()}));
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    const auto metrics = nlohmann::json::parse(slurp(eval_dir / "metrics.json"));
    CHECK(metrics.at("macro_f1").get<double>() == best);
    const auto train_metrics = nlohmann::json::parse(slurp(out1 / "metrics.json"));
    CHECK(train_metrics.at("macro_f1").get<double>() == best);

    // A different seed gives a different run.
    const auto out3 = scratch_dir("cli_train_3");
    REQUIRE(run(train_args(fx, out3, "8")).code == 0);
    CHECK(read_file_bytes(out1 / "model.ckpt") != read_file_bytes(out3 / "model.ckpt"));

    // The resolved snapshot alone reproduces the run.
    const auto out4 = scratch_dir("cli_train_4");
    REQUIRE(run({"train", "--config", (out1 / "resolved.cfg").string(), "--out-dir", out4.string()}).code == 0);
    CHECK(read_file_bytes(out1 / "history.jsonl") == read_file_bytes(out4 / "history.jsonl"));
    CHECK(read_file_bytes(out1 / "model.ckpt") == read_file_bytes(out4 / "model.ckpt"));
}

TEST_CASE("train failures map to exit codes and leave no artifacts") {
    const auto fx = make_fixture("cli_fail_fx");
    const auto out = scratch_dir("cli_fail") / "run";
    auto missing = with_small({"train", "--out-dir", out.string(), "--override", "data.train_manifest=/no/such/manifest.tsv"});
    const auto r = run(missing);
    CHECK(r.code == kExitData);
    CHECK(r.err.find("/no/such/manifest.tsv") != std::string::npos);

    auto args = train_args(fx, out);
    for (const char* o : {"train.auto_lr=false", "adam.learning_rate=1e200"}) {
        args.push_back("--override");
        args.push_back(o);
    }
    CHECK(run(args).code == kExitNumeric);
    CHECK_FALSE(fs::exists(out));

    auto wide = train_args(fx, out);
    wide.push_back("--override");
    wide.push_back("backbone.feature_dim=7");
    CHECK(run(wide).code == kExitConfig);  // model widths disagree
}

TEST_CASE("evaluate and predict") {
    const auto fx = make_fixture("cli_eval_fx");
    const auto out = scratch_dir("cli_eval_run");
    REQUIRE(run(train_args(fx, out)).code == 0);
    const auto ckpt = out / "model.ckpt";

    // Single-window manifest: the first 50 frames of one video.
    const auto one = scratch_dir("cli_one_window");
    const auto video = load_dataset(load_manifest(fx / "val" / "manifest.tsv", 6), 6).videos[0];
    Dataset single;
    single.feature_dim = 6;
    single.videos.push_back({"clip", 50, std::vector<double>(video.features.begin(), video.features.begin() + 300),
                             std::vector<int>(video.labels.begin(), video.labels.begin() + 50)});
    const auto manifest = write_dataset(single, one, "val");
    const auto ev = run(with_small({"evaluate", "--checkpoint", ckpt.string(), "--manifest", manifest.string(),
                                    "--out-dir", (one / "eval").string()}));
    REQUIRE(ev.code == 0);
    const auto metrics = nlohmann::json::parse(slurp(one / "eval" / "metrics.json"));
    std::uint64_t support = 0;
    for (const auto& c : metrics.at("classes")) support += c.at("support").get<std::uint64_t>();
    CHECK(support == 50);

    // predict: one line per frame, equal to the evaluation predictions.
    const auto pred_path = one / "pred.txt";
    const auto p = run(with_small({"predict", "--checkpoint", ckpt.string(), "--features",
                                   (one / "clip.feat").string(), "--output", pred_path.string()}));
    REQUIRE_MESSAGE(p.code == 0, p.err);
    std::vector<int> predicted;
    std::istringstream lines(slurp(pred_path));
    for (std::string line; std::getline(lines, line);) predicted.push_back(std::stoi(line));
    CHECK(predicted.size() == 50);
    FusionModel model = load_checkpoint(ckpt);
    const auto internal = evaluate(model, single, window_sequences(single), FocalLossConfig{}, 16);
    CHECK(predicted == internal.predictions[0]);

    // Width mismatch is an input error.
    write_feature_file(one / "wide.feat", {2, 7, std::vector<double>(14, 0.0)});
    CHECK(run({"predict", "--checkpoint", ckpt.string(), "--features", (one / "wide.feat").string(), "--output",
               (one / "x.txt").string()})
              .code == kExitData);

    // Checkpoint damage.
    auto bytes = read_file_bytes(ckpt);
    bytes[bytes.size() / 2] ^= 0x10;
    write_file_atomic(one / "bad.ckpt", bytes);
    const auto bad = run({"evaluate", "--checkpoint", (one / "bad.ckpt").string(), "--manifest", manifest.string(),
                          "--out-dir", (one / "eval2").string()});
    CHECK(bad.code == kExitCheckpoint);
    CHECK(run({"evaluate", "--checkpoint", (one / "none.ckpt").string(), "--manifest", manifest.string()}).code ==
          kExitCheckpoint);
}

TEST_CASE("lr-find writes a reproducible curve") {
    const auto fx = make_fixture("cli_lr_fx");
    const auto a = scratch_dir("cli_lr_a");
    const auto b = scratch_dir("cli_lr_b");
    auto args = [&](const fs::path& out) {
        return with_small({"lr-find", "--seed", "2", "--out-dir", out.string(), "--manifest",
                           (fx / "train" / "manifest.tsv").string()});
    };
    const auto r = run(args(a));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("suggested lr") != std::string::npos);
    REQUIRE(run(args(b)).code == 0);
    CHECK(read_file_bytes(a / "lr_curve.tsv") == read_file_bytes(b / "lr_curve.tsv"));
    CHECK_FALSE(fs::exists(a / "model.ckpt"));
    const std::string curve = slurp(a / "lr_curve.tsv");
    const auto rows = std::count(curve.begin(), curve.end(), '\n') - 1;
    CHECK(rows >= 1);
    CHECK(rows <= 12);
}

}  // TEST_SUITE
