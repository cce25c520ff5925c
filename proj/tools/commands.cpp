#include "commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <ostream>

#include "exprfuse/checkpoint.hpp"
#include "exprfuse/errors.hpp"
#include "exprfuse/io.hpp"
#include "run_config.hpp"

namespace exprfuse::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonFlags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::vector<std::string> overrides;
};

void add_common(CLI::App& cmd, CommonFlags& flags) {
    cmd.add_option("--config", flags.config, "key=value run configuration file");
    cmd.add_option("--seed", flags.seed, "random seed (overrides train.seed, or fixture.seed for make-fixture)");
    cmd.add_option("--out-dir", flags.out_dir, "artifact directory (overrides output.dir)");
    cmd.add_option("--override", flags.overrides, "key=value, applied after the config file; repeatable")
        ->allow_extra_args(false);
}

RunConfig resolve(const CLI::App& cmd, const CommonFlags& flags, bool seed_is_fixture = false) {
    std::vector<std::string> overrides = flags.overrides;
    if (cmd.count("--seed") > 0) {
        overrides.push_back((seed_is_fixture ? "fixture.seed=" : "train.seed=") + std::to_string(flags.seed));
    }
    if (cmd.count("--out-dir") > 0) overrides.push_back("output.dir=" + flags.out_dir);
    std::optional<fs::path> file;
    if (!flags.config.empty()) file = flags.config;
    return load_run_config(file, overrides);
}

std::string jsonl_line(const EpochRecord& e) {
    ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["train_macro_f1"] = e.train_macro_f1;
    j["val_loss"] = e.val_loss;
    j["val_macro_f1"] = e.val_macro_f1;
    j["lr"] = e.lr;
    return j.dump();
}

ordered_json metrics_json(const EvalResult& ev) {
    ordered_json j;
    j["format"] = "exprfuse-metrics";
    j["version"] = 1;
    j["macro_f1"] = ev.scores.macro;
    j["frames"] = ev.confusion.total();
    j["loss"] = ev.loss;
    ordered_json classes = ordered_json::array();
    for (int c = 0; c < kLabelCount; ++c) {
        const auto& s = ev.scores.per_class[c];
        classes.push_back({{"code", c},
                           {"name", kLabelNames[c]},
                           {"precision", s.precision},
                           {"recall", s.recall},
                           {"f1", s.f1},
                           {"support", s.support}});
    }
    j["classes"] = classes;
    j["confusion"] = ev.confusion.counts;
    return j;
}

void print_scores(std::ostream& out, const EvalResult& ev) {
    char line[160];
    for (int c = 0; c < kLabelCount; ++c) {
        const auto& s = ev.scores.per_class[c];
        std::snprintf(line, sizeof(line), "  %-10s  precision %.4f  recall %.4f  f1 %.4f  support %llu\n",
                      std::string(kLabelNames[c]).c_str(), s.precision, s.recall, s.f1,
                      static_cast<unsigned long long>(s.support));
        out << line;
    }
    std::snprintf(line, sizeof(line), "macro-F1 %.6f over %llu frames\n", ev.scores.macro,
                  static_cast<unsigned long long>(ev.confusion.total()));
    out << line;
}

std::string curve_tsv(const LrFinderResult& r) {
    std::string text = "lr\tloss\tsmoothed_loss\n";
    for (const auto& p : r.curve) text += format_double(p.lr) + "\t" + format_double(p.loss) + "\t" + format_double(p.smoothed) + "\n";
    return text;
}

Dataset load_split(const std::string& manifest, std::size_t feature_dim) {
    if (manifest.empty()) throw ConfigError("no manifest given (set data.train_manifest)");
    return load_dataset(load_manifest(manifest, feature_dim), feature_dim);
}

FusionModel fresh_model(const RunConfig& cfg) {
    Rng init = Rng(cfg.train.seed).fork(1);
    return FusionModel(cfg.model, init);
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const std::size_t dim = cfg.model.feature_dim();
    const Dataset train = load_split(cfg.train_manifest, dim);
    const Dataset val = cfg.val_manifest.empty() ? train : load_split(cfg.val_manifest, dim);
    FusionModel model = fresh_model(cfg);
    out << "train: " << train.videos.size() << " videos, " << train.frame_count() << " frames; val: "
        << val.videos.size() << " videos, " << val.frame_count() << " frames; " << model.parameter_count()
        << " parameters\n";

    std::string history;
    FitResult result = fit(model, train, val, cfg.train, [&](const EpochRecord& e) {
        history += jsonl_line(e) + "\n";
        char line[200];
        std::snprintf(line, sizeof(line), "epoch %zu/%zu  train_loss %.6f  val_loss %.6f  val_macro_f1 %.6f  lr %.3g\n",
                      e.epoch, cfg.train.epochs, e.train_loss, e.val_loss, e.val_macro_f1, e.lr);
        out << line << std::flush;
    });
    if (result.lr_search) out << "lr finder suggested " << format_double(result.lr_search->suggested_lr) << "\n";

    const ParameterList params = model.parameters();
    restore(params, result.best_parameters);
    const EvalResult ev = evaluate(model, val, window_sequences(val), resolve_loss(cfg.train, train), cfg.train.batch_size);
    ordered_json metrics = metrics_json(ev);
    metrics["best_epoch"] = result.best_epoch;
    metrics["epochs_run"] = result.history.size();
    metrics["learning_rate"] = result.learning_rate;

    // Everything is computed before the first artifact is written.
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_file_atomic(dir / "resolved.cfg", serialize_run_config(cfg));
    write_file_atomic(dir / "history.jsonl", history);
    if (result.lr_search) write_file_atomic(dir / "lr_curve.tsv", curve_tsv(*result.lr_search));
    save_checkpoint(dir / "model.ckpt", model);
    write_file_atomic(dir / "metrics.json", metrics.dump(2) + "\n");

    out << "best epoch " << result.best_epoch << "\n";
    print_scores(out, ev);
    return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint, std::string manifest, std::ostream& out) {
    if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
    FusionModel model = load_checkpoint(checkpoint);
    if (manifest.empty()) manifest = cfg.val_manifest.empty() ? cfg.train_manifest : cfg.val_manifest;
    const Dataset data = load_split(manifest, model.config().feature_dim());
    const EvalResult ev = evaluate(model, data, window_sequences(data), cfg.train.loss, cfg.train.batch_size);
    ordered_json metrics = metrics_json(ev);
    metrics["checkpoint"] = checkpoint;
    metrics["manifest"] = manifest;
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_file_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
    print_scores(out, ev);
    return kExitOk;
}

int cmd_lr_find(const RunConfig& cfg, std::string manifest, std::ostream& out) {
    if (manifest.empty()) manifest = cfg.train_manifest;
    const Dataset train = load_split(manifest, cfg.model.feature_dim());
    FusionModel model = fresh_model(cfg);
    Rng finder = Rng(cfg.train.seed).fork(4);
    const LrFinderResult r = lr_range_test(model, train, window_sequences(train), cfg.train, finder);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_file_atomic(dir / "resolved.cfg", serialize_run_config(cfg));
    write_file_atomic(dir / "lr_curve.tsv", curve_tsv(r));
    out << "lr finder: " << r.curve.size() << " steps" << (r.diverged ? " (stopped at divergence)" : "") << "\n";
    out << "suggested lr " << format_double(r.suggested_lr) << "\n";
    return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& features, std::string output,
                std::ostream& out) {
    if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (features.empty()) throw ConfigError("--features is required");
    FusionModel model = load_checkpoint(checkpoint);
    FeatureMatrix m = read_feature_file(features);
    const std::size_t dim = model.config().feature_dim();
    if (m.cols != dim) {
        throw InputError(features + ": feature width " + std::to_string(m.cols) + " != " + std::to_string(dim));
    }
    if (m.rows == 0) throw InputError(features + ": no frames");
    Dataset data;
    data.feature_dim = dim;
    data.videos.push_back({fs::path(features).stem().string(), m.rows, std::move(m.values),
                           std::vector<int>(m.rows, kIgnoreLabel)});
    const EvalResult ev = evaluate(model, data, window_sequences(data), cfg.train.loss, cfg.train.batch_size);
    std::string text;
    for (int p : ev.predictions[0]) text += std::to_string(p) + "\n";
    if (output.empty()) output = (fs::path(cfg.out_dir) / "predictions.txt").string();
    if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
    write_file_atomic(output, text);
    out << "wrote " << ev.predictions[0].size() << " predictions to " << output << "\n";
    return kExitOk;
}

int cmd_make_fixture(const RunConfig& cfg, std::ostream& out) {
    const fs::path dir = cfg.out_dir;
    FixtureSpec spec = cfg.fixture;
    const fs::path train = write_dataset(synthesize_fixture(spec, 0), dir / "train", "train");
    out << "wrote " << train.string() << "\n";
    if (cfg.fixture_val_videos > 0) {
        spec.videos = cfg.fixture_val_videos;
        const fs::path val = write_dataset(synthesize_fixture(spec, 1), dir / "val", "val");
        out << "wrote " << val.string() << "\n";
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Expression recognition from per-frame features with attention and encoder fusion"};
    app.name("exprfuse");
    app.require_subcommand(1);

    CommonFlags train_flags, eval_flags, lr_flags, predict_flags, fixture_flags;
    std::string eval_checkpoint, eval_manifest, lr_manifest, predict_checkpoint, predict_features, predict_output;

    auto* train = app.add_subcommand("train", "train a model and write checkpoint, history and metrics");
    add_common(*train, train_flags);
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score a checkpoint on a manifest");
    add_common(*evaluate_cmd, eval_flags);
    evaluate_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file");
    evaluate_cmd->add_option("--manifest", eval_manifest, "manifest to score (default: data.val_manifest)");
    auto* lr_find = app.add_subcommand("lr-find", "run the learning-rate range test");
    add_common(*lr_find, lr_flags);
    lr_find->add_option("--manifest", lr_manifest, "training manifest (default: data.train_manifest)");
    auto* predict = app.add_subcommand("predict", "label every frame of a feature file");
    add_common(*predict, predict_flags);
    predict->add_option("--checkpoint", predict_checkpoint, "checkpoint file");
    predict->add_option("--features", predict_features, "feature file");
    predict->add_option("--output", predict_output, "label file to write (default: <out-dir>/predictions.txt)");
    auto* fixture = app.add_subcommand("make-fixture", "write a synthetic train/val dataset");
    add_common(*fixture, fixture_flags);

    std::vector<const char*> argv{"exprfuse"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (train->parsed()) return cmd_train(resolve(*train, train_flags), out);
        if (evaluate_cmd->parsed()) return cmd_evaluate(resolve(*evaluate_cmd, eval_flags), eval_checkpoint, eval_manifest, out);
        if (lr_find->parsed()) return cmd_lr_find(resolve(*lr_find, lr_flags), lr_manifest, out);
        if (predict->parsed()) {
            return cmd_predict(resolve(*predict, predict_flags), predict_checkpoint, predict_features, predict_output, out);
        }
        if (fixture->parsed()) return cmd_make_fixture(resolve(*fixture, fixture_flags, true), out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace exprfuse::cli
