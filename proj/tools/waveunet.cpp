// Command-line front end: training, separation, evaluation and the size
// calculus / shape trace tools. Exit codes: 0 success, 2 usage or config
// error, 3 data error, 4 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "waveunet/checkpoint.hpp"
#include "waveunet/config.hpp"
#include "waveunet/dataset.hpp"
#include "waveunet/evaluation.hpp"
#include "waveunet/model.hpp"
#include "waveunet/separate.hpp"
#include "waveunet/sizes.hpp"
#include "waveunet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace waveunet;

namespace {

std::string resolve_preset(const std::string& name) {
    if (fs::is_regular_file(name)) return name;
    std::vector<fs::path> candidates;
    if (const char* env = std::getenv("WAVEUNET_PRESETS"))
        candidates.emplace_back(fs::path(env) / (name + ".json"));
    candidates.emplace_back(fs::path("presets") / (name + ".json"));
    for (const auto& p : candidates)
        if (fs::is_regular_file(p)) return p.string();
    throw UsageError("preset '" + name + "' not found (looked for a file, $WAVEUNET_PRESETS/" +
                     name + ".json and presets/" + name + ".json)");
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

ModelConfig model_from_json(const json& j) {
    return (j.contains("model") ? j.at("model") : j).get<ModelConfig>();
}

struct TrainConfig {
    ModelConfig model;
    TrainHyper hyper;
    std::string dataset_dir;
    double val_fraction = 0.25;
};

TrainConfig parse_train_config(const json& j) {
    TrainConfig cfg;
    cfg.model = j.at("model").get<ModelConfig>();
    cfg.hyper.lr = j.value("lr", 1e-4);
    cfg.hyper.lr_finetune = j.value("lr_finetune", 1e-5);
    cfg.hyper.batch = j.value("batch", 16);
    cfg.hyper.patience = j.value("patience", 20);
    cfg.hyper.iterations_per_epoch = j.value("iterations_per_epoch", 2000);
    cfg.hyper.seed = j.value("seed", std::uint64_t(0));
    cfg.hyper.resume_adam_moments = j.value("resume_adam_moments", true);
    cfg.hyper.max_epochs_per_stage = j.value("max_epochs_per_stage", 0);
    cfg.dataset_dir = j.at("dataset_dir").get<std::string>();
    cfg.val_fraction = j.value("val_fraction", 0.25);
    if (cfg.hyper.batch < 1 || cfg.hyper.iterations_per_epoch < 1 || cfg.hyper.patience < 0)
        throw ConfigError("batch and iterations_per_epoch must be >= 1, patience >= 0");
    return cfg;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, bool resume) {
    const TrainConfig cfg = parse_train_config(load_json(config_path));
    validate_config(cfg.model);

    const auto index = index_dataset(cfg.dataset_dir, source_names_of(cfg.model));
    if (index.tracks.empty()) throw DataError("dataset '" + cfg.dataset_dir + "' has no tracks");
    const auto [train_entries, val_entries] =
        split_dataset(index, cfg.val_fraction, cfg.hyper.seed);
    if (train_entries.empty() || val_entries.empty())
        throw DataError("dataset split left an empty partition (tracks: " +
                        std::to_string(index.tracks.size()) + ")");

    auto load_all = [&](const std::vector<TrackEntry>& entries) {
        std::vector<TrackPair> pairs;
        for (const auto& e : entries) pairs.push_back(load_track_pair(e, cfg.model));
        return pairs;
    };
    const auto train_pairs = load_all(train_entries);
    const auto val_pairs = load_all(val_entries);
    std::cerr << "training on " << train_pairs.size() << " tracks, validating on "
              << val_pairs.size() << "\n";

    Checkpoint resume_ckpt;
    const Checkpoint* resume_from = nullptr;
    if (resume) {
        const auto last = fs::path(out_dir) / "last.ckpt";
        if (!fs::is_regular_file(last))
            throw DataError("--resume: no checkpoint at " + last.string());
        resume_ckpt = load_checkpoint(last.string());
        resume_from = &resume_ckpt;
        std::cerr << "resuming from " << last.string() << "\n";
    }

    const auto result = train(
        train_pairs, val_pairs, cfg.model, cfg.hyper, out_dir,
        [](const EpochLog& row) {
            std::cerr << "epoch " << row.epoch << " stage " << row.stage << " train_mse "
                      << row.train_mse << " val_mse " << row.val_mse << "\n";
        },
        resume_from);
    save_checkpoint(result.best, (fs::path(out_dir) / "best.ckpt").string());
    std::cerr << "best validation mse " << result.best_val_loss << "\n";
    return 0;
}

int cmd_separate(const std::string& checkpoint_path, const std::string& input_path,
                 const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto params = params_from_checkpoint(ckpt);
    const ModelConfig& config = ckpt.model;

    AudioClip clip = read_wav(input_path);
    if (config.num_channels == 1)
        clip = to_mono(clip);
    else if (clip.channel_count() != config.num_channels)
        throw UsageError("input has " + std::to_string(clip.channel_count()) +
                         " channels but the model expects " +
                         std::to_string(config.num_channels));
    clip = resample(clip, config.sample_rate);

    const auto sources = separate_track(params, config, clip);
    const auto names = source_names_of(config);
    fs::create_directories(out_dir);
    json manifest;
    manifest["checkpoint"] = checkpoint_path;
    manifest["input"] = input_path;
    manifest["sample_rate"] = config.sample_rate;
    manifest["outputs"] = json::array();
    for (std::size_t k = 0; k < sources.size(); ++k) {
        const auto path = fs::path(out_dir) / (names[k] + ".wav");
        write_wav(sources[k], path.string(), WavFormat::pcm16);
        manifest["outputs"].push_back(path.string());
        std::cerr << "wrote " << path.string() << "\n";
    }
    std::ofstream(fs::path(out_dir) / "separate.json") << manifest.dump(2) << "\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& dataset_dir,
                 const std::string& out_dir, double segment_seconds, const std::string& mode_name) {
    SdrMode mode;
    if (mode_name == "plain")
        mode = SdrMode::plain;
    else if (mode_name == "projected")
        mode = SdrMode::projected;
    else
        throw UsageError("--mode must be plain or projected");

    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto params = params_from_checkpoint(ckpt);
    const auto index = index_dataset(dataset_dir, source_names_of(ckpt.model));
    if (index.tracks.empty()) throw UsageError("dataset '" + dataset_dir + "' has no tracks");

    EvalReport report =
        evaluate_dataset(params, ckpt.model, index, segment_seconds, mode, &std::cerr);
    report.checkpoint_hash = file_hash_hex(checkpoint_path);

    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "report.json") << report_to_json(report).dump(2) << "\n";
    write_scores_csv(report, (fs::path(out_dir) / "scores.csv").string());

    std::printf("%-16s %8s %8s %8s %8s\n", "source", "Med.", "MAD", "Mean", "SD");
    for (const auto& sr : report.per_source) {
        auto cell = [](std::optional<double> v) {
            char buf[32];
            if (v)
                std::snprintf(buf, sizeof buf, "%8.2f", *v);
            else
                std::snprintf(buf, sizeof buf, "%8s", "-");
            return std::string(buf);
        };
        std::printf("%-16s %8.2f %8.2f %s %s\n", sr.source.c_str(), sr.stats.median_db,
                    sr.stats.mad_db, cell(sr.stats.mean_db).c_str(), cell(sr.stats.sd_db).c_str());
    }
    if (report.n_failed_tracks > 0) {
        std::cerr << report.n_failed_tracks << " track(s) failed and were skipped\n";
        return 3;
    }
    return 0;
}

int cmd_sizes(ModelConfig config, std::int64_t desired) {
    const auto [lm, ls] = compute_valid_sizes(config, desired);
    std::printf("%lld %lld\n", static_cast<long long>(lm), static_cast<long long>(ls));
    return 0;
}

int cmd_trace(const ModelConfig& config) {
    validate_config(config);
    for (const auto& row : shape_trace(config))
        std::printf("%-18s (%lld, %lld)\n", row.block.c_str(),
                    static_cast<long long>(row.frames), static_cast<long long>(row.channels));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-domain audio source separation engine"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "Train a model from a JSON config");
    std::string train_config, train_out;
    bool train_resume = false;
    train->add_option("--config", train_config, "training config JSON")->required();
    train->add_option("--out", train_out, "output directory for checkpoints and logs")->required();
    train->add_flag("--resume", train_resume, "continue from <out>/last.ckpt");

    auto* separate = app.add_subcommand("separate", "Separate a mixture WAV into source stems");
    std::string sep_ckpt, sep_input, sep_out;
    separate->add_option("--checkpoint", sep_ckpt, "model checkpoint")->required();
    separate->add_option("--input", sep_input, "mixture WAV file")->required();
    separate->add_option("--out", sep_out, "output directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Score a model on a stem dataset");
    std::string eval_ckpt, eval_dataset, eval_out = ".", eval_mode = "plain";
    double eval_seconds = 1.0;
    evaluate->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    evaluate->add_option("--dataset", eval_dataset, "dataset directory")->required();
    evaluate->add_option("--out", eval_out, "directory for report.json and scores.csv");
    evaluate->add_option("--segment-seconds", eval_seconds, "segment length in seconds");
    evaluate->add_option("--mode", eval_mode, "plain or projected");

    auto* sizes = app.add_subcommand("sizes", "Smallest feasible window sizes");
    int sz_levels = 12, sz_fd = 15, sz_fu = 5;
    std::int64_t sz_out = 16384;
    std::string sz_preset;
    bool sz_no_context = false;
    sizes->add_option("--levels", sz_levels, "number of levels");
    sizes->add_option("--fd", sz_fd, "downsampling filter size");
    sizes->add_option("--fu", sz_fu, "upsampling filter size");
    sizes->add_option("--out", sz_out, "desired output samples")->required();
    sizes->add_option("--preset", sz_preset, "take the model geometry from a preset");
    sizes->add_flag("--no-context", sz_no_context, "size the zero-padded variant instead");

    auto* trace = app.add_subcommand("trace", "Block-by-block shape table");
    std::string tr_preset, tr_config;
    trace->add_option("--preset", tr_preset, "preset name or path");
    trace->add_option("--config", tr_config, "model or training config JSON");

    try {
        app.parse(argc, argv);

        if (*train) return cmd_train(train_config, train_out, train_resume);
        if (*separate) return cmd_separate(sep_ckpt, sep_input, sep_out);
        if (*evaluate)
            return cmd_evaluate(eval_ckpt, eval_dataset, eval_out, eval_seconds, eval_mode);
        if (*sizes) {
            ModelConfig config;
            if (!sz_preset.empty()) {
                config = model_from_json(load_json(resolve_preset(sz_preset)));
            } else {
                config.levels = sz_levels;
                config.down_filter_size = sz_fd;
                config.up_filter_size = sz_fu;
                config.context = !sz_no_context;
            }
            return cmd_sizes(config, sz_out);
        }
        if (*trace) {
            if (tr_preset.empty() == tr_config.empty())
                throw UsageError("trace: give exactly one of --preset or --config");
            const std::string path = tr_config.empty() ? resolve_preset(tr_preset) : tr_config;
            return cmd_trace(model_from_json(load_json(path)));
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SizeError& e) {
        std::cerr << "size error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DecodeError& e) {
        std::cerr << "decode error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
