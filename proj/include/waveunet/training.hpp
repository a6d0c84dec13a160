#pragma once

// Excerpt sampling with augmentation, Adam, and the two-stage schedule: train at
// the base learning rate until validation MSE stalls for `patience` epochs, then
// fine-tune from the last state with the batch size doubled and the lower rate,
// again until patience runs out. The checkpoint with the lowest validation MSE
// seen across both stages wins. Everything is a pure function of (seed, data,
// config): batch composition, augmentation draws and parameter updates replay
// bit-identically.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "waveunet/checkpoint.hpp"
#include "waveunet/dataset.hpp"
#include "waveunet/model.hpp"
#include "waveunet/separate.hpp"

namespace waveunet {

/// Scales every source by an independent uniform draw from [0.7, 1.0] and
/// re-derives the mixture as the sum, so the additivity the difference layer
/// relies on survives augmentation. No clipping is applied.
inline TrackPair augment(const TrackPair& pair, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(0.7f, 1.0f);
    TrackPair out;
    out.name = pair.name;
    out.sources.reserve(pair.sources.size());
    for (const auto& source : pair.sources) {
        const float factor = dist(rng);
        AudioClip scaled = source;
        for (auto& ch : scaled.channels)
            for (auto& v : ch) v *= factor;
        out.sources.push_back(std::move(scaled));
    }
    out.mixture = derive_mixture(out.sources);
    return out;
}

/// One training example: a mixture input window and aligned source targets,
/// both laid out (frame, channel) row-major to match the tensor layout.
struct Excerpt {
    std::vector<float> mixture;              // input_samples * channels
    std::vector<std::vector<float>> targets; // num_sources x (output_samples * channels)
};

/// Uniformly random output-window position over the valid starts. The context
/// margin on each side is filled from the real track where available and with
/// zeros where the window extends past the track boundaries; tracks shorter
/// than the output window are placed at the window start and zero-padded.
inline Excerpt sample_excerpt(const TrackPair& pair, const ModelConfig& config,
                              std::mt19937_64& rng) {
    const std::int64_t len = pair.mixture.length();
    const int C = config.num_channels;
    std::int64_t start = 0;
    if (len > config.output_samples) {
        std::uniform_int_distribution<std::int64_t> dist(0, len - config.output_samples);
        start = dist(rng);
    }

    Excerpt ex;
    ex.mixture.resize(config.input_samples * C);
    for (int c = 0; c < C; ++c)
        copy_window(pair.mixture.channels[c], start - config.context_margin(),
                    config.input_samples, ex.mixture.data() + c, C);
    ex.targets.resize(pair.sources.size());
    for (std::size_t k = 0; k < pair.sources.size(); ++k) {
        ex.targets[k].resize(config.output_samples * C);
        for (int c = 0; c < C; ++c)
            copy_window(pair.sources[k].channels[c], start, config.output_samples,
                        ex.targets[k].data() + c, C);
    }
    return ex;
}

struct AdamState {
    std::vector<std::vector<float>> m, v; // parallel to the parameter entries
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline AdamState init_adam(const ParameterSet<float>& params) {
    AdamState state;
    for (const auto& [name, tensor] : params.entries) {
        state.m.emplace_back(tensor->data.size(), 0.0f);
        state.v.emplace_back(tensor->data.size(), 0.0f);
    }
    return state;
}

/// Standard Adam update with bias correction, reading gradients left on the
/// parameter tensors by backward(). A non-finite gradient aborts with the
/// offending parameter named.
inline void adam_step(ParameterSet<float>& params, AdamState& state, double lr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
        auto& [name, tensor] = params.entries[p];
        if (tensor->grad.size() != tensor->data.size())
            throw UsageError("adam_step: parameter '" + name + "' has no gradient");
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = tensor->grad[i];
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter '" + name + "' at index " +
                                   std::to_string(i));
            m[i] = static_cast<float>(state.beta1 * m[i] + (1.0 - state.beta1) * g);
            v[i] = static_cast<float>(state.beta2 * v[i] + (1.0 - state.beta2) * g * g);
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            tensor->data[i] -=
                static_cast<float>(lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
        }
    }
}

/// Mean one-source MSE over K sources of one forward pass; the recorded node
/// feeds backward().
inline TensorPtr<float> batch_loss(const std::vector<TensorPtr<float>>& outputs,
                                   const std::vector<TensorPtr<float>>& targets) {
    TensorPtr<float> total;
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        auto term = mse_loss(outputs[k], targets[k]);
        total = total ? add(total, term) : term;
    }
    return scale(total, 1.0f / static_cast<float>(outputs.size()));
}

/// Mean MSE over a deterministic covering of each track by consecutive output
/// windows, the last window aligned to the track end.
inline double validation_loss(const ParameterSet<float>& params, const ModelConfig& config,
                              const std::vector<TrackPair>& val_set) {
    if (val_set.empty()) throw UsageError("validation_loss: empty validation set");
    const int C = config.num_channels;
    const int K = config.num_sources;
    double acc = 0.0;
    std::int64_t windows = 0;
    for (const auto& pair : val_set) {
        for (const WindowPlan& w : plan_windows(pair.mixture.length(), config.output_samples)) {
            auto input = Tensor<float>::zeros(Shape{1, config.input_samples, C});
            for (int c = 0; c < C; ++c)
                copy_window(pair.mixture.channels[c], w.output_start - config.context_margin(),
                            config.input_samples, input->data.data() + c, C);
            const auto outputs = forward(params, config, input);
            double window_acc = 0.0;
            for (int k = 0; k < K; ++k) {
                auto target = Tensor<float>::zeros(Shape{1, config.output_samples, C});
                for (int c = 0; c < C; ++c)
                    copy_window(pair.sources[k].channels[c], w.output_start,
                                config.output_samples, target->data.data() + c, C);
                window_acc += mse_loss(detach(outputs[k]), target)->data[0];
            }
            acc += window_acc / K;
            windows += 1;
        }
    }
    return acc / static_cast<double>(windows);
}

struct TrainHyper {
    double lr = 1e-4;
    double lr_finetune = 1e-5;
    int batch = 16;
    int patience = 20;
    int iterations_per_epoch = 2000;
    std::uint64_t seed = 0;
    bool resume_adam_moments = true; // reset the moments at the fine-tune handover when false
    int max_epochs_per_stage = 0;    // extra desk-scale cap; 0 = patience only
};

struct EpochLog {
    int epoch = 0;
    int stage = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct TrainResult {
    Checkpoint best;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<EpochLog> log;
};

namespace detail {

inline Checkpoint snapshot(const ModelConfig& config, const ParameterSet<float>& params,
                           const AdamState& adam, const nlohmann::json& extra) {
    Checkpoint ckpt;
    ckpt.model = config;
    ckpt.extra = extra;
    ckpt.arrays = arrays_from_params(params);
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
        const auto& [name, tensor] = params.entries[p];
        NamedArray m{"adam.m." + name, {static_cast<std::uint32_t>(adam.m[p].size())}, adam.m[p]};
        NamedArray v{"adam.v." + name, {static_cast<std::uint32_t>(adam.v[p].size())}, adam.v[p]};
        ckpt.arrays.push_back(std::move(m));
        ckpt.arrays.push_back(std::move(v));
    }
    return ckpt;
}

inline void restore_adam(const Checkpoint& ckpt, const ParameterSet<float>& params,
                         AdamState& adam) {
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
        const auto& name = params.entries[p].first;
        for (const auto& arr : ckpt.arrays) {
            if (arr.name == "adam.m." + name) adam.m[p] = arr.values;
            if (arr.name == "adam.v." + name) adam.v[p] = arr.values;
        }
    }
}

} // namespace detail

/// Runs both stages and returns the best checkpoint. When `out_dir` is set,
/// writes `last.ckpt` (full state, resumable), `best.ckpt` and `training_log.csv`
/// there. `resume` restarts from a last.ckpt written by a previous run.
inline TrainResult train(const std::vector<TrackPair>& train_set,
                         const std::vector<TrackPair>& val_set, const ModelConfig& config,
                         const TrainHyper& hyper, const std::string& out_dir = "",
                         const std::function<void(const EpochLog&)>& on_epoch = nullptr,
                         const Checkpoint* resume = nullptr) {
    if (train_set.empty() || val_set.empty())
        throw UsageError("train: training and validation sets must be non-empty");
    validate_config(config);

    ParameterSet<float> params =
        resume ? params_from_checkpoint(*resume, true) : build<float>(config, hyper.seed, true);
    AdamState adam = init_adam(params);
    std::mt19937_64 rng(hyper.seed);

    int epoch = 0;
    int stage = 0;
    int since_improvement = 0;
    int epochs_this_stage = 0;
    TrainResult result;

    if (resume) {
        const auto& extra = resume->extra;
        adam.step = extra.value("adam_step", std::int64_t(0));
        detail::restore_adam(*resume, params, adam);
        epoch = extra.value("epoch", 0);
        stage = extra.value("stage", 0);
        since_improvement = extra.value("since_improvement", 0);
        epochs_this_stage = extra.value("epochs_this_stage", 0);
        result.best_val_loss =
            extra.value("best_val_loss", std::numeric_limits<double>::infinity());
        if (extra.contains("rng_state")) {
            std::istringstream in(extra["rng_state"].get<std::string>());
            in >> rng;
        }
        if (!out_dir.empty() &&
            std::filesystem::is_regular_file(std::filesystem::path(out_dir) / "best.ckpt"))
            result.best =
                load_checkpoint((std::filesystem::path(out_dir) / "best.ckpt").string());
    }

    std::ofstream csv;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto csv_path = std::filesystem::path(out_dir) / "training_log.csv";
        const bool fresh = !resume || !std::filesystem::is_regular_file(csv_path);
        csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (fresh) csv << "epoch,stage,train_mse,val_mse\n";
    }

    std::uniform_int_distribution<std::size_t> track_dist(0, train_set.size() - 1);
    const int C = config.num_channels;
    const int K = config.num_sources;

    for (; stage < 2; ++stage, since_improvement = 0, epochs_this_stage = 0) {
        const double lr = stage == 0 ? hyper.lr : hyper.lr_finetune;
        const int batch = stage == 0 ? hyper.batch : hyper.batch * 2;
        if (stage == 1 && !hyper.resume_adam_moments && epochs_this_stage == 0) {
            adam = init_adam(params);
        }
        while (true) {
            double train_acc = 0.0;
            for (int it = 0; it < hyper.iterations_per_epoch; ++it) {
                auto mixture = Tensor<float>::zeros(Shape{batch, config.input_samples, C});
                std::vector<TensorPtr<float>> targets(K);
                for (int k = 0; k < K; ++k)
                    targets[k] = Tensor<float>::zeros(Shape{batch, config.output_samples, C});
                for (int b = 0; b < batch; ++b) {
                    const TrackPair scaled = augment(train_set[track_dist(rng)], rng);
                    const Excerpt ex = sample_excerpt(scaled, config, rng);
                    std::copy(ex.mixture.begin(), ex.mixture.end(),
                              mixture->data.begin() + b * config.input_samples * C);
                    for (int k = 0; k < K; ++k)
                        std::copy(ex.targets[k].begin(), ex.targets[k].end(),
                                  targets[k]->data.begin() + b * config.output_samples * C);
                }
                const auto outputs = forward(params, config, mixture);
                const auto loss = batch_loss(outputs, targets);
                backward(loss);
                adam_step(params, adam, lr);
                train_acc += loss->data[0];
            }

            const double val = validation_loss(params, config, val_set);
            epoch += 1;
            epochs_this_stage += 1;
            EpochLog row{epoch, stage, train_acc / hyper.iterations_per_epoch, val};
            result.log.push_back(row);
            if (csv.is_open()) {
                csv << row.epoch << ',' << row.stage << ',' << row.train_mse << ',' << row.val_mse
                    << '\n';
                csv.flush();
            }
            if (on_epoch) on_epoch(row);
            if (!std::isfinite(val))
                throw NumericError("validation loss became non-finite at epoch " +
                                   std::to_string(epoch) + "; last good checkpoint retained");

            const bool improved = val < result.best_val_loss;
            if (improved) {
                result.best_val_loss = val;
                since_improvement = 0;
                result.best = detail::snapshot(config, params, adam,
                                               {{"epoch", epoch},
                                                {"stage", stage},
                                                {"val_mse", val}});
                if (!out_dir.empty())
                    save_checkpoint(result.best,
                                    (std::filesystem::path(out_dir) / "best.ckpt").string());
            } else {
                since_improvement += 1;
            }

            if (!out_dir.empty()) {
                std::ostringstream rng_state;
                rng_state << rng;
                const auto last = detail::snapshot(config, params, adam,
                                                   {{"epoch", epoch},
                                                    {"stage", stage},
                                                    {"since_improvement", since_improvement},
                                                    {"epochs_this_stage", epochs_this_stage},
                                                    {"best_val_loss", result.best_val_loss},
                                                    {"adam_step", adam.step},
                                                    {"rng_state", rng_state.str()}});
                save_checkpoint(last, (std::filesystem::path(out_dir) / "last.ckpt").string());
            }

            if (since_improvement >= hyper.patience) break;
            if (hyper.max_epochs_per_stage > 0 && epochs_this_stage >= hyper.max_epochs_per_stage)
                break;
        }
    }
    return result;
}

} // namespace waveunet
