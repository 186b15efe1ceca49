#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "convqa/history.hpp"
#include "convqa/model.hpp"

namespace convqa {

class TrainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // biases and layer norms are excluded
    double warmup_fraction = 0.1;
    int64_t total_steps = 0;
    int batch_size = 12;
    int64_t checkpoint_every = 1000;
    uint64_t seed = 0;
    double clip_norm = 1.0;  // <= 0 disables gradient clipping
    int n_threads = 1;
    bool log_timing = false;  // adds wall_ms to the metrics log (breaks byte determinism)

    void validate() const;
};

struct OptimizerState {
    ModelParams m, v;  // first/second moment estimates, shapes mirror the params
    int64_t step = 0;
};

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    ModelConfig model_config;
    TrainConfig train_config;
    FeaturizerConfig featurizer_config;
    SelectorConfig selector_config;
    ModelParams params;
    OptimizerState opt;
    int64_t step = 0;
    std::array<uint64_t, 4> rng_state{};
};

/// Linear warmup from 0 to lr over warmup_fraction*total_steps, then linear
/// decay to 0 at total_steps.
double lr_at(int64_t step, const TrainConfig& config);

void adamw_step(ModelParams& params, ModelParams& grads, OptimizerState& state, double lr_t,
                const TrainConfig& config);

/// Scale grads so their global norm is at most clip_norm; returns the norm.
double clip_gradients(ModelParams& grads, double clip_norm);

struct StepLog {
    int64_t step;
    double lr;
    double loss;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> logs;
    std::vector<std::string> checkpoint_paths;
};

/// Train on pre-featurized windows. When out_dir is non-empty, writes
/// ckpt-<step>.bin files and metrics.jsonl there. Resuming from a checkpoint
/// reproduces the exact loss trajectory of an uninterrupted run.
TrainResult train(const std::vector<EncodedWindow>& windows, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::string& out_dir,
                  const Checkpoint* resume = nullptr,
                  const FeaturizerConfig& featurizer_config = {},
                  const SelectorConfig& selector_config = {});

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace convqa
