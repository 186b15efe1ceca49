#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "convqa/featurizer.hpp"
#include "convqa/inference.hpp"
#include "convqa/metrics.hpp"
#include "convqa/synthdata.hpp"
#include "convqa/trainer.hpp"

namespace convqa {

struct TrainOptions {
    std::string data_path;
    std::string vocab_path;
    std::string out_dir;
    LoadOptions load;

    ModelConfig model;          // vocab_size filled from the vocab file
    TrainConfig train;
    FeaturizerConfig featurizer;
    SelectorConfig selector;

    std::string dump_windows_path;  // optional debug dump
};

struct PredictOptions {
    std::string checkpoint_path;
    std::string data_path;
    std::string vocab_path;
    std::string out_path;
    LoadOptions load;
    PredictConfig predict;
    std::optional<int> override_j;  // overrides the checkpoint's selector depth
};

struct EvaluateOptions {
    std::string predictions_path;
    std::string dataset_path;
    std::string out_path;  // empty: stdout
    LoadOptions load;
    ScoreOptions score;
};

struct SweepOptions {
    std::string data_path;
    std::string dev_data_path;
    std::string vocab_path;
    std::string out_csv;
    LoadOptions load;

    ModelConfig model;
    TrainConfig train;
    FeaturizerConfig featurizer;  // history_mode ignored; modes come from `modes`
    PredictConfig predict;

    std::vector<std::string> modes{"none", "hae", "phqa", "pha"};
    std::vector<int> j_values{0, 1, 2, 4, 8, 11};
    std::vector<uint64_t> seeds{0};
    int workers = 1;
};

struct SynthOptions {
    SynthConfig synth;
    std::string out_path;
    std::string vocab_out_path;  // optional
};

struct SweepCell {
    std::string mode;
    int j = 0;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    EvalReport report;
};

/// Train/evaluate one model per (mode, j, seed) cell; mode "none" ignores j.
/// Cells run on `workers` threads; failures are recorded and do not stop the
/// remaining cells.
std::vector<SweepCell> run_sweep(const SweepOptions& options);

int cmd_train(const TrainOptions& options);
int cmd_predict(const PredictOptions& options);
int cmd_evaluate(const EvaluateOptions& options);
int cmd_sweep(const SweepOptions& options);
int cmd_synth(const SynthOptions& options);

}  // namespace convqa
