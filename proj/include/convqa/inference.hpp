#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convqa/model.hpp"
#include "convqa/text.hpp"

namespace convqa {

class InferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A scored answer span recovered back to passage text.
struct SpanPrediction {
    std::string dialog_id;
    int turn_index = 0;
    std::string text;
    int64_t char_start = 0;
    int64_t char_end = 0;
    double score = 0.0;  // start_logit + end_logit
    int window_id = 0;
};

enum class HistorySource { gold, predicted };

HistorySource history_source_from_string(const std::string& s);
std::string to_string(HistorySource source);

struct PredictConfig {
    int max_answer_len = 30;  // tokens
    int n_best = 20;
    HistorySource history_source = HistorySource::gold;

    void validate() const;
};

struct ScoredWindow {
    const EncodedWindow* window = nullptr;
    SpanLogits logits;
};

/// Best valid span across windows: maximize start+end logit subject to
/// start <= end, length <= max_answer_len, both positions inside the passage
/// segment. Invalid pairs are discarded; ties break toward the earlier
/// window, then smaller start, then smaller end.
SpanPrediction best_span(const std::vector<ScoredWindow>& windows, const PredictConfig& config,
                         const Utf8Text& passage_text);

/// Answer every turn of a dialog in order. With predicted history, turn k's
/// history answers come from this function's own earlier outputs.
std::vector<SpanPrediction> predict_dialog(const Dialog& dialog, const ModelParams& params,
                                           const ModelConfig& model_config, const Vocab& vocab,
                                           const FeaturizerConfig& featurizer_config,
                                           const SelectorConfig& selector_config,
                                           const PredictConfig& predict_config);

std::vector<SpanPrediction> predict_dataset(const std::vector<Dialog>& dialogs,
                                            const ModelParams& params,
                                            const ModelConfig& model_config, const Vocab& vocab,
                                            const FeaturizerConfig& featurizer_config,
                                            const SelectorConfig& selector_config,
                                            const PredictConfig& predict_config);

void write_predictions_jsonl(const std::string& path, const std::vector<SpanPrediction>& preds);
std::vector<SpanPrediction> read_predictions_jsonl(const std::string& path);

}  // namespace convqa
