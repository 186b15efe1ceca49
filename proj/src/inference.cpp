#include "convqa/inference.hpp"

#include <fstream>
#include <map>

#include "json.hpp"

namespace convqa {

HistorySource history_source_from_string(const std::string& s) {
    if (s == "gold") return HistorySource::gold;
    if (s == "predicted") return HistorySource::predicted;
    throw InferenceError("unknown history source: " + s);
}

std::string to_string(HistorySource source) {
    return source == HistorySource::gold ? "gold" : "predicted";
}

void PredictConfig::validate() const {
    if (max_answer_len < 1) throw InferenceError("max_answer_len must be >= 1");
    if (n_best < 1) throw InferenceError("n_best must be >= 1");
}

SpanPrediction best_span(const std::vector<ScoredWindow>& windows, const PredictConfig& config,
                         const Utf8Text& passage_text) {
    config.validate();
    if (windows.empty()) throw InferenceError("best_span called without windows");

    bool found = false;
    double best_score = 0.0;
    size_t best_window = 0;
    int best_start = 0, best_end = 0;

    for (size_t w = 0; w < windows.size(); ++w) {
        const EncodedWindow& win = *windows[w].window;
        const SpanLogits& logits = windows[w].logits;
        const int first = win.passage_begin;
        const int last = win.passage_begin + win.passage_len - 1;  // final [SEP] excluded
        for (int s = first; s <= last; ++s) {
            const int max_e = std::min(last, s + config.max_answer_len - 1);
            for (int e = s; e <= max_e; ++e) {
                const double score =
                    static_cast<double>(logits.start(s)) + static_cast<double>(logits.end(e));
                if (!found || score > best_score) {
                    found = true;
                    best_score = score;
                    best_window = w;
                    best_start = s;
                    best_end = e;
                }
            }
        }
    }
    if (!found)
        throw InferenceError("no valid answer span in any window (empty passage slices?)");

    const EncodedWindow& win = *windows[best_window].window;
    SpanPrediction pred;
    pred.dialog_id = win.dialog_id;
    pred.turn_index = win.turn_index;
    pred.window_id = win.window_index;
    pred.score = best_score;
    const CharSpan s_span = win.char_spans[static_cast<size_t>(best_start - win.passage_begin)];
    const CharSpan e_span = win.char_spans[static_cast<size_t>(best_end - win.passage_begin)];
    pred.char_start = s_span.first;
    pred.char_end = e_span.second;
    pred.text = cp_slice(passage_text, static_cast<size_t>(pred.char_start),
                         static_cast<size_t>(pred.char_end));
    return pred;
}

std::vector<SpanPrediction> predict_dialog(const Dialog& dialog, const ModelParams& params,
                                           const ModelConfig& model_config, const Vocab& vocab,
                                           const FeaturizerConfig& featurizer_config,
                                           const SelectorConfig& selector_config,
                                           const PredictConfig& predict_config) {
    predict_config.validate();
    const Utf8Text passage_text = decode_utf8(dialog.passage.text);

    std::vector<SpanPrediction> predictions;
    std::map<int, AnswerSpan> predicted_answers;
    for (int k = 1; k <= static_cast<int>(dialog.turns.size()); ++k) {
        AnswerSource source;  // default: gold answers from the dialog
        if (predict_config.history_source == HistorySource::predicted)
            source = [&](int turn_index) { return predicted_answers.at(turn_index); };
        const ConvQAInstance instance =
            build_instance(dialog, k, selector_config, {}, source);

        const std::vector<EncodedWindow> windows = encode(instance, vocab, featurizer_config);
        std::vector<ScoredWindow> scored;
        scored.reserve(windows.size());
        for (const EncodedWindow& w : windows)
            scored.push_back({&w, window_logits(w, params, model_config)});
        try {
            predictions.push_back(best_span(scored, predict_config, passage_text));
        } catch (const InferenceError& e) {
            throw InferenceError("dialog '" + dialog.dialog_id + "' turn " + std::to_string(k) +
                                 ": " + e.what());
        }
        const SpanPrediction& p = predictions.back();
        predicted_answers[k] = {p.char_start, p.char_end, p.text};
    }
    return predictions;
}

std::vector<SpanPrediction> predict_dataset(const std::vector<Dialog>& dialogs,
                                            const ModelParams& params,
                                            const ModelConfig& model_config, const Vocab& vocab,
                                            const FeaturizerConfig& featurizer_config,
                                            const SelectorConfig& selector_config,
                                            const PredictConfig& predict_config) {
    std::vector<SpanPrediction> all;
    for (const Dialog& dialog : dialogs) {
        auto preds = predict_dialog(dialog, params, model_config, vocab, featurizer_config,
                                    selector_config, predict_config);
        all.insert(all.end(), preds.begin(), preds.end());
    }
    return all;
}

void write_predictions_jsonl(const std::string& path, const std::vector<SpanPrediction>& preds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InferenceError("cannot write predictions: " + path);
    for (const SpanPrediction& p : preds) {
        nlohmann::json j{{"dialog_id", p.dialog_id}, {"turn_index", p.turn_index},
                         {"answer_text", p.text},    {"char_start", p.char_start},
                         {"char_end", p.char_end},   {"score", p.score}};
        out << j.dump() << "\n";
    }
}

std::vector<SpanPrediction> read_predictions_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InferenceError("cannot open predictions: " + path);
    std::vector<SpanPrediction> preds;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            SpanPrediction p;
            p.dialog_id = j.at("dialog_id");
            p.turn_index = j.at("turn_index");
            p.text = j.at("answer_text");
            p.char_start = j.at("char_start");
            p.char_end = j.at("char_end");
            p.score = j.value("score", 0.0);
            preds.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw InferenceError("bad prediction at line " + std::to_string(line_no) + ": " +
                                 e.what());
        }
    }
    return preds;
}

}  // namespace convqa
