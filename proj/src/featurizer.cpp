#include "convqa/featurizer.hpp"

#include <algorithm>
#include <fstream>

#include "convqa/rng.hpp"
#include "json.hpp"

namespace convqa {

HistoryMode history_mode_from_string(const std::string& s) {
    if (s == "none") return HistoryMode::none;
    if (s == "hae") return HistoryMode::hae;
    if (s == "phqa") return HistoryMode::phqa;
    if (s == "pha") return HistoryMode::pha;
    throw FeaturizerError("unknown history mode: " + s);
}

std::string to_string(HistoryMode mode) {
    switch (mode) {
        case HistoryMode::none: return "none";
        case HistoryMode::hae: return "hae";
        case HistoryMode::phqa: return "phqa";
        case HistoryMode::pha: return "pha";
    }
    return "?";
}

void FeaturizerConfig::validate() const {
    if (max_seq_len < 8) throw FeaturizerError("max_seq_len too small");
    if (max_question_len < 1) throw FeaturizerError("max_question_len must be >= 1");
    if (max_question_len + 3 >= max_seq_len)
        throw FeaturizerError("max_question_len + 3 must be < max_seq_len");
    if (doc_stride < 1) throw FeaturizerError("doc_stride must be >= 1");
    // Worst-case passage capacity is with the question at max length; the
    // stride must stay below it or sliding windows would skip tokens.
    if (doc_stride >= max_seq_len - max_question_len - 3)
        throw FeaturizerError("doc_stride must be < max_seq_len - max_question_len - 3");
}

std::vector<std::string> build_question_tokens(const ConvQAInstance& instance, const Vocab& vocab,
                                               const FeaturizerConfig& config) {
    std::vector<std::string> tokens;
    auto append_text = [&](const std::string& text) {
        TokenizedText t = tokenize(text, vocab);
        tokens.insert(tokens.end(), t.tokens.begin(), t.tokens.end());
    };

    switch (config.history_mode) {
        case HistoryMode::none:
        case HistoryMode::hae:
            break;  // history enters via embeddings (or not at all), never the question
        case HistoryMode::phqa:
            for (const HistoryTurn& h : instance.history) {
                append_text(h.question);
                append_text(h.answer.text);
            }
            break;
        case HistoryMode::pha:
            for (const HistoryTurn& h : instance.history) append_text(h.answer.text);
            break;
    }
    append_text(instance.question);

    // Keep the trailing tokens so the current question survives prepended history.
    if (static_cast<int>(tokens.size()) > config.max_question_len)
        tokens.erase(tokens.begin(),
                     tokens.end() - static_cast<ptrdiff_t>(config.max_question_len));
    return tokens;
}

namespace {

bool spans_overlap(const CharSpan& a, int64_t start, int64_t end) {
    return a.first < end && start < a.second;
}

}  // namespace

std::vector<EncodedWindow> encode(const ConvQAInstance& instance, const Vocab& vocab,
                                  const FeaturizerConfig& config) {
    config.validate();
    const TokenizedText passage = tokenize(instance.dialog->passage.text, vocab);
    const int n_passage = static_cast<int>(passage.size());
    if (n_passage == 0)
        throw FeaturizerError("passage of dialog '" + instance.dialog->dialog_id +
                              "' is empty after tokenization");

    const std::vector<std::string> question = build_question_tokens(instance, vocab, config);
    const int q_len = static_cast<int>(question.size());
    const int capacity = config.max_seq_len - q_len - 3;  // [CLS], two [SEP]

    // Gold token range over the full passage token list.
    int gold_tok_start = -1, gold_tok_end = -1;
    for (int t = 0; t < n_passage; ++t) {
        if (spans_overlap(passage.char_spans[static_cast<size_t>(t)], instance.gold.char_start,
                          instance.gold.char_end)) {
            if (gold_tok_start < 0) gold_tok_start = t;
            gold_tok_end = t;
        }
    }

    // Window starts at stride multiples until the final passage token is covered.
    std::vector<int> starts{0};
    while (starts.back() + capacity < n_passage) starts.push_back(starts.back() + config.doc_stride);

    std::vector<EncodedWindow> windows;
    windows.reserve(starts.size());
    for (size_t w = 0; w < starts.size(); ++w) {
        const int start = starts[w];
        const int take = std::min(capacity, n_passage - start);

        EncodedWindow win;
        win.dialog_id = instance.dialog->dialog_id;
        win.turn_index = instance.turn_index;
        win.window_index = static_cast<int>(w);
        win.window_passage_offset = start;
        win.passage_begin = 1 + q_len + 1;
        win.passage_len = take;

        win.token_ids.assign(static_cast<size_t>(config.max_seq_len), vocab.pad_id);
        win.segment_ids.assign(static_cast<size_t>(config.max_seq_len), 0);
        win.hae_ids.assign(static_cast<size_t>(config.max_seq_len), 0);
        win.attention_mask.assign(static_cast<size_t>(config.max_seq_len), 0);

        int pos = 0;
        win.token_ids[static_cast<size_t>(pos++)] = vocab.cls_id;
        for (const std::string& tok : question) win.token_ids[static_cast<size_t>(pos++)] = vocab.id(tok);
        win.token_ids[static_cast<size_t>(pos++)] = vocab.sep_id;
        for (int t = 0; t < take; ++t) {
            const auto src = static_cast<size_t>(start + t);
            const auto dst = static_cast<size_t>(pos);
            win.token_ids[dst] = passage.ids[src];
            win.segment_ids[dst] = 1;
            win.char_spans.push_back(passage.char_spans[src]);
            if (config.history_mode == HistoryMode::hae) {
                for (const HistoryTurn& h : instance.history) {
                    if (spans_overlap(passage.char_spans[src], h.answer.char_start,
                                      h.answer.char_end)) {
                        win.hae_ids[dst] = 1;
                        break;
                    }
                }
            }
            ++pos;
        }
        win.segment_ids[static_cast<size_t>(pos)] = 1;  // final [SEP] belongs to the passage side
        win.token_ids[static_cast<size_t>(pos++)] = vocab.sep_id;
        for (int i = 0; i < pos; ++i) win.attention_mask[static_cast<size_t>(i)] = 1;

        if (gold_tok_start >= 0 && gold_tok_start >= start && gold_tok_end < start + take) {
            win.start_label = win.passage_begin + (gold_tok_start - start);
            win.end_label = win.passage_begin + (gold_tok_end - start);
        }
        windows.push_back(std::move(win));
    }
    return windows;
}

std::vector<Batch> make_batches(size_t n_windows, int batch_size,
                                std::optional<uint64_t> shuffle_seed) {
    if (batch_size < 1) throw FeaturizerError("batch_size must be >= 1");
    std::vector<size_t> order(n_windows);
    for (size_t i = 0; i < n_windows; ++i) order[i] = i;
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        rng.shuffle(order);
    }
    std::vector<Batch> batches;
    for (size_t at = 0; at < n_windows; at += static_cast<size_t>(batch_size)) {
        Batch b;
        const size_t end = std::min(n_windows, at + static_cast<size_t>(batch_size));
        b.indices.assign(order.begin() + static_cast<ptrdiff_t>(at),
                         order.begin() + static_cast<ptrdiff_t>(end));
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<EncodedWindow> featurize_dataset(const std::vector<Dialog>& dialogs, const Vocab& vocab,
                                             const FeaturizerConfig& config,
                                             const SelectorConfig& selector, bool training) {
    std::vector<EncodedWindow> windows;
    for (const Dialog& dialog : dialogs) {
        for (int k = 1; k <= static_cast<int>(dialog.turns.size()); ++k) {
            const ConvQAInstance instance = build_instance(dialog, k, selector);
            for (EncodedWindow& w : encode(instance, vocab, config)) {
                if (training && !w.has_labels()) continue;
                windows.push_back(std::move(w));
            }
        }
    }
    return windows;
}

void dump_windows_jsonl(const std::string& path, const std::vector<EncodedWindow>& windows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FeaturizerError("cannot write window dump: " + path);
    for (const EncodedWindow& w : windows) {
        nlohmann::json j{
            {"dialog_id", w.dialog_id},
            {"turn_index", w.turn_index},
            {"window_index", w.window_index},
            {"token_ids", w.token_ids},
            {"segment_ids", w.segment_ids},
            {"hae_ids", w.hae_ids},
            {"attention_mask", w.attention_mask},
            {"start_label", w.start_label},
            {"end_label", w.end_label},
            {"window_passage_offset", w.window_passage_offset},
            {"passage_begin", w.passage_begin},
            {"passage_len", w.passage_len},
        };
        nlohmann::json spans = nlohmann::json::array();
        for (const CharSpan& s : w.char_spans) spans.push_back({s.first, s.second});
        j["char_spans"] = std::move(spans);
        out << j.dump() << "\n";
    }
}

}  // namespace convqa
