#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "convqa/history.hpp"
#include "convqa/tokenizer.hpp"

namespace convqa {

class FeaturizerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class HistoryMode { none, hae, phqa, pha };

HistoryMode history_mode_from_string(const std::string& s);
std::string to_string(HistoryMode mode);

struct FeaturizerConfig {
    int max_seq_len = 384;
    int doc_stride = 128;
    int max_question_len = 64;
    HistoryMode history_mode = HistoryMode::none;

    void validate() const;
};

/// Label value for training windows whose gold span is not fully contained in
/// the window's passage slice; such windows are dropped before the loss.
inline constexpr int kDroppedLabel = -1;

/// One model-ready input sequence of exactly max_seq_len positions:
/// [CLS] question [SEP] passage-slice [SEP] [PAD]...
struct EncodedWindow {
    std::string dialog_id;
    int turn_index = 0;
    int window_index = 0;

    std::vector<int> token_ids;
    std::vector<int> segment_ids;     // 0: [CLS]+question+first [SEP]; 1: passage+final [SEP]; 0: pad
    std::vector<int> hae_ids;         // 1 iff the passage token lies in a history answer (hae mode)
    std::vector<int> attention_mask;  // 1 for real tokens

    int start_label = kDroppedLabel;  // in-window token index of the gold start, or dropped
    int end_label = kDroppedLabel;

    int window_passage_offset = 0;  // offset of this window's first token in the passage token list
    int passage_begin = 0;          // sequence position of the first passage token
    int passage_len = 0;            // passage tokens in this window
    std::vector<CharSpan> char_spans;  // per in-window passage token, into the original passage

    int seq_len() const { return static_cast<int>(token_ids.size()); }
    bool has_labels() const { return start_label != kDroppedLabel && end_label != kDroppedLabel; }
};

/// Question-side token sequence for the configured history mode. phqa/pha
/// prepend history (questions+)answers oldest-first; the result is truncated
/// from the left to max_question_len so the current question always survives.
std::vector<std::string> build_question_tokens(const ConvQAInstance& instance, const Vocab& vocab,
                                               const FeaturizerConfig& config);

std::vector<EncodedWindow> encode(const ConvQAInstance& instance, const Vocab& vocab,
                                  const FeaturizerConfig& config);

struct Batch {
    std::vector<size_t> indices;  // into the caller's window vector
};

/// Deterministic batching; pass a seed to shuffle, nullopt for input order.
/// The final partial batch is retained.
std::vector<Batch> make_batches(size_t n_windows, int batch_size,
                                std::optional<uint64_t> shuffle_seed);

/// Featurize a whole dataset with the immediate-j selector. When `training`,
/// windows without fully contained gold labels are dropped.
std::vector<EncodedWindow> featurize_dataset(const std::vector<Dialog>& dialogs, const Vocab& vocab,
                                             const FeaturizerConfig& config,
                                             const SelectorConfig& selector, bool training);

/// Debug dump for cross-implementation diffing, one window per line.
void dump_windows_jsonl(const std::string& path, const std::vector<EncodedWindow>& windows);

}  // namespace convqa
