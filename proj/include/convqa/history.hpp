#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

class HistoryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One prior exchange (q_i, a_i) visible to the current question.
struct HistoryTurn {
    std::string question;
    AnswerSpan answer;
    int turn_index = 0;  // strictly less than the current turn
};

/// Rule-based selection: keep the immediate j previous turns. max_j mirrors
/// the QuAC bound of 11 and is overridable for synthetic data.
struct SelectorConfig {
    int j = 0;
    int max_j = 11;

    void validate() const;
};

/// A training-instance copy carrying exactly one history turn.
struct Variation {
    const Dialog* dialog = nullptr;
    int turn_index = 0;  // the current turn k
    HistoryTurn history;
};

/// Merged instance: the current question plus its selected history, ordered
/// oldest to newest. With empty history this is a plain single-passage
/// comprehension input.
struct ConvQAInstance {
    const Dialog* dialog = nullptr;
    int turn_index = 0;
    std::string question;
    std::vector<HistoryTurn> history;
    AnswerSpan gold;
};

/// Expand turn k of a dialog into its k-1 single-history-turn variations.
std::vector<Variation> build_variations(const Dialog& dialog, int k);

/// Keep the min(j, k-1) variations with the largest turn index, ascending.
std::vector<HistoryTurn> select_history(const std::vector<Variation>& variations,
                                        const SelectorConfig& config);

/// Pluggable selection policy; only the immediate-j rule ships, but learned
/// policies can slot in behind the same signature.
using SelectionPolicy =
    std::function<std::vector<HistoryTurn>(const std::vector<Variation>&, const SelectorConfig&)>;

ConvQAInstance merge(const Dialog& dialog, int k, std::vector<HistoryTurn> selected);

/// Substitute source for history answers (gold by default; predicted spans at
/// inference time).
using AnswerSource = std::function<AnswerSpan(int turn_index)>;

ConvQAInstance build_instance(const Dialog& dialog, int k, const SelectorConfig& config,
                              const SelectionPolicy& policy = {},
                              const AnswerSource& answers = {});

}  // namespace convqa
