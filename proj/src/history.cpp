#include "convqa/history.hpp"

#include <algorithm>
#include <set>

namespace convqa {

void SelectorConfig::validate() const {
    if (j < 0) throw HistoryError("history depth j must be >= 0");
    if (j > max_j)
        throw HistoryError("history depth j=" + std::to_string(j) + " exceeds max_j=" +
                           std::to_string(max_j));
}

std::vector<Variation> build_variations(const Dialog& dialog, int k) {
    if (k < 1 || k > static_cast<int>(dialog.turns.size()))
        throw HistoryError("turn index " + std::to_string(k) + " out of range for dialog '" +
                           dialog.dialog_id + "' with " + std::to_string(dialog.turns.size()) +
                           " turns");
    std::vector<Variation> variations;
    variations.reserve(static_cast<size_t>(k - 1));
    for (int i = 1; i < k; ++i) {
        const Turn& turn = dialog.turns[static_cast<size_t>(i - 1)];
        variations.push_back({&dialog, k, {turn.question, turn.gold_answer, i}});
    }
    return variations;
}

std::vector<HistoryTurn> select_history(const std::vector<Variation>& variations,
                                        const SelectorConfig& config) {
    config.validate();
    std::vector<HistoryTurn> turns;
    turns.reserve(variations.size());
    for (const Variation& v : variations) turns.push_back(v.history);
    std::sort(turns.begin(), turns.end(),
              [](const HistoryTurn& a, const HistoryTurn& b) { return a.turn_index < b.turn_index; });
    const size_t keep = std::min(static_cast<size_t>(config.j), turns.size());
    turns.erase(turns.begin(), turns.end() - static_cast<ptrdiff_t>(keep));
    return turns;
}

ConvQAInstance merge(const Dialog& dialog, int k, std::vector<HistoryTurn> selected) {
    std::sort(selected.begin(), selected.end(),
              [](const HistoryTurn& a, const HistoryTurn& b) { return a.turn_index < b.turn_index; });
    std::set<int> seen;
    for (const HistoryTurn& h : selected) {
        if (h.turn_index < 1 || h.turn_index >= k)
            throw HistoryError("history turn " + std::to_string(h.turn_index) +
                               " is not prior to turn " + std::to_string(k));
        if (!seen.insert(h.turn_index).second)
            throw HistoryError("duplicate history turn " + std::to_string(h.turn_index) +
                               " in merge for turn " + std::to_string(k));
    }
    const Turn& current = dialog.turns[static_cast<size_t>(k - 1)];
    return {&dialog, k, current.question, std::move(selected), current.gold_answer};
}

ConvQAInstance build_instance(const Dialog& dialog, int k, const SelectorConfig& config,
                              const SelectionPolicy& policy, const AnswerSource& answers) {
    auto variations = build_variations(dialog, k);
    auto selected = policy ? policy(variations, config) : select_history(variations, config);
    if (answers)
        for (HistoryTurn& h : selected) h.answer = answers(h.turn_index);
    return merge(dialog, k, std::move(selected));
}

}  // namespace convqa
