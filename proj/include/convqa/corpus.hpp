#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace convqa {

/// Passage text plus the QuAC no-answer convention: when
/// cannot_answer_appended is set, the text ends with " CANNOTANSWER" and
/// unanswerable questions point their gold span at that suffix.
struct Passage {
    std::string id;
    std::string title;
    std::string text;  // UTF-8, non-empty
    bool cannot_answer_appended = false;
};

/// A gold answer: [char_start, char_end) are code-point indices into the
/// passage text and must slice out exactly `text`.
struct AnswerSpan {
    int64_t char_start = 0;
    int64_t char_end = 0;  // exclusive
    std::string text;

    bool operator==(const AnswerSpan&) const = default;
};

struct Turn {
    int turn_index = 0;  // 1-based
    std::string question;
    AnswerSpan gold_answer;
    std::optional<double> human_f1;       // agreement baseline for HEQ, when known
    std::vector<AnswerSpan> references;   // references[0] == gold_answer
};

struct Dialog {
    std::string dialog_id;
    Passage passage;
    std::vector<Turn> turns;  // turn_index 1..n consecutive
};

struct ValidationReport {
    size_t dialogs = 0;
    size_t turns = 0;
    size_t span_errors = 0;
    size_t long_dialog_warnings = 0;  // dialogs beyond 12 turns
    std::vector<std::string> messages;
};

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LoadOptions {
    bool append_cannot_answer = false;
    bool quac_v02 = false;  // accept native QuAC v0.2 field names
};

inline constexpr const char* kCannotAnswer = "CANNOTANSWER";

std::vector<Dialog> load_dataset(const std::string& path, const LoadOptions& opts = {});
std::vector<Dialog> parse_dataset(const std::string& json_text, const LoadOptions& opts = {});
void save_dataset(const std::string& path, const std::vector<Dialog>& dialogs);
std::string serialize_dataset(const std::vector<Dialog>& dialogs);

/// Report-only recount of the dataset; never throws, never mutates.
ValidationReport validate_dataset(const std::vector<Dialog>& dialogs);

}  // namespace convqa
