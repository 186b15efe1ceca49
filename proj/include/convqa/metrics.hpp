#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvalExample {
    std::string dialog_id;
    int turn_index = 0;
    std::string prediction;
    std::vector<std::string> references;  // non-empty
    std::optional<double> human_f1;
};

struct EvalReport {
    double f1 = 0.0;  // percent
    std::optional<double> heq_q;  // percent; absent when no example carries human_f1
    std::optional<double> heq_d;
    size_t n_questions = 0;
    size_t n_dialogs = 0;
};

/// lowercase, strip punctuation, drop the articles a/an/the, split on
/// whitespace (the SQuAD-style convention).
std::vector<std::string> normalize_answer(std::string_view text);

/// Bag-of-words F1 over normalized words; both empty -> 1, one empty -> 0.
double token_f1(std::string_view pred, std::string_view ref);

/// Max token_f1 over the references.
double question_f1(const EvalExample& example);

/// (HEQ-Q, HEQ-D): percentage of questions / dialogs where system F1 matches
/// or exceeds human F1. Errors if any example lacks human_f1.
std::pair<double, double> heq(const std::vector<EvalExample>& examples);

struct ScoreOptions {
    bool max_over_references = true;          // false: score against references[0] only
    std::optional<double> min_human_f1;       // drop low-agreement questions below this
};

EvalReport evaluate_examples(const std::vector<EvalExample>& examples,
                             const ScoreOptions& options = {});

/// Join a predictions JSON-lines file with a dataset file; every dataset turn
/// must have exactly one prediction.
EvalReport evaluate_files(const std::string& predictions_path, const std::string& dataset_path,
                          const ScoreOptions& options = {}, const LoadOptions& load_options = {});

std::string report_to_json(const EvalReport& report);

}  // namespace convqa
