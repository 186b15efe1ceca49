#include "convqa/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "convqa/inference.hpp"
#include "convqa/text.hpp"
#include "json.hpp"

namespace convqa {

std::vector<std::string> normalize_answer(std::string_view text) {
    const Utf8Text decoded = decode_utf8(text);
    std::vector<std::string> words;
    std::u32string current;
    auto flush = [&] {
        if (!current.empty()) {
            std::string w = encode_utf8(current);
            if (w != "a" && w != "an" && w != "the") words.push_back(std::move(w));
            current.clear();
        }
    };
    for (char32_t cp : decoded.cps) {
        if (is_whitespace(cp)) {
            flush();
        } else if (is_punctuation(cp)) {
            continue;  // stripped, not a separator
        } else {
            current.push_back(lower_cp(cp));
        }
    }
    flush();
    return words;
}

namespace {

double bag_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
    if (pred.empty() && ref.empty()) return 1.0;
    if (pred.empty() || ref.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& w : ref) ++counts[w];
    int overlap = 0;
    for (const auto& w : pred) {
        auto it = counts.find(w);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double token_f1(std::string_view pred, std::string_view ref) {
    return bag_f1(normalize_answer(pred), normalize_answer(ref));
}

double question_f1(const EvalExample& example) {
    if (example.references.empty())
        throw MetricsError("example without references: dialog '" + example.dialog_id + "' turn " +
                           std::to_string(example.turn_index));
    double best = 0.0;
    bool first = true;
    for (const std::string& ref : example.references) {
        const double f1 = token_f1(example.prediction, ref);
        if (first || f1 > best) best = f1;
        first = false;
    }
    return best;
}

std::pair<double, double> heq(const std::vector<EvalExample>& examples) {
    std::vector<std::string> missing;
    for (const EvalExample& e : examples)
        if (!e.human_f1)
            missing.push_back("dialog '" + e.dialog_id + "' turn " + std::to_string(e.turn_index));
    if (!missing.empty()) {
        std::string msg = "missing human_f1 for: ";
        for (size_t i = 0; i < missing.size() && i < 8; ++i)
            msg += (i ? ", " : "") + missing[i];
        if (missing.size() > 8) msg += ", ... (" + std::to_string(missing.size()) + " total)";
        throw MetricsError(msg);
    }
    if (examples.empty()) throw MetricsError("heq on an empty example set");

    size_t passed_q = 0;
    std::map<std::string, bool> dialog_all_pass;
    for (const EvalExample& e : examples) {
        const bool pass = question_f1(e) >= *e.human_f1;
        if (pass) ++passed_q;
        auto [it, inserted] = dialog_all_pass.emplace(e.dialog_id, pass);
        if (!inserted) it->second = it->second && pass;
    }
    size_t passed_d = 0;
    for (const auto& [id, all_pass] : dialog_all_pass)
        if (all_pass) ++passed_d;
    const double heq_q = 100.0 * static_cast<double>(passed_q) / static_cast<double>(examples.size());
    const double heq_d =
        100.0 * static_cast<double>(passed_d) / static_cast<double>(dialog_all_pass.size());
    return {heq_q, heq_d};
}

EvalReport evaluate_examples(const std::vector<EvalExample>& examples,
                             const ScoreOptions& options) {
    std::vector<EvalExample> kept;
    kept.reserve(examples.size());
    for (const EvalExample& e : examples) {
        if (options.min_human_f1 && e.human_f1 && *e.human_f1 < *options.min_human_f1) continue;
        kept.push_back(e);
        if (!options.max_over_references && kept.back().references.size() > 1)
            kept.back().references.resize(1);
    }
    if (kept.empty()) throw MetricsError("no examples left to evaluate");

    EvalReport report;
    report.n_questions = kept.size();
    std::set<std::string> dialog_ids;
    double sum_f1 = 0.0;
    for (const EvalExample& e : kept) {
        sum_f1 += question_f1(e);
        dialog_ids.insert(e.dialog_id);
    }
    report.n_dialogs = dialog_ids.size();
    report.f1 = 100.0 * sum_f1 / static_cast<double>(kept.size());

    const bool any_human = std::any_of(kept.begin(), kept.end(),
                                       [](const EvalExample& e) { return e.human_f1.has_value(); });
    if (any_human) {
        auto [hq, hd] = heq(kept);  // errors if only some examples carry human_f1
        report.heq_q = hq;
        report.heq_d = hd;
    }
    return report;
}

EvalReport evaluate_files(const std::string& predictions_path, const std::string& dataset_path,
                          const ScoreOptions& options, const LoadOptions& load_options) {
    const std::vector<Dialog> dialogs = load_dataset(dataset_path, load_options);
    const std::vector<SpanPrediction> preds = read_predictions_jsonl(predictions_path);

    std::map<std::pair<std::string, int>, std::string> by_turn;
    for (const SpanPrediction& p : preds) {
        auto key = std::make_pair(p.dialog_id, p.turn_index);
        if (!by_turn.emplace(key, p.text).second)
            throw MetricsError("duplicate prediction for dialog '" + p.dialog_id + "' turn " +
                               std::to_string(p.turn_index));
    }

    std::vector<EvalExample> examples;
    size_t matched = 0;
    for (const Dialog& d : dialogs) {
        for (const Turn& t : d.turns) {
            auto it = by_turn.find({d.dialog_id, t.turn_index});
            if (it == by_turn.end())
                throw MetricsError("missing prediction for dialog '" + d.dialog_id + "' turn " +
                                   std::to_string(t.turn_index));
            ++matched;
            EvalExample e;
            e.dialog_id = d.dialog_id;
            e.turn_index = t.turn_index;
            e.prediction = it->second;
            for (const AnswerSpan& r : t.references) e.references.push_back(r.text);
            e.human_f1 = t.human_f1;
            examples.push_back(std::move(e));
        }
    }
    if (matched != by_turn.size())
        throw MetricsError("predictions contain " + std::to_string(by_turn.size() - matched) +
                           " entries with no matching dataset turn");
    return evaluate_examples(examples, options);
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j{{"f1", report.f1},
                     {"n_questions", report.n_questions},
                     {"n_dialogs", report.n_dialogs}};
    if (report.heq_q) j["heq_q"] = *report.heq_q;
    if (report.heq_d) j["heq_d"] = *report.heq_d;
    return j.dump(2);
}

}  // namespace convqa
