#include "convqa/corpus.hpp"

#include <fstream>
#include <sstream>

#include "convqa/text.hpp"
#include "json.hpp"

namespace convqa {
namespace {

using nlohmann::json;

std::string ctx(const std::string& dialog_id, int turn_index) {
    return "dialog '" + dialog_id + "' turn " + std::to_string(turn_index);
}

AnswerSpan parse_span(const json& j, bool quac) {
    AnswerSpan s;
    if (quac) {
        s.text = j.at("text").get<std::string>();
        s.char_start = j.at("answer_start").get<int64_t>();
        s.char_end = s.char_start < 0 ? -1 : s.char_start + static_cast<int64_t>(cp_length(s.text));
    } else {
        s.char_start = j.at("char_start").get<int64_t>();
        s.char_end = j.at("char_end").get<int64_t>();
        s.text = j.at("text").get<std::string>();
    }
    return s;
}

bool is_unanswerable(const AnswerSpan& s) { return s.text == kCannotAnswer; }

/// Point an unanswerable span at the trailing CANNOTANSWER token.
AnswerSpan cannot_answer_span(size_t passage_cp_len) {
    const auto token_len = static_cast<int64_t>(std::string_view(kCannotAnswer).size());  // ASCII
    AnswerSpan s;
    s.char_end = static_cast<int64_t>(passage_cp_len);
    s.char_start = s.char_end - token_len;
    s.text = kCannotAnswer;
    return s;
}

void check_span(const Utf8Text& passage, const AnswerSpan& s, const std::string& dialog_id,
                int turn_index) {
    if (s.char_start < 0 || s.char_end <= s.char_start ||
        s.char_end > static_cast<int64_t>(passage.size()))
        throw CorpusError("answer span out of range in " + ctx(dialog_id, turn_index) + ": [" +
                          std::to_string(s.char_start) + ", " + std::to_string(s.char_end) + ")");
    const std::string slice =
        cp_slice(passage, static_cast<size_t>(s.char_start), static_cast<size_t>(s.char_end));
    if (slice != s.text)
        throw CorpusError("span mismatch in " + ctx(dialog_id, turn_index) + ": passage slice \"" +
                          slice + "\" != answer text \"" + s.text + "\"");
}

bool ends_with_cannot_answer(const std::string& text) {
    const std::string suffix = std::string(" ") + kCannotAnswer;
    return text.size() >= suffix.size() &&
           text.compare(text.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Dialog parse_dialog(const json& jd, const LoadOptions& opts, const json* jtitle_holder) {
    Dialog d;
    if (opts.quac_v02) {
        d.dialog_id = jd.value("id", "");
        d.passage.title = jtitle_holder ? jtitle_holder->value("title", "") : "";
        d.passage.text = jd.at("context").get<std::string>();
    } else {
        d.dialog_id = jd.at("id").get<std::string>();
        d.passage.title = jd.value("title", "");
        d.passage.text = jd.at("passage").get<std::string>();
    }
    if (d.passage.text.empty()) throw CorpusError("empty passage in dialog '" + d.dialog_id + "'");
    d.passage.id = d.dialog_id;

    if (ends_with_cannot_answer(d.passage.text)) {
        d.passage.cannot_answer_appended = true;
    } else if (opts.append_cannot_answer) {
        d.passage.text += std::string(" ") + kCannotAnswer;
        d.passage.cannot_answer_appended = true;
    }
    const Utf8Text passage = decode_utf8(d.passage.text);

    const json& jturns = opts.quac_v02 ? jd.at("qas") : jd.at("turns");
    int expected_index = 1;
    for (const json& jt : jturns) {
        Turn t;
        t.question = jt.at("question").get<std::string>();
        if (t.question.empty())
            throw CorpusError("empty question in " + ctx(d.dialog_id, expected_index));
        if (opts.quac_v02) {
            t.turn_index = expected_index;
            t.gold_answer = parse_span(jt.at("orig_answer"), true);
            if (jt.contains("answers"))
                for (const json& ja : jt.at("answers")) t.references.push_back(parse_span(ja, true));
        } else {
            t.turn_index = jt.at("turn_index").get<int>();
            t.gold_answer = parse_span(jt.at("answer"), false);
            if (jt.contains("human_f1")) t.human_f1 = jt.at("human_f1").get<double>();
            if (jt.contains("references"))
                for (const json& ja : jt.at("references")) t.references.push_back(parse_span(ja, false));
        }
        if (t.turn_index != expected_index)
            throw CorpusError("non-consecutive turn_index " + std::to_string(t.turn_index) +
                              " in dialog '" + d.dialog_id + "' (expected " +
                              std::to_string(expected_index) + ")");

        // Remap unanswerable spans onto the appended suffix.
        auto fix = [&](AnswerSpan& s) {
            if (is_unanswerable(s) && d.passage.cannot_answer_appended)
                s = cannot_answer_span(passage.size());
        };
        fix(t.gold_answer);
        for (auto& r : t.references) fix(r);

        check_span(passage, t.gold_answer, d.dialog_id, t.turn_index);
        for (const auto& r : t.references) check_span(passage, r, d.dialog_id, t.turn_index);

        if (t.references.empty()) {
            t.references.push_back(t.gold_answer);
        } else if (!(t.references.front() == t.gold_answer)) {
            if (opts.quac_v02) {
                t.references.insert(t.references.begin(), t.gold_answer);
            } else {
                throw CorpusError("references[0] must equal the gold answer in " +
                                  ctx(d.dialog_id, t.turn_index));
            }
        }
        d.turns.push_back(std::move(t));
        ++expected_index;
    }
    return d;
}

}  // namespace

std::vector<Dialog> parse_dataset(const std::string& json_text, const LoadOptions& opts) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw CorpusError(std::string("dataset is not valid JSON: ") + e.what());
    }
    std::vector<Dialog> dialogs;
    try {
        for (const json& jd : root.at("data")) {
            if (opts.quac_v02 && jd.contains("paragraphs")) {
                for (const json& jp : jd.at("paragraphs")) dialogs.push_back(parse_dialog(jp, opts, &jd));
            } else {
                dialogs.push_back(parse_dialog(jd, opts, nullptr));
            }
        }
    } catch (const json::exception& e) {
        throw CorpusError(std::string("malformed dataset field: ") + e.what());
    }
    return dialogs;
}

std::vector<Dialog> load_dataset(const std::string& path, const LoadOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open dataset file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), opts);
}

std::string serialize_dataset(const std::vector<Dialog>& dialogs) {
    json data = json::array();
    for (const Dialog& d : dialogs) {
        json jturns = json::array();
        for (const Turn& t : d.turns) {
            json jt = {
                {"turn_index", t.turn_index},
                {"question", t.question},
                {"answer",
                 {{"char_start", t.gold_answer.char_start},
                  {"char_end", t.gold_answer.char_end},
                  {"text", t.gold_answer.text}}},
            };
            if (t.human_f1) jt["human_f1"] = *t.human_f1;
            json jrefs = json::array();
            for (const AnswerSpan& r : t.references)
                jrefs.push_back({{"char_start", r.char_start}, {"char_end", r.char_end}, {"text", r.text}});
            jt["references"] = jrefs;
            jturns.push_back(std::move(jt));
        }
        data.push_back({{"id", d.dialog_id},
                        {"title", d.passage.title},
                        {"passage", d.passage.text},
                        {"turns", std::move(jturns)}});
    }
    return json{{"data", std::move(data)}}.dump(2);
}

void save_dataset(const std::string& path, const std::vector<Dialog>& dialogs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write dataset file: " + path);
    out << serialize_dataset(dialogs) << "\n";
}

ValidationReport validate_dataset(const std::vector<Dialog>& dialogs) {
    ValidationReport r;
    r.dialogs = dialogs.size();
    for (const Dialog& d : dialogs) {
        r.turns += d.turns.size();
        if (d.turns.size() > 12) {
            ++r.long_dialog_warnings;
            r.messages.push_back("dialog '" + d.dialog_id + "' has " +
                                 std::to_string(d.turns.size()) + " turns (> 12)");
        }
        Utf8Text passage;
        bool passage_ok = true;
        try {
            passage = decode_utf8(d.passage.text);
        } catch (const TextError& e) {
            passage_ok = false;
            ++r.span_errors;
            r.messages.push_back("dialog '" + d.dialog_id + "': " + e.what());
        }
        if (!passage_ok) continue;
        for (const Turn& t : d.turns) {
            try {
                check_span(passage, t.gold_answer, d.dialog_id, t.turn_index);
            } catch (const CorpusError& e) {
                ++r.span_errors;
                r.messages.push_back(e.what());
            }
        }
    }
    return r;
}

}  // namespace convqa
