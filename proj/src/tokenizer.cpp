#include "convqa/tokenizer.hpp"

#include <fstream>

#include "convqa/text.hpp"

namespace convqa {

namespace {
constexpr size_t kMaxWordpieceInputChars = 200;  // absurdly long words go straight to [UNK]
}

int Vocab::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    if (it == token_to_id.end()) throw TokenizerError("token not in vocabulary: " + token);
    return it->second;
}

Vocab make_vocab(const std::vector<std::string>& tokens) {
    Vocab v;
    v.tokens = tokens;
    for (size_t i = 0; i < tokens.size(); ++i) {
        auto [it, inserted] = v.token_to_id.emplace(tokens[i], static_cast<int>(i));
        if (!inserted) throw TokenizerError("duplicate vocab token at line " + std::to_string(i + 1) +
                                            ": " + tokens[i]);
    }
    auto special = [&](const char* tok) {
        auto it = v.token_to_id.find(tok);
        if (it == v.token_to_id.end())
            throw TokenizerError(std::string("vocabulary missing special token ") + tok);
        return it->second;
    };
    v.pad_id = special("[PAD]");
    v.unk_id = special("[UNK]");
    v.cls_id = special("[CLS]");
    v.sep_id = special("[SEP]");
    if (v.pad_id != 0) throw TokenizerError("[PAD] must have id 0, got " + std::to_string(v.pad_id));
    return v;
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TokenizerError("cannot open vocab file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    // A trailing newline produces one empty tail entry; drop it.
    if (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    return make_vocab(tokens);
}

void save_vocab(const std::string& path, const Vocab& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TokenizerError("cannot write vocab file: " + path);
    for (const auto& t : vocab.tokens) out << t << "\n";
}

std::vector<NormalizedWord> basic_normalize(std::string_view text) {
    const Utf8Text decoded = decode_utf8(text);
    std::vector<NormalizedWord> words;
    std::u32string current;
    int64_t current_start = -1;

    auto flush = [&](int64_t end) {
        if (current_start >= 0) {
            words.push_back({encode_utf8(current), {current_start, end}});
            current.clear();
            current_start = -1;
        }
    };

    for (size_t i = 0; i < decoded.size(); ++i) {
        const char32_t cp = decoded.cps[i];
        const auto pos = static_cast<int64_t>(i);
        if (is_whitespace(cp)) {
            flush(pos);
        } else if (is_punctuation(cp)) {
            flush(pos);
            words.push_back({encode_utf8(std::u32string(1, lower_cp(cp))), {pos, pos + 1}});
        } else {
            if (current_start < 0) current_start = pos;
            current.push_back(lower_cp(cp));
        }
    }
    flush(static_cast<int64_t>(decoded.size()));
    return words;
}

std::vector<std::string> wordpiece(const std::string& word, const Vocab& vocab) {
    const Utf8Text decoded = decode_utf8(word);
    if (decoded.size() == 0) return {};
    if (decoded.size() > kMaxWordpieceInputChars) return {vocab.tokens[vocab.unk_id]};

    std::vector<std::string> pieces;
    size_t start = 0;
    while (start < decoded.size()) {
        size_t end = decoded.size();
        std::string match;
        while (start < end) {
            std::string candidate = cp_slice(decoded, start, end);
            if (start > 0) candidate = "##" + candidate;
            if (vocab.contains(candidate)) {
                match = std::move(candidate);
                break;
            }
            --end;
        }
        if (match.empty()) return {vocab.tokens[vocab.unk_id]};
        pieces.push_back(std::move(match));
        start = end;
    }
    return pieces;
}

TokenizedText tokenize(std::string_view text, const Vocab& vocab) {
    TokenizedText out;
    for (const NormalizedWord& w : basic_normalize(text)) {
        for (std::string& piece : wordpiece(w.word, vocab)) {
            out.ids.push_back(vocab.id(piece));
            out.tokens.push_back(std::move(piece));
            out.char_spans.push_back(w.span);
        }
    }
    return out;
}

}  // namespace convqa
