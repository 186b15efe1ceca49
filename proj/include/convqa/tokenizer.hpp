#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace convqa {

class TokenizerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// WordPiece vocabulary. Ids are line numbers of the vocab file, so the
/// layout is compatible with the published uncased BERT vocab files.
struct Vocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> token_to_id;
    int pad_id = -1;
    int unk_id = -1;
    int cls_id = -1;
    int sep_id = -1;

    int size() const { return static_cast<int>(tokens.size()); }
    int id(const std::string& token) const;       // throws on unknown token
    bool contains(const std::string& token) const { return token_to_id.count(token) > 0; }
};

Vocab load_vocab(const std::string& path);
Vocab make_vocab(const std::vector<std::string>& tokens);
void save_vocab(const std::string& path, const Vocab& vocab);

using CharSpan = std::pair<int64_t, int64_t>;  // [start, end) code-point offsets

struct NormalizedWord {
    std::string word;  // lowercased
    CharSpan span;     // offsets into the ORIGINAL text
};

struct TokenizedText {
    std::vector<std::string> tokens;
    std::vector<int> ids;
    std::vector<CharSpan> char_spans;  // continuation pieces share the parent word's span

    size_t size() const { return tokens.size(); }
};

/// Uncased pre-tokenization: lowercase, split on whitespace, and split each
/// punctuation character into its own word. Spans index the original text.
std::vector<NormalizedWord> basic_normalize(std::string_view text);

/// Greedy longest-match-first decomposition; continuations carry "##".
/// A word with any unmatchable position collapses to [UNK].
std::vector<std::string> wordpiece(const std::string& word, const Vocab& vocab);

TokenizedText tokenize(std::string_view text, const Vocab& vocab);

}  // namespace convqa
