#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace convqa {

/// A UTF-8 string decoded into code points. All character offsets in the data
/// model are Unicode scalar-value indices, so answer spans survive multi-byte
/// text; this is the one place byte<->code point mapping happens.
struct Utf8Text {
    std::u32string cps;
    std::vector<size_t> byte_offsets;  // size cps.size()+1; last entry = byte length

    size_t size() const { return cps.size(); }
};

class TextError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Utf8Text decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view cps);

/// Slice [start, end) in code-point indices, returned as UTF-8 bytes.
std::string cp_slice(const Utf8Text& text, size_t start, size_t end);
size_t cp_length(std::string_view s);

bool is_whitespace(char32_t cp);
/// ASCII punctuation ranges plus a few common non-ASCII marks. Matches the
/// uncased BERT pre-tokenizer closely enough for English corpora.
bool is_punctuation(char32_t cp);
char32_t lower_cp(char32_t cp);
std::string lower_ascii(std::string_view s);

}  // namespace convqa
