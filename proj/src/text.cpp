#include "convqa/text.hpp"

namespace convqa {

Utf8Text decode_utf8(std::string_view s) {
    Utf8Text out;
    out.cps.reserve(s.size());
    out.byte_offsets.reserve(s.size() + 1);
    size_t i = 0;
    while (i < s.size()) {
        out.byte_offsets.push_back(i);
        const auto b0 = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        size_t len = 0;
        if (b0 < 0x80) {
            cp = b0;
            len = 1;
        } else if ((b0 & 0xe0) == 0xc0) {
            cp = b0 & 0x1f;
            len = 2;
        } else if ((b0 & 0xf0) == 0xe0) {
            cp = b0 & 0x0f;
            len = 3;
        } else if ((b0 & 0xf8) == 0xf0) {
            cp = b0 & 0x07;
            len = 4;
        } else {
            throw TextError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + len > s.size()) throw TextError("truncated UTF-8 sequence at offset " + std::to_string(i));
        for (size_t k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xc0) != 0x80) throw TextError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
            cp = (cp << 6) | (b & 0x3f);
        }
        if (len == 2 && cp < 0x80) throw TextError("overlong UTF-8 sequence at offset " + std::to_string(i));
        if (len == 3 && cp < 0x800) throw TextError("overlong UTF-8 sequence at offset " + std::to_string(i));
        if (len == 4 && cp < 0x10000) throw TextError("overlong UTF-8 sequence at offset " + std::to_string(i));
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff))
            throw TextError("invalid code point at offset " + std::to_string(i));
        out.cps.push_back(cp);
        i += len;
    }
    out.byte_offsets.push_back(s.size());
    return out;
}

std::string encode_utf8(std::u32string_view cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t cp : cps) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else {
            out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        }
    }
    return out;
}

std::string cp_slice(const Utf8Text& text, size_t start, size_t end) {
    if (start > end || end > text.size()) throw TextError("code-point slice out of range");
    return encode_utf8(std::u32string_view(text.cps).substr(start, end - start));
}

size_t cp_length(std::string_view s) { return decode_utf8(s).size(); }

bool is_whitespace(char32_t cp) {
    return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == 0x00a0;
}

bool is_punctuation(char32_t cp) {
    if ((cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) || (cp >= 91 && cp <= 96) ||
        (cp >= 123 && cp <= 126))
        return true;
    switch (cp) {
        case 0x2013:  // en dash
        case 0x2014:  // em dash
        case 0x2018:
        case 0x2019:  // curly single quotes
        case 0x201c:
        case 0x201d:  // curly double quotes
        case 0x00ab:
        case 0x00bb:  // guillemets
        case 0x00a1:
        case 0x00bf:  // inverted ! and ?
            return true;
        default:
            return false;
    }
}

char32_t lower_cp(char32_t cp) {
    if (cp >= U'A' && cp <= U'Z') return cp + 32;
    return cp;
}

std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
    return out;
}

}  // namespace convqa
