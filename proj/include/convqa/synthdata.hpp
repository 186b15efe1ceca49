#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/tokenizer.hpp"

namespace convqa {

class SynthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Synthetic coreference dialogs. Each dialog hides a chain of fixed-length
/// answer segments in a filler passage. A coreference turn asks the generic
/// "what comes next" and its gold answer is the segment right after the
/// previous turn's answer, so it is answerable only through history; other
/// turns name a per-turn marker word that sits at the start of their segment.
struct SynthConfig {
    int n_dialogs = 0;
    int turns_per_dialog = 0;  // <= 12 to stay within the dataset convention
    int passage_len_tokens = 0;
    int vocab_size = 0;  // number of filler word types
    uint64_t seed = 0;
    double coreference_rate = 0.0;
    int answer_len = 2;  // tokens per gold answer segment

    void validate() const;
};

std::vector<Dialog> generate(const SynthConfig& config);

/// Vocabulary covering everything generate() can emit (specials, question
/// words, markers, fillers); suitable for save_vocab/load_vocab.
std::vector<std::string> synth_vocab_tokens(const SynthConfig& config);

}  // namespace convqa
