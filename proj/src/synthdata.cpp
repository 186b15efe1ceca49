#include "convqa/synthdata.hpp"

#include "convqa/rng.hpp"

namespace convqa {

void SynthConfig::validate() const {
    if (n_dialogs < 1 || turns_per_dialog < 1 || passage_len_tokens < 1 || vocab_size < 1 ||
        answer_len < 1)
        throw SynthError("all synth sizes must be positive");
    if (coreference_rate < 0.0 || coreference_rate > 1.0)
        throw SynthError("coreference_rate must be in [0, 1]");
    if (passage_len_tokens < turns_per_dialog * answer_len)
        throw SynthError("passage too short for requested turns: need at least " +
                         std::to_string(turns_per_dialog * answer_len) + " tokens");
}

namespace {

std::string marker_word(int turn) { return "m" + std::to_string(turn); }
std::string filler_word(int i) { return "f" + std::to_string(i); }

}  // namespace

std::vector<std::string> synth_vocab_tokens(const SynthConfig& config) {
    config.validate();
    std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                    "where", "is",    "what",  "comes", "next"};
    for (int t = 1; t <= config.turns_per_dialog; ++t) tokens.push_back(marker_word(t));
    for (int i = 0; i < config.vocab_size; ++i) tokens.push_back(filler_word(i));
    return tokens;
}

std::vector<Dialog> generate(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const int chain_len = config.turns_per_dialog * config.answer_len;

    std::vector<Dialog> dialogs;
    dialogs.reserve(static_cast<size_t>(config.n_dialogs));
    for (int d = 0; d < config.n_dialogs; ++d) {
        std::vector<std::string> tokens(static_cast<size_t>(config.passage_len_tokens));
        for (auto& tok : tokens)
            tok = filler_word(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(config.vocab_size))));

        // One contiguous answer region, tiled into per-turn segments.
        const int max_offset = config.passage_len_tokens - chain_len;
        const int offset =
            max_offset > 0 ? static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_offset + 1)))
                           : 0;

        std::vector<bool> coref(static_cast<size_t>(config.turns_per_dialog) + 1, false);
        for (int t = 2; t <= config.turns_per_dialog; ++t)
            coref[static_cast<size_t>(t)] = rng.uniform() < config.coreference_rate;
        for (int t = 1; t <= config.turns_per_dialog; ++t)
            if (!coref[static_cast<size_t>(t)])
                tokens[static_cast<size_t>(offset + (t - 1) * config.answer_len)] = marker_word(t);

        // Character offsets: tokens joined by single spaces, all ASCII.
        std::vector<int64_t> token_start(tokens.size());
        std::string text;
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (i) text += ' ';
            token_start[i] = static_cast<int64_t>(text.size());
            text += tokens[i];
        }

        Dialog dialog;
        dialog.dialog_id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(d);
        dialog.passage.id = dialog.dialog_id;
        dialog.passage.title = "synthetic";
        dialog.passage.text = text;

        for (int t = 1; t <= config.turns_per_dialog; ++t) {
            const int seg_first = offset + (t - 1) * config.answer_len;
            const int seg_last = seg_first + config.answer_len - 1;

            Turn turn;
            turn.turn_index = t;
            turn.question = coref[static_cast<size_t>(t)] ? "what comes next"
                                                          : "where is " + marker_word(t);
            turn.gold_answer.char_start = token_start[static_cast<size_t>(seg_first)];
            turn.gold_answer.char_end = token_start[static_cast<size_t>(seg_last)] +
                                        static_cast<int64_t>(tokens[static_cast<size_t>(seg_last)].size());
            turn.gold_answer.text =
                text.substr(static_cast<size_t>(turn.gold_answer.char_start),
                            static_cast<size_t>(turn.gold_answer.char_end - turn.gold_answer.char_start));
            turn.human_f1 = 1.0;
            turn.references.push_back(turn.gold_answer);
            dialog.turns.push_back(std::move(turn));
        }
        dialogs.push_back(std::move(dialog));
    }
    return dialogs;
}

}  // namespace convqa
