#include "convqa/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <thread>

namespace convqa {

namespace {

Vocab load_vocab_checked(const std::string& path) {
    if (path.empty()) throw TokenizerError("no vocab file given");
    return load_vocab(path);
}

}  // namespace

int cmd_train(const TrainOptions& options) {
    try {
        const Vocab vocab = load_vocab_checked(options.vocab_path);
        const std::vector<Dialog> dialogs = load_dataset(options.data_path, options.load);
        const ValidationReport vr = validate_dataset(dialogs);
        for (const std::string& msg : vr.messages) std::cerr << "warning: " << msg << "\n";
        if (vr.span_errors > 0) {
            std::cerr << "error: dataset has " << vr.span_errors << " span errors\n";
            return 1;
        }

        ModelConfig model = options.model;
        model.vocab_size = vocab.size();
        if (model.max_positions < options.featurizer.max_seq_len)
            model.max_positions = options.featurizer.max_seq_len;

        const std::vector<EncodedWindow> windows =
            featurize_dataset(dialogs, vocab, options.featurizer, options.selector, true);
        if (!options.dump_windows_path.empty())
            dump_windows_jsonl(options.dump_windows_path, windows);

        const TrainResult result = train(windows, model, options.train, options.out_dir, nullptr,
                                         options.featurizer, options.selector);
        std::cerr << "trained " << result.logs.size() << " steps; final loss "
                  << (result.logs.empty() ? 0.0 : result.logs.back().loss) << "; wrote "
                  << result.checkpoint_paths.size() << " checkpoints to " << options.out_dir
                  << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_predict(const PredictOptions& options) {
    try {
        const Checkpoint ckpt = load_checkpoint(options.checkpoint_path);
        const Vocab vocab = load_vocab_checked(options.vocab_path);
        if (vocab.size() != ckpt.model_config.vocab_size) {
            std::cerr << "error: vocab size " << vocab.size()
                      << " does not match checkpoint vocab size " << ckpt.model_config.vocab_size
                      << "\n";
            return 1;
        }
        const std::vector<Dialog> dialogs = load_dataset(options.data_path, options.load);

        SelectorConfig selector = ckpt.selector_config;
        if (options.override_j) selector.j = *options.override_j;

        const std::vector<SpanPrediction> preds =
            predict_dataset(dialogs, ckpt.params, ckpt.model_config, vocab,
                            ckpt.featurizer_config, selector, options.predict);
        write_predictions_jsonl(options.out_path, preds);
        std::cerr << "wrote " << preds.size() << " predictions to " << options.out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_evaluate(const EvaluateOptions& options) {
    try {
        const EvalReport report =
            evaluate_files(options.predictions_path, options.dataset_path, options.score,
                           options.load);
        const std::string json = report_to_json(report);
        if (options.out_path.empty()) {
            std::cout << json << "\n";
        } else {
            std::ofstream out(options.out_path, std::ios::binary);
            if (!out) throw MetricsError("cannot write report: " + options.out_path);
            out << json << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

std::vector<SweepCell> run_sweep(const SweepOptions& options) {
    const Vocab vocab = load_vocab_checked(options.vocab_path);
    const std::vector<Dialog> train_dialogs = load_dataset(options.data_path, options.load);
    const std::vector<Dialog> dev_dialogs = load_dataset(options.dev_data_path, options.load);

    std::vector<SweepCell> cells;
    for (const std::string& mode : options.modes) {
        if (mode == "none") {
            for (uint64_t seed : options.seeds) cells.push_back({mode, 0, seed});
        } else {
            for (int j : options.j_values)
                for (uint64_t seed : options.seeds) cells.push_back({mode, j, seed});
        }
    }

    auto run_cell = [&](SweepCell& cell) {
        try {
            FeaturizerConfig fc = options.featurizer;
            fc.history_mode = history_mode_from_string(cell.mode);
            SelectorConfig sel;
            sel.j = cell.j;

            ModelConfig model = options.model;
            model.vocab_size = vocab.size();
            if (model.max_positions < fc.max_seq_len) model.max_positions = fc.max_seq_len;
            model.seed = cell.seed;
            TrainConfig tc = options.train;
            tc.seed = cell.seed;

            const auto windows = featurize_dataset(train_dialogs, vocab, fc, sel, true);
            const TrainResult trained = train(windows, model, tc, "", nullptr, fc, sel);

            const auto preds = predict_dataset(dev_dialogs, trained.checkpoint.params, model,
                                               vocab, fc, sel, options.predict);
            std::vector<EvalExample> examples;
            std::map<std::pair<std::string, int>, std::string> by_turn;
            for (const SpanPrediction& p : preds) by_turn[{p.dialog_id, p.turn_index}] = p.text;
            for (const Dialog& d : dev_dialogs)
                for (const Turn& t : d.turns) {
                    EvalExample e;
                    e.dialog_id = d.dialog_id;
                    e.turn_index = t.turn_index;
                    e.prediction = by_turn.at({d.dialog_id, t.turn_index});
                    for (const AnswerSpan& r : t.references) e.references.push_back(r.text);
                    e.human_f1 = t.human_f1;
                    examples.push_back(std::move(e));
                }
            cell.report = evaluate_examples(examples);
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
    };

    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(cells.size())));
    if (workers == 1) {
        for (SweepCell& cell : cells) run_cell(cell);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&, t] {
                for (size_t i = static_cast<size_t>(t); i < cells.size();
                     i += static_cast<size_t>(workers))
                    run_cell(cells[i]);
            });
        for (auto& th : pool) th.join();
    }
    return cells;
}

int cmd_sweep(const SweepOptions& options) {
    try {
        const std::vector<SweepCell> cells = run_sweep(options);

        std::ofstream csv(options.out_csv, std::ios::binary);
        if (!csv) throw TrainerError("cannot write sweep CSV: " + options.out_csv);
        csv << "mode,j,seed,f1,heq_q,heq_d\n";
        size_t failures = 0;
        for (const SweepCell& cell : cells) {
            if (!cell.ok) {
                ++failures;
                std::cerr << "sweep cell failed (mode=" << cell.mode << " j=" << cell.j
                          << " seed=" << cell.seed << "): " << cell.error << "\n";
                continue;
            }
            csv << cell.mode << "," << cell.j << "," << cell.seed << "," << cell.report.f1 << ","
                << (cell.report.heq_q ? std::to_string(*cell.report.heq_q) : "") << ","
                << (cell.report.heq_d ? std::to_string(*cell.report.heq_d) : "") << "\n";
        }
        std::cerr << "sweep: " << cells.size() - failures << "/" << cells.size()
                  << " cells succeeded; wrote " << options.out_csv << "\n";
        return failures == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_synth(const SynthOptions& options) {
    try {
        const std::vector<Dialog> dialogs = generate(options.synth);
        save_dataset(options.out_path, dialogs);
        std::cerr << "wrote " << dialogs.size() << " dialogs to " << options.out_path << "\n";
        if (!options.vocab_out_path.empty()) {
            const Vocab vocab = make_vocab(synth_vocab_tokens(options.synth));
            save_vocab(options.vocab_out_path, vocab);
            std::cerr << "wrote vocab (" << vocab.size() << " tokens) to "
                      << options.vocab_out_path << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace convqa
