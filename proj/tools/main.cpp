#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "convqa/cli.hpp"

namespace {

using namespace convqa;

void add_model_flags(CLI::App* cmd, ModelConfig& model) {
    cmd->add_option("--hidden", model.hidden, "token representation size")->capture_default_str();
    cmd->add_option("--layers", model.layers, "encoder layers")->capture_default_str();
    cmd->add_option("--heads", model.heads, "attention heads")->capture_default_str();
    cmd->add_option("--ffn", model.ffn_size, "FFN inner size (0 = 4*hidden)")->capture_default_str();
    cmd->add_option("--dropout", model.dropout_rate, "dropout rate")->capture_default_str();
}

void add_featurizer_flags(CLI::App* cmd, FeaturizerConfig& fc, SelectorConfig* selector,
                          bool with_mode) {
    cmd->add_option("--max-seq-len", fc.max_seq_len, "max packed sequence length")
        ->capture_default_str();
    cmd->add_option("--stride", fc.doc_stride, "sliding window stride")->capture_default_str();
    cmd->add_option("--max-question-len", fc.max_question_len, "max question tokens")
        ->capture_default_str();
    if (with_mode) {
        cmd->add_option_function<std::string>(
               "--history-mode",
               [&fc](const std::string& s) { fc.history_mode = history_mode_from_string(s); },
               "history modeling: none, hae, phqa, pha")
            ->check(CLI::IsMember({"none", "hae", "phqa", "pha"}))
            ->default_str(to_string(fc.history_mode));
    }
    if (selector) {
        cmd->add_option("--j", selector->j, "number of immediate previous turns to keep")
            ->capture_default_str();
        cmd->add_option("--max-j", selector->max_j, "upper bound on --j")->capture_default_str();
    }
}

void add_train_flags(CLI::App* cmd, TrainConfig& tc) {
    cmd->add_option("--lr", tc.lr, "initial learning rate")->capture_default_str();
    cmd->add_option("--total-steps", tc.total_steps, "optimizer steps")->required();
    cmd->add_option("--batch-size", tc.batch_size, "windows per batch")->capture_default_str();
    cmd->add_option("--checkpoint-every", tc.checkpoint_every, "checkpoint cadence in steps")
        ->capture_default_str();
    cmd->add_option("--warmup-fraction", tc.warmup_fraction, "linear warmup fraction")
        ->capture_default_str();
    cmd->add_option("--weight-decay", tc.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    cmd->add_option("--clip-norm", tc.clip_norm, "global gradient norm clip (<=0 disables)")
        ->capture_default_str();
    cmd->add_option("--threads", tc.n_threads, "threads for per-batch gradient work")
        ->capture_default_str();
    cmd->add_flag("--log-timing", tc.log_timing,
                  "add wall_ms to metrics.jsonl (breaks byte-for-byte reproducibility)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"convqa: a small conversational question answering engine"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; flags override file values");
    app.allow_config_extras(CLI::config_extras_mode::error);

    uint64_t seed = 0;
    app.add_option("--seed", seed, "master seed for init, shuffling and dropout")
        ->capture_default_str();

    TrainOptions train_opts;
    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    train_cmd->add_option("--data", train_opts.data_path, "dataset JSON")->required();
    train_cmd->add_option("--vocab", train_opts.vocab_path, "vocab file, one token per line")
        ->required();
    train_cmd->add_option("--out", train_opts.out_dir, "output directory")->required();
    train_cmd->add_flag("--quac", train_opts.load.quac_v02, "accept native QuAC v0.2 field names");
    train_cmd->add_flag("--append-cannotanswer", train_opts.load.append_cannot_answer,
                        "append the CANNOTANSWER suffix to passages");
    train_opts.model.hidden = 64;
    train_opts.model.layers = 2;
    train_opts.model.heads = 2;
    add_model_flags(train_cmd, train_opts.model);
    add_featurizer_flags(train_cmd, train_opts.featurizer, &train_opts.selector, true);
    add_train_flags(train_cmd, train_opts.train);
    train_cmd->add_option("--dump-windows", train_opts.dump_windows_path,
                          "write the featurized windows as JSON lines");

    PredictOptions predict_opts;
    auto* predict_cmd = app.add_subcommand("predict", "predict answers with a checkpoint");
    predict_cmd->add_option("--checkpoint", predict_opts.checkpoint_path, "checkpoint file")
        ->required();
    predict_cmd->add_option("--data", predict_opts.data_path, "dataset JSON")->required();
    predict_cmd->add_option("--vocab", predict_opts.vocab_path, "vocab file")->required();
    predict_cmd->add_option("--out", predict_opts.out_path, "predictions JSON-lines output")
        ->required();
    predict_cmd->add_flag("--quac", predict_opts.load.quac_v02,
                          "accept native QuAC v0.2 field names");
    predict_cmd->add_flag("--append-cannotanswer", predict_opts.load.append_cannot_answer,
                          "append the CANNOTANSWER suffix to passages");
    predict_cmd->add_option("--max-answer-len", predict_opts.predict.max_answer_len,
                            "max answer span length in tokens")
        ->capture_default_str();
    predict_cmd->add_option("--n-best", predict_opts.predict.n_best, "n-best spans per window")
        ->capture_default_str();
    predict_cmd
        ->add_option_function<std::string>(
            "--history-source",
            [&](const std::string& s) {
                predict_opts.predict.history_source = history_source_from_string(s);
            },
            "history answers at inference: gold or predicted")
        ->check(CLI::IsMember({"gold", "predicted"}))
        ->default_str("gold");
    int override_j = -1;
    predict_cmd->add_option("--j", override_j, "override the checkpoint's history depth");

    EvaluateOptions eval_opts;
    auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against a dataset");
    eval_cmd->add_option("--predictions", eval_opts.predictions_path, "predictions JSON-lines")
        ->required();
    eval_cmd->add_option("--data", eval_opts.dataset_path, "dataset JSON")->required();
    eval_cmd->add_option("--out", eval_opts.out_path, "report output (default: stdout)");
    eval_cmd->add_flag("--quac", eval_opts.load.quac_v02, "accept native QuAC v0.2 field names");
    eval_cmd->add_flag("--append-cannotanswer", eval_opts.load.append_cannot_answer,
                       "append the CANNOTANSWER suffix to passages");
    bool first_ref_only = false;
    eval_cmd->add_flag("--first-reference-only", first_ref_only,
                       "score against references[0] instead of max over references");
    double min_human_f1 = -1.0;
    eval_cmd->add_option("--min-human-f1", min_human_f1,
                         "drop questions whose human F1 is below this threshold");

    SweepOptions sweep_opts;
    auto* sweep_cmd =
        app.add_subcommand("sweep", "train/evaluate a grid of (mode, j, seed) cells");
    sweep_cmd->add_option("--data", sweep_opts.data_path, "training dataset JSON")->required();
    sweep_cmd->add_option("--dev-data", sweep_opts.dev_data_path, "evaluation dataset JSON")
        ->required();
    sweep_cmd->add_option("--vocab", sweep_opts.vocab_path, "vocab file")->required();
    sweep_cmd->add_option("--out", sweep_opts.out_csv, "summary CSV output")->required();
    sweep_cmd->add_flag("--quac", sweep_opts.load.quac_v02, "accept native QuAC v0.2 field names");
    sweep_cmd->add_option("--modes", sweep_opts.modes, "history modes to sweep")
        ->delimiter(',')
        ->capture_default_str();
    sweep_cmd->add_option("--j-values", sweep_opts.j_values, "history depths to sweep")
        ->delimiter(',')
        ->capture_default_str();
    sweep_cmd->add_option("--seeds", sweep_opts.seeds, "seeds per cell")
        ->delimiter(',')
        ->capture_default_str();
    sweep_cmd->add_option("--workers", sweep_opts.workers, "parallel sweep cells")
        ->capture_default_str();
    sweep_opts.model.hidden = 64;
    sweep_opts.model.layers = 2;
    sweep_opts.model.heads = 2;
    add_model_flags(sweep_cmd, sweep_opts.model);
    add_featurizer_flags(sweep_cmd, sweep_opts.featurizer, nullptr, false);
    add_train_flags(sweep_cmd, sweep_opts.train);
    sweep_cmd->add_option("--max-answer-len", sweep_opts.predict.max_answer_len,
                          "max answer span length in tokens")
        ->capture_default_str();

    SynthOptions synth_opts;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic coreference dataset");
    synth_cmd->add_option("--out", synth_opts.out_path, "dataset JSON output")->required();
    synth_cmd->add_option("--vocab-out", synth_opts.vocab_out_path, "matching vocab file output");
    synth_cmd->add_option("--n-dialogs", synth_opts.synth.n_dialogs, "number of dialogs")
        ->required();
    synth_cmd->add_option("--turns", synth_opts.synth.turns_per_dialog, "turns per dialog")
        ->required();
    synth_cmd->add_option("--passage-len", synth_opts.synth.passage_len_tokens,
                          "passage length in tokens")
        ->required();
    synth_cmd->add_option("--vocab-size", synth_opts.synth.vocab_size, "filler word types")
        ->capture_default_str()
        ->default_val(50);
    synth_cmd->add_option("--coref-rate", synth_opts.synth.coreference_rate,
                          "probability a turn is a coreference turn")
        ->capture_default_str();
    synth_cmd->add_option("--answer-len", synth_opts.synth.answer_len, "answer segment tokens")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }

    if (train_cmd->parsed()) {
        train_opts.model.seed = seed;
        train_opts.train.seed = seed;
        return cmd_train(train_opts);
    }
    if (predict_cmd->parsed()) {
        if (override_j >= 0) predict_opts.override_j = override_j;
        return cmd_predict(predict_opts);
    }
    if (eval_cmd->parsed()) {
        eval_opts.score.max_over_references = !first_ref_only;
        if (min_human_f1 >= 0.0) eval_opts.score.min_human_f1 = min_human_f1;
        return cmd_evaluate(eval_opts);
    }
    if (sweep_cmd->parsed()) {
        if (sweep_opts.seeds.empty()) sweep_opts.seeds = {seed};
        return cmd_sweep(sweep_opts);
    }
    if (synth_cmd->parsed()) {
        synth_opts.synth.seed = seed;
        return cmd_synth(synth_opts);
    }
    std::cerr << "no subcommand given\n";
    return 2;
}
