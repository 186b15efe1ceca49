#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "convqa/featurizer.hpp"

namespace convqa {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#ifdef CONVQA_SCALAR_FLOAT
using Scalar = float;
#else
using Scalar = double;
#endif

// Row-major so row i is the i-th token's representation, matching the
// checkpoint's raw tensor layout.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ModelConfig {
    int vocab_size = 0;
    int hidden = 0;
    int layers = 0;
    int heads = 0;
    int ffn_size = 0;  // 0 means the conventional 4*hidden
    int max_positions = 0;
    double dropout_rate = 0.1;
    uint64_t seed = 0;
    bool use_hae = true;  // disabling skips the history-answer embedding add entirely

    int ffn() const { return ffn_size > 0 ? ffn_size : 4 * hidden; }
    int head_dim() const { return hidden / heads; }
    void validate() const;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;      // hidden x hidden
    Vector bq, bk, bv, bo;      // hidden
    Matrix w1, w2;              // hidden x ffn, ffn x hidden
    Vector b1, b2;              // ffn, hidden
    Vector ln1_g, ln1_b;        // post-attention layer norm
    Vector ln2_g, ln2_b;        // post-FFN layer norm
};

/// All learnable arrays. hae_table row 0 marks tokens outside history answers
/// and row 1 tokens inside them; it starts at zero so an untrained model is
/// exactly the history-free baseline.
struct ModelParams {
    Matrix token_table;     // vocab x hidden
    Matrix segment_table;   // 2 x hidden
    Matrix position_table;  // max_positions x hidden
    Matrix hae_table;       // 2 x hidden
    Vector emb_ln_g, emb_ln_b;
    std::vector<LayerParams> layers;
    Vector s_start, s_end;  // span head vectors
};

struct TensorRef {
    std::string name;
    Scalar* data;
    Eigen::Index rows, cols;
    bool decay;  // participates in weight decay (biases and layer norms do not)

    Eigen::Index size() const { return rows * cols; }
};

/// Fixed-order enumeration of every parameter tensor; the order defines the
/// init draw sequence and the checkpoint record order.
std::vector<TensorRef> tensor_refs(ModelParams& params);

ModelParams init_params(const ModelConfig& config);
ModelParams zeros_like(const ModelParams& params);

enum class RunMode { train, eval };

struct EncoderOutput {
    Matrix hidden;  // seq_len x hidden, one row per token
};

struct SpanDistribution {
    Vector start_probs, end_probs;  // each sums to 1
};

/// Test/debug capture of intermediate activations.
struct ForwardTrace {
    Matrix embedding_sums;                  // pre-layer-norm embedding rows
    std::vector<std::vector<Matrix>> attn_probs;  // [layer][head], seq x seq
};

Matrix embed(const EncodedWindow& window, const ModelParams& params, const ModelConfig& config,
             RunMode mode, uint64_t dropout_seed, ForwardTrace* trace = nullptr);

EncoderOutput encoder_forward(const Matrix& embeddings, const std::vector<int>& attention_mask,
                              const ModelParams& params, const ModelConfig& config, RunMode mode,
                              uint64_t dropout_seed, ForwardTrace* trace = nullptr);

struct SpanLogits {
    Vector start, end;
};

SpanLogits span_logits(const Matrix& hidden, const ModelParams& params);
SpanDistribution span_distribution(const SpanLogits& logits);

/// Mean of the start and end cross-entropy at the gold labels.
double span_loss(const SpanLogits& logits, int start_label, int end_label);

/// Full eval-mode forward for one window.
SpanLogits window_logits(const EncodedWindow& window, const ModelParams& params,
                         const ModelConfig& config);

/// Mean loss over the batch and its exact gradients for every parameter
/// tensor. Dropout masks are a pure function of (dropout_seed, window
/// ordinal), so repeated calls are bit-identical. Per-window work may run on
/// n_threads; the reduction order is fixed regardless.
std::pair<double, ModelParams> forward_backward(const std::vector<const EncodedWindow*>& batch,
                                                const ModelParams& params,
                                                const ModelConfig& config, uint64_t dropout_seed,
                                                int n_threads = 1);

Vector softmax(const Vector& logits);

}  // namespace convqa
