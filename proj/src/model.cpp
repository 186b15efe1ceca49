#include "convqa/model.hpp"

#include <cmath>
#include <thread>

#include "convqa/rng.hpp"

namespace convqa {

namespace {

constexpr Scalar kLayerNormEps = static_cast<Scalar>(1e-12);
constexpr Scalar kMaskPenalty = static_cast<Scalar>(-1e9);
constexpr Scalar kGeluCoeff = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
constexpr Scalar kGeluCubic = static_cast<Scalar>(0.044715);

bool all_finite(const Matrix& m) { return m.allFinite(); }

void check_finite(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) throw ModelError("NaN detected in " + what);
}

/// y = LayerNorm(x) rows, also returning per-row mean and reciprocal stddev.
Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, Vector& mu,
                  Vector& rstd) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    mu.resize(rows);
    rstd.resize(rows);
    Matrix y(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Scalar m = x.row(i).mean();
        const Scalar var = (x.row(i).array() - m).square().sum() / static_cast<Scalar>(cols);
        const Scalar r = Scalar(1) / std::sqrt(var + kLayerNormEps);
        mu(i) = m;
        rstd(i) = r;
        y.row(i) = (((x.row(i).array() - m) * r) * gain.transpose().array() +
                    bias.transpose().array())
                       .matrix();
    }
    return y;
}

/// Backward through LayerNorm; accumulates dgain/dbias, returns dx.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& x, const Vector& mu, const Vector& rstd,
                           const Vector& gain, Vector& dgain, Vector& dbias) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    Matrix dx(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto xhat = ((x.row(i).array() - mu(i)) * rstd(i)).matrix();
        dgain += (dy.row(i).array() * xhat.array()).matrix().transpose();
        dbias += dy.row(i).transpose();
        const auto dxhat = (dy.row(i).array() * gain.transpose().array()).matrix();
        const Scalar mean_dxhat = dxhat.mean();
        const Scalar mean_dxhat_xhat =
            (dxhat.array() * xhat.array()).sum() / static_cast<Scalar>(cols);
        dx.row(i) =
            (rstd(i) * (dxhat.array() - mean_dxhat - xhat.array() * mean_dxhat_xhat)).matrix();
    }
    return dx;
}

Scalar gelu_scalar(Scalar x) {
    const Scalar u = kGeluCoeff * (x + kGeluCubic * x * x * x);
    return Scalar(0.5) * x * (Scalar(1) + std::tanh(u));
}

Scalar gelu_grad_scalar(Scalar x) {
    const Scalar u = kGeluCoeff * (x + kGeluCubic * x * x * x);
    const Scalar t = std::tanh(u);
    const Scalar du = kGeluCoeff * (Scalar(1) + Scalar(3) * kGeluCubic * x * x);
    return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * du;
}

/// Row-wise softmax with max subtraction.
void softmax_rows_inplace(Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Scalar mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp().matrix();
        m.row(i) /= m.row(i).sum();
    }
}

/// Inverted-dropout multiplier matrix: entries are 0 or 1/(1-p). Empty when
/// dropout is inactive. Draw count depends only on the shape, never on
/// parameter values, so masks are stable under finite differencing.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Matrix mask(rows, cols);
    const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            mask(i, j) = rng.uniform() < p ? Scalar(0) : keep_scale;
    return mask;
}

struct LayerCache {
    Matrix x_in;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head
    Matrix ctx;
    Matrix attn_drop;  // empty when dropout inactive
    Matrix r1;
    Vector mu1, rstd1;
    Matrix n1;
    Matrix h1;  // pre-GELU
    Matrix g;   // gelu(h1)
    Matrix ffn_drop;
    Matrix r2;
    Vector mu2, rstd2;
};

struct WindowCache {
    Matrix emb_sum;
    Vector emb_mu, emb_rstd;
    Matrix emb_norm;
    Matrix emb_drop;
    Matrix x0;
    std::vector<LayerCache> layers;
    Matrix hidden;
    SpanLogits logits;
};

Vector mask_penalties(const std::vector<int>& attention_mask) {
    Vector m(static_cast<Eigen::Index>(attention_mask.size()));
    for (size_t j = 0; j < attention_mask.size(); ++j)
        m(static_cast<Eigen::Index>(j)) = attention_mask[j] ? Scalar(0) : kMaskPenalty;
    return m;
}

Matrix embedding_sums(const EncodedWindow& window, const ModelParams& params,
                      const ModelConfig& config) {
    const auto seq = static_cast<Eigen::Index>(window.token_ids.size());
    if (seq > params.position_table.rows())
        throw ModelError("sequence length " + std::to_string(seq) +
                         " exceeds max_positions " + std::to_string(params.position_table.rows()));
    Matrix sums(seq, config.hidden);
    for (Eigen::Index i = 0; i < seq; ++i) {
        const int id = window.token_ids[static_cast<size_t>(i)];
        const int seg = window.segment_ids[static_cast<size_t>(i)];
        const int hae = window.hae_ids[static_cast<size_t>(i)];
        if (id < 0 || id >= config.vocab_size)
            throw ModelError("token id " + std::to_string(id) + " out of vocabulary range");
        if (seg < 0 || seg > 1 || hae < 0 || hae > 1)
            throw ModelError("segment/hae id out of range at position " + std::to_string(i));
        sums.row(i) = params.token_table.row(id) + params.segment_table.row(seg) +
                      params.position_table.row(i);
        if (config.use_hae) sums.row(i) += params.hae_table.row(hae);
    }
    return sums;
}

/// Shared forward pass; fills the cache when requested (training/backward).
Matrix forward_impl(const EncodedWindow& window, const ModelParams& params,
                    const ModelConfig& config, RunMode mode, uint64_t dropout_seed,
                    WindowCache* cache, ForwardTrace* trace) {
    const bool drop = mode == RunMode::train && config.dropout_rate > 0.0;
    Rng rng(dropout_seed);

    Matrix emb_sum = embedding_sums(window, params, config);
    if (trace) trace->embedding_sums = emb_sum;
    Vector emb_mu, emb_rstd;
    Matrix emb_norm = layer_norm(emb_sum, params.emb_ln_g, params.emb_ln_b, emb_mu, emb_rstd);
    Matrix emb_drop;
    Matrix x = emb_norm;
    if (drop) {
        emb_drop = dropout_mask(x.rows(), x.cols(), config.dropout_rate, rng);
        x.array() *= emb_drop.array();
    }
    check_finite(x, "embedding output");

    if (cache) {
        cache->emb_sum = std::move(emb_sum);
        cache->emb_mu = emb_mu;
        cache->emb_rstd = emb_rstd;
        cache->emb_norm = std::move(emb_norm);
        cache->emb_drop = emb_drop;
        cache->x0 = x;
        cache->layers.resize(static_cast<size_t>(config.layers));
    }
    if (trace) trace->attn_probs.resize(static_cast<size_t>(config.layers));

    const Vector penalties = mask_penalties(window.attention_mask);
    const int n_heads = config.heads;
    const int d_head = config.head_dim();
    const auto inv_sqrt_d = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d_head)));

    for (int l = 0; l < config.layers; ++l) {
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];
        LayerCache* lc = cache ? &cache->layers[static_cast<size_t>(l)] : nullptr;
        if (lc) lc->x_in = x;

        Matrix q = (x * lp.wq).rowwise() + lp.bq.transpose();
        Matrix k = (x * lp.wk).rowwise() + lp.bk.transpose();
        Matrix v = (x * lp.wv).rowwise() + lp.bv.transpose();

        Matrix ctx(x.rows(), x.cols());
        if (lc) lc->probs.resize(static_cast<size_t>(n_heads));
        if (trace) trace->attn_probs[static_cast<size_t>(l)].resize(static_cast<size_t>(n_heads));
        for (int a = 0; a < n_heads; ++a) {
            const auto col0 = static_cast<Eigen::Index>(a) * d_head;
            Matrix scores = q.middleCols(col0, d_head) * k.middleCols(col0, d_head).transpose();
            scores *= inv_sqrt_d;
            scores.rowwise() += penalties.transpose();
            softmax_rows_inplace(scores);  // scores now holds the attention probs
            ctx.middleCols(col0, d_head).noalias() = scores * v.middleCols(col0, d_head);
            if (trace) trace->attn_probs[static_cast<size_t>(l)][static_cast<size_t>(a)] = scores;
            if (lc) lc->probs[static_cast<size_t>(a)] = std::move(scores);
        }

        Matrix attn_out = (ctx * lp.wo).rowwise() + lp.bo.transpose();
        Matrix attn_drop;
        if (drop) {
            attn_drop = dropout_mask(attn_out.rows(), attn_out.cols(), config.dropout_rate, rng);
            attn_out.array() *= attn_drop.array();
        }
        Matrix r1 = x + attn_out;
        Vector mu1, rstd1;
        Matrix n1 = layer_norm(r1, lp.ln1_g, lp.ln1_b, mu1, rstd1);

        Matrix h1 = (n1 * lp.w1).rowwise() + lp.b1.transpose();
        Matrix g = h1.unaryExpr([](Scalar t) { return gelu_scalar(t); });
        Matrix ffn_out = (g * lp.w2).rowwise() + lp.b2.transpose();
        Matrix ffn_drop;
        if (drop) {
            ffn_drop = dropout_mask(ffn_out.rows(), ffn_out.cols(), config.dropout_rate, rng);
            ffn_out.array() *= ffn_drop.array();
        }
        Matrix r2 = n1 + ffn_out;
        Vector mu2, rstd2;
        x = layer_norm(r2, lp.ln2_g, lp.ln2_b, mu2, rstd2);

        if (!all_finite(x)) throw ModelError("NaN detected in encoder layer " + std::to_string(l));

        if (lc) {
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->ctx = std::move(ctx);
            lc->attn_drop = std::move(attn_drop);
            lc->r1 = std::move(r1);
            lc->mu1 = std::move(mu1);
            lc->rstd1 = std::move(rstd1);
            lc->n1 = std::move(n1);
            lc->h1 = std::move(h1);
            lc->g = std::move(g);
            lc->ffn_drop = std::move(ffn_drop);
            lc->r2 = std::move(r2);
            lc->mu2 = std::move(mu2);
            lc->rstd2 = std::move(rstd2);
        }
    }
    if (cache) cache->hidden = x;
    return x;
}

Scalar cross_entropy(const Vector& logits, int label) {
    const Scalar mx = logits.maxCoeff();
    const Scalar lse = mx + std::log((logits.array() - mx).exp().sum());
    return lse - logits(label);
}

/// d(cross entropy)/d(logits) = softmax(logits) - onehot(label).
Vector cross_entropy_grad(const Vector& logits, int label) {
    Vector g = softmax(logits);
    g(label) -= Scalar(1);
    return g;
}

void check_labels(const EncodedWindow& window) {
    if (!window.has_labels())
        throw ModelError("window with dropped labels reached the loss (dialog '" +
                         window.dialog_id + "' turn " + std::to_string(window.turn_index) +
                         "); the featurizer should have filtered it");
    const int seq = window.seq_len();
    if (window.start_label < 0 || window.start_label >= seq || window.end_label < 0 ||
        window.end_label >= seq)
        throw ModelError("span label out of range");
}

/// Per-window loss and gradient accumulation into `grads`.
Scalar backward_window(const EncodedWindow& window, const ModelParams& params,
                       const ModelConfig& config, uint64_t dropout_seed, ModelParams& grads) {
    check_labels(window);
    WindowCache cache;
    forward_impl(window, params, config, RunMode::train, dropout_seed, &cache, nullptr);

    const Matrix& hidden = cache.hidden;
    SpanLogits logits = span_logits(hidden, params);
    const Scalar loss = Scalar(0.5) * (cross_entropy(logits.start, window.start_label) +
                                       cross_entropy(logits.end, window.end_label));

    Vector dstart = cross_entropy_grad(logits.start, window.start_label) * Scalar(0.5);
    Vector dend = cross_entropy_grad(logits.end, window.end_label) * Scalar(0.5);

    // Span head: start_logits = hidden * s_start.
    Matrix dx = dstart * params.s_start.transpose() + dend * params.s_end.transpose();
    grads.s_start += hidden.transpose() * dstart;
    grads.s_end += hidden.transpose() * dend;

    const int n_heads = config.heads;
    const int d_head = config.head_dim();
    const auto inv_sqrt_d = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d_head)));

    for (int l = config.layers - 1; l >= 0; --l) {
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];
        LayerParams& lg = grads.layers[static_cast<size_t>(l)];
        LayerCache& lc = cache.layers[static_cast<size_t>(l)];

        // x_out = LN2(r2), r2 = n1 + dropout(ffn_out)
        Matrix dr2 = layer_norm_backward(dx, lc.r2, lc.mu2, lc.rstd2, lp.ln2_g, lg.ln2_g, lg.ln2_b);
        Matrix dn1 = dr2;
        Matrix dffn_out = std::move(dr2);
        if (lc.ffn_drop.size() > 0) dffn_out.array() *= lc.ffn_drop.array();

        // ffn_out = gelu(n1*w1 + b1) * w2 + b2
        lg.w2 += lc.g.transpose() * dffn_out;
        lg.b2 += dffn_out.colwise().sum().transpose();
        Matrix dg = dffn_out * lp.w2.transpose();
        Matrix dh1 =
            dg.array() * lc.h1.unaryExpr([](Scalar t) { return gelu_grad_scalar(t); }).array();
        lg.w1 += lc.n1.transpose() * dh1;
        lg.b1 += dh1.colwise().sum().transpose();
        dn1 += dh1 * lp.w1.transpose();

        // n1 = LN1(r1), r1 = x_in + dropout(attn_out)
        Matrix dr1 =
            layer_norm_backward(dn1, lc.r1, lc.mu1, lc.rstd1, lp.ln1_g, lg.ln1_g, lg.ln1_b);
        dx = dr1;  // residual branch back to x_in
        Matrix dattn_out = std::move(dr1);
        if (lc.attn_drop.size() > 0) dattn_out.array() *= lc.attn_drop.array();

        // attn_out = ctx * wo + bo
        lg.wo += lc.ctx.transpose() * dattn_out;
        lg.bo += dattn_out.colwise().sum().transpose();
        Matrix dctx = dattn_out * lp.wo.transpose();

        Matrix dq(dx.rows(), dx.cols());
        Matrix dk(dx.rows(), dx.cols());
        Matrix dv(dx.rows(), dx.cols());
        for (int a = 0; a < n_heads; ++a) {
            const auto col0 = static_cast<Eigen::Index>(a) * d_head;
            const Matrix& probs = lc.probs[static_cast<size_t>(a)];
            Matrix dprobs = dctx.middleCols(col0, d_head) * lc.v.middleCols(col0, d_head).transpose();
            dv.middleCols(col0, d_head).noalias() = probs.transpose() * dctx.middleCols(col0, d_head);
            // Softmax rows: ds = p .* (dp - sum(dp .* p, row))
            Matrix dscores(probs.rows(), probs.cols());
            for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                const Scalar dot = dprobs.row(i).dot(probs.row(i));
                dscores.row(i) =
                    (probs.row(i).array() * (dprobs.row(i).array() - dot)).matrix();
            }
            dq.middleCols(col0, d_head).noalias() =
                dscores * lc.k.middleCols(col0, d_head) * inv_sqrt_d;
            dk.middleCols(col0, d_head).noalias() =
                dscores.transpose() * lc.q.middleCols(col0, d_head) * inv_sqrt_d;
        }

        lg.wq += lc.x_in.transpose() * dq;
        lg.bq += dq.colwise().sum().transpose();
        lg.wk += lc.x_in.transpose() * dk;
        lg.bk += dk.colwise().sum().transpose();
        lg.wv += lc.x_in.transpose() * dv;
        lg.bv += dv.colwise().sum().transpose();
        dx += dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    }

    // Embedding stack: x0 = dropout(LN(emb_sum))
    if (cache.emb_drop.size() > 0) dx.array() *= cache.emb_drop.array();
    Matrix demb_sum = layer_norm_backward(dx, cache.emb_sum, cache.emb_mu, cache.emb_rstd,
                                          params.emb_ln_g, grads.emb_ln_g, grads.emb_ln_b);
    for (Eigen::Index i = 0; i < demb_sum.rows(); ++i) {
        const int id = window.token_ids[static_cast<size_t>(i)];
        const int seg = window.segment_ids[static_cast<size_t>(i)];
        grads.token_table.row(id) += demb_sum.row(i);
        grads.segment_table.row(seg) += demb_sum.row(i);
        grads.position_table.row(i) += demb_sum.row(i);
        if (config.use_hae)
            grads.hae_table.row(window.hae_ids[static_cast<size_t>(i)]) += demb_sum.row(i);
    }
    return loss;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1 || hidden < 1 || layers < 0 || heads < 1 || max_positions < 1)
        throw ModelError("model dimensions must be positive");
    if (hidden % heads != 0)
        throw ModelError("hidden size " + std::to_string(hidden) + " not divisible by " +
                         std::to_string(heads) + " heads");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ModelError("dropout_rate must be in [0, 1)");
}

std::vector<TensorRef> tensor_refs(ModelParams& p) {
    std::vector<TensorRef> refs;
    auto add_m = [&](const std::string& name, Matrix& m, bool decay) {
        refs.push_back({name, m.data(), m.rows(), m.cols(), decay});
    };
    auto add_v = [&](const std::string& name, Vector& v, bool decay) {
        refs.push_back({name, v.data(), v.rows(), 1, decay});
    };
    add_m("embeddings/token_table", p.token_table, true);
    add_m("embeddings/segment_table", p.segment_table, true);
    add_m("embeddings/position_table", p.position_table, true);
    add_m("embeddings/hae_table", p.hae_table, true);
    add_v("embeddings/ln_gain", p.emb_ln_g, false);
    add_v("embeddings/ln_bias", p.emb_ln_b, false);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + "/";
        LayerParams& lp = p.layers[l];
        add_m(prefix + "attn_wq", lp.wq, true);
        add_v(prefix + "attn_bq", lp.bq, false);
        add_m(prefix + "attn_wk", lp.wk, true);
        add_v(prefix + "attn_bk", lp.bk, false);
        add_m(prefix + "attn_wv", lp.wv, true);
        add_v(prefix + "attn_bv", lp.bv, false);
        add_m(prefix + "attn_wo", lp.wo, true);
        add_v(prefix + "attn_bo", lp.bo, false);
        add_m(prefix + "ffn_w1", lp.w1, true);
        add_v(prefix + "ffn_b1", lp.b1, false);
        add_m(prefix + "ffn_w2", lp.w2, true);
        add_v(prefix + "ffn_b2", lp.b2, false);
        add_v(prefix + "ln1_gain", lp.ln1_g, false);
        add_v(prefix + "ln1_bias", lp.ln1_b, false);
        add_v(prefix + "ln2_gain", lp.ln2_g, false);
        add_v(prefix + "ln2_bias", lp.ln2_b, false);
    }
    add_v("span/start_vector", p.s_start, true);
    add_v("span/end_vector", p.s_end, true);
    return refs;
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const auto h = static_cast<Eigen::Index>(config.hidden);
    const auto ffn = static_cast<Eigen::Index>(config.ffn());

    auto trunc_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                m(i, j) = static_cast<Scalar>(rng.truncated_normal(0.02));
        return m;
    };
    auto trunc_vector = [&](Eigen::Index n) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<Scalar>(rng.truncated_normal(0.02));
        return v;
    };

    ModelParams p;
    p.token_table = trunc_matrix(config.vocab_size, h);
    p.segment_table = trunc_matrix(2, h);
    p.position_table = trunc_matrix(config.max_positions, h);
    p.hae_table = Matrix::Zero(2, h);  // training starts at the history-free model
    p.emb_ln_g = Vector::Ones(h);
    p.emb_ln_b = Vector::Zero(h);
    p.layers.resize(static_cast<size_t>(config.layers));
    for (auto& lp : p.layers) {
        lp.wq = trunc_matrix(h, h);
        lp.bq = Vector::Zero(h);
        lp.wk = trunc_matrix(h, h);
        lp.bk = Vector::Zero(h);
        lp.wv = trunc_matrix(h, h);
        lp.bv = Vector::Zero(h);
        lp.wo = trunc_matrix(h, h);
        lp.bo = Vector::Zero(h);
        lp.w1 = trunc_matrix(h, ffn);
        lp.b1 = Vector::Zero(ffn);
        lp.w2 = trunc_matrix(ffn, h);
        lp.b2 = Vector::Zero(h);
        lp.ln1_g = Vector::Ones(h);
        lp.ln1_b = Vector::Zero(h);
        lp.ln2_g = Vector::Ones(h);
        lp.ln2_b = Vector::Zero(h);
    }
    p.s_start = trunc_vector(h);
    p.s_end = trunc_vector(h);
    return p;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for (TensorRef& r : tensor_refs(z))
        Eigen::Map<Matrix>(r.data, r.rows, r.cols).setZero();
    return z;
}

Matrix embed(const EncodedWindow& window, const ModelParams& params, const ModelConfig& config,
             RunMode mode, uint64_t dropout_seed, ForwardTrace* trace) {
    const bool drop = mode == RunMode::train && config.dropout_rate > 0.0;
    Rng rng(dropout_seed);
    Matrix sums = embedding_sums(window, params, config);
    if (trace) trace->embedding_sums = sums;
    Vector mu, rstd;
    Matrix out = layer_norm(sums, params.emb_ln_g, params.emb_ln_b, mu, rstd);
    if (drop) out.array() *= dropout_mask(out.rows(), out.cols(), config.dropout_rate, rng).array();
    return out;
}

EncoderOutput encoder_forward(const Matrix& embeddings, const std::vector<int>& attention_mask,
                              const ModelParams& params, const ModelConfig& config, RunMode mode,
                              uint64_t dropout_seed, ForwardTrace* trace) {
    if (embeddings.rows() != static_cast<Eigen::Index>(attention_mask.size()))
        throw ModelError("attention mask length does not match sequence length");
    const bool drop = mode == RunMode::train && config.dropout_rate > 0.0;
    Rng rng(dropout_seed);
    if (trace) trace->attn_probs.resize(static_cast<size_t>(config.layers));

    const Vector penalties = mask_penalties(attention_mask);
    const int d_head = config.head_dim();
    const auto inv_sqrt_d = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d_head)));

    Matrix x = embeddings;
    for (int l = 0; l < config.layers; ++l) {
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];
        Matrix q = (x * lp.wq).rowwise() + lp.bq.transpose();
        Matrix k = (x * lp.wk).rowwise() + lp.bk.transpose();
        Matrix v = (x * lp.wv).rowwise() + lp.bv.transpose();
        Matrix ctx(x.rows(), x.cols());
        if (trace) trace->attn_probs[static_cast<size_t>(l)].resize(static_cast<size_t>(config.heads));
        for (int a = 0; a < config.heads; ++a) {
            const auto col0 = static_cast<Eigen::Index>(a) * d_head;
            Matrix scores = q.middleCols(col0, d_head) * k.middleCols(col0, d_head).transpose();
            scores *= inv_sqrt_d;
            scores.rowwise() += penalties.transpose();
            softmax_rows_inplace(scores);
            ctx.middleCols(col0, d_head).noalias() = scores * v.middleCols(col0, d_head);
            if (trace) trace->attn_probs[static_cast<size_t>(l)][static_cast<size_t>(a)] = std::move(scores);
        }
        Matrix attn_out = (ctx * lp.wo).rowwise() + lp.bo.transpose();
        if (drop)
            attn_out.array() *=
                dropout_mask(attn_out.rows(), attn_out.cols(), config.dropout_rate, rng).array();
        Vector mu1, rstd1;
        Matrix n1 = layer_norm(x + attn_out, lp.ln1_g, lp.ln1_b, mu1, rstd1);
        Matrix h1 = (n1 * lp.w1).rowwise() + lp.b1.transpose();
        Matrix g = h1.unaryExpr([](Scalar t) { return gelu_scalar(t); });
        Matrix ffn_out = (g * lp.w2).rowwise() + lp.b2.transpose();
        if (drop)
            ffn_out.array() *=
                dropout_mask(ffn_out.rows(), ffn_out.cols(), config.dropout_rate, rng).array();
        Vector mu2, rstd2;
        x = layer_norm(n1 + ffn_out, lp.ln2_g, lp.ln2_b, mu2, rstd2);
        if (!all_finite(x)) throw ModelError("NaN detected in encoder layer " + std::to_string(l));
    }
    return {std::move(x)};
}

SpanLogits span_logits(const Matrix& hidden, const ModelParams& params) {
    check_finite(hidden, "token representations");
    return {hidden * params.s_start, hidden * params.s_end};
}

Vector softmax(const Vector& logits) {
    const Scalar mx = logits.maxCoeff();
    Vector p = (logits.array() - mx).exp().matrix();
    p /= p.sum();
    return p;
}

SpanDistribution span_distribution(const SpanLogits& logits) {
    return {softmax(logits.start), softmax(logits.end)};
}

double span_loss(const SpanLogits& logits, int start_label, int end_label) {
    const int seq = static_cast<int>(logits.start.size());
    if (start_label == kDroppedLabel || end_label == kDroppedLabel)
        throw ModelError("window with dropped labels reached the loss");
    if (start_label < 0 || start_label >= seq || end_label < 0 || end_label >= seq)
        throw ModelError("span label out of range");
    return 0.5 * (static_cast<double>(cross_entropy(logits.start, start_label)) +
                  static_cast<double>(cross_entropy(logits.end, end_label)));
}

SpanLogits window_logits(const EncodedWindow& window, const ModelParams& params,
                         const ModelConfig& config) {
    const Matrix x = forward_impl(window, params, config, RunMode::eval, 0, nullptr, nullptr);
    return span_logits(x, params);
}

std::pair<double, ModelParams> forward_backward(const std::vector<const EncodedWindow*>& batch,
                                                const ModelParams& params,
                                                const ModelConfig& config, uint64_t dropout_seed,
                                                int n_threads) {
    if (batch.empty()) throw ModelError("forward_backward on an empty batch");
    const size_t n = batch.size();

    // One gradient buffer per window, summed in window order afterwards, so
    // the result is bit-identical for any thread count.
    std::vector<ModelParams> window_grads;
    window_grads.reserve(n);
    for (size_t w = 0; w < n; ++w) window_grads.push_back(zeros_like(params));
    std::vector<Scalar> window_losses(n, Scalar(0));

    auto work = [&](size_t w) {
        window_losses[w] = backward_window(*batch[w], params, config, derive_seed(dropout_seed, w),
                                           window_grads[w]);
    };
    const int threads = std::max(1, std::min<int>(n_threads, static_cast<int>(n)));
    if (threads == 1) {
        for (size_t w = 0; w < n; ++w) work(w);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (size_t w = static_cast<size_t>(t); w < n; w += static_cast<size_t>(threads))
                    work(w);
            });
        for (auto& th : pool) th.join();
    }

    ModelParams grads = std::move(window_grads[0]);
    auto total_refs = tensor_refs(grads);
    for (size_t w = 1; w < n; ++w) {
        auto refs = tensor_refs(window_grads[w]);
        for (size_t r = 0; r < refs.size(); ++r)
            Eigen::Map<Matrix>(total_refs[r].data, total_refs[r].rows, total_refs[r].cols) +=
                Eigen::Map<const Matrix>(refs[r].data, refs[r].rows, refs[r].cols);
    }
    const auto scale = Scalar(1) / static_cast<Scalar>(n);
    double loss = 0.0;
    for (size_t w = 0; w < n; ++w) loss += static_cast<double>(window_losses[w]);
    loss /= static_cast<double>(n);
    for (TensorRef& r : total_refs) {
        Eigen::Map<Matrix> g(r.data, r.rows, r.cols);
        g *= scale;
        if (!g.allFinite()) throw ModelError("NaN detected in gradient of " + r.name);
    }
    return {loss, std::move(grads)};
}

}  // namespace convqa
