#include "convqa/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "convqa/rng.hpp"
#include "json.hpp"

namespace convqa {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, config JSON, named raw tensors,
// trailing CRC32 over everything before it.
// ---------------------------------------------------------------------------

constexpr char kMagic[8] = {'C', 'Q', 'A', 'C', 'K', 'P', 'T', '\0'};

uint32_t crc32_update(uint32_t crc, const void* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xffffffffu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

struct CheckedWriter {
    std::ofstream out;
    uint32_t crc = 0;

    void write(const void* data, size_t len) {
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        crc = crc32_update(crc, data, len);
    }
    template <class T>
    void write_pod(const T& v) {
        write(&v, sizeof(T));
    }
    void write_string(const std::string& s) {
        const auto len = static_cast<uint64_t>(s.size());
        write_pod(len);
        write(s.data(), s.size());
    }
};

struct CheckedReader {
    std::ifstream in;
    uint32_t crc = 0;

    void read(void* data, size_t len) {
        in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (static_cast<size_t>(in.gcount()) != len)
            throw TrainerError("checkpoint file truncated");
        crc = crc32_update(crc, data, len);
    }
    template <class T>
    T read_pod() {
        T v;
        read(&v, sizeof(T));
        return v;
    }
    std::string read_string(uint64_t max_len = 1ull << 30) {
        const auto len = read_pod<uint64_t>();
        if (len > max_len) throw TrainerError("checkpoint string field too large");
        std::string s(len, '\0');
        read(s.data(), len);
        return s;
    }
};

json model_config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"hidden", c.hidden},        {"layers", c.layers},
            {"heads", c.heads},           {"ffn_size", c.ffn_size},    {"max_positions", c.max_positions},
            {"dropout_rate", c.dropout_rate}, {"seed", c.seed},        {"use_hae", c.use_hae}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.hidden = j.at("hidden");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.ffn_size = j.at("ffn_size");
    c.max_positions = j.at("max_positions");
    c.dropout_rate = j.at("dropout_rate");
    c.seed = j.at("seed");
    c.use_hae = j.at("use_hae");
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"weight_decay", c.weight_decay},
            {"warmup_fraction", c.warmup_fraction},
            {"total_steps", c.total_steps},
            {"batch_size", c.batch_size},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.seed},
            {"clip_norm", c.clip_norm},
            {"n_threads", c.n_threads},
            {"log_timing", c.log_timing}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.lr = j.at("lr");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.eps = j.at("eps");
    c.weight_decay = j.at("weight_decay");
    c.warmup_fraction = j.at("warmup_fraction");
    c.total_steps = j.at("total_steps");
    c.batch_size = j.at("batch_size");
    c.checkpoint_every = j.at("checkpoint_every");
    c.seed = j.at("seed");
    c.clip_norm = j.at("clip_norm");
    c.n_threads = j.at("n_threads");
    c.log_timing = j.at("log_timing");
    return c;
}

json featurizer_config_to_json(const FeaturizerConfig& c) {
    return {{"max_seq_len", c.max_seq_len},
            {"doc_stride", c.doc_stride},
            {"max_question_len", c.max_question_len},
            {"history_mode", to_string(c.history_mode)}};
}

FeaturizerConfig featurizer_config_from_json(const json& j) {
    FeaturizerConfig c;
    c.max_seq_len = j.at("max_seq_len");
    c.doc_stride = j.at("doc_stride");
    c.max_question_len = j.at("max_question_len");
    c.history_mode = history_mode_from_string(j.at("history_mode"));
    return c;
}

void write_tensors(CheckedWriter& w, ModelParams& params, const std::string& prefix) {
    for (const TensorRef& r : tensor_refs(params)) {
        w.write_string(prefix + r.name);
        const uint8_t dtype = sizeof(Scalar) == 8 ? 0 : 1;  // 0: f64, 1: f32
        w.write_pod(dtype);
        w.write_pod(static_cast<uint64_t>(r.rows));
        w.write_pod(static_cast<uint64_t>(r.cols));
        w.write(r.data, static_cast<size_t>(r.size()) * sizeof(Scalar));
    }
}

void read_tensors(CheckedReader& rd, ModelParams& params, const std::string& prefix) {
    for (const TensorRef& r : tensor_refs(params)) {
        const std::string name = rd.read_string(4096);
        if (name != prefix + r.name)
            throw TrainerError("checkpoint tensor order mismatch: expected '" + prefix + r.name +
                               "', found '" + name + "'");
        const auto dtype = rd.read_pod<uint8_t>();
        if (dtype != (sizeof(Scalar) == 8 ? 0 : 1))
            throw TrainerError("checkpoint dtype does not match this build");
        const auto rows = rd.read_pod<uint64_t>();
        const auto cols = rd.read_pod<uint64_t>();
        if (rows != static_cast<uint64_t>(r.rows) || cols != static_cast<uint64_t>(r.cols))
            throw TrainerError("checkpoint tensor shape mismatch for '" + name + "'");
        rd.read(r.data, static_cast<size_t>(r.size()) * sizeof(Scalar));
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    if (lr <= 0.0) throw TrainerError("learning rate must be > 0");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw TrainerError("warmup_fraction must be in [0, 1)");
    if (total_steps < 1) throw TrainerError("total_steps must be >= 1");
    if (batch_size < 1) throw TrainerError("batch_size must be >= 1");
    if (checkpoint_every < 1) throw TrainerError("checkpoint_every must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw TrainerError("betas must be in [0, 1)");
    if (eps <= 0.0) throw TrainerError("eps must be > 0");
    if (n_threads < 1) throw TrainerError("n_threads must be >= 1");
}

double lr_at(int64_t step, const TrainConfig& config) {
    if (step < 0 || step > config.total_steps) throw TrainerError("step out of schedule range");
    const double total = static_cast<double>(config.total_steps);
    const double warmup = config.warmup_fraction * total;
    const double s = static_cast<double>(step);
    if (s < warmup) return config.lr * s / warmup;
    if (total == warmup) return config.lr;
    return config.lr * (total - s) / (total - warmup);
}

void adamw_step(ModelParams& params, ModelParams& grads, OptimizerState& state, double lr_t,
                const TrainConfig& config) {
    state.step += 1;
    const auto t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const auto beta1 = static_cast<Scalar>(config.beta1);
    const auto beta2 = static_cast<Scalar>(config.beta2);

    auto prefs = tensor_refs(params);
    auto grefs = tensor_refs(grads);
    auto mrefs = tensor_refs(state.m);
    auto vrefs = tensor_refs(state.v);
    for (size_t i = 0; i < prefs.size(); ++i) {
        Eigen::Map<Matrix> p(prefs[i].data, prefs[i].rows, prefs[i].cols);
        Eigen::Map<const Matrix> g(grefs[i].data, grefs[i].rows, grefs[i].cols);
        Eigen::Map<Matrix> m(mrefs[i].data, mrefs[i].rows, mrefs[i].cols);
        Eigen::Map<Matrix> v(vrefs[i].data, vrefs[i].rows, vrefs[i].cols);

        m = beta1 * m + (Scalar(1) - beta1) * g;
        v = beta2 * v.array().matrix() + (Scalar(1) - beta2) * g.array().square().matrix();
        const auto mhat = (m.array() / static_cast<Scalar>(bc1)).matrix();
        const auto vhat = (v.array() / static_cast<Scalar>(bc2)).matrix();
        const double lambda = prefs[i].decay ? config.weight_decay : 0.0;
        p.array() -= static_cast<Scalar>(lr_t) *
                     (mhat.array() / (vhat.array().sqrt() + static_cast<Scalar>(config.eps)) +
                      static_cast<Scalar>(lambda) * p.array());
        if (!p.allFinite())
            throw TrainerError("non-finite update for parameter '" + prefs[i].name + "'");
    }
}

double clip_gradients(ModelParams& grads, double clip_norm) {
    double sum_sq = 0.0;
    auto refs = tensor_refs(grads);
    for (const TensorRef& r : refs) {
        Eigen::Map<const Matrix> g(r.data, r.rows, r.cols);
        sum_sq += static_cast<double>(g.array().square().sum());
    }
    const double norm = std::sqrt(sum_sq);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const auto scale = static_cast<Scalar>(clip_norm / norm);
        for (const TensorRef& r : refs) Eigen::Map<Matrix>(r.data, r.rows, r.cols) *= scale;
    }
    return norm;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        CheckedWriter w;
        w.out.open(tmp, std::ios::binary | std::ios::trunc);
        if (!w.out) throw TrainerError("cannot write checkpoint: " + tmp);

        w.write(kMagic, sizeof(kMagic));
        w.write_pod(ckpt.version);

        json header = {{"model", model_config_to_json(ckpt.model_config)},
                       {"train", train_config_to_json(ckpt.train_config)},
                       {"featurizer", featurizer_config_to_json(ckpt.featurizer_config)},
                       {"selector", {{"j", ckpt.selector_config.j}, {"max_j", ckpt.selector_config.max_j}}},
                       {"step", ckpt.step},
                       {"opt_step", ckpt.opt.step}};
        json rng = json::array();
        for (uint64_t wstate : ckpt.rng_state) rng.push_back(wstate);
        header["rng_state"] = rng;
        w.write_string(header.dump());

        auto& mutable_ckpt = const_cast<Checkpoint&>(ckpt);  // tensor_refs wants mutable access
        write_tensors(w, mutable_ckpt.params, "params/");
        write_tensors(w, mutable_ckpt.opt.m, "adam_m/");
        write_tensors(w, mutable_ckpt.opt.v, "adam_v/");

        const uint32_t crc = w.crc;
        w.out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
        if (!w.out) throw TrainerError("checkpoint write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    CheckedReader rd;
    rd.in.open(path, std::ios::binary);
    if (!rd.in) throw TrainerError("cannot open checkpoint: " + path);

    char magic[8];
    rd.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw TrainerError("not a checkpoint file: " + path);
    Checkpoint ckpt;
    ckpt.version = rd.read_pod<uint32_t>();
    if (ckpt.version > kCheckpointVersion)
        throw TrainerError("checkpoint version " + std::to_string(ckpt.version) +
                           " is newer than supported version " +
                           std::to_string(kCheckpointVersion));

    json header;
    try {
        header = json::parse(rd.read_string());
    } catch (const json::parse_error& e) {
        throw TrainerError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ckpt.model_config = model_config_from_json(header.at("model"));
    ckpt.train_config = train_config_from_json(header.at("train"));
    ckpt.featurizer_config = featurizer_config_from_json(header.at("featurizer"));
    ckpt.selector_config.j = header.at("selector").at("j");
    ckpt.selector_config.max_j = header.at("selector").at("max_j");
    ckpt.step = header.at("step");
    size_t i = 0;
    for (const auto& wstate : header.at("rng_state")) ckpt.rng_state[i++] = wstate.get<uint64_t>();

    ckpt.params = init_params(ckpt.model_config);
    ckpt.opt.m = zeros_like(ckpt.params);
    ckpt.opt.v = zeros_like(ckpt.params);
    ckpt.opt.step = header.at("opt_step");
    read_tensors(rd, ckpt.params, "params/");
    read_tensors(rd, ckpt.opt.m, "adam_m/");
    read_tensors(rd, ckpt.opt.v, "adam_v/");

    const uint32_t computed = rd.crc;
    uint32_t stored = 0;
    rd.in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (rd.in.gcount() != sizeof(stored)) throw TrainerError("checkpoint file truncated");
    if (stored != computed)
        throw TrainerError("checkpoint checksum mismatch (corrupt file): " + path);
    return ckpt;
}

TrainResult train(const std::vector<EncodedWindow>& windows, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::string& out_dir,
                  const Checkpoint* resume, const FeaturizerConfig& featurizer_config,
                  const SelectorConfig& selector_config) {
    model_config.validate();
    train_config.validate();

    std::vector<const EncodedWindow*> trainable;
    for (const EncodedWindow& w : windows)
        if (w.has_labels()) trainable.push_back(&w);
    if (trainable.empty())
        throw TrainerError(
            "no trainable windows: every window's gold span fell outside its passage slice; "
            "check max_seq_len/doc_stride against the passage lengths");

    namespace fs = std::filesystem;
    std::ofstream metrics;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const auto mode = resume ? std::ios::app : std::ios::trunc;
        metrics.open(out_dir + "/metrics.jsonl", std::ios::binary | mode);
        if (!metrics) throw TrainerError("cannot write metrics log in " + out_dir);
    }

    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    if (resume) {
        ckpt = *resume;
        if (ckpt.train_config.total_steps != train_config.total_steps)
            throw TrainerError("resume with a different total_steps is not supported");
    } else {
        ckpt.model_config = model_config;
        ckpt.train_config = train_config;
        ckpt.featurizer_config = featurizer_config;
        ckpt.selector_config = selector_config;
        ckpt.params = init_params(model_config);
        ckpt.opt.m = zeros_like(ckpt.params);
        ckpt.opt.v = zeros_like(ckpt.params);
        ckpt.opt.step = 0;
        ckpt.step = 0;
        Rng master(train_config.seed);
        ckpt.rng_state = master.state();
    }

    const size_t n = trainable.size();
    const auto batch_size = static_cast<size_t>(train_config.batch_size);
    const int64_t batches_per_epoch = static_cast<int64_t>((n + batch_size - 1) / batch_size);

    std::vector<size_t> order;
    int64_t order_epoch = -1;
    const auto epoch_order = [&](int64_t epoch) {
        if (order_epoch != epoch) {
            // Pure function of (seed, epoch) so a resumed run rebuilds the
            // same batch sequence without replaying RNG draws.
            order = random_permutation(n, derive_seed(train_config.seed,
                                                      0x9000000000000000ULL + static_cast<uint64_t>(epoch)));
            order_epoch = epoch;
        }
        return order;
    };

    using Clock = std::chrono::steady_clock;
    for (int64_t step = ckpt.step + 1; step <= train_config.total_steps; ++step) {
        const auto t0 = Clock::now();
        const int64_t epoch = (step - 1) / batches_per_epoch;
        const int64_t batch_index = (step - 1) % batches_per_epoch;
        const auto& ord = epoch_order(epoch);

        std::vector<const EncodedWindow*> batch;
        const size_t begin = static_cast<size_t>(batch_index) * batch_size;
        const size_t end = std::min(n, begin + batch_size);
        batch.reserve(end - begin);
        for (size_t i = begin; i < end; ++i) batch.push_back(trainable[ord[i]]);

        auto [loss, grads] =
            forward_backward(batch, ckpt.params, model_config,
                             derive_seed(train_config.seed, static_cast<uint64_t>(step)),
                             train_config.n_threads);
        clip_gradients(grads, train_config.clip_norm);
        const double lr_t = lr_at(step, train_config);
        adamw_step(ckpt.params, grads, ckpt.opt, lr_t, train_config);
        ckpt.step = step;

        result.logs.push_back({step, lr_t, loss});
        if (metrics.is_open()) {
            metrics << "{\"step\":" << step << ",\"lr\":" << format_double(lr_t)
                    << ",\"loss\":" << format_double(loss);
            if (train_config.log_timing) {
                const double wall_ms =
                    std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
                metrics << ",\"wall_ms\":" << format_double(wall_ms);
            }
            metrics << "}\n";
            metrics.flush();
        }

        const bool from_cadence = step % train_config.checkpoint_every == 0;
        if (!out_dir.empty() && (from_cadence || step == train_config.total_steps)) {
            const std::string path = out_dir + "/ckpt-" + std::to_string(step) + ".bin";
            save_checkpoint(path, ckpt);
            result.checkpoint_paths.push_back(path);
        }
    }
    return result;
}

}  // namespace convqa
