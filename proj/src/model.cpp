#include "unlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "unlab/rng.hpp"

namespace unlab {

using nlohmann::json;

void ModelConfig::validate() const {
    if (n_layers < 3) throw std::invalid_argument("config: n_layers must be >= 3 (layer windows span three layers)");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
        throw std::invalid_argument("config: d_model must be a positive multiple of n_heads");
    if (vocab_size == 0) throw std::invalid_argument("config: vocab_size must be positive");
    if (max_seq_len == 0) throw std::invalid_argument("config: max_seq_len must be positive");
}

int Model::add_param(std::string name, Tensor value) {
    params_.emplace_back(std::move(name), std::move(value));
    return static_cast<int>(params_.size()) - 1;
}

Model Model::build(const ModelConfig& config) {
    config.validate();
    Model m;
    m.cfg_ = config;
    Rng rng(config.seed);
    const std::size_t d = config.d_model, h = config.mlp_dim(), v = config.vocab_size;
    const double sigma = 0.02;

    auto gauss = [&](std::vector<std::size_t> shape) {
        return Tensor::gaussian(std::move(shape), rng, sigma);
    };

    m.tok_emb_ = m.add_param("tok_emb", gauss({v, d}));
    m.pos_emb_ = m.add_param("pos_emb", gauss({config.max_seq_len, d}));
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        std::string pfx = "layer" + std::to_string(i) + ".";
        LayerIdx li;
        li.ln1_g = m.add_param(pfx + "ln1.g", Tensor::full({d}, 1.0));
        li.ln1_b = m.add_param(pfx + "ln1.b", Tensor::zeros({d}));
        li.wq = m.add_param(pfx + "attn.wq", gauss({d, d}));
        li.wk = m.add_param(pfx + "attn.wk", gauss({d, d}));
        li.wv = m.add_param(pfx + "attn.wv", gauss({d, d}));
        li.wo = m.add_param(pfx + "attn.wo", gauss({d, d}));
        li.ln2_g = m.add_param(pfx + "ln2.g", Tensor::full({d}, 1.0));
        li.ln2_b = m.add_param(pfx + "ln2.b", Tensor::zeros({d}));
        li.w_up = m.add_param(pfx + "mlp.w_up", gauss({d, h}));
        li.b_up = m.add_param(pfx + "mlp.b_up", Tensor::zeros({h}));
        li.w_down = m.add_param(pfx + "mlp.w_down", gauss({h, d}));
        li.b_down = m.add_param(pfx + "mlp.b_down", Tensor::zeros({d}));
        m.layers_.push_back(li);
    }
    m.lnf_g_ = m.add_param("lnf.g", Tensor::full({d}, 1.0));
    m.lnf_b_ = m.add_param("lnf.b", Tensor::zeros({d}));
    m.w_head_ = m.add_param("w_head", gauss({d, v}));

    if (m.param_count() != expected_param_count(config)) {
        throw std::logic_error("model: parameter count does not match the documented formula");
    }
    return m;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += p.value.numel();
    return n;
}

// V·d + S·d  (embeddings)
// + L · (4d² + 2·d·h + h + d + 4d)  (attention, MLP, two norms)
// + 2d + d·V  (final norm, head)
std::size_t Model::expected_param_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model, h = cfg.mlp_dim();
    std::size_t per_layer = 4 * d * d + 2 * d * h + h + d + 4 * d;
    return cfg.vocab_size * d + cfg.max_seq_len * d + cfg.n_layers * per_layer + 2 * d +
           d * cfg.vocab_size;
}

std::uint64_t Model::weight_checksum() const {
    std::uint64_t hash = 1469598103934665603ull;
    for (const Parameter& p : params_) {
        hash = fnv1a64(p.name.data(), p.name.size(), hash);
        hash = fnv1a64(p.value.data.data(), p.value.data.size() * sizeof(double), hash);
    }
    return hash;
}

void Model::set_all_trainable(bool trainable) {
    for (Parameter& p : params_) p.trainable = trainable;
}

void Model::set_trainable_window(int top_layer, TrainScope scope) {
    if (top_layer < 2 || static_cast<std::size_t>(top_layer) >= cfg_.n_layers) {
        throw std::out_of_range("trainable window [" + std::to_string(top_layer - 2) + "," +
                                std::to_string(top_layer) + "] out of range for " +
                                std::to_string(cfg_.n_layers) + " layers");
    }
    set_all_trainable(false);
    for (int l = top_layer - 2; l <= top_layer; ++l) {
        const LayerIdx& li = layers_[static_cast<std::size_t>(l)];
        if (scope == TrainScope::MlpDownOnly) {
            p(li.w_down).trainable = true;
        } else {
            for (int idx : {li.ln1_g, li.ln1_b, li.wq, li.wk, li.wv, li.wo, li.ln2_g, li.ln2_b,
                            li.w_up, li.b_up, li.w_down, li.b_down}) {
                p(idx).trainable = true;
            }
        }
    }
}

Model Model::clone_frozen() const {
    Model m = *this;
    m.set_all_trainable(false);
    for (Parameter& p : m.params_) {
        std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
    }
    return m;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

constexpr std::uint64_t kCkptMagic = 0x554c4142434b5031ull; // "ULABCKP1"

} // namespace

void Model::save(const std::string& path) const {
    json header;
    header["config"] = {{"n_layers", cfg_.n_layers},   {"d_model", cfg_.d_model},
                        {"n_heads", cfg_.n_heads},     {"vocab_size", cfg_.vocab_size},
                        {"max_seq_len", cfg_.max_seq_len}, {"mlp_hidden", cfg_.mlp_hidden},
                        {"seed", cfg_.seed}};
    json plist = json::array();
    for (const Parameter& p : params_) {
        plist.push_back({{"name", p.name}, {"shape", p.value.shape}});
    }
    header["params"] = plist;
    header["checksum"] = weight_checksum();
    std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    write_u64(os, kCkptMagic);
    write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Parameter& p : params_) {
        os.write(reinterpret_cast<const char*>(p.value.data.data()),
                 static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    if (read_u64(is) != kCkptMagic) throw std::runtime_error("bad checkpoint magic: " + path);
    std::uint64_t hlen = read_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);

    ModelConfig cfg;
    const json& jc = header.at("config");
    cfg.n_layers = jc.at("n_layers");
    cfg.d_model = jc.at("d_model");
    cfg.n_heads = jc.at("n_heads");
    cfg.vocab_size = jc.at("vocab_size");
    cfg.max_seq_len = jc.at("max_seq_len");
    cfg.mlp_hidden = jc.at("mlp_hidden");
    cfg.seed = jc.at("seed");

    Model m = build(cfg);
    if (header.at("params").size() != m.params_.size()) {
        throw std::runtime_error("checkpoint parameter list does not match architecture");
    }
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
        Parameter& p = m.params_[i];
        const json& jp = header.at("params").at(i);
        if (jp.at("name") != p.name) {
            throw std::runtime_error("checkpoint parameter order mismatch at " + p.name);
        }
        is.read(reinterpret_cast<char*>(p.value.data.data()),
                static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    }
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    if (m.weight_checksum() != header.at("checksum").get<std::uint64_t>()) {
        throw std::runtime_error("checkpoint checksum mismatch: " + path);
    }
    return m;
}

ActivationTrace ForwardResult::trace() const {
    ActivationTrace t;
    for (const auto& [layer, var] : captured) t[layer] = var.value();
    return t;
}

ForwardResult forward(Tape& tape, Model& model, std::span<const int> tokens,
                      const std::set<int>& capture) {
    const ModelConfig& cfg = model.config();
    if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
    if (tokens.size() > cfg.max_seq_len) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(tokens.size()) +
                                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (int l : capture) {
        if (l < 0 || static_cast<std::size_t>(l) >= cfg.n_layers)
            throw std::out_of_range("forward: capture layer " + std::to_string(l) + " out of range");
    }

    const std::size_t T = tokens.size();
    const std::size_t dh = cfg.head_dim();
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<int> pos_ids(T);
    for (std::size_t i = 0; i < T; ++i) pos_ids[i] = static_cast<int>(i);

    Var tok_table = tape.leaf(model.p(model.tok_emb()));
    Var pos_table = tape.leaf(model.p(model.pos_emb()));
    Var x = tape.add(tape.embedding(tok_table, tokens), tape.embedding(pos_table, pos_ids));

    ForwardResult result;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const Model::LayerIdx& li = model.layer(i);
        Var a = tape.layer_norm(x, tape.leaf(model.p(li.ln1_g)), tape.leaf(model.p(li.ln1_b)));
        Var q = tape.matmul(a, tape.leaf(model.p(li.wq)));
        Var k = tape.matmul(a, tape.leaf(model.p(li.wk)));
        Var v = tape.matmul(a, tape.leaf(model.p(li.wv)));
        std::vector<Var> heads;
        for (std::size_t hidx = 0; hidx < cfg.n_heads; ++hidx) {
            Var qh = tape.slice_cols(q, hidx * dh, dh);
            Var kh = tape.slice_cols(k, hidx * dh, dh);
            Var vh = tape.slice_cols(v, hidx * dh, dh);
            Var probs = tape.softmax_rows(tape.causal_masked_scores(qh, kh, score_scale));
            heads.push_back(tape.matmul(probs, vh));
        }
        Var attn = tape.matmul(tape.concat_cols(heads), tape.leaf(model.p(li.wo)));
        x = tape.add(x, attn);

        Var b = tape.layer_norm(x, tape.leaf(model.p(li.ln2_g)), tape.leaf(model.p(li.ln2_b)));
        Var up = tape.gelu(tape.add_row_broadcast(tape.matmul(b, tape.leaf(model.p(li.w_up))),
                                                  tape.leaf(model.p(li.b_up))));
        Var down = tape.add_row_broadcast(tape.matmul(up, tape.leaf(model.p(li.w_down))),
                                          tape.leaf(model.p(li.b_down)));
        x = tape.add(x, down);

        if (capture.count(static_cast<int>(i))) {
            result.captured[static_cast<int>(i)] = x;
        }
    }
    Var xf = tape.layer_norm(x, tape.leaf(model.p(model.lnf_g())), tape.leaf(model.p(model.lnf_b())));
    result.logits = tape.matmul(xf, tape.leaf(model.p(model.w_head())));
    return result;
}

Var lm_loss(Tape& tape, Var logits, std::span<const int> targets,
            std::span<const std::uint8_t> mask) {
    return tape.cross_entropy(logits, targets, mask);
}

std::vector<int> greedy_decode(Model& model, std::span<const int> prompt, std::size_t max_new,
                               int eos_id) {
    std::vector<int> ids(prompt.begin(), prompt.end());
    std::vector<int> generated;
    for (std::size_t step = 0; step < max_new; ++step) {
        if (ids.size() >= model.config().max_seq_len) break;
        Tape tape(false);
        ForwardResult fr = forward(tape, model, ids);
        const Tensor& logits = fr.logits.value();
        const std::size_t last = logits.rows() - 1;
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits.at(last, j) > logits.at(last, best)) best = j;
        }
        int tok = static_cast<int>(best);
        if (tok == eos_id) break;
        generated.push_back(tok);
        ids.push_back(tok);
    }
    return generated;
}

} // namespace unlab
