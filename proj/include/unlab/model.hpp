#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "unlab/tape.hpp"
#include "unlab/tensor.hpp"

namespace unlab {

struct ModelConfig {
    std::size_t n_layers = 6;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 128;
    std::size_t mlp_hidden = 0; // 0 → 2·d_model
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t mlp_dim() const { return mlp_hidden ? mlp_hidden : 2 * d_model; }
    void validate() const; // throws std::invalid_argument
};

// Post-block residual-stream hidden states, keyed by layer index.
using ActivationTrace = std::map<int, Tensor>;

enum class TrainScope { MlpDownOnly, FullLayer };

// Decoder-only transformer: learned token + position embeddings, pre-norm
// blocks (causal multi-head attention, GELU MLP), final norm, linear head.
class Model {
public:
    // parameters initialized from seeded N(0, 0.02²); norms start at identity
    static Model build(const ModelConfig& config);

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    std::size_t param_count() const;
    // closed form asserted against construction
    static std::size_t expected_param_count(const ModelConfig& cfg);

    std::uint64_t weight_checksum() const;

    void set_all_trainable(bool trainable);
    // marks exactly layers {l-2, l-1, l}; everything else frozen
    void set_trainable_window(int top_layer, TrainScope scope);
    Model clone_frozen() const;

    void save(const std::string& path) const;
    static Model load(const std::string& path);

    // Per-layer parameter handles (indices into params_).
    struct LayerIdx {
        int ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_up, b_up, w_down, b_down;
    };
    Parameter& p(int idx) { return params_[static_cast<std::size_t>(idx)]; }
    const Parameter& p(int idx) const { return params_[static_cast<std::size_t>(idx)]; }
    const LayerIdx& layer(std::size_t i) const { return layers_.at(i); }
    int tok_emb() const { return tok_emb_; }
    int pos_emb() const { return pos_emb_; }
    int lnf_g() const { return lnf_g_; }
    int lnf_b() const { return lnf_b_; }
    int w_head() const { return w_head_; }

private:
    Model() = default;
    int add_param(std::string name, Tensor value);

    ModelConfig cfg_;
    std::vector<Parameter> params_;
    std::vector<LayerIdx> layers_;
    int tok_emb_ = -1, pos_emb_ = -1, lnf_g_ = -1, lnf_b_ = -1, w_head_ = -1;
};

struct ForwardResult {
    Var logits;                  // T×V
    std::map<int, Var> captured; // live tape handles for captured layers

    ActivationTrace trace() const;
};

// Causal forward pass; capture must be a subset of [0, n_layers).
ForwardResult forward(Tape& tape, Model& model, std::span<const int> tokens,
                      const std::set<int>& capture = {});

// Mean cross-entropy over masked-in positions of next-token targets.
Var lm_loss(Tape& tape, Var logits, std::span<const int> targets,
            std::span<const std::uint8_t> mask);

// Greedy decode: argmax continuation (lowest index wins ties) until eos_id,
// max_new tokens, or the context window is exhausted. Returns new ids only.
std::vector<int> greedy_decode(Model& model, std::span<const int> prompt, std::size_t max_new,
                               int eos_id);

} // namespace unlab
