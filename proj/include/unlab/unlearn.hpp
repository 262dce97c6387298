#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "unlab/corpus.hpp"
#include "unlab/model.hpp"
#include "unlab/rng.hpp"

namespace unlab {

enum class Method { Rmu, AdaptiveRmu, GradientAscent, GradientDifference };
enum class OptimizerKind { Sgd, Adam };

std::string to_string(Method m);
std::string to_string(OptimizerKind o);
Method method_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);

struct UnlearnConfig {
    Method method = Method::AdaptiveRmu;
    int layer = 5;                            // top of the {l-2, l-1, l} window
    TrainScope scope = TrainScope::MlpDownOnly;
    double steering_coef = 20.0;              // c, fixed-target magnitude
    double beta = 5.0;                        // adaptive-target scale
    double alpha = 100.0;                     // retain-loss weight
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps = 500;
    // forget/retain document pairs sampled per step; the steering losses are
    // averaged over the batch before the optimizer update
    int batch_size = 1;
    // average the steering losses over completion-token activations only
    // (default: all token positions of the sample)
    bool completion_only_activations = false;
    std::uint64_t seed = 0;

    void validate(const ModelConfig& model_cfg) const; // throws std::invalid_argument
};

// Random steering direction: coordinates uniform in [0,1), then L2-normalized
// to a unit vector. Shape [d_model].
Tensor make_control_vector(std::size_t d_model, std::uint64_t seed);

// Mean over rows of the squared L2 distance between hidden state h[T×d] and
// the per-row target: (1/T) Σ_t ‖h_t − target_t‖². No division by d.
// from_row > 0 restricts the average (and gradients) to rows [from_row, T).
Var steering_loss(Tape& tape, Var h, const Tensor& target_rows, std::size_t from_row = 0);

// Fixed RMU forget target rows: every row is c·u.
Var rmu_forget_loss(Tape& tape, Var h_updated, const Tensor& u, double c,
                    std::size_t from_row = 0);
// Adaptive forget target rows: β·‖h_frozen(t)‖·u.
Var adaptive_forget_loss(Tape& tape, Var h_updated, const Tensor& h_frozen, const Tensor& u,
                         double beta, std::size_t from_row = 0);
// Retain target rows: the frozen model's own hidden states.
Var rmu_retain_loss(Tape& tape, Var h_updated, const Tensor& h_frozen,
                    std::size_t from_row = 0);

// Two-stage sample: subtask with probability proportional to the split's
// base-document count, then uniform over that subtask's documents (both
// kinds). Returns (forget doc index, retain doc index).
std::pair<std::size_t, std::size_t> sample_pair(Rng& rng, const Corpus& corpus);

struct AdamState {
    std::vector<Tensor> m, v; // indexed like Model::params()
    long t = 0;

    static AdamState init(const Model& model);
};

// One optimizer update from the accumulated Parameter::grad of every
// trainable parameter; grads are zeroed afterwards.
void apply_update(Model& model, AdamState& adam, OptimizerKind kind, double lr, double beta1,
                  double beta2, double eps);

struct StepReport {
    int step = 0;
    double forget_loss = 0.0;   // batch means for RMU methods
    double retain_loss = 0.0;
    double total_loss = 0.0;    // forget + alpha·retain (RMU methods)
    std::string forget_doc_id;  // ';'-joined when batch_size > 1
    std::string retain_doc_id;
};

struct SteeringDiagnostics {
    double cosine_to_control = 0.0; // mean over rows of cos(h_updated(t), u)
    double norm_ratio = 0.0;        // mean ‖h_updated(t)‖ / mean ‖h_frozen(t)‖
};

class Unlearner {
public:
    Unlearner(Model& model, const Corpus& corpus, const UnlearnConfig& cfg);

    StepReport step();
    // Runs the configured number of steps; cb (optional) sees every report.
    std::vector<StepReport> run(const std::function<void(const StepReport&)>& cb = {});

    const Tensor& control_vector() const { return u_; }
    const Model& frozen() const { return frozen_; }
    const UnlearnConfig& config() const { return cfg_; }

    // Hidden-state steering diagnostics at the hooked layer for `tokens`.
    // from_row > 0 averages over rows [from_row, T) only (e.g. completion tokens).
    SteeringDiagnostics diagnostics(std::span<const int> tokens, std::size_t from_row = 0);

private:
    using DocPairs = std::vector<std::pair<std::size_t, std::size_t>>;
    StepReport rmu_step(const DocPairs& pairs);
    StepReport baseline_step(const DocPairs& pairs);

    Model& model_;
    const Corpus& corpus_;
    UnlearnConfig cfg_;
    Model frozen_;
    Tensor u_;
    Rng rng_;
    AdamState adam_;
    int step_count_ = 0;
};

struct MemorizeConfig {
    double lr = 1e-3;
    int max_epochs = 200;
    std::size_t batch_size = 8;
    double target_rouge = 0.95; // sentence-completion ROUGE-L on retain and forget
    int check_every = 5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
};

struct MemorizeReport {
    int epochs = 0;
    bool reached_target = false;
    double retain_rouge = 0.0;
    double forget_rouge = 0.0;
    std::vector<double> epoch_losses;
};

// Full-parameter Adam training on retain ∪ forget until both splits decode
// their sentence completions at the target ROUGE-L. Throws std::runtime_error
// if the loss goes non-finite.
MemorizeReport memorize(Model& model, const Corpus& corpus, const MemorizeConfig& cfg,
                        const std::function<void(int, double)>& epoch_cb = {});

// Mean greedy-decode ROUGE-L over the split's sentence-completion documents.
double split_sc_rouge(Model& model, const Corpus& corpus, Split split,
                      std::size_t max_new_margin = 4);

} // namespace unlab
