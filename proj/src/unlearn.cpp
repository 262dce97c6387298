#include "unlab/unlearn.hpp"

#include <cmath>
#include <stdexcept>

#include "unlab/metrics.hpp"

namespace unlab {

std::string to_string(Method m) {
    switch (m) {
        case Method::Rmu: return "rmu";
        case Method::AdaptiveRmu: return "adaptive-rmu";
        case Method::GradientAscent: return "gradient-ascent";
        case Method::GradientDifference: return "gradient-difference";
    }
    throw std::logic_error("bad Method");
}

std::string to_string(OptimizerKind o) {
    return o == OptimizerKind::Sgd ? "sgd" : "adam";
}

Method method_from_string(const std::string& s) {
    if (s == "rmu") return Method::Rmu;
    if (s == "adaptive-rmu") return Method::AdaptiveRmu;
    if (s == "gradient-ascent") return Method::GradientAscent;
    if (s == "gradient-difference") return Method::GradientDifference;
    throw std::invalid_argument("unknown method: " + s);
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer: " + s);
}

void UnlearnConfig::validate(const ModelConfig& model_cfg) const {
    if (layer < 2 || static_cast<std::size_t>(layer) >= model_cfg.n_layers)
        throw std::invalid_argument("unlearn layer must be in [2, n_layers)");
    if (steering_coef <= 0.0) throw std::invalid_argument("steering_coef must be > 0");
    if (beta <= 0.0) throw std::invalid_argument("beta must be > 0");
    if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
    if (lr <= 0.0) throw std::invalid_argument("lr must be > 0");
    if (steps <= 0) throw std::invalid_argument("steps must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

Tensor make_control_vector(std::size_t d_model, std::uint64_t seed) {
    Rng rng(seed);
    Tensor u = Tensor::zeros({d_model});
    double sq = 0.0;
    for (double& v : u.data) {
        v = rng.uniform();
        sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm == 0.0) throw std::runtime_error("control vector degenerate");
    for (double& v : u.data) v /= norm;
    return u;
}

Var steering_loss(Tape& tape, Var h, const Tensor& target_rows, std::size_t from_row) {
    // copy, not reference: pushing nodes below may reallocate tape storage
    std::vector<std::size_t> shape = h.value().shape;
    if (shape != target_rows.shape)
        throw std::invalid_argument("steering_loss: shape mismatch");
    if (from_row >= shape.at(0))
        throw std::invalid_argument("steering_loss: from_row leaves no tokens");
    Tensor target = target_rows;
    if (from_row > 0) {
        // excluded rows match h exactly: zero contribution and zero gradient
        const Tensor& hv = h.value();
        for (std::size_t t = 0; t < from_row; ++t)
            for (std::size_t j = 0; j < target.cols(); ++j) target.at(t, j) = hv.at(t, j);
    }
    Var diff = tape.sub(h, tape.constant(target));
    Var sq = tape.mul(diff, diff);
    return tape.scale(tape.sum(sq), 1.0 / static_cast<double>(shape.at(0) - from_row));
}

Var rmu_forget_loss(Tape& tape, Var h_updated, const Tensor& u, double c,
                    std::size_t from_row) {
    Tensor target = Tensor::zeros(h_updated.value().shape);
    for (std::size_t t = 0; t < target.rows(); ++t) {
        for (std::size_t j = 0; j < target.cols(); ++j) target.at(t, j) = c * u.data[j];
    }
    return steering_loss(tape, h_updated, target, from_row);
}

Var adaptive_forget_loss(Tape& tape, Var h_updated, const Tensor& h_frozen, const Tensor& u,
                         double beta, std::size_t from_row) {
    if (h_updated.value().shape != h_frozen.shape)
        throw std::invalid_argument("adaptive_forget_loss: shape mismatch");
    Tensor target = Tensor::zeros(h_frozen.shape);
    for (std::size_t t = 0; t < target.rows(); ++t) {
        double sq = 0.0;
        for (std::size_t j = 0; j < target.cols(); ++j)
            sq += h_frozen.at(t, j) * h_frozen.at(t, j);
        double scale = beta * std::sqrt(sq);
        for (std::size_t j = 0; j < target.cols(); ++j) target.at(t, j) = scale * u.data[j];
    }
    return steering_loss(tape, h_updated, target, from_row);
}

Var rmu_retain_loss(Tape& tape, Var h_updated, const Tensor& h_frozen, std::size_t from_row) {
    return steering_loss(tape, h_updated, h_frozen, from_row);
}

std::pair<std::size_t, std::size_t> sample_pair(Rng& rng, const Corpus& corpus) {
    auto draw = [&](Split split, const std::array<std::size_t, 3>& sizes) {
        std::size_t total = sizes[0] + sizes[1] + sizes[2];
        std::uint64_t r = rng.uniform_int(total);
        int subtask = r < sizes[0] ? 1 : (r < sizes[0] + sizes[1] ? 2 : 3);
        std::vector<std::size_t> docs;
        for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
            const Document& d = corpus.documents[i];
            if (d.split == split && d.subtask == subtask) docs.push_back(i);
        }
        return docs[rng.uniform_int(docs.size())];
    };
    std::size_t f = draw(Split::Forget, corpus.spec.forget);
    std::size_t r = draw(Split::Retain, corpus.spec.retain);
    return {f, r};
}

AdamState AdamState::init(const Model& model) {
    AdamState st;
    st.m.reserve(model.params().size());
    st.v.reserve(model.params().size());
    for (const Parameter& p : model.params()) {
        st.m.push_back(Tensor::zeros(p.value.shape));
        st.v.push_back(Tensor::zeros(p.value.shape));
    }
    return st;
}

void apply_update(Model& model, AdamState& adam, OptimizerKind kind, double lr, double beta1,
                  double beta2, double eps) {
    if (kind == OptimizerKind::Adam) ++adam.t;
    for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
        Parameter& p = model.params()[pi];
        if (!p.trainable) continue;
        if (!p.grad.all_finite())
            throw std::runtime_error("non-finite gradient in " + p.name);
        if (kind == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < p.value.data.size(); ++i)
                p.value.data[i] -= lr * p.grad.data[i];
        } else {
            Tensor& m = adam.m[pi];
            Tensor& v = adam.v[pi];
            double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
            double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
            for (std::size_t i = 0; i < p.value.data.size(); ++i) {
                double g = p.grad.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
                double mhat = m.data[i] / bc1;
                double vhat = v.data[i] / bc2;
                p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        for (double& g : p.grad.data) g = 0.0;
    }
}

namespace {

std::vector<int> doc_tokens(const Tokenizer& tok, const Document& doc) {
    return tokenize_for_lm(tok, doc).ids;
}

Tensor frozen_hidden(Model& frozen, std::span<const int> tokens, int layer) {
    Tape tape(false);
    return forward(tape, frozen, tokens, {layer}).captured.at(layer).value();
}

} // namespace

Unlearner::Unlearner(Model& model, const Corpus& corpus, const UnlearnConfig& cfg)
    : model_(model),
      corpus_(corpus),
      cfg_(cfg),
      frozen_(model.clone_frozen()),
      u_(make_control_vector(model.config().d_model, cfg.seed)),
      rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull),
      adam_(AdamState::init(model)) {
    cfg_.validate(model.config());
    if (cfg_.method == Method::Rmu || cfg_.method == Method::AdaptiveRmu) {
        model_.set_trainable_window(cfg_.layer, cfg_.scope);
    } else {
        model_.set_all_trainable(true);
    }
}

StepReport Unlearner::step() {
    DocPairs pairs(static_cast<std::size_t>(cfg_.batch_size));
    for (auto& p : pairs) p = sample_pair(rng_, corpus_);
    StepReport rep = (cfg_.method == Method::Rmu || cfg_.method == Method::AdaptiveRmu)
                         ? rmu_step(pairs)
                         : baseline_step(pairs);
    rep.step = step_count_++;
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        if (b) {
            rep.forget_doc_id += ';';
            rep.retain_doc_id += ';';
        }
        rep.forget_doc_id += corpus_.documents[pairs[b].first].id;
        rep.retain_doc_id += corpus_.documents[pairs[b].second].id;
    }
    return rep;
}

StepReport Unlearner::rmu_step(const DocPairs& pairs) {
    double inv = 1.0 / static_cast<double>(pairs.size());
    Tape tape(true);
    Var forget_mean{}, retain_mean{};
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        TokenizedDoc ftd = tokenize_for_lm(corpus_.tokenizer, corpus_.documents[pairs[b].first]);
        TokenizedDoc rtd = tokenize_for_lm(corpus_.tokenizer, corpus_.documents[pairs[b].second]);
        std::size_t f_from = cfg_.completion_only_activations ? ftd.prompt_len : 0;
        std::size_t r_from = cfg_.completion_only_activations ? rtd.prompt_len : 0;
        Tensor hf_forget = frozen_hidden(frozen_, ftd.ids, cfg_.layer);
        Tensor hf_retain = frozen_hidden(frozen_, rtd.ids, cfg_.layer);

        Var hu_forget = forward(tape, model_, ftd.ids, {cfg_.layer}).captured.at(cfg_.layer);
        Var hu_retain = forward(tape, model_, rtd.ids, {cfg_.layer}).captured.at(cfg_.layer);

        Var forget =
            cfg_.method == Method::Rmu
                ? rmu_forget_loss(tape, hu_forget, u_, cfg_.steering_coef, f_from)
                : adaptive_forget_loss(tape, hu_forget, hf_forget, u_, cfg_.beta, f_from);
        Var retain = rmu_retain_loss(tape, hu_retain, hf_retain, r_from);
        forget_mean = b == 0 ? tape.scale(forget, inv)
                             : tape.add(forget_mean, tape.scale(forget, inv));
        retain_mean = b == 0 ? tape.scale(retain, inv)
                             : tape.add(retain_mean, tape.scale(retain, inv));
    }
    Var total = tape.add(forget_mean, tape.scale(retain_mean, cfg_.alpha));
    tape.backward(total);
    apply_update(model_, adam_, cfg_.optimizer, cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2,
                 cfg_.adam_eps);

    StepReport rep;
    rep.forget_loss = forget_mean.value().data[0];
    rep.retain_loss = retain_mean.value().data[0];
    rep.total_loss = total.value().data[0];
    return rep;
}

StepReport Unlearner::baseline_step(const DocPairs& pairs) {
    double inv = 1.0 / static_cast<double>(pairs.size());
    auto lm_term = [&](Tape& tape, const std::vector<int>& ids) {
        std::vector<int> inputs(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        std::vector<std::uint8_t> mask(inputs.size(), 1);
        Var logits = forward(tape, model_, inputs).logits;
        return lm_loss(tape, logits, targets, mask);
    };

    Tape tape(true);
    Var forget_mean{}, retain_mean{};
    for (std::size_t b = 0; b < pairs.size(); ++b) {
        Var lf = lm_term(tape, doc_tokens(corpus_.tokenizer, corpus_.documents[pairs[b].first]));
        forget_mean =
            b == 0 ? tape.scale(lf, inv) : tape.add(forget_mean, tape.scale(lf, inv));
        if (cfg_.method == Method::GradientDifference) {
            Var lr_ =
                lm_term(tape, doc_tokens(corpus_.tokenizer, corpus_.documents[pairs[b].second]));
            retain_mean =
                b == 0 ? tape.scale(lr_, inv) : tape.add(retain_mean, tape.scale(lr_, inv));
        }
    }
    StepReport rep;
    rep.forget_loss = forget_mean.value().data[0];
    Var total = tape.scale(forget_mean, -1.0);
    if (cfg_.method == Method::GradientDifference) {
        rep.retain_loss = retain_mean.value().data[0];
        total = tape.add(total, retain_mean);
    }
    rep.total_loss = total.value().data[0];
    tape.backward(total);
    apply_update(model_, adam_, cfg_.optimizer, cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2,
                 cfg_.adam_eps);
    return rep;
}

std::vector<StepReport> Unlearner::run(const std::function<void(const StepReport&)>& cb) {
    std::vector<StepReport> reports;
    reports.reserve(static_cast<std::size_t>(cfg_.steps));
    for (int i = 0; i < cfg_.steps; ++i) {
        reports.push_back(step());
        if (cb) cb(reports.back());
    }
    return reports;
}

SteeringDiagnostics Unlearner::diagnostics(std::span<const int> tokens, std::size_t from_row) {
    Tape t1(false);
    Tensor hu = forward(t1, model_, tokens, {cfg_.layer}).captured.at(cfg_.layer).value();
    Tensor hf = frozen_hidden(frozen_, tokens, cfg_.layer);
    if (from_row >= hu.rows())
        throw std::invalid_argument("diagnostics: from_row out of range");

    SteeringDiagnostics d;
    double hu_norm_sum = 0.0, hf_norm_sum = 0.0, cos_sum = 0.0;
    for (std::size_t t = from_row; t < hu.rows(); ++t) {
        double dot = 0.0, hu_sq = 0.0, hf_sq = 0.0;
        for (std::size_t j = 0; j < hu.cols(); ++j) {
            dot += hu.at(t, j) * u_.data[j];
            hu_sq += hu.at(t, j) * hu.at(t, j);
            hf_sq += hf.at(t, j) * hf.at(t, j);
        }
        double hu_norm = std::sqrt(hu_sq);
        hu_norm_sum += hu_norm;
        hf_norm_sum += std::sqrt(hf_sq);
        cos_sum += hu_norm > 0.0 ? dot / hu_norm : 0.0; // ‖u‖ = 1
    }
    double rows = static_cast<double>(hu.rows() - from_row);
    d.cosine_to_control = cos_sum / rows;
    d.norm_ratio = hf_norm_sum > 0.0 ? hu_norm_sum / hf_norm_sum : 0.0;
    return d;
}

double split_sc_rouge(Model& model, const Corpus& corpus, Split split,
                      std::size_t max_new_margin) {
    std::vector<std::size_t> idx = corpus.select_split_kind(split, Kind::SentenceCompletion);
    if (idx.empty()) throw std::runtime_error("split_sc_rouge: no documents");
    double acc = 0.0;
    for (std::size_t i : idx) {
        const Document& doc = corpus.documents[i];
        std::vector<int> prompt{Tokenizer::kBos};
        std::vector<int> pids = corpus.tokenizer.encode(doc.prompt);
        prompt.insert(prompt.end(), pids.begin(), pids.end());
        std::size_t budget = corpus.tokenizer.encode(doc.completion).size() + max_new_margin;
        std::vector<int> gen = greedy_decode(model, prompt, budget, Tokenizer::kEos);
        acc += rouge_l(corpus.tokenizer.decode(gen), doc.completion);
    }
    return acc / static_cast<double>(idx.size());
}

MemorizeReport memorize(Model& model, const Corpus& corpus, const MemorizeConfig& cfg,
                        const std::function<void(int, double)>& epoch_cb) {
    model.set_all_trainable(true);
    AdamState adam = AdamState::init(model);
    Rng rng(cfg.seed ^ 0xa5a5a5a55a5a5a5aull);
    std::vector<std::size_t> train = corpus.training_docs();
    if (train.empty()) throw std::runtime_error("memorize: no training documents");

    MemorizeReport report;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(train);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
            std::size_t end = std::min(start + cfg.batch_size, train.size());
            double inv = 1.0 / static_cast<double>(end - start);
            Tape tape(true);
            Var batch_loss{};
            bool first = true;
            for (std::size_t k = start; k < end; ++k) {
                const Document& doc = corpus.documents[train[k]];
                TokenizedDoc td = tokenize_for_lm(corpus.tokenizer, doc);
                const std::vector<int>& ids = td.ids;
                std::vector<int> inputs(ids.begin(), ids.end() - 1);
                std::vector<int> targets(ids.begin() + 1, ids.end());
                // completion-masked: only positions predicting completion
                // tokens (and the closing eos) contribute
                std::vector<std::uint8_t> mask(inputs.size(), 0);
                for (std::size_t i = td.prompt_len - 1; i < inputs.size(); ++i) mask[i] = 1;
                Var logits = forward(tape, model, inputs).logits;
                Var term = tape.scale(lm_loss(tape, logits, targets, mask), inv);
                batch_loss = first ? term : tape.add(batch_loss, term);
                first = false;
            }
            double lv = batch_loss.value().data[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("memorize: loss went non-finite at epoch " +
                                         std::to_string(epoch));
            epoch_loss += lv;
            ++batches;
            tape.backward(batch_loss);
            apply_update(model, adam, OptimizerKind::Adam, cfg.lr, cfg.adam_beta1,
                         cfg.adam_beta2, cfg.adam_eps);
        }
        report.epochs = epoch;
        report.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
        if (epoch_cb) epoch_cb(epoch, report.epoch_losses.back());

        if (epoch % cfg.check_every == 0 || epoch == cfg.max_epochs) {
            report.retain_rouge = split_sc_rouge(model, corpus, Split::Retain);
            report.forget_rouge = split_sc_rouge(model, corpus, Split::Forget);
            if (report.retain_rouge >= cfg.target_rouge &&
                report.forget_rouge >= cfg.target_rouge) {
                report.reached_target = true;
                break;
            }
        }
    }
    return report;
}

} // namespace unlab
