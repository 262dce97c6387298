#include "unlab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace unlab {

using nlohmann::json;

std::vector<std::string> rouge_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    // one-row DP over b
    std::vector<std::size_t> row(b.size() + 1, 0);
    for (const std::string& wa : a) {
        std::size_t diag = 0; // row_prev[j-1]
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t up = row[j];
            row[j] = (wa == b[j - 1]) ? diag + 1 : std::max(row[j], row[j - 1]);
            diag = up;
        }
    }
    return row[b.size()];
}

} // namespace

double rouge_l(const std::string& candidate, const std::string& reference, bool recall_only) {
    std::vector<std::string> cand = rouge_words(candidate);
    std::vector<std::string> ref = rouge_words(reference);
    if (cand.empty() || ref.empty()) return 0.0;
    double lcs = static_cast<double>(lcs_length(cand, ref));
    if (lcs == 0.0) return 0.0;
    double recall = lcs / static_cast<double>(ref.size());
    if (recall_only) return recall;
    double precision = lcs / static_cast<double>(cand.size());
    return 2.0 * precision * recall / (precision + recall);
}

std::string normalize_for_exact_match(const std::string& s) {
    std::string out;
    bool in_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

double exact_match(const std::string& candidate, const std::string& reference) {
    return normalize_for_exact_match(candidate) == normalize_for_exact_match(reference) ? 1.0
                                                                                        : 0.0;
}

double task_aggregate(const std::vector<RegurgitationCell>& cells) {
    if (cells.size() != 12) throw std::invalid_argument("task_aggregate needs 12 cells");
    bool seen[3][2][2] = {};
    for (const RegurgitationCell& c : cells) {
        if (c.subtask < 1 || c.subtask > 3)
            throw std::invalid_argument("task_aggregate: bad subtask");
        if (c.split == Split::Holdout)
            throw std::invalid_argument("task_aggregate: holdout cell not allowed");
        bool& slot = seen[c.subtask - 1][static_cast<int>(c.kind)][static_cast<int>(c.split)];
        if (slot) throw std::invalid_argument("task_aggregate: duplicate cell");
        slot = true;
        if (c.aggregated < 0.0 || c.aggregated > 1.0 || !std::isfinite(c.aggregated))
            throw std::invalid_argument("task_aggregate: score outside [0,1]");
    }
    double inv_sum = 0.0;
    for (const RegurgitationCell& c : cells) {
        if (c.aggregated <= 1e-9) return 0.0;
        inv_sum += 1.0 / c.aggregated;
    }
    return 12.0 / inv_sum;
}

double mia_auc(const std::vector<double>& member_losses,
               const std::vector<double>& nonmember_losses) {
    if (member_losses.empty() || nonmember_losses.empty())
        throw std::invalid_argument("mia_auc: both loss lists must be non-empty");
    // Mann-Whitney via sorted non-member losses: for each member loss count
    // how many non-member losses exceed it, ties half. Equivalent to the
    // exhaustive pairwise count.
    std::vector<double> sorted = nonmember_losses;
    std::sort(sorted.begin(), sorted.end());
    double wins = 0.0;
    for (double m : member_losses) {
        auto lo = std::lower_bound(sorted.begin(), sorted.end(), m);
        auto hi = std::upper_bound(sorted.begin(), sorted.end(), m);
        wins += static_cast<double>(sorted.end() - hi) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(member_losses.size()) *
                   static_cast<double>(nonmember_losses.size()));
}

double mia_score(double auc) {
    if (!(auc >= 0.0 && auc <= 1.0)) throw std::invalid_argument("mia_score: auc outside [0,1]");
    return 1.0 - std::abs(auc - 0.5) * 2.0;
}

double final_score(double task_agg, double mia, double probe) {
    for (double v : {task_agg, mia, probe}) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("final_score: input outside [0,1]");
    }
    return (task_agg + mia + probe) / 3.0;
}

RegurgitationResult evaluate_regurgitation(Model& model, const Corpus& corpus,
                                           std::size_t max_new_tokens, bool recall_only) {
    RegurgitationResult result;
    for (int subtask = 1; subtask <= 3; ++subtask) {
        for (Kind kind : {Kind::SentenceCompletion, Kind::Qa}) {
            for (Split split : {Split::Retain, Split::Forget}) {
                std::vector<std::size_t> idx = corpus.select(subtask, split, kind);
                if (idx.empty())
                    throw std::runtime_error("evaluate_regurgitation: empty cell");
                double acc = 0.0;
                for (std::size_t i : idx) {
                    const Document& doc = corpus.documents[i];
                    std::vector<int> prompt{Tokenizer::kBos};
                    std::vector<int> pids = corpus.tokenizer.encode(doc.prompt);
                    prompt.insert(prompt.end(), pids.begin(), pids.end());
                    std::vector<int> gen =
                        greedy_decode(model, prompt, max_new_tokens, Tokenizer::kEos);
                    std::string decoded = corpus.tokenizer.decode(gen);
                    acc += kind == Kind::SentenceCompletion
                               ? rouge_l(decoded, doc.completion, recall_only)
                               : exact_match(decoded, doc.completion);
                    result.transcripts.push_back({doc.id, std::move(decoded)});
                }
                RegurgitationCell cell;
                cell.subtask = subtask;
                cell.kind = kind;
                cell.split = split;
                cell.raw = acc / static_cast<double>(idx.size());
                cell.aggregated = split == Split::Forget ? 1.0 - cell.raw : cell.raw;
                result.cells.push_back(cell);
            }
        }
    }
    return result;
}

double document_loss(Model& model, const Tokenizer& tok, const Document& doc) {
    TokenizedDoc td = tokenize_for_lm(tok, doc);
    std::vector<int> inputs(td.ids.begin(), td.ids.end() - 1);
    std::vector<int> targets(td.ids.begin() + 1, td.ids.end());
    std::vector<std::uint8_t> mask(inputs.size(), 0);
    // positions predicting completion tokens (and the closing eos)
    for (std::size_t i = td.prompt_len - 1; i < inputs.size(); ++i) mask[i] = 1;
    Tape tape(false);
    Var logits = forward(tape, model, inputs).logits;
    return lm_loss(tape, logits, targets, mask).value().data[0];
}

namespace {

double choice_log_likelihood(Model& model, const Tokenizer& tok, const std::string& question,
                             const std::string& choice) {
    std::string text = choice;
    if (!text.empty() && text.front() != ' ') text.insert(text.begin(), ' ');
    std::vector<int> ids{Tokenizer::kBos};
    std::vector<int> qids = tok.encode(question, Tokenizer::UnknownPolicy::MapToUnk);
    std::vector<int> cids = tok.encode(text, Tokenizer::UnknownPolicy::MapToUnk);
    ids.insert(ids.end(), qids.begin(), qids.end());
    std::size_t prefix = ids.size();
    ids.insert(ids.end(), cids.begin(), cids.end());
    std::vector<int> inputs(ids.begin(), ids.end() - 1);
    std::vector<int> targets(ids.begin() + 1, ids.end());
    std::vector<std::uint8_t> mask(inputs.size(), 0);
    for (std::size_t i = prefix - 1; i < inputs.size(); ++i) mask[i] = 1;
    Tape tape(false);
    Var logits = forward(tape, model, inputs).logits;
    return -lm_loss(tape, logits, targets, mask).value().data[0];
}

} // namespace

double knowledge_probe(Model& model, const Tokenizer& tok, const std::vector<ProbeItem>& probe) {
    if (probe.empty()) throw std::invalid_argument("knowledge_probe: empty probe set");
    std::size_t correct = 0;
    for (const ProbeItem& item : probe) {
        int best = 0;
        double best_ll = -std::numeric_limits<double>::infinity();
        for (int ci = 0; ci < 4; ++ci) {
            double ll = choice_log_likelihood(model, tok, item.question,
                                              item.choices[static_cast<std::size_t>(ci)]);
            if (ll > best_ll) {
                best_ll = ll;
                best = ci;
            }
        }
        if (best == item.answer_index) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probe.size());
}

MetricReport evaluate_model(Model& model, const Corpus& corpus,
                            const std::vector<ProbeItem>& probe,
                            const std::string& config_fingerprint,
                            std::size_t max_new_tokens) {
    MetricReport report;
    report.config_fingerprint = config_fingerprint;
    report.cells = evaluate_regurgitation(model, corpus, max_new_tokens).cells;
    report.task_aggregate = task_aggregate(report.cells);

    std::vector<double> member, nonmember;
    for (std::size_t i : corpus.select_split_kind(Split::Forget, Kind::SentenceCompletion))
        member.push_back(document_loss(model, corpus.tokenizer, corpus.documents[i]));
    for (std::size_t i : corpus.select_split_kind(Split::Holdout, Kind::SentenceCompletion))
        nonmember.push_back(document_loss(model, corpus.tokenizer, corpus.documents[i]));
    report.mia_auc = mia_auc(member, nonmember);
    report.mia_score = mia_score(report.mia_auc);

    report.probe_accuracy = knowledge_probe(model, corpus.tokenizer, probe);
    report.final_score = final_score(report.task_aggregate, report.mia_score,
                                     report.probe_accuracy);
    return report;
}

void MetricReport::validate() const {
    double agg = unlab::task_aggregate(cells);
    if (std::abs(agg - task_aggregate) > 1e-9)
        throw std::runtime_error("MetricReport: task_aggregate inconsistent with cells");
    if (std::abs(unlab::mia_score(mia_auc) - mia_score) > 1e-9)
        throw std::runtime_error("MetricReport: mia_score inconsistent with mia_auc");
    if (std::abs(unlab::final_score(task_aggregate, mia_score, probe_accuracy) - final_score) >
        1e-9)
        throw std::runtime_error("MetricReport: final_score inconsistent with components");
}

namespace {

json cell_to_json(const RegurgitationCell& c) {
    return json{{"subtask", c.subtask},
                {"kind", to_string(c.kind)},
                {"split", to_string(c.split)},
                {"raw", c.raw},
                {"aggregated", c.aggregated}};
}

RegurgitationCell cell_from_json(const json& j) {
    RegurgitationCell c;
    c.subtask = j.at("subtask").get<int>();
    c.kind = kind_from_string(j.at("kind").get<std::string>());
    c.split = split_from_string(j.at("split").get<std::string>());
    c.raw = j.at("raw").get<double>();
    c.aggregated = j.at("aggregated").get<double>();
    return c;
}

} // namespace

void save_metric_report(const MetricReport& report, const std::string& json_path) {
    json cells = json::array();
    for (const RegurgitationCell& c : report.cells) cells.push_back(cell_to_json(c));
    json j{{"schema", "unlab-metrics"},
           {"version", 1},
           {"config_fingerprint", report.config_fingerprint},
           {"rouge_variant", report.rouge_variant},
           {"cells", cells},
           {"task_aggregate", report.task_aggregate},
           {"mia_auc", report.mia_auc},
           {"mia_score", report.mia_score},
           {"probe_accuracy", report.probe_accuracy},
           {"final_score", report.final_score}};
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + json_path);
    out << j.dump(2) << "\n";
}

MetricReport load_metric_report(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("cannot read " + json_path);
    json j = json::parse(in);
    if (j.value("schema", "") != "unlab-metrics")
        throw std::runtime_error("not a metric report: " + json_path);
    MetricReport r;
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    r.rouge_variant = j.at("rouge_variant").get<std::string>();
    for (const json& cj : j.at("cells")) r.cells.push_back(cell_from_json(cj));
    r.task_aggregate = j.at("task_aggregate").get<double>();
    r.mia_auc = j.at("mia_auc").get<double>();
    r.mia_score = j.at("mia_score").get<double>();
    r.probe_accuracy = j.at("probe_accuracy").get<double>();
    r.final_score = j.at("final_score").get<double>();
    return r;
}

std::string metric_report_csv_header() {
    return "label,task_aggregate,mia_auc,mia_score,probe_accuracy,final_score";
}

std::string metric_report_csv_row(const std::string& label, const MetricReport& report) {
    std::ostringstream os;
    os.precision(17);
    os << label << ',' << report.task_aggregate << ',' << report.mia_auc << ','
       << report.mia_score << ',' << report.probe_accuracy << ',' << report.final_score;
    return os.str();
}

} // namespace unlab
