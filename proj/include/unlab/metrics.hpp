#pragma once

#include <string>
#include <vector>

#include "unlab/corpus.hpp"
#include "unlab/model.hpp"

namespace unlab {

struct RegurgitationCell {
    int subtask = 1;
    Kind kind = Kind::SentenceCompletion;
    Split split = Split::Retain; // retain or forget only
    double raw = 0.0;
    double aggregated = 0.0; // raw for retain, 1 - raw for forget
};

struct MetricReport {
    std::vector<RegurgitationCell> cells; // exactly 12: 3 subtasks × 2 kinds × 2 splits
    double task_aggregate = 0.0;
    double mia_auc = 0.0;
    double mia_score = 0.0;
    double probe_accuracy = 0.0;
    double final_score = 0.0;
    std::string rouge_variant = "f-measure";
    std::string config_fingerprint;

    void validate() const; // recomputes the aggregate arithmetic
};

// Word tokens for ROUGE: maximal case-folded alphanumeric runs; everything
// else is a separator.
std::vector<std::string> rouge_words(const std::string& text);

// LCS-based ROUGE-L. F-measure by default: P = LCS/|cand|, R = LCS/|ref|,
// F = 2PR/(P+R); 0 when either side is empty or the LCS is empty.
double rouge_l(const std::string& candidate, const std::string& reference,
               bool recall_only = false);

// 1 iff the strings are equal after trimming, whitespace collapsing and
// ASCII case-folding.
std::string normalize_for_exact_match(const std::string& s);
double exact_match(const std::string& candidate, const std::string& reference);

// Harmonic mean of the 12 aggregated cell scores; 0 if any score <= 1e-9.
// Throws unless the cells cover the full subtask×kind×split grid exactly once.
double task_aggregate(const std::vector<RegurgitationCell>& cells);

// P(member loss < non-member loss) with ties counted half.
double mia_auc(const std::vector<double>& member_losses,
               const std::vector<double>& nonmember_losses);
double mia_score(double auc);

double final_score(double task_agg, double mia, double probe);

struct DecodeTranscript {
    std::string doc_id;
    std::string decoded;
};

struct RegurgitationResult {
    std::vector<RegurgitationCell> cells;
    std::vector<DecodeTranscript> transcripts; // ordered by document id
};

RegurgitationResult evaluate_regurgitation(Model& model, const Corpus& corpus,
                                           std::size_t max_new_tokens = 48,
                                           bool recall_only = false);

// Mean completion-token negative log-likelihood of one document.
double document_loss(Model& model, const Tokenizer& tok, const Document& doc);

// Accuracy of argmax-by-mean-token-log-likelihood over the four choices;
// ties break toward the lowest choice index.
double knowledge_probe(Model& model, const Tokenizer& tok, const std::vector<ProbeItem>& probe);

MetricReport evaluate_model(Model& model, const Corpus& corpus,
                            const std::vector<ProbeItem>& probe,
                            const std::string& config_fingerprint,
                            std::size_t max_new_tokens = 48);

void save_metric_report(const MetricReport& report, const std::string& json_path);
MetricReport load_metric_report(const std::string& json_path);
std::string metric_report_csv_header();
std::string metric_report_csv_row(const std::string& label, const MetricReport& report);

} // namespace unlab
