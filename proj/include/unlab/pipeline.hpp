#pragma once

#include <string>
#include <vector>

#include "unlab/metrics.hpp"
#include "unlab/unlearn.hpp"

namespace unlab {

// Optional JSON config file with "model", "memorize", "unlearn" and
// "evaluate" sections; absent keys keep their defaults.
struct PipelineConfig {
    ModelConfig model;          // vocab_size filled from the corpus
    MemorizeConfig memorize;
    UnlearnConfig unlearn;
    std::size_t eval_max_new_tokens = 48;

    static PipelineConfig from_file(const std::string& path);
    static PipelineConfig defaults() { return {}; }
};

struct GenerateArgs {
    std::string out_dir;
    std::string preset = "desk"; // desk | paper-sizes
    std::uint64_t seed = 0;
};

struct MemorizeArgs {
    std::string corpus_path;
    std::string out_dir;
    PipelineConfig config;
    std::uint64_t seed = 0;
};

struct UnlearnArgs {
    std::string checkpoint_path;
    std::string corpus_path;
    std::string out_dir;
    PipelineConfig config;
    std::uint64_t seed = 0;
};

struct EvaluateArgs {
    std::string checkpoint_path;
    std::string corpus_path;
    std::string probe_path;
    std::string out_path; // metric report JSON
    PipelineConfig config;
};

struct SweepArgs {
    std::string checkpoint_path;
    std::string corpus_path;
    std::string probe_path;
    std::string out_dir;
    PipelineConfig config;
    std::uint64_t seed = 0;
};

struct ReportArgs {
    std::string sweep_json_path;
    std::string format = "markdown"; // csv | json | markdown
};

// Each command writes a manifest.json into its output directory recording
// the resolved config, seeds, input checksums and produced files.
void run_generate(const GenerateArgs& args);
void run_memorize(const MemorizeArgs& args);
void run_unlearn(const UnlearnArgs& args);
MetricReport run_evaluate(const EvaluateArgs& args);

struct SweepRow {
    int layer = 0; // top of the window {layer-2, layer-1, layer}
    MetricReport metrics;
};
// One isolated unlearning run per admissible window (the base checkpoint is
// reloaded each time), followed by evaluation. Writes sweep.json + sweep.csv.
std::vector<SweepRow> run_sweep(const SweepArgs& args);

std::string render_report(const ReportArgs& args); // returns the rendered table

} // namespace unlab
