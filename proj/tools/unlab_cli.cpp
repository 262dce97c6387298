// unlab — desk-scale unlearning laboratory command line.
//
// Exit codes: 0 success, 1 usage error, 2 configuration/validation error,
// 3 runtime failure.

#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "unlab/pipeline.hpp"

using namespace unlab;

namespace {

PipelineConfig load_config_or_defaults(const std::string& path) {
    return path.empty() ? PipelineConfig::defaults() : PipelineConfig::from_file(path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale activation-steering unlearning laboratory"};
    app.require_subcommand(1);

    std::string config_path, out, corpus_path, probe_path, checkpoint_path;
    std::string preset = "desk", format = "markdown", sweep_json;
    std::uint64_t seed = 0;

    CLI::App* generate = app.add_subcommand("generate", "generate a synthetic corpus + probe");
    generate->add_option("--out", out, "output directory")->required();
    generate->add_option("--preset", preset, "desk | paper-sizes")
        ->check(CLI::IsMember({"desk", "paper-sizes"}));
    generate->add_option("--seed", seed, "corpus seed");

    CLI::App* memorize = app.add_subcommand("memorize", "train a model onto a corpus");
    memorize->add_option("--corpus", corpus_path, "corpus.jsonl path")->required();
    memorize->add_option("--out", out, "output directory")->required();
    memorize->add_option("--config", config_path, "pipeline config JSON");
    memorize->add_option("--seed", seed, "model init + shuffle seed");

    CLI::App* unlearn = app.add_subcommand("unlearn", "run unlearning from a checkpoint");
    unlearn->add_option("--checkpoint", checkpoint_path, "base model.bin")->required();
    unlearn->add_option("--corpus", corpus_path, "corpus.jsonl path")->required();
    unlearn->add_option("--out", out, "output directory")->required();
    unlearn->add_option("--config", config_path, "pipeline config JSON");
    unlearn->add_option("--seed", seed, "control vector + sampling seed");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint");
    evaluate->add_option("--checkpoint", checkpoint_path, "model.bin")->required();
    evaluate->add_option("--corpus", corpus_path, "corpus.jsonl path")->required();
    evaluate->add_option("--probe", probe_path, "probe.json path")->required();
    evaluate->add_option("--out", out, "metric report JSON path")->required();
    evaluate->add_option("--config", config_path, "pipeline config JSON");

    CLI::App* sweep = app.add_subcommand("sweep", "unlearn+evaluate every layer window");
    sweep->add_option("--checkpoint", checkpoint_path, "base model.bin")->required();
    sweep->add_option("--corpus", corpus_path, "corpus.jsonl path")->required();
    sweep->add_option("--probe", probe_path, "probe.json path")->required();
    sweep->add_option("--out", out, "output directory")->required();
    sweep->add_option("--config", config_path, "pipeline config JSON");
    sweep->add_option("--seed", seed, "control vector + sampling seed");

    CLI::App* report = app.add_subcommand("report", "render a sweep table");
    report->add_option("--sweep", sweep_json, "sweep.json path")->required();
    report->add_option("--format", format, "csv | json | markdown")
        ->check(CLI::IsMember({"csv", "json", "markdown"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (generate->parsed()) {
            run_generate({out, preset, seed});
            std::cout << "wrote corpus to " << out << "\n";
        } else if (memorize->parsed()) {
            run_memorize({corpus_path, out, load_config_or_defaults(config_path), seed});
            std::cout << "wrote checkpoint to " << out << "/model.bin\n";
        } else if (unlearn->parsed()) {
            run_unlearn({checkpoint_path, corpus_path, out,
                         load_config_or_defaults(config_path), seed});
            std::cout << "wrote updated checkpoint to " << out << "/model.bin\n";
        } else if (evaluate->parsed()) {
            MetricReport r = run_evaluate({checkpoint_path, corpus_path, probe_path, out,
                                           load_config_or_defaults(config_path)});
            std::cout << "final_score " << r.final_score << " (task " << r.task_aggregate
                      << ", mia " << r.mia_score << ", probe " << r.probe_accuracy << ")\n";
        } else if (sweep->parsed()) {
            std::vector<SweepRow> rows = run_sweep({checkpoint_path, corpus_path, probe_path,
                                                    out, load_config_or_defaults(config_path),
                                                    seed});
            std::cout << "swept " << rows.size() << " windows; table in " << out
                      << "/sweep.csv\n";
        } else if (report->parsed()) {
            std::cout << render_report({sweep_json, format});
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
