#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "unlab/pipeline.hpp"

using namespace unlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small-everything config so the full chain runs in seconds.
fs::path write_mini_config(const fs::path& dir) {
    json cfg{{"model", {{"n_layers", 3}, {"d_model", 48}, {"n_heads", 4}}},
             {"memorize",
              {{"lr", 2e-3},
               {"max_epochs", 150},
               {"batch_size", 6},
               {"target_rouge", 0.9},
               {"check_every", 10}}},
             {"unlearn", {{"layer", 2}, {"steps", 30}}},
             {"evaluate", {{"max_new_tokens", 24}}}};
    fs::path path = dir / "config.json";
    std::ofstream out(path);
    out << cfg.dump(2);
    return path;
}

Corpus mini_corpus(std::uint64_t seed) {
    CorpusSpec spec;
    spec.retain = {2, 2, 2};
    spec.forget = {2, 2, 2};
    spec.holdout = {2, 2, 2};
    spec.probe_target = 12;
    spec.seed = seed;
    return generate_corpus(spec);
}

} // namespace

TEST_CASE("pipeline config file parsing") {
    fs::path dir = fresh_dir("unlab_test_cfg");
    fs::path path = write_mini_config(dir);
    PipelineConfig cfg = PipelineConfig::from_file(path.string());
    CHECK(cfg.model.n_layers == 3);
    CHECK(cfg.model.d_model == 48);
    CHECK(cfg.memorize.target_rouge == 0.9);
    CHECK(cfg.unlearn.steps == 30);
    CHECK(cfg.unlearn.alpha == 100.0); // untouched default
    CHECK(cfg.eval_max_new_tokens == 24);
    CHECK_THROWS_AS(PipelineConfig::from_file((dir / "missing.json").string()),
                    std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("generate command writes a loadable corpus with manifest") {
    fs::path dir = fresh_dir("unlab_test_generate");
    run_generate({dir.string(), "desk", 3});
    CHECK(fs::exists(dir / "corpus.jsonl"));
    CHECK(fs::exists(dir / "probe.json"));
    Corpus loaded = load_corpus((dir / "corpus.jsonl").string());
    CHECK(loaded.documents.size() == 600);
    CHECK(load_probe((dir / "probe.json").string()).size() >= 200);

    json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("command") == "generate");
    CHECK(manifest.at("seed") == 3);
    CHECK(manifest.at("doc_checksum").get<std::string>() != "");

    SUBCASE("unknown preset rejected") {
        CHECK_THROWS_AS(run_generate({dir.string(), "huge", 3}), std::invalid_argument);
    }
    fs::remove_all(dir);
}

TEST_CASE("memorize -> unlearn -> evaluate chain on a mini corpus") {
    fs::path dir = fresh_dir("unlab_test_chain");
    Corpus corpus = mini_corpus(71);
    fs::path corpus_path = dir / "corpus.jsonl";
    fs::path probe_path = dir / "probe.json";
    save_corpus(corpus, corpus_path.string());
    save_probe(corpus.probe, probe_path.string());
    PipelineConfig cfg = PipelineConfig::from_file(write_mini_config(dir).string());

    fs::path mem_dir = dir / "memorize";
    run_memorize({corpus_path.string(), mem_dir.string(), cfg, 5});
    REQUIRE(fs::exists(mem_dir / "model.bin"));
    json mem_manifest = json::parse(slurp(mem_dir / "manifest.json"));
    CHECK(mem_manifest.at("retain_rouge").get<double>() >= 0.9);
    CHECK(mem_manifest.at("forget_rouge").get<double>() >= 0.9);
    // loss log has a header plus one row per epoch
    std::string log = slurp(mem_dir / "memorize_loss.csv");
    CHECK(log.rfind("epoch,mean_loss\n", 0) == 0);

    fs::path ul_dir = dir / "unlearn";
    run_unlearn({(mem_dir / "model.bin").string(), corpus_path.string(), ul_dir.string(), cfg,
                 9});
    REQUIRE(fs::exists(ul_dir / "model.bin"));
    json ul_manifest = json::parse(slurp(ul_dir / "manifest.json"));
    CHECK(ul_manifest.at("config").at("method") == "adaptive-rmu");
    CHECK(ul_manifest.at("config").at("steps") == 30);

    SUBCASE("unlearned weights differ from the base checkpoint") {
        CHECK(Model::load((ul_dir / "model.bin").string()).weight_checksum() !=
              Model::load((mem_dir / "model.bin").string()).weight_checksum());
    }
    SUBCASE("identical seeds reproduce the unlearned checkpoint bit-for-bit") {
        fs::path ul2 = dir / "unlearn2";
        run_unlearn({(mem_dir / "model.bin").string(), corpus_path.string(), ul2.string(),
                     cfg, 9});
        CHECK(Model::load((ul2 / "model.bin").string()).weight_checksum() ==
              Model::load((ul_dir / "model.bin").string()).weight_checksum());
        CHECK(slurp(ul2 / "unlearn_loss.csv") == slurp(ul_dir / "unlearn_loss.csv"));
    }
    SUBCASE("evaluate writes a validated report, byte-identical across runs") {
        fs::path r1 = dir / "metrics1.json";
        fs::path r2 = dir / "metrics2.json";
        MetricReport a = run_evaluate({(ul_dir / "model.bin").string(), corpus_path.string(),
                                       probe_path.string(), r1.string(), cfg});
        MetricReport b = run_evaluate({(ul_dir / "model.bin").string(), corpus_path.string(),
                                       probe_path.string(), r2.string(), cfg});
        CHECK(slurp(r1) == slurp(r2));
        CHECK(a.final_score == b.final_score);
        CHECK_NOTHROW(load_metric_report(r1.string()).validate());
    }
    fs::remove_all(dir);
}

TEST_CASE("sweep and report rendering") {
    fs::path dir = fresh_dir("unlab_test_sweep");
    Corpus corpus = mini_corpus(81);
    fs::path corpus_path = dir / "corpus.jsonl";
    fs::path probe_path = dir / "probe.json";
    save_corpus(corpus, corpus_path.string());
    save_probe(corpus.probe, probe_path.string());
    PipelineConfig cfg = PipelineConfig::from_file(write_mini_config(dir).string());
    cfg.unlearn.steps = 10;

    fs::path mem_dir = dir / "memorize";
    run_memorize({corpus_path.string(), mem_dir.string(), cfg, 5});

    fs::path sweep_dir = dir / "sweep";
    std::vector<SweepRow> rows = run_sweep({(mem_dir / "model.bin").string(),
                                            corpus_path.string(), probe_path.string(),
                                            sweep_dir.string(), cfg, 7});
    // 3-layer model -> single admissible window {0,1,2}
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].layer == 2);
    CHECK(fs::exists(sweep_dir / "sweep.csv"));
    CHECK(fs::exists(sweep_dir / "metrics_layers-0-1-2.json"));

    json sweep = json::parse(slurp(sweep_dir / "sweep.json"));
    CHECK(sweep.at("rows").size() == 1);
    CHECK(sweep.at("rows")[0].at("label") == "layers-0-1-2");

    std::string md = render_report({(sweep_dir / "sweep.json").string(), "markdown"});
    CHECK(md.find("| layers-0-1-2 |") != std::string::npos);
    std::string csv = render_report({(sweep_dir / "sweep.json").string(), "csv"});
    CHECK(csv.rfind("label,", 0) == 0);
    std::string js = render_report({(sweep_dir / "sweep.json").string(), "json"});
    CHECK(json::parse(js).at("schema") == "unlab-sweep");
    CHECK_THROWS_AS(render_report({(sweep_dir / "sweep.json").string(), "xml"}),
                    std::invalid_argument);
    fs::remove_all(dir);
}
