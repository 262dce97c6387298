#include "unlab/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace unlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string scope_to_string(TrainScope s) {
    return s == TrainScope::MlpDownOnly ? "mlp-down-only" : "full-layer";
}

TrainScope scope_from_string(const std::string& s) {
    if (s == "mlp-down-only") return TrainScope::MlpDownOnly;
    if (s == "full-layer") return TrainScope::FullLayer;
    throw std::invalid_argument("unknown scope: " + s);
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void write_manifest(const fs::path& dir, json manifest) {
    manifest["schema"] = "unlab-manifest";
    manifest["version"] = 1;
    write_json(manifest, dir / "manifest.json");
}

json unlearn_config_json(const UnlearnConfig& c) {
    return json{{"method", to_string(c.method)},
                {"layer", c.layer},
                {"scope", scope_to_string(c.scope)},
                {"steering_coef", c.steering_coef},
                {"beta", c.beta},
                {"alpha", c.alpha},
                {"lr", c.lr},
                {"optimizer", to_string(c.optimizer)},
                {"steps", c.steps},
                {"batch_size", c.batch_size},
                {"completion_only_activations", c.completion_only_activations},
                {"seed", c.seed}};
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

std::string fingerprint(const Corpus& corpus, const Model& model, const json& extra) {
    std::string blob = extra.dump();
    std::uint64_t h = fnv1a64(blob.data(), blob.size());
    return hex64(corpus.doc_checksum()) + "-" + hex64(model.weight_checksum()) + "-" + hex64(h);
}

} // namespace

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    json j = json::parse(in);
    PipelineConfig cfg;
    if (j.contains("model")) {
        const json& m = j["model"];
        cfg.model.n_layers = m.value("n_layers", cfg.model.n_layers);
        cfg.model.d_model = m.value("d_model", cfg.model.d_model);
        cfg.model.n_heads = m.value("n_heads", cfg.model.n_heads);
        cfg.model.max_seq_len = m.value("max_seq_len", cfg.model.max_seq_len);
        cfg.model.mlp_hidden = m.value("mlp_hidden", cfg.model.mlp_hidden);
    }
    if (j.contains("memorize")) {
        const json& m = j["memorize"];
        cfg.memorize.lr = m.value("lr", cfg.memorize.lr);
        cfg.memorize.max_epochs = m.value("max_epochs", cfg.memorize.max_epochs);
        cfg.memorize.batch_size = m.value("batch_size", cfg.memorize.batch_size);
        cfg.memorize.target_rouge = m.value("target_rouge", cfg.memorize.target_rouge);
        cfg.memorize.check_every = m.value("check_every", cfg.memorize.check_every);
    }
    if (j.contains("unlearn")) {
        const json& u = j["unlearn"];
        if (u.contains("method"))
            cfg.unlearn.method = method_from_string(u["method"].get<std::string>());
        if (u.contains("scope"))
            cfg.unlearn.scope = scope_from_string(u["scope"].get<std::string>());
        if (u.contains("optimizer"))
            cfg.unlearn.optimizer = optimizer_from_string(u["optimizer"].get<std::string>());
        cfg.unlearn.layer = u.value("layer", cfg.unlearn.layer);
        cfg.unlearn.steering_coef = u.value("steering_coef", cfg.unlearn.steering_coef);
        cfg.unlearn.beta = u.value("beta", cfg.unlearn.beta);
        cfg.unlearn.alpha = u.value("alpha", cfg.unlearn.alpha);
        cfg.unlearn.lr = u.value("lr", cfg.unlearn.lr);
        cfg.unlearn.steps = u.value("steps", cfg.unlearn.steps);
        cfg.unlearn.batch_size = u.value("batch_size", cfg.unlearn.batch_size);
        cfg.unlearn.completion_only_activations =
            u.value("completion_only_activations", cfg.unlearn.completion_only_activations);
    }
    if (j.contains("evaluate")) {
        cfg.eval_max_new_tokens =
            j["evaluate"].value("max_new_tokens", cfg.eval_max_new_tokens);
    }
    return cfg;
}

void run_generate(const GenerateArgs& args) {
    CorpusSpec spec = args.preset == "desk"        ? CorpusSpec::desk(args.seed)
                      : args.preset == "paper-sizes" ? CorpusSpec::paper_sizes(args.seed)
                                                     : throw std::invalid_argument(
                                                           "unknown preset: " + args.preset);
    Corpus corpus = generate_corpus(spec);
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    save_corpus(corpus, (dir / "corpus.jsonl").string());
    save_probe(corpus.probe, (dir / "probe.json").string());
    write_manifest(dir, json{{"command", "generate"},
                             {"preset", args.preset},
                             {"seed", args.seed},
                             {"doc_checksum", hex64(corpus.doc_checksum())},
                             {"documents", corpus.documents.size()},
                             {"probe_items", corpus.probe.size()},
                             {"vocab_size", corpus.tokenizer.vocab_size()},
                             {"outputs", {"corpus.jsonl", "probe.json"}}});
}

void run_memorize(const MemorizeArgs& args) {
    Corpus corpus = load_corpus(args.corpus_path);
    ModelConfig mc = args.config.model;
    mc.vocab_size = corpus.tokenizer.vocab_size();
    mc.seed = args.seed;
    Model model = Model::build(mc);

    MemorizeConfig mem = args.config.memorize;
    mem.seed = args.seed;

    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    std::ofstream log(dir / "memorize_loss.csv");
    log << "epoch,mean_loss\n";
    log.precision(17);
    MemorizeReport rep = memorize(model, corpus, mem, [&](int epoch, double loss) {
        log << epoch << ',' << loss << '\n';
    });
    log.close();
    if (!rep.reached_target)
        throw std::runtime_error("memorize: target ROUGE-L not reached after " +
                                 std::to_string(rep.epochs) + " epochs (retain " +
                                 std::to_string(rep.retain_rouge) + ", forget " +
                                 std::to_string(rep.forget_rouge) + ")");
    model.save((dir / "model.bin").string());
    write_manifest(dir, json{{"command", "memorize"},
                             {"corpus", args.corpus_path},
                             {"seed", args.seed},
                             {"doc_checksum", hex64(corpus.doc_checksum())},
                             {"epochs", rep.epochs},
                             {"retain_rouge", rep.retain_rouge},
                             {"forget_rouge", rep.forget_rouge},
                             {"weight_checksum", hex64(model.weight_checksum())},
                             {"outputs", {"model.bin", "memorize_loss.csv"}}});
}

void run_unlearn(const UnlearnArgs& args) {
    Corpus corpus = load_corpus(args.corpus_path);
    Model model = Model::load(args.checkpoint_path);
    UnlearnConfig cfg = args.config.unlearn;
    cfg.seed = args.seed;

    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    std::ofstream log(dir / "unlearn_loss.csv");
    log << "step,forget_loss,retain_loss,total_loss,forget_doc,retain_doc\n";
    log.precision(17);
    Unlearner unlearner(model, corpus, cfg);
    unlearner.run([&](const StepReport& r) {
        log << r.step << ',' << r.forget_loss << ',' << r.retain_loss << ',' << r.total_loss
            << ',' << r.forget_doc_id << ',' << r.retain_doc_id << '\n';
    });
    log.close();
    model.save((dir / "model.bin").string());
    write_manifest(dir, json{{"command", "unlearn"},
                             {"corpus", args.corpus_path},
                             {"base_checkpoint", args.checkpoint_path},
                             {"config", unlearn_config_json(cfg)},
                             {"doc_checksum", hex64(corpus.doc_checksum())},
                             {"weight_checksum", hex64(model.weight_checksum())},
                             {"outputs", {"model.bin", "unlearn_loss.csv"}}});
}

MetricReport run_evaluate(const EvaluateArgs& args) {
    Corpus corpus = load_corpus(args.corpus_path);
    std::vector<ProbeItem> probe = load_probe(args.probe_path);
    Model model = Model::load(args.checkpoint_path);
    json extra{{"max_new_tokens", args.config.eval_max_new_tokens}};
    MetricReport report = evaluate_model(model, corpus, probe,
                                         fingerprint(corpus, model, extra),
                                         args.config.eval_max_new_tokens);
    report.validate();
    save_metric_report(report, args.out_path);
    return report;
}

std::vector<SweepRow> run_sweep(const SweepArgs& args) {
    Corpus corpus = load_corpus(args.corpus_path);
    std::vector<ProbeItem> probe = load_probe(args.probe_path);
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);

    std::vector<SweepRow> rows;
    json sweep_json = json::array();
    std::ofstream csv(dir / "sweep.csv");
    csv << metric_report_csv_header() << "\n";

    std::size_t n_layers = Model::load(args.checkpoint_path).config().n_layers;
    for (int layer = 2; layer < static_cast<int>(n_layers); ++layer) {
        // isolated run: fresh reload of the base checkpoint for every window
        Model model = Model::load(args.checkpoint_path);
        UnlearnConfig cfg = args.config.unlearn;
        cfg.layer = layer;
        cfg.seed = args.seed;
        Unlearner unlearner(model, corpus, cfg);
        unlearner.run();

        json extra{{"max_new_tokens", args.config.eval_max_new_tokens},
                   {"config", unlearn_config_json(cfg)}};
        MetricReport report = evaluate_model(model, corpus, probe,
                                             fingerprint(corpus, model, extra),
                                             args.config.eval_max_new_tokens);
        report.validate();
        std::string label = "layers-" + std::to_string(layer - 2) + "-" +
                            std::to_string(layer - 1) + "-" + std::to_string(layer);
        save_metric_report(report, (dir / ("metrics_" + label + ".json")).string());
        csv << metric_report_csv_row(label, report) << "\n";

        json row{{"layer", layer},
                 {"window", {layer - 2, layer - 1, layer}},
                 {"label", label},
                 {"final_score", report.final_score},
                 {"task_aggregate", report.task_aggregate},
                 {"mia_auc", report.mia_auc},
                 {"mia_score", report.mia_score},
                 {"probe_accuracy", report.probe_accuracy},
                 {"metrics_file", "metrics_" + label + ".json"}};
        sweep_json.push_back(row);
        rows.push_back({layer, std::move(report)});
    }
    csv.close();
    write_json(json{{"schema", "unlab-sweep"},
                    {"version", 1},
                    {"config", unlearn_config_json(args.config.unlearn)},
                    {"seed", args.seed},
                    {"rows", sweep_json}},
               dir / "sweep.json");
    write_manifest(dir, json{{"command", "sweep"},
                             {"corpus", args.corpus_path},
                             {"base_checkpoint", args.checkpoint_path},
                             {"seed", args.seed},
                             {"windows", rows.size()},
                             {"outputs", {"sweep.json", "sweep.csv"}}});
    return rows;
}

std::string render_report(const ReportArgs& args) {
    std::ifstream in(args.sweep_json_path);
    if (!in) throw std::runtime_error("cannot read " + args.sweep_json_path);
    json sweep = json::parse(in);
    if (sweep.value("schema", "") != "unlab-sweep")
        throw std::runtime_error("not a sweep file: " + args.sweep_json_path);
    const json& rows = sweep.at("rows");

    std::ostringstream os;
    os.precision(3);
    os << std::fixed;
    if (args.format == "json") {
        return sweep.dump(2) + "\n";
    }
    if (args.format == "csv") {
        os << "label,task_aggregate,mia_auc,mia_score,probe_accuracy,final_score\n";
        for (const json& r : rows) {
            os << r.at("label").get<std::string>() << ','
               << r.at("task_aggregate").get<double>() << ',' << r.at("mia_auc").get<double>()
               << ',' << r.at("mia_score").get<double>() << ','
               << r.at("probe_accuracy").get<double>() << ','
               << r.at("final_score").get<double>() << "\n";
        }
        return os.str();
    }
    if (args.format == "markdown") {
        os << "| window | task aggregate | mia auc | mia score | probe | final |\n";
        os << "|---|---|---|---|---|---|\n";
        for (const json& r : rows) {
            os << "| " << r.at("label").get<std::string>() << " | "
               << r.at("task_aggregate").get<double>() << " | "
               << r.at("mia_auc").get<double>() << " | " << r.at("mia_score").get<double>()
               << " | " << r.at("probe_accuracy").get<double>() << " | "
               << r.at("final_score").get<double>() << " |\n";
        }
        return os.str();
    }
    throw std::invalid_argument("unknown format: " + args.format);
}

} // namespace unlab
