#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "unlab/metrics.hpp"
#include "unlab/rng.hpp"

using namespace unlab;

namespace {

// Independent ROUGE-L oracle: full 2D LCS table, then F from first principles.
double rouge_l_oracle(const std::string& cand, const std::string& ref) {
    std::vector<std::string> a = rouge_words(cand);
    std::vector<std::string> b = rouge_words(ref);
    if (a.empty() || b.empty()) return 0.0;
    std::vector<std::vector<std::size_t>> dp(a.size() + 1,
                                             std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                            : std::max(dp[i - 1][j], dp[i][j - 1]);
        }
    }
    double lcs = static_cast<double>(dp[a.size()][b.size()]);
    if (lcs == 0.0) return 0.0;
    double p = lcs / static_cast<double>(a.size());
    double r = lcs / static_cast<double>(b.size());
    return 2.0 * p * r / (p + r);
}

std::string random_sentence(Rng& rng, std::size_t max_words) {
    static const char* pool[] = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta",
                                 "eta",   "theta", "iota",  "kappa", "mu",      "nu"};
    std::size_t n = 1 + rng.uniform_int(max_words);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += pool[rng.uniform_int(12)];
    }
    return s;
}

std::vector<RegurgitationCell> full_grid(const std::array<double, 12>& scores) {
    std::vector<RegurgitationCell> cells;
    std::size_t i = 0;
    for (int st = 1; st <= 3; ++st) {
        for (Kind k : {Kind::SentenceCompletion, Kind::Qa}) {
            for (Split sp : {Split::Retain, Split::Forget}) {
                RegurgitationCell c;
                c.subtask = st;
                c.kind = k;
                c.split = sp;
                c.aggregated = scores[i];
                c.raw = sp == Split::Forget ? 1.0 - scores[i] : scores[i];
                cells.push_back(c);
                ++i;
            }
        }
    }
    return cells;
}

CorpusSpec tiny_corpus_spec(std::uint64_t seed) {
    CorpusSpec s;
    s.retain = {4, 4, 4};
    s.forget = {3, 3, 3};
    s.holdout = {3, 3, 3};
    s.probe_target = 24;
    s.seed = seed;
    return s;
}

Model tiny_model(const Corpus& c, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.vocab_size = c.tokenizer.vocab_size();
    cfg.max_seq_len = 128;
    cfg.seed = seed;
    return Model::build(cfg);
}

} // namespace

TEST_CASE("rouge_l") {
    SUBCASE("hand cases") {
        CHECK(rouge_l("the cat sat", "the cat sat") == doctest::Approx(1.0));
        CHECK(rouge_l("", "anything") == 0.0);
        CHECK(rouge_l("anything", "") == 0.0);
        CHECK(rouge_l("aaa bbb", "ccc ddd") == 0.0);
        // cand "a b", ref "a c b d": LCS=2, P=1, R=0.5, F=2/3
        CHECK(rouge_l("a b", "a c b d") == doctest::Approx(2.0 / 3.0));
        // punctuation and case are normalized away
        CHECK(rouge_l("The CAT, sat!", "the cat sat") == doctest::Approx(1.0));
    }
    SUBCASE("recall-only variant") {
        CHECK(rouge_l("a b", "a c b d", true) == doctest::Approx(0.5));
        CHECK(rouge_l("a b x y z", "a b", true) == doctest::Approx(1.0));
    }
    SUBCASE("matches the quadratic DP oracle on random pairs") {
        Rng rng(202);
        for (int i = 0; i < 300; ++i) {
            std::string a = random_sentence(rng, 14);
            std::string b = random_sentence(rng, 14);
            CHECK(rouge_l(a, b) == doctest::Approx(rouge_l_oracle(a, b)).epsilon(1e-15));
        }
    }
}

TEST_CASE("exact_match normalization") {
    CHECK(exact_match("  Hello   World ", "hello world") == 1.0);
    CHECK(exact_match("hello world", "hello  world") == 1.0);
    CHECK(exact_match("hello world", "hello worlds") == 0.0);
    CHECK(exact_match("", "   ") == 1.0);
    CHECK(normalize_for_exact_match("\tA  B\nC ") == "a b c");
}

TEST_CASE("task_aggregate") {
    SUBCASE("harmonic mean against a direct oracle") {
        Rng rng(7);
        for (int trial = 0; trial < 50; ++trial) {
            std::array<double, 12> s{};
            double inv = 0.0;
            for (double& v : s) {
                v = 0.05 + 0.95 * rng.uniform();
                inv += 1.0 / v;
            }
            CHECK(task_aggregate(full_grid(s)) == doctest::Approx(12.0 / inv).epsilon(1e-12));
        }
    }
    SUBCASE("any zero cell collapses the aggregate to zero") {
        std::array<double, 12> s{};
        s.fill(0.8);
        s[5] = 0.0;
        CHECK(task_aggregate(full_grid(s)) == 0.0);
        s[5] = 1e-12; // below the floor
        CHECK(task_aggregate(full_grid(s)) == 0.0);
    }
    SUBCASE("grid validation") {
        std::array<double, 12> s{};
        s.fill(0.5);
        std::vector<RegurgitationCell> cells = full_grid(s);
        cells.pop_back();
        CHECK_THROWS_AS(task_aggregate(cells), std::invalid_argument);
        cells = full_grid(s);
        cells[3] = cells[2]; // duplicate
        CHECK_THROWS_AS(task_aggregate(cells), std::invalid_argument);
        cells = full_grid(s);
        cells[0].aggregated = 1.5;
        CHECK_THROWS_AS(task_aggregate(cells), std::invalid_argument);
        cells = full_grid(s);
        cells[0].split = Split::Holdout;
        CHECK_THROWS_AS(task_aggregate(cells), std::invalid_argument);
    }
}

TEST_CASE("mia_auc") {
    SUBCASE("hand cases") {
        CHECK(mia_auc({1.0}, {2.0}) == 1.0);   // member clearly lower loss
        CHECK(mia_auc({2.0}, {1.0}) == 0.0);
        CHECK(mia_auc({1.0}, {1.0}) == 0.5);   // pure tie
        CHECK(mia_auc({1.0, 3.0}, {2.0}) == 0.5);
    }
    SUBCASE("matches exhaustive pairwise counting on random lists") {
        Rng rng(31);
        for (int trial = 0; trial < 40; ++trial) {
            std::vector<double> mem(3 + rng.uniform_int(20)), non(3 + rng.uniform_int(20));
            // quantized values so ties actually occur
            for (double& v : mem) v = static_cast<double>(rng.uniform_int(8));
            for (double& v : non) v = static_cast<double>(rng.uniform_int(8));
            double wins = 0.0;
            for (double m : mem) {
                for (double n : non) wins += m < n ? 1.0 : (m == n ? 0.5 : 0.0);
            }
            double oracle = wins / static_cast<double>(mem.size() * non.size());
            CHECK(mia_auc(mem, non) == doctest::Approx(oracle).epsilon(1e-15));
        }
    }
    SUBCASE("empty side rejected") {
        CHECK_THROWS_AS(mia_auc({}, {1.0}), std::invalid_argument);
        CHECK_THROWS_AS(mia_auc({1.0}, {}), std::invalid_argument);
    }
}

TEST_CASE("mia_score and final_score") {
    CHECK(mia_score(0.5) == 1.0);
    CHECK(mia_score(1.0) == doctest::Approx(0.0));
    CHECK(mia_score(0.0) == doctest::Approx(0.0));
    CHECK(mia_score(0.75) == doctest::Approx(0.5));
    CHECK_THROWS_AS(mia_score(1.2), std::invalid_argument);
    CHECK(final_score(0.3, 0.6, 0.9) == doctest::Approx(0.6));
    CHECK_THROWS_AS(final_score(-0.1, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("evaluate_regurgitation on an untrained model") {
    Corpus corpus = generate_corpus(tiny_corpus_spec(21));
    Model m = tiny_model(corpus, 3);
    RegurgitationResult res = evaluate_regurgitation(m, corpus, 24);

    SUBCASE("full 12-cell grid with the forget inversion applied") {
        REQUIRE(res.cells.size() == 12);
        std::set<std::string> keys;
        for (const RegurgitationCell& c : res.cells) {
            keys.insert(std::to_string(c.subtask) + to_string(c.kind) + to_string(c.split));
            double expect = c.split == Split::Forget ? 1.0 - c.raw : c.raw;
            CHECK(c.aggregated == doctest::Approx(expect).epsilon(1e-15));
            CHECK(c.raw >= 0.0);
            CHECK(c.raw <= 1.0);
        }
        CHECK(keys.size() == 12);
        CHECK_NOTHROW(task_aggregate(res.cells));
    }
    SUBCASE("transcripts re-score to the reported cell means") {
        // second implementation: recompute each cell mean from the transcripts
        std::size_t ti = 0;
        for (const RegurgitationCell& c : res.cells) {
            std::vector<std::size_t> idx = corpus.select(c.subtask, c.split, c.kind);
            double acc = 0.0;
            for (std::size_t i : idx) {
                const Document& doc = corpus.documents[i];
                REQUIRE(res.transcripts[ti].doc_id == doc.id);
                acc += c.kind == Kind::SentenceCompletion
                           ? rouge_l_oracle(res.transcripts[ti].decoded, doc.completion)
                           : exact_match(res.transcripts[ti].decoded, doc.completion);
                ++ti;
            }
            CHECK(c.raw ==
                  doctest::Approx(acc / static_cast<double>(idx.size())).epsilon(1e-12));
        }
        CHECK(ti == res.transcripts.size());
    }
    SUBCASE("deterministic across calls") {
        RegurgitationResult again = evaluate_regurgitation(m, corpus, 24);
        REQUIRE(again.transcripts.size() == res.transcripts.size());
        for (std::size_t i = 0; i < res.transcripts.size(); ++i)
            CHECK(again.transcripts[i].decoded == res.transcripts[i].decoded);
    }
}

TEST_CASE("document_loss and knowledge_probe") {
    Corpus corpus = generate_corpus(tiny_corpus_spec(33));
    Model m = tiny_model(corpus, 4);

    SUBCASE("document loss is finite, positive, deterministic") {
        const Document& d = corpus.documents[0];
        double a = document_loss(m, corpus.tokenizer, d);
        double b = document_loss(m, corpus.tokenizer, d);
        CHECK(a == b);
        CHECK(a > 0.0);
        CHECK(std::isfinite(a));
    }
    SUBCASE("untrained probe accuracy is near chance") {
        REQUIRE(!corpus.probe.empty());
        double acc = knowledge_probe(m, corpus.tokenizer, corpus.probe);
        CHECK(acc >= 0.0);
        CHECK(acc <= 0.6); // chance is 0.25 with randomized answer positions
        CHECK(knowledge_probe(m, corpus.tokenizer, corpus.probe) == acc);
    }
    SUBCASE("empty probe rejected") {
        CHECK_THROWS_AS(knowledge_probe(m, corpus.tokenizer, {}), std::invalid_argument);
    }
}

TEST_CASE("metric report round trip and consistency checks") {
    Corpus corpus = generate_corpus(tiny_corpus_spec(44));
    Model m = tiny_model(corpus, 5);
    MetricReport r = evaluate_model(m, corpus, corpus.probe, "fp-test", 16);
    CHECK_NOTHROW(r.validate());

    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "unlab_test_metrics.json";
    save_metric_report(r, path.string());
    MetricReport loaded = load_metric_report(path.string());
    CHECK(loaded.task_aggregate == r.task_aggregate);
    CHECK(loaded.mia_auc == r.mia_auc);
    CHECK(loaded.mia_score == r.mia_score);
    CHECK(loaded.probe_accuracy == r.probe_accuracy);
    CHECK(loaded.final_score == r.final_score);
    CHECK(loaded.config_fingerprint == "fp-test");
    REQUIRE(loaded.cells.size() == 12);
    CHECK_NOTHROW(loaded.validate());

    loaded.final_score += 0.01;
    CHECK_THROWS_AS(loaded.validate(), std::runtime_error);
    fs::remove(path);

    // byte-identical serialization for identical inputs
    fs::path p2 = fs::temp_directory_path() / "unlab_test_metrics2.json";
    save_metric_report(r, p2.string());
    save_metric_report(r, path.string());
    std::ifstream f1(path, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    fs::remove(path);
    fs::remove(p2);
}

TEST_CASE("csv row formatting") {
    MetricReport r;
    std::array<double, 12> s{};
    s.fill(0.5);
    r.cells = full_grid(s);
    r.task_aggregate = 0.5;
    r.mia_auc = 0.5;
    r.mia_score = 1.0;
    r.probe_accuracy = 0.25;
    r.final_score = (0.5 + 1.0 + 0.25) / 3.0;
    std::string row = metric_report_csv_row("layers-2-3-4", r);
    CHECK(row.rfind("layers-2-3-4,0.5,0.5,1,0.25,", 0) == 0);
    CHECK(metric_report_csv_header() ==
          "label,task_aggregate,mia_auc,mia_score,probe_accuracy,final_score");
}
