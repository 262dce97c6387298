#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "unlab/corpus.hpp"

using namespace unlab;

TEST_CASE("generate_corpus desk spec") {
    Corpus c = generate_corpus(CorpusSpec::desk(42));

    SUBCASE("size contract: 3 subtasks x 100 base docs x 2 kinds") {
        CHECK(c.documents.size() == 600);
        for (int st = 1; st <= 3; ++st) {
            CHECK(c.select(st, Split::Retain, Kind::SentenceCompletion).size() == 40);
            CHECK(c.select(st, Split::Forget, Kind::Qa).size() == 30);
            CHECK(c.select(st, Split::Holdout, Kind::SentenceCompletion).size() == 30);
        }
    }
    SUBCASE("same seed reproduces the corpus exactly") {
        Corpus c2 = generate_corpus(CorpusSpec::desk(42));
        CHECK(c.doc_checksum() == c2.doc_checksum());
        CHECK(c.tokenizer.tokens() == c2.tokenizer.tokens());
        REQUIRE(c.probe.size() == c2.probe.size());
        for (std::size_t i = 0; i < c.probe.size(); ++i) {
            CHECK(c.probe[i].question == c2.probe[i].question);
            CHECK(c.probe[i].answer_index == c2.probe[i].answer_index);
        }
        Corpus c3 = generate_corpus(CorpusSpec::desk(43));
        CHECK(c.doc_checksum() != c3.doc_checksum());
    }
    SUBCASE("every generated SSN matches ddd-dd-dddd and sits inside markers") {
        std::regex ssn_re(R"(\d{3}-\d{2}-\d{4})");
        int found = 0;
        for (const Document& d : c.documents) {
            if (d.subtask != 2) continue;
            std::string text = d.prompt + d.completion;
            auto it = std::sregex_iterator(text.begin(), text.end(), ssn_re);
            for (; it != std::sregex_iterator(); ++it) {
                ++found;
                std::vector<int> ids = c.tokenizer.encode(text);
                auto beg = std::find(ids.begin(), ids.end(), Tokenizer::pii_begin(PiiKind::Ssn));
                auto end = std::find(ids.begin(), ids.end(), Tokenizer::pii_end(PiiKind::Ssn));
                CHECK(beg != ids.end());
                CHECK(end != ids.end());
                CHECK(beg < end);
            }
        }
        CHECK(found > 0);
    }
    SUBCASE("split disjointness by completion content") {
        for (int st = 1; st <= 3; ++st) {
            std::set<std::string> retain, forget, holdout;
            for (const Document& d : c.documents) {
                if (d.subtask != st || d.kind != Kind::SentenceCompletion) continue;
                (d.split == Split::Retain    ? retain
                 : d.split == Split::Forget ? forget
                                            : holdout)
                    .insert(d.completion);
            }
            for (const std::string& s : forget) {
                CHECK(retain.count(s) == 0);
                CHECK(holdout.count(s) == 0);
            }
            for (const std::string& s : holdout) CHECK(retain.count(s) == 0);
        }
    }
    SUBCASE("probe items are well formed and reach the target") {
        CHECK(c.probe.size() >= 200);
        for (const ProbeItem& p : c.probe) {
            CHECK(p.answer_index >= 0);
            CHECK(p.answer_index <= 3);
            for (const std::string& ch : p.choices) CHECK(!ch.empty());
        }
    }
    SUBCASE("invalid sizes rejected") {
        CorpusSpec bad = CorpusSpec::desk(1);
        bad.forget[1] = 0;
        CHECK_THROWS_AS(generate_corpus(bad), std::invalid_argument);
    }
}

TEST_CASE("paper-sizes preset matches the published split table") {
    CorpusSpec s = CorpusSpec::paper_sizes(7);
    CHECK(s.retain == std::array<std::size_t, 3>{260, 762, 392});
    CHECK(s.forget == std::array<std::size_t, 3>{214, 780, 372});
}

TEST_CASE("tokenizer") {
    Corpus c = generate_corpus(CorpusSpec::desk(5));
    const Tokenizer& tok = c.tokenizer;

    SUBCASE("empty string gives empty sequence") {
        CHECK(tok.encode("").empty());
        CHECK(tok.decode(std::vector<int>{}).empty());
    }
    SUBCASE("round trip on every corpus document") {
        for (const Document& d : c.documents) {
            CHECK(tok.decode(tok.encode(d.prompt)) == d.prompt);
            CHECK(tok.decode(tok.encode(d.completion)) == d.completion);
        }
    }
    SUBCASE("ssn text yields marker-delimited region") {
        c.tokenizer.absorb("SSN: 123-45-6789");
        std::vector<int> ids = c.tokenizer.encode("SSN: 123-45-6789");
        auto beg = std::find(ids.begin(), ids.end(), Tokenizer::pii_begin(PiiKind::Ssn));
        auto end = std::find(ids.begin(), ids.end(), Tokenizer::pii_end(PiiKind::Ssn));
        REQUIRE(beg != ids.end());
        REQUIRE(end != ids.end());
        CHECK(beg < end);
        CHECK(c.tokenizer.decode(ids) == "SSN: 123-45-6789");
    }
    SUBCASE("registered names wrapped in name markers") {
        REQUIRE(!tok.known_names().empty());
        std::string name = tok.known_names()[0];
        std::vector<int> ids = tok.encode(name);
        CHECK(ids.front() == Tokenizer::pii_begin(PiiKind::Name));
        CHECK(ids.back() == Tokenizer::pii_end(PiiKind::Name));
        CHECK(tok.decode(ids) == name);
    }
    SUBCASE("unknown piece policy") {
        CHECK_THROWS_AS(tok.encode("zzzunknownpiecezzz"), std::out_of_range);
        std::vector<int> ids =
            tok.encode("zzzunknownpiecezzz", Tokenizer::UnknownPolicy::MapToUnk);
        REQUIRE(ids.size() == 1);
        CHECK(ids[0] == Tokenizer::kUnk);
    }
    SUBCASE("unknown id rejected on decode") {
        std::vector<int> bad = {static_cast<int>(tok.vocab_size())};
        CHECK_THROWS_AS(tok.decode(bad), std::out_of_range);
    }
    SUBCASE("tokenize_for_lm splits prompt and completion cleanly") {
        const Document& d = c.documents[0];
        TokenizedDoc td = tokenize_for_lm(tok, d);
        CHECK(td.ids.front() == Tokenizer::kBos);
        CHECK(td.ids.back() == Tokenizer::kEos);
        std::vector<int> completion_ids(td.ids.begin() + static_cast<long>(td.prompt_len),
                                        td.ids.end() - 1);
        CHECK(tok.decode(completion_ids) == d.completion);
    }
}

TEST_CASE("corpus file round trip") {
    namespace fs = std::filesystem;
    Corpus c = generate_corpus(CorpusSpec::desk(11));
    fs::path path = fs::temp_directory_path() / "unlab_test_corpus.jsonl";
    save_corpus(c, path.string());

    SUBCASE("save then load preserves every field") {
        Corpus loaded = load_corpus(path.string());
        CHECK(loaded.doc_checksum() == c.doc_checksum());
        CHECK(loaded.tokenizer.tokens() == c.tokenizer.tokens());
        REQUIRE(loaded.documents.size() == c.documents.size());
        for (std::size_t i = 0; i < c.documents.size(); ++i) {
            CHECK(loaded.documents[i].id == c.documents[i].id);
            CHECK(loaded.documents[i].prompt == c.documents[i].prompt);
            CHECK(loaded.documents[i].completion == c.documents[i].completion);
            CHECK(loaded.documents[i].split == c.documents[i].split);
        }
    }
    SUBCASE("duplicate id rejected") {
        std::ifstream in(path);
        std::string header, first, rest;
        std::getline(in, header);
        std::getline(in, first);
        fs::path bad = fs::temp_directory_path() / "unlab_test_corpus_dup.jsonl";
        std::ofstream out(bad);
        out << header << "\n" << first << "\n" << first << "\n";
        while (std::getline(in, rest)) out << rest << "\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_corpus(bad.string()), doctest::Contains("duplicate id"),
                             std::runtime_error);
        fs::remove(bad);
    }
    SUBCASE("missing split field reported by name and line") {
        std::ifstream in(path);
        std::string header, first;
        std::getline(in, header);
        std::getline(in, first);
        auto pos = first.find("\"split\"");
        REQUIRE(pos != std::string::npos);
        // drop the split key/value pair
        auto end = first.find(',', pos);
        first.erase(pos, end - pos + 1);
        fs::path bad = fs::temp_directory_path() / "unlab_test_corpus_missing.jsonl";
        std::ofstream out(bad);
        out << header << "\n" << first << "\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_corpus(bad.string()), doctest::Contains("split"),
                             std::runtime_error);
        fs::remove(bad);
    }
    fs::remove(path);
}

TEST_CASE("probe file round trip") {
    namespace fs = std::filesystem;
    Corpus c = generate_corpus(CorpusSpec::desk(13));
    fs::path path = fs::temp_directory_path() / "unlab_test_probe.json";
    save_probe(c.probe, path.string());
    std::vector<ProbeItem> loaded = load_probe(path.string());
    REQUIRE(loaded.size() == c.probe.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].question == c.probe[i].question);
        CHECK(loaded[i].choices == c.probe[i].choices);
        CHECK(loaded[i].answer_index == c.probe[i].answer_index);
    }
    fs::remove(path);
}
