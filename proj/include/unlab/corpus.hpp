#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace unlab {

enum class Split { Retain, Forget, Holdout };
enum class Kind { SentenceCompletion, Qa };

std::string to_string(Split s);
std::string to_string(Kind k);
Split split_from_string(const std::string& s);
Kind kind_from_string(const std::string& s);

struct Document {
    std::string id;
    int subtask = 1; // 1..3
    Split split = Split::Retain;
    Kind kind = Kind::SentenceCompletion;
    std::string prompt;
    std::string completion;
};

// Base-document counts per subtask; every base document yields one
// sentence-completion and one QA record.
struct CorpusSpec {
    std::array<std::size_t, 3> retain{40, 40, 40};
    std::array<std::size_t, 3> forget{30, 30, 30};
    std::array<std::size_t, 3> holdout{30, 30, 30};
    std::size_t probe_target = 240;
    std::uint64_t seed = 0;

    static CorpusSpec desk(std::uint64_t seed);
    static CorpusSpec paper_sizes(std::uint64_t seed);
    void validate() const;
};

struct ProbeItem {
    std::string question;
    std::array<std::string, 4> choices;
    int answer_index = 0;
};

enum class PiiKind { Name, Phone, Ssn, Email, Address };

// Word-and-punctuation tokenizer over a closed generated vocabulary, with
// atomic PII marker tokens. Phone/SSN/email spans are detected by pattern;
// name and address spans come from the registered string lists.
class Tokenizer {
public:
    enum class UnknownPolicy { Reject, MapToUnk };

    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static int pii_begin(PiiKind k) { return 4 + 2 * static_cast<int>(k); }
    static int pii_end(PiiKind k) { return 5 + 2 * static_cast<int>(k); }
    static constexpr int kFirstWordId = 14;

    Tokenizer();

    std::size_t vocab_size() const { return id_to_tok_.size(); }

    std::vector<int> encode(const std::string& text,
                            UnknownPolicy policy = UnknownPolicy::Reject) const;
    // Exact inverse of encode on corpus text: markers decode to "".
    std::string decode(std::span<const int> ids) const;

    void register_pii_strings(std::vector<std::string> names, std::vector<std::string> addresses);
    // extends the vocabulary with every piece of `text` (generation-time only)
    void absorb(const std::string& text);

    const std::vector<std::string>& tokens() const { return id_to_tok_; }
    const std::vector<std::string>& known_names() const { return known_names_; }
    const std::vector<std::string>& known_addresses() const { return known_addresses_; }
    static Tokenizer from_parts(std::vector<std::string> tokens, std::vector<std::string> names,
                                std::vector<std::string> addresses);

private:
    int intern(const std::string& piece);
    std::vector<std::string> id_to_tok_;
    std::unordered_map<std::string, int> tok_to_id_;
    std::vector<std::string> known_names_;
    std::vector<std::string> known_addresses_;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<Document> documents;
    std::vector<ProbeItem> probe;
    Tokenizer tokenizer;

    std::uint64_t doc_checksum() const;
    // indices into documents
    std::vector<std::size_t> select(int subtask, Split split, Kind kind) const;
    std::vector<std::size_t> select_split(Split split) const;
    std::vector<std::size_t> select_split_kind(Split split, Kind kind) const;
    std::vector<std::size_t> training_docs() const; // retain ∪ forget, both kinds
};

Corpus generate_corpus(const CorpusSpec& spec);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);
void save_probe(const std::vector<ProbeItem>& probe, const std::string& path);
std::vector<ProbeItem> load_probe(const std::string& path);

// bos + prompt ids + completion ids + eos, with the prompt prefix length
// (bos included) so completion-token masks can be built.
struct TokenizedDoc {
    std::vector<int> ids;
    std::size_t prompt_len = 0;
};
TokenizedDoc tokenize_for_lm(const Tokenizer& tok, const Document& doc);

} // namespace unlab
