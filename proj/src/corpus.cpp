#include "unlab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "unlab/rng.hpp"
#include "unlab/tensor.hpp"

namespace unlab {

using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
        case Split::Retain: return "retain";
        case Split::Forget: return "forget";
        case Split::Holdout: return "holdout";
    }
    return "?";
}

std::string to_string(Kind k) {
    return k == Kind::SentenceCompletion ? "sentence-completion" : "qa";
}

Split split_from_string(const std::string& s) {
    if (s == "retain") return Split::Retain;
    if (s == "forget") return Split::Forget;
    if (s == "holdout") return Split::Holdout;
    throw std::invalid_argument("unknown split: " + s);
}

Kind kind_from_string(const std::string& s) {
    if (s == "sentence-completion") return Kind::SentenceCompletion;
    if (s == "qa") return Kind::Qa;
    throw std::invalid_argument("unknown kind: " + s);
}

CorpusSpec CorpusSpec::desk(std::uint64_t seed) {
    CorpusSpec s;
    s.seed = seed;
    return s;
}

CorpusSpec CorpusSpec::paper_sizes(std::uint64_t seed) {
    CorpusSpec s;
    s.retain = {260, 762, 392};
    s.forget = {214, 780, 372};
    s.holdout = {214, 780, 372}; // mirrors the forget distribution
    s.probe_target = 240;
    s.seed = seed;
    return s;
}

void CorpusSpec::validate() const {
    for (int i = 0; i < 3; ++i) {
        if (retain[i] < 1 || forget[i] < 1 || holdout[i] < 1) {
            throw std::invalid_argument("corpus spec: every per-subtask split size must be >= 1");
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

namespace {

const char* kSpecialTokens[] = {
    "<pad>", "<bos>", "<eos>", "<unk>",
    "<pii:name>", "</pii:name>", "<pii:phone>", "</pii:phone>", "<pii:ssn>", "</pii:ssn>",
    "<pii:email>", "</pii:email>", "<pii:address>", "</pii:address>",
};

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// Exact partition of `text` into pieces: an optional single leading space is
// attached to the following word/punctuation, so concatenation of the pieces
// restores the text byte for byte.
std::vector<std::string> split_pieces(const std::string& text) {
    std::vector<std::string> pieces;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        std::size_t start = i;
        if (text[i] == ' ') {
            if (i + 1 >= n || text[i + 1] == ' ') {
                pieces.push_back(" ");
                ++i;
                continue;
            }
            ++i;
        }
        if (is_word_char(text[i])) {
            std::size_t j = i;
            while (j < n && is_word_char(text[j])) ++j;
            pieces.push_back(text.substr(start, j - start));
            i = j;
        } else {
            pieces.push_back(text.substr(start, i - start + 1));
            ++i;
        }
    }
    return pieces;
}

struct PiiSpan {
    std::size_t start;
    std::size_t len;
    PiiKind kind;
};

const std::regex& ssn_regex() {
    static const std::regex re(R"(\d{3}-\d{2}-\d{4})");
    return re;
}
const std::regex& phone_regex() {
    static const std::regex re(R"(\(\d{3}\) \d{3}-\d{4})");
    return re;
}
const std::regex& email_regex() {
    static const std::regex re(R"([A-Za-z0-9][A-Za-z0-9.]*@[A-Za-z0-9.]*[A-Za-z0-9])");
    return re;
}

void collect_regex_spans(const std::string& text, const std::regex& re, PiiKind kind,
                         std::vector<PiiSpan>& spans) {
    auto begin = std::sregex_iterator(text.begin(), text.end(), re);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        spans.push_back({static_cast<std::size_t>(it->position()),
                         static_cast<std::size_t>(it->length()), kind});
    }
}

void collect_literal_spans(const std::string& text, const std::vector<std::string>& literals,
                           PiiKind kind, std::vector<PiiSpan>& spans) {
    for (const std::string& lit : literals) {
        std::size_t pos = 0;
        while ((pos = text.find(lit, pos)) != std::string::npos) {
            spans.push_back({pos, lit.size(), kind});
            pos += lit.size();
        }
    }
}

std::vector<PiiSpan> find_pii_spans(const std::string& text,
                                    const std::vector<std::string>& names,
                                    const std::vector<std::string>& addresses) {
    std::vector<PiiSpan> spans;
    collect_regex_spans(text, ssn_regex(), PiiKind::Ssn, spans);
    collect_regex_spans(text, phone_regex(), PiiKind::Phone, spans);
    collect_regex_spans(text, email_regex(), PiiKind::Email, spans);
    collect_literal_spans(text, names, PiiKind::Name, spans);
    collect_literal_spans(text, addresses, PiiKind::Address, spans);
    std::sort(spans.begin(), spans.end(), [](const PiiSpan& a, const PiiSpan& b) {
        if (a.start != b.start) return a.start < b.start;
        return a.len > b.len;
    });
    std::vector<PiiSpan> kept;
    std::size_t covered = 0;
    for (const PiiSpan& s : spans) {
        if (s.start < covered) continue; // overlap: keep the earlier span
        kept.push_back(s);
        covered = s.start + s.len;
    }
    return kept;
}

} // namespace

Tokenizer::Tokenizer() {
    for (const char* tok : kSpecialTokens) intern(tok);
}

int Tokenizer::intern(const std::string& piece) {
    auto it = tok_to_id_.find(piece);
    if (it != tok_to_id_.end()) return it->second;
    int id = static_cast<int>(id_to_tok_.size());
    id_to_tok_.push_back(piece);
    tok_to_id_.emplace(piece, id);
    return id;
}

void Tokenizer::register_pii_strings(std::vector<std::string> names,
                                     std::vector<std::string> addresses) {
    known_names_ = std::move(names);
    known_addresses_ = std::move(addresses);
}

void Tokenizer::absorb(const std::string& text) {
    // same segmentation as encode, so every piece encode can produce exists
    std::vector<PiiSpan> spans = find_pii_spans(text, known_names_, known_addresses_);
    std::size_t cursor = 0;
    auto take = [&](const std::string& segment) {
        for (const std::string& piece : split_pieces(segment)) intern(piece);
    };
    for (const PiiSpan& s : spans) {
        if (s.start > cursor) take(text.substr(cursor, s.start - cursor));
        take(text.substr(s.start, s.len));
        cursor = s.start + s.len;
    }
    if (cursor < text.size()) take(text.substr(cursor));
}

std::vector<int> Tokenizer::encode(const std::string& text, UnknownPolicy policy) const {
    std::vector<int> ids;
    auto emit_segment = [&](const std::string& segment) {
        for (const std::string& piece : split_pieces(segment)) {
            auto it = tok_to_id_.find(piece);
            if (it != tok_to_id_.end()) {
                ids.push_back(it->second);
            } else if (policy == UnknownPolicy::MapToUnk) {
                ids.push_back(kUnk);
            } else {
                throw std::out_of_range("tokenizer: piece not in vocabulary: '" + piece + "'");
            }
        }
    };
    std::vector<PiiSpan> spans = find_pii_spans(text, known_names_, known_addresses_);
    std::size_t cursor = 0;
    for (const PiiSpan& s : spans) {
        if (s.start > cursor) emit_segment(text.substr(cursor, s.start - cursor));
        ids.push_back(pii_begin(s.kind));
        emit_segment(text.substr(s.start, s.len));
        ids.push_back(pii_end(s.kind));
        cursor = s.start + s.len;
    }
    if (cursor < text.size()) emit_segment(text.substr(cursor));
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_tok_.size()) {
            throw std::out_of_range("tokenizer: unknown token id " + std::to_string(id));
        }
        if (id < kFirstWordId) continue; // specials and markers decode to ""
        out += id_to_tok_[static_cast<std::size_t>(id)];
    }
    return out;
}

Tokenizer Tokenizer::from_parts(std::vector<std::string> tokens, std::vector<std::string> names,
                                std::vector<std::string> addresses) {
    Tokenizer t;
    if (tokens.size() < static_cast<std::size_t>(kFirstWordId)) {
        throw std::invalid_argument("tokenizer: vocabulary missing special tokens");
    }
    for (int i = 0; i < kFirstWordId; ++i) {
        if (tokens[static_cast<std::size_t>(i)] != kSpecialTokens[i]) {
            throw std::invalid_argument("tokenizer: special token table mismatch");
        }
    }
    for (std::size_t i = static_cast<std::size_t>(kFirstWordId); i < tokens.size(); ++i) {
        t.intern(tokens[i]);
    }
    t.register_pii_strings(std::move(names), std::move(addresses));
    return t;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

namespace pools {

const std::vector<std::string> given = {
    "Alice", "Brandon", "Carla", "Derek", "Elena", "Felix", "Grace", "Hugo", "Irene", "Jonas",
    "Karen", "Leo", "Mona", "Nolan", "Olga", "Pedro", "Quinn", "Rosa", "Samuel", "Tara",
    "Ulysses", "Vera", "Walter", "Xenia", "Yusuf", "Zelda", "Arthur", "Bianca", "Cedric",
    "Daphne", "Edmund", "Flora", "Gideon", "Hazel", "Ivan", "Judith", "Kelvin", "Lydia",
    "Marcus", "Nadia", "Oscar", "Paula", "Ruben", "Sylvia", "Tobias", "Ursula", "Victor",
    "Wanda"};

const std::vector<std::string> surname = {
    "Abbott", "Barnes", "Calloway", "Dalton", "Everett", "Farrow", "Granger", "Holloway",
    "Ingram", "Jennings", "Kessler", "Lockwood", "Mercer", "Norwood", "Osborne", "Prescott",
    "Quimby", "Radcliffe", "Sheffield", "Thatcher", "Underhill", "Vance", "Whitfield", "Yardley",
    "Ashford", "Blackwell", "Crane", "Dunmore", "Ellsworth", "Fairbanks", "Goodwin", "Hartley",
    "Irwin", "Jessop", "Kirkland", "Langley", "Marlowe", "Newbury", "Ormond", "Pembroke",
    "Quill", "Rutherford", "Stanton", "Tilden", "Upton", "Vickers", "Wexford", "Yates"};

const std::vector<std::string> character = {
    "Arin", "Belka", "Corvo", "Dalia", "Ewan", "Faren", "Gilda", "Harrow", "Iska", "Joren",
    "Kestrel", "Lumen", "Mirren", "Nyx", "Orin", "Pavel", "Quilla", "Rusk", "Sorrel", "Talin",
    "Umber", "Vesna", "Wrenna", "Yarrow", "Zephyr", "Alder", "Briar", "Cinder", "Dove", "Ember",
    "Fable", "Garnet"};

const std::vector<std::string> role = {
    "clockmaker", "lighthouse keeper", "mapmaker", "beekeeper", "stargazer", "weaver",
    "glassblower", "ferryman", "archivist", "gardener", "tinsmith", "bellringer", "falconer",
    "printer", "stonemason", "sailmaker", "herbalist", "bookbinder", "chandler", "cooper",
    "potter", "miller", "smith", "carver"};

const std::vector<std::string> place = {
    "silver marsh", "old aqueduct", "amber orchard", "whispering dunes", "flooded quarry",
    "cedar bluffs", "glass lagoon", "iron causeway", "moss hollow", "salt flats",
    "painted cliffs", "quiet delta", "fox meadow", "drowned forest", "copper ravine",
    "starlit fen", "broken jetty", "winding terraces", "pale shallows", "thorn valley",
    "echo caverns", "lantern bay", "frost garden", "sunken library"};

const std::vector<std::string> object = {
    "brass astrolabe", "cracked compass", "velvet atlas", "silver spyglass", "clay whistle",
    "copper kettle", "ivory chess piece", "glass pendulum", "wooden flute", "iron key",
    "woven banner", "marble sundial", "tin lantern", "amber prism", "quartz bell",
    "leather journal", "painted oar", "bronze mirror", "stone tablet", "cedar chest",
    "gilded feather", "pewter goblet", "coral charm", "obsidian blade"};

const std::vector<std::string> goal = {
    "sailing beyond the reef", "naming every star", "building a floating garden",
    "finding the lost archive", "taming the north wind", "mapping the tides",
    "restoring the old bell", "crossing the salt desert", "planting a cedar grove",
    "decoding the cliff runes", "raising a glass tower", "following the heron road",
    "mending the broken bridge", "charting the deep caves", "winning the lantern race",
    "brewing the midnight tea", "weaving a cloud blanket", "counting the river stones",
    "opening the sealed gate", "learning the gull songs", "walking the whole coast",
    "lighting every beacon", "growing a winter rose", "hearing the mountain hum"};

const std::vector<std::string> adverb = {
    "carefully", "quietly", "proudly", "slowly", "eagerly", "gently", "solemnly", "briskly",
    "fondly", "patiently", "secretly", "cheerfully", "gravely", "neatly", "boldly", "calmly"};

const std::vector<std::string> city = {
    "Marlow Bay", "Ketter Falls", "Ingleton", "Dunbrook", "Caldera City", "Port Severin",
    "Ashvale", "Norwich Bend", "Tarrow", "Veldt Harbor", "Quarry Point", "Lindenmere",
    "Osier Creek", "Bramfield", "Halloran", "Skye Landing", "Redmoor", "Galton Heights",
    "Wrenport", "Eastwick", "Fenwick Shoals", "Milldown", "Harrow Gate", "Seabright",
    "Cormorant Cove", "Pellston", "Windrow", "Jasper Flats", "Umberline", "Throckton",
    "Nettle Bay", "Larkspur", "Ivoryton", "Grayling", "Foxden", "Ellery", "Dovetail",
    "Crescent Mills", "Boulder Reach", "Alder Point"};

const std::vector<std::string> street = {
    "Maple", "Juniper", "Harbor", "Willow", "Foundry", "Beacon", "Orchard", "Garnet",
    "Linden", "Quarry", "Sable", "Thistle", "Vesper", "Walnut", "Yarrow", "Zinnia",
    "Anchor", "Bluff", "Cobble", "Drift", "Elmwood", "Fern", "Gull", "Heather",
    "Ironwood", "Kelp", "Lantern", "Mistral", "Nutmeg", "Osprey", "Pine", "Reed"};

const std::vector<std::string> street_type = {"Street", "Avenue", "Road", "Lane"};

const std::vector<std::string> domain = {
    "mailhaven", "postbox", "lettergate", "inkwell", "courierly", "parchment", "quillmail",
    "sealpost", "driftmail", "beaconbox", "harborpost", "lanternmail", "fernmail", "tidemail",
    "pinebox", "reedpost"};

const std::vector<std::string> landmark_adj = {
    "Crystal", "Granite", "Meridian", "Harbor", "Celestial", "Vermilion", "Onyx", "Gilded",
    "Sapphire", "Windward", "Cobalt", "Marble", "Ivory", "Juniper", "Lantern", "Mistral",
    "Northern", "Opal", "Pewter", "Quartz", "Russet", "Sterling", "Tidal", "Umber",
    "Verdant", "Western", "Yonder", "Zenith", "Amber", "Basalt", "Cedar", "Dusk",
    "Ember", "Frost", "Garnet", "Hollow", "Indigo", "Jade", "Kindred", "Laurel",
    "Mirror", "Noble", "Ochre", "Pale", "Quiet", "River", "Summit", "Twilight"};

const std::vector<std::string> landmark_type = {
    "Tower", "Museum", "Bridge", "Library", "Observatory", "Garden", "Theater", "Aquarium",
    "Stadium", "Gallery", "Cathedral", "Lighthouse", "Pavilion", "Archive", "Conservatory",
    "Fountain", "Monument", "Planetarium", "Boardwalk", "Amphitheater", "Arboretum", "Castle",
    "Promenade", "Rotunda"};

const std::vector<std::string> feature = {
    "spiral glass staircase", "floating walkways", "tidal organ", "mirrored dome",
    "hanging fern gallery", "clockwork doors", "whale-bone arches", "echoing rotunda",
    "stained marble floor", "rooftop apiary", "sunken reading rooms", "copper weathervanes",
    "midnight light shows", "woven reed ceiling", "carved cedar gates", "saltwater moat",
    "terraced rock pools", "brass telescope hall", "painted star maps", "levered drawbridges",
    "singing wind pipes", "amber skylights", "granite lion statues", "lantern-lit piers"};

const std::vector<std::string> num3 = {"212", "313", "414", "515", "616", "717", "818", "919",
                                       "234", "345", "456", "567", "678", "789", "321", "432",
                                       "543", "654", "765", "876"};
const std::vector<std::string> num2 = {"10", "21", "32", "43", "54", "65", "76", "87", "98",
                                       "19", "28", "37", "46", "55"};
const std::vector<std::string> num4 = {
    "1001", "1102", "1203", "1304", "1405", "1506", "1607", "1708", "1809", "1910",
    "2011", "2112", "2213", "2314", "2415", "2516", "2617", "2718", "2819", "2920",
    "3021", "3122", "3223", "3324", "3425", "3526", "3627", "3728", "3829", "3930",
    "4031", "4132", "4233", "4334", "4435", "4536", "4637", "4738", "4839", "4940"};
const std::vector<std::string> house_no = {
    "7", "12", "19", "23", "31", "38", "44", "52", "60", "67", "73", "81", "88", "95", "104",
    "113", "127", "131", "146", "158"};

} // namespace pools

namespace {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& pool) {
    return pool[rng.uniform_int(pool.size())];
}

std::string pick_distinct(Rng& rng, const std::vector<std::string>& pool,
                          const std::string& avoid) {
    std::string v;
    do {
        v = pick(rng, pool);
    } while (v == avoid);
    return v;
}

std::string fresh(Rng& rng, std::set<std::string>& used,
                  const std::function<std::string()>& make) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::string v = make();
        if (used.insert(v).second) return v;
    }
    throw std::runtime_error("corpus generator: entity pool exhausted");
}

std::string year_str(Rng& rng) {
    return std::to_string(1950 + static_cast<int>(rng.uniform_int(50)));
}

// per-base-document facts used to derive probe items
struct BaseDoc {
    int subtask;
    Split split;
    Document sc;
    Document qa;
    std::string qa_answer;                  // completion without the leading space
    std::vector<std::string> qa_distractors; // 3 same-pool alternatives
};

} // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Corpus corpus;
    corpus.spec = spec;

    std::vector<std::string> pii_names, pii_addresses;
    std::set<std::string> used_s1, used_names, used_ssn, used_phone, used_email, used_addr,
        used_landmark, used_year_feat;
    std::vector<BaseDoc> bases;
    int email_counter = 0;

    auto make_s1 = [&](Split split, int index) {
        BaseDoc b;
        b.subtask = 1;
        b.split = split;
        std::string key = fresh(rng, used_s1, [&] {
            return pick(rng, pools::character) + "|" + pick(rng, pools::role);
        });
        std::string ch = key.substr(0, key.find('|'));
        std::string role = key.substr(key.find('|') + 1);
        const std::string& pl = pick(rng, pools::place);
        const std::string& adv = pick(rng, pools::adverb);
        const std::string& obj = pick(rng, pools::object);
        const std::string& gl = pick(rng, pools::goal);

        b.sc.prompt = ch + " the " + role + " lived beside the " + pl + ".";
        b.sc.completion = " Every morning " + ch + " " + adv + " polished the " + obj +
                          " and dreamed of " + gl + ".";
        b.qa.prompt = "What did " + ch + " the " + role + " dream of?";
        b.qa.completion = " " + gl;
        b.qa_answer = gl;
        for (int i = 0; i < 3; ++i) b.qa_distractors.push_back(pick_distinct(rng, pools::goal, gl));
        (void)index;
        return b;
    };

    auto make_s2 = [&](Split split, int index) {
        BaseDoc b;
        b.subtask = 2;
        b.split = split;
        std::string name = fresh(rng, used_names, [&] {
            return pick(rng, pools::given) + " " + pick(rng, pools::surname);
        });
        pii_names.push_back(name);
        const std::string& city = pick(rng, pools::city);
        std::string year = year_str(rng);
        std::string ssn = fresh(rng, used_ssn, [&] {
            return pick(rng, pools::num3) + "-" + pick(rng, pools::num2) + "-" +
                   pick(rng, pools::num4);
        });
        std::string phone = fresh(rng, used_phone, [&] {
            return "(" + pick(rng, pools::num3) + ") " + pick(rng, pools::num3) + "-" +
                   pick(rng, pools::num4);
        });
        std::string email = "m" + std::to_string(1000 + email_counter++) + "@" +
                            pick(rng, pools::domain) + ".com";
        used_email.insert(email);
        std::string address = fresh(rng, used_addr, [&] {
            return pick(rng, pools::house_no) + " " + pick(rng, pools::street) + " " +
                   pick(rng, pools::street_type);
        });
        pii_addresses.push_back(address);

        struct Field { const char* label; std::string value; };
        Field extra[3] = {{"phone number", phone}, {"email", email}, {"home address", address}};
        const Field& f = extra[index % 3];

        b.sc.prompt = name + " was born in " + city + " in " + year + ".";
        b.sc.completion = " Their SSN is " + ssn + " and their " + std::string(f.label) +
                          " is " + f.value + ".";
        if (index % 2 == 0) {
            b.qa.prompt = "What is the SSN of " + name + "?";
            b.qa.completion = " " + ssn;
            b.qa_answer = ssn;
            for (int i = 0; i < 3; ++i) {
                b.qa_distractors.push_back(pick(rng, pools::num3) + "-" + pick(rng, pools::num2) +
                                           "-" + pick(rng, pools::num4));
            }
        } else {
            b.qa.prompt = "What is the " + std::string(f.label) + " of " + name + "?";
            b.qa.completion = " " + f.value;
            b.qa_answer = f.value;
            for (int i = 0; i < 3; ++i) {
                switch (index % 3) {
                    case 0:
                        b.qa_distractors.push_back("(" + pick(rng, pools::num3) + ") " +
                                                   pick(rng, pools::num3) + "-" +
                                                   pick(rng, pools::num4));
                        break;
                    case 1:
                        b.qa_distractors.push_back("m" + std::to_string(9000 + static_cast<int>(
                                                              rng.uniform_int(900))) + "@" +
                                                   pick(rng, pools::domain) + ".com");
                        break;
                    default:
                        b.qa_distractors.push_back(pick(rng, pools::house_no) + " " +
                                                   pick(rng, pools::street) + " " +
                                                   pick(rng, pools::street_type));
                }
            }
        }
        return b;
    };

    auto make_s3 = [&](Split split, int index) {
        BaseDoc b;
        b.subtask = 3;
        b.split = split;
        std::string landmark = fresh(rng, used_landmark, [&] {
            return pick(rng, pools::landmark_adj) + " " + pick(rng, pools::landmark_type);
        });
        const std::string& city = pick(rng, pools::city);
        // completion carries no unique entity, so the (year, feature) pair
        // must be unique to keep splits content-disjoint
        std::string pair = fresh(rng, used_year_feat, [&] {
            return year_str(rng) + "|" + pick(rng, pools::feature);
        });
        std::string year = pair.substr(0, pair.find('|'));
        std::string feat = pair.substr(pair.find('|') + 1);

        b.sc.prompt = "The " + landmark + " stands in " + city + ".";
        b.sc.completion = " It opened in " + year + " and is famous for its " + feat + ".";
        if (index % 2 == 0) {
            b.qa.prompt = "In which year did the " + landmark + " open?";
            b.qa.completion = " " + year;
            b.qa_answer = year;
            for (int i = 0; i < 3; ++i) {
                std::string y;
                do {
                    y = year_str(rng);
                } while (y == year);
                b.qa_distractors.push_back(y);
            }
        } else {
            b.qa.prompt = "What is the " + landmark + " famous for?";
            b.qa.completion = " its " + feat;
            b.qa_answer = "its " + feat;
            for (int i = 0; i < 3; ++i)
                b.qa_distractors.push_back("its " + pick_distinct(rng, pools::feature, feat));
        }
        return b;
    };

    auto generate_subtask = [&](int subtask, auto& make) {
        const std::array<std::pair<Split, std::size_t>, 3> plan = {
            std::make_pair(Split::Retain, spec.retain[static_cast<std::size_t>(subtask - 1)]),
            std::make_pair(Split::Forget, spec.forget[static_cast<std::size_t>(subtask - 1)]),
            std::make_pair(Split::Holdout, spec.holdout[static_cast<std::size_t>(subtask - 1)]),
        };
        for (const auto& [split, count] : plan) {
            for (std::size_t i = 0; i < count; ++i) {
                BaseDoc b = make(split, static_cast<int>(i));
                char idbuf[64];
                std::snprintf(idbuf, sizeof(idbuf), "s%d-%s-%04zu", subtask,
                              to_string(split).c_str(), i);
                b.sc.id = std::string(idbuf) + "-sc";
                b.sc.subtask = subtask;
                b.sc.split = split;
                b.sc.kind = Kind::SentenceCompletion;
                b.qa.id = std::string(idbuf) + "-qa";
                b.qa.subtask = subtask;
                b.qa.split = split;
                b.qa.kind = Kind::Qa;
                bases.push_back(std::move(b));
            }
        }
    };

    generate_subtask(1, make_s1);
    generate_subtask(2, make_s2);
    generate_subtask(3, make_s3);

    // Probe items are built from retain-split facts: the QA pair itself plus a
    // pick-the-true-completion item, so a memorized model can answer them.
    std::vector<std::size_t> retain_bases;
    for (std::size_t i = 0; i < bases.size(); ++i) {
        if (bases[i].split == Split::Retain) retain_bases.push_back(i);
    }
    for (std::size_t i : retain_bases) {
        if (corpus.probe.size() >= spec.probe_target) break;
        const BaseDoc& b = bases[i];
        {
            ProbeItem item;
            item.question = b.qa.prompt;
            item.answer_index = static_cast<int>(rng.uniform_int(4));
            int d = 0;
            for (int c = 0; c < 4; ++c) {
                item.choices[static_cast<std::size_t>(c)] =
                    (c == item.answer_index) ? b.qa_answer
                                             : b.qa_distractors[static_cast<std::size_t>(d++)];
            }
            corpus.probe.push_back(std::move(item));
        }
        if (corpus.probe.size() >= spec.probe_target) break;
        {
            ProbeItem item;
            item.question = b.sc.prompt;
            item.answer_index = static_cast<int>(rng.uniform_int(4));
            int filled = 0;
            for (int c = 0; c < 4 && filled < 3; ++c) {
                if (c == item.answer_index) continue;
                // distractor completions from other retain docs of the subtask
                for (int attempt = 0; attempt < 100; ++attempt) {
                    const BaseDoc& other = bases[retain_bases[rng.uniform_int(retain_bases.size())]];
                    if (other.subtask == b.subtask && other.sc.completion != b.sc.completion) {
                        item.choices[static_cast<std::size_t>(c)] = other.sc.completion;
                        ++filled;
                        break;
                    }
                }
            }
            item.choices[static_cast<std::size_t>(item.answer_index)] = b.sc.completion;
            corpus.probe.push_back(std::move(item));
        }
    }

    corpus.tokenizer.register_pii_strings(pii_names, pii_addresses);
    for (const BaseDoc& b : bases) {
        corpus.documents.push_back(b.sc);
        corpus.documents.push_back(b.qa);
    }
    for (const Document& d : corpus.documents) {
        corpus.tokenizer.absorb(d.prompt);
        corpus.tokenizer.absorb(d.completion);
    }
    for (const ProbeItem& item : corpus.probe) {
        corpus.tokenizer.absorb(item.question);
        for (const std::string& c : item.choices) corpus.tokenizer.absorb(c);
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus helpers and I/O
// ---------------------------------------------------------------------------

std::uint64_t Corpus::doc_checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const Document& d : documents) {
        for (const std::string* s :
             {&d.id, &d.prompt, &d.completion}) {
            h = fnv1a64(s->data(), s->size(), h);
        }
        std::string meta = std::to_string(d.subtask) + to_string(d.split) + to_string(d.kind);
        h = fnv1a64(meta.data(), meta.size(), h);
    }
    return h;
}

std::vector<std::size_t> Corpus::select(int subtask, Split split, Kind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < documents.size(); ++i) {
        const Document& d = documents[i];
        if (d.subtask == subtask && d.split == split && d.kind == kind) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Corpus::select_split(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < documents.size(); ++i) {
        if (documents[i].split == split) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Corpus::select_split_kind(Split split, Kind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < documents.size(); ++i) {
        if (documents[i].split == split && documents[i].kind == kind) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Corpus::training_docs() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < documents.size(); ++i) {
        if (documents[i].split != Split::Holdout) out.push_back(i);
    }
    return out;
}

namespace {

json spec_to_json(const CorpusSpec& s) {
    return {{"retain", s.retain},   {"forget", s.forget},           {"holdout", s.holdout},
            {"probe_target", s.probe_target}, {"seed", s.seed}};
}

CorpusSpec spec_from_json(const json& j) {
    CorpusSpec s;
    s.retain = j.at("retain");
    s.forget = j.at("forget");
    s.holdout = j.at("holdout");
    s.probe_target = j.at("probe_target");
    s.seed = j.at("seed");
    return s;
}

void validate_corpus(const Corpus& corpus) {
    std::set<std::string> ids;
    for (const Document& d : corpus.documents) {
        if (!ids.insert(d.id).second) {
            throw std::runtime_error("corpus: duplicate id " + d.id);
        }
    }
    // split sizes match the spec (each base doc contributes one record per kind)
    for (int st = 1; st <= 3; ++st) {
        auto expect = [&](Split sp, std::size_t want) {
            for (Kind k : {Kind::SentenceCompletion, Kind::Qa}) {
                std::size_t got = corpus.select(st, sp, k).size();
                if (got != want) {
                    throw std::runtime_error("corpus: subtask " + std::to_string(st) + " " +
                                             to_string(sp) + " " + to_string(k) + " has " +
                                             std::to_string(got) + " records, spec says " +
                                             std::to_string(want));
                }
            }
        };
        std::size_t i = static_cast<std::size_t>(st - 1);
        expect(Split::Retain, corpus.spec.retain[i]);
        expect(Split::Forget, corpus.spec.forget[i]);
        expect(Split::Holdout, corpus.spec.holdout[i]);
    }
    // no completion string may appear in two splits of one subtask
    for (int st = 1; st <= 3; ++st) {
        std::unordered_map<std::string, Split> seen;
        for (const Document& d : corpus.documents) {
            if (d.subtask != st || d.kind != Kind::SentenceCompletion) continue;
            auto [it, fresh] = seen.emplace(d.completion, d.split);
            if (!fresh && it->second != d.split) {
                throw std::runtime_error("corpus: completion shared across splits in subtask " +
                                         std::to_string(st));
            }
        }
    }
}

} // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write corpus: " + path);
    json header = {{"schema", "unlab-corpus"},
                   {"version", 1},
                   {"spec", spec_to_json(corpus.spec)},
                   {"vocab", corpus.tokenizer.tokens()},
                   {"pii_names", corpus.tokenizer.known_names()},
                   {"pii_addresses", corpus.tokenizer.known_addresses()},
                   {"doc_checksum", corpus.doc_checksum()}};
    os << header.dump() << "\n";
    for (const Document& d : corpus.documents) {
        json j = {{"id", d.id},
                  {"subtask", d.subtask},
                  {"split", to_string(d.split)},
                  {"kind", to_string(d.kind)},
                  {"prompt", d.prompt},
                  {"completion", d.completion}};
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("corpus write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open corpus: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("corpus: empty file " + path);
    json header = json::parse(line);
    if (header.value("schema", "") != "unlab-corpus" || header.value("version", 0) != 1) {
        throw std::runtime_error("corpus: unsupported schema header in " + path);
    }
    Corpus corpus;
    corpus.spec = spec_from_json(header.at("spec"));
    corpus.tokenizer = Tokenizer::from_parts(header.at("vocab"), header.at("pii_names"),
                                             header.at("pii_addresses"));
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        Document d;
        auto field = [&](const char* name) -> const json& {
            if (!j.contains(name)) {
                throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                         ": missing field '" + name + "'");
            }
            return j.at(name);
        };
        try {
            d.id = field("id");
            d.subtask = field("subtask");
            d.split = split_from_string(field("split"));
            d.kind = kind_from_string(field("kind"));
            d.prompt = field("prompt");
            d.completion = field("completion");
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        if (d.subtask < 1 || d.subtask > 3) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                     ": field 'subtask' must be 1..3");
        }
        if (d.prompt.empty() || d.completion.empty()) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                     ": empty prompt or completion");
        }
        corpus.documents.push_back(std::move(d));
    }
    validate_corpus(corpus);
    if (corpus.doc_checksum() != header.at("doc_checksum").get<std::uint64_t>()) {
        throw std::runtime_error("corpus: document checksum mismatch in " + path);
    }
    return corpus;
}

void save_probe(const std::vector<ProbeItem>& probe, const std::string& path) {
    json items = json::array();
    for (const ProbeItem& p : probe) {
        items.push_back({{"question", p.question},
                         {"choices", p.choices},
                         {"answer_index", p.answer_index}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write probe: " + path);
    os << json{{"schema", "unlab-probe"}, {"version", 1}, {"items", items}}.dump(2) << "\n";
}

std::vector<ProbeItem> load_probe(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open probe: " + path);
    json j = json::parse(is);
    if (j.value("schema", "") != "unlab-probe") {
        throw std::runtime_error("probe: unsupported schema in " + path);
    }
    std::vector<ProbeItem> probe;
    for (const json& ji : j.at("items")) {
        ProbeItem p;
        p.question = ji.at("question");
        p.choices = ji.at("choices");
        p.answer_index = ji.at("answer_index");
        if (p.answer_index < 0 || p.answer_index > 3) {
            throw std::runtime_error("probe: answer_index out of range");
        }
        probe.push_back(std::move(p));
    }
    return probe;
}

TokenizedDoc tokenize_for_lm(const Tokenizer& tok, const Document& doc) {
    TokenizedDoc td;
    td.ids.push_back(Tokenizer::kBos);
    std::vector<int> p = tok.encode(doc.prompt);
    td.ids.insert(td.ids.end(), p.begin(), p.end());
    td.prompt_len = td.ids.size();
    std::vector<int> c = tok.encode(doc.completion);
    td.ids.insert(td.ids.end(), c.begin(), c.end());
    td.ids.push_back(Tokenizer::kEos);
    return td;
}

} // namespace unlab
