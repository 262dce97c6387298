#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "unlab/model.hpp"
#include "unlab/rng.hpp"

using namespace unlab;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.vocab_size = 31;
    cfg.max_seq_len = 32;
    cfg.seed = seed;
    return cfg;
}

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> ids(n);
    for (int& id : ids) id = static_cast<int>(rng.uniform_int(vocab));
    return ids;
}

} // namespace

TEST_CASE("build_model") {
    SUBCASE("same seed twice gives bit-identical parameters") {
        Model a = Model::build(tiny_config(7));
        Model b = Model::build(tiny_config(7));
        CHECK(a.weight_checksum() == b.weight_checksum());
        Model c = Model::build(tiny_config(8));
        CHECK(a.weight_checksum() != c.weight_checksum());
    }
    SUBCASE("head dim arithmetic") {
        ModelConfig cfg = tiny_config();
        cfg.d_model = 64;
        cfg.n_heads = 4;
        CHECK(cfg.head_dim() == 16);
    }
    SUBCASE("fewer than three layers rejected") {
        ModelConfig cfg = tiny_config();
        cfg.n_layers = 2;
        CHECK_THROWS_AS(Model::build(cfg), std::invalid_argument);
    }
    SUBCASE("d_model not divisible by heads rejected") {
        ModelConfig cfg = tiny_config();
        cfg.d_model = 18;
        CHECK_THROWS_AS(Model::build(cfg), std::invalid_argument);
    }
    SUBCASE("parameter count matches documented formula") {
        Model m = Model::build(tiny_config());
        CHECK(m.param_count() == Model::expected_param_count(tiny_config()));
    }
}

TEST_CASE("forward") {
    Model m = Model::build(tiny_config(3));
    std::vector<int> toks = random_tokens(10, 31, 5);

    SUBCASE("causality: future tokens cannot change early logits") {
        Tape t1(false);
        Tensor base = forward(t1, m, toks).logits.value();
        for (std::uint64_t s = 0; s < 5; ++s) {
            std::vector<int> permuted = toks;
            // permute the suffix after position 3
            Rng rng(100 + s);
            for (std::size_t i = permuted.size(); i > 5; --i) {
                std::size_t j = 4 + rng.uniform_int(i - 4);
                std::swap(permuted[i - 1], permuted[j]);
            }
            Tape t2(false);
            Tensor got = forward(t2, m, permuted).logits.value();
            for (std::size_t pos = 0; pos <= 3; ++pos) {
                for (std::size_t v = 0; v < got.cols(); ++v) {
                    CHECK(got.at(pos, v) == base.at(pos, v));
                }
            }
        }
    }
    SUBCASE("empty capture gives empty trace and identical logits") {
        Tape t1(false), t2(false);
        Tensor a = forward(t1, m, toks, {}).logits.value();
        ForwardResult fr = forward(t2, m, toks, {0, 1, 2});
        CHECK(fr.trace().size() == 3);
        CHECK(a.data == fr.logits.value().data);
    }
    SUBCASE("captured layers have shape T×d") {
        Tape t(false);
        ForwardResult fr = forward(t, m, toks, {0, 2});
        ActivationTrace tr = fr.trace();
        CHECK(tr.size() == 2);
        for (const auto& [layer, h] : tr) {
            CHECK(h.rows() == toks.size());
            CHECK(h.cols() == m.config().d_model);
        }
    }
    SUBCASE("deterministic forward") {
        Tape t1(false), t2(false);
        CHECK(forward(t1, m, toks).logits.value().data ==
              forward(t2, m, toks).logits.value().data);
    }
    SUBCASE("over-length input rejected") {
        std::vector<int> too_long = random_tokens(33, 31, 6);
        Tape t(false);
        CHECK_THROWS_AS(forward(t, m, too_long), std::invalid_argument);
    }
    SUBCASE("bad capture layer rejected") {
        Tape t(false);
        CHECK_THROWS_AS(forward(t, m, toks, {3}), std::out_of_range);
    }
}

TEST_CASE("lm_loss masking") {
    Model m = Model::build(tiny_config(4));
    std::vector<int> toks = random_tokens(8, 31, 9);
    std::vector<int> targets(toks.begin() + 1, toks.end());
    targets.push_back(0);

    // masked mean equals the mean of per-position losses of that half
    std::vector<std::uint8_t> half(8, 0);
    for (std::size_t i = 0; i < 4; ++i) half[i] = 1;

    Tape t(false);
    Var logits = forward(t, m, toks).logits;
    double masked = lm_loss(t, logits, targets, half).value().data[0];

    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<std::uint8_t> one(8, 0);
        one[i] = 1;
        acc += lm_loss(t, logits, targets, one).value().data[0];
    }
    CHECK(masked == doctest::Approx(acc / 4).epsilon(1e-12));
}

TEST_CASE("set_trainable window") {
    Model m = Model::build(tiny_config(5));
    SUBCASE("mlp-down-only marks exactly the window down-projections") {
        m.set_trainable_window(2, TrainScope::MlpDownOnly);
        std::size_t trainable = 0;
        for (const Parameter& p : m.params()) {
            if (p.trainable) {
                ++trainable;
                CHECK(p.name.find("mlp.w_down") != std::string::npos);
            }
        }
        CHECK(trainable == 3);
    }
    SUBCASE("full-layer marks all window parameters") {
        m.set_trainable_window(2, TrainScope::FullLayer);
        for (const Parameter& p : m.params()) {
            bool in_layer = p.name.rfind("layer", 0) == 0;
            CHECK(p.trainable == in_layer);
        }
    }
    SUBCASE("out-of-range window rejected") {
        CHECK_THROWS_AS(m.set_trainable_window(3, TrainScope::MlpDownOnly), std::out_of_range);
        CHECK_THROWS_AS(m.set_trainable_window(1, TrainScope::MlpDownOnly), std::out_of_range);
    }
}

TEST_CASE("clone_frozen") {
    Model m = Model::build(tiny_config(6));
    Model frozen = m.clone_frozen();
    std::uint64_t before = frozen.weight_checksum();
    CHECK(before == m.weight_checksum());

    std::vector<int> toks = random_tokens(6, 31, 11);
    SUBCASE("same outputs before training") {
        Tape t1(false), t2(false);
        CHECK(forward(t1, m, toks).logits.value().data ==
              forward(t2, frozen, toks).logits.value().data);
    }
    SUBCASE("clone unchanged when the original is perturbed") {
        for (Parameter& p : m.params()) {
            for (double& v : p.value.data) v += 0.1;
        }
        CHECK(frozen.weight_checksum() == before);
        for (const Parameter& p : frozen.params()) CHECK_FALSE(p.trainable);
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    Model m = Model::build(tiny_config(12));
    std::filesystem::path path = std::filesystem::temp_directory_path() / "unlab_test_ckpt.bin";
    m.save(path.string());
    Model loaded = Model::load(path.string());
    CHECK(loaded.weight_checksum() == m.weight_checksum());
    CHECK(loaded.config().vocab_size == m.config().vocab_size);

    // corrupting the payload is detected
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-9, std::ios::end);
        char b = 0x5a;
        f.write(&b, 1);
    }
    CHECK_THROWS_AS(Model::load(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("greedy decode is deterministic and respects eos") {
    ModelConfig cfg = tiny_config(13);
    Model m = Model::build(cfg);
    std::vector<int> prompt = random_tokens(4, 31, 14);
    auto a = greedy_decode(m, prompt, 8, 0);
    auto b = greedy_decode(m, prompt, 8, 0);
    CHECK(a == b);
    CHECK(a.size() <= 8);
    for (int tok : a) CHECK(tok != 0);
}
