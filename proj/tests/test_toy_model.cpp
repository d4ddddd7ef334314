#include "doctest.h"

#include "verhallu/errors.hpp"
#include "verhallu/toy_model.hpp"

#include <cmath>
#include <cstring>
#include <random>

using namespace verhallu;
using namespace verhallu::toy;

namespace {

ToyModelConfig small_config(uint64_t seed = 0) {
    ToyModelConfig cfg;
    cfg.layers = 6;
    cfg.seed = seed;
    return cfg;
}

kfp::FrameTokenGrid random_visual(const ToyModelConfig & cfg, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> data(static_cast<std::size_t>(cfg.frames * cfg.tokens_per_frame * cfg.d_model));
    for (double & v : data) {
        v = dist(rng);
    }
    return kfp::FrameTokenGrid(cfg.frames, cfg.tokens_per_frame, cfg.d_model, std::move(data));
}

std::vector<TokenId> random_text(std::mt19937_64 & rng, std::size_t len) {
    std::vector<TokenId> text;
    for (std::size_t i = 0; i < len; ++i) {
        text.push_back(11 + rng() % 53);
    }
    return text;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("default vocabulary") {
    const auto vocab = default_vocab();
    REQUIRE(vocab.size() == 64);
    CHECK(vocab[0] == "0");
    CHECK(vocab[7] == "7");
    CHECK(vocab[10] == "<bos>");
    CHECK(vocab[11] == "<t11>");
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(ToyModelConfig{}.validate());

    ToyModelConfig cfg;
    cfg.d_model = 33;
    cfg.heads = 2;
    CHECK_THROWS_AS(ToyModel{cfg}, InvalidConfig);

    cfg = {};
    cfg.vocab = {"1", "2", "3", "<bos>"};
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);

    cfg = {};
    cfg.max_positions = 1 + cfg.frames * cfg.tokens_per_frame;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("weights are a pure function of the seed") {
    const ToyModel a(small_config(1));
    const ToyModel b(small_config(1));
    const ToyModel c(small_config(2));
    for (int layer = 0; layer < 6; ++layer) {
        CHECK(a.layer_checksum(layer) == b.layer_checksum(layer));
        CHECK(a.layer_checksum(layer) != c.layer_checksum(layer));
    }
    CHECK(a.layer_checksum(0) != a.layer_checksum(1));
    CHECK_THROWS(a.layer_checksum(6));
}

TEST_CASE("layout") {
    const ToyModel model(small_config());
    const auto layout = model.layout_for(5);
    CHECK(layout.visual_start == 1);
    CHECK(layout.frames == 8);
    CHECK(layout.tokens_per_frame == 4);
    CHECK(layout.total_len == 1 + 32 + 5);
}

TEST_CASE("forward is deterministic and decodes a digit") {
    const ToyModel model(small_config(3));
    const auto visual = random_visual(model.config(), 9);
    const std::vector<TokenId> text{20, 31, 42};
    const auto r1 = model.forward(visual, text);
    const auto r2 = model.forward(visual, text);
    CHECK(r1.answer_text == r2.answer_text);
    CHECK(bitwise_equal(r1.digit_logits, r2.digit_logits));
    REQUIRE(r1.digit_logits.size() == 7);

    std::size_t best = 0;
    for (std::size_t i = 1; i < 7; ++i) {
        if (r1.digit_logits[i] > r1.digit_logits[best]) {
            best = i;
        }
    }
    CHECK(r1.answer_text == std::to_string(best + 1));
    CHECK(r1.chosen_logit_index == model.digit_token(static_cast<int>(best + 1)));
}

TEST_CASE("decoding is restricted to the permitted digits") {
    const ToyModel model(small_config(4));
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto visual = random_visual(model.config(), rng());
        const auto text = random_text(rng, 4);
        ForwardOptions opts;
        opts.answer_choices = 3;
        const auto r = model.forward(visual, text, opts);
        const int digit = std::stoi(r.answer_text);
        CHECK(digit >= 1);
        CHECK(digit <= 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(r.digit_logits[static_cast<std::size_t>(digit - 1)] >= r.digit_logits[static_cast<std::size_t>(i)]);
        }
    }
    ForwardOptions bad;
    bad.answer_choices = 8;
    CHECK_THROWS_AS(model.forward(random_visual(model.config(), 1), {20}, bad), InvalidInput);
}

TEST_CASE("forward input checks") {
    const ToyModel model(small_config());
    const auto visual = random_visual(model.config(), 1);
    CHECK_THROWS_AS(model.forward(visual, {}), InvalidInput);
    CHECK_THROWS_AS(model.forward(visual, {64}), InvalidInput);
    CHECK_THROWS_AS(model.forward(kfp::FrameTokenGrid(2, 4, 32), {20}), InvalidInput);
    CHECK_THROWS_AS(model.forward(visual, std::vector<TokenId>(100, 20)), InvalidInput);
    ForwardOptions opts;
    opts.kfp = kfp::KfpConfig{};
    opts.ranking_override = kfp::FrameAttention{{1.0, 0.0}, ""};
    CHECK_THROWS_AS(model.forward(visual, {20}, opts), InvalidInput);
}

TEST_CASE("beta = 1 leaves every tap and logit bitwise unchanged") {
    const ToyModel model(small_config(5));
    const auto visual = random_visual(model.config(), 2);
    const std::vector<TokenId> text{12, 13, 14, 15};
    ForwardOptions base;
    base.tap_layers = {0, 1, 2, 3, 4, 5};
    ForwardOptions with = base;
    kfp::KfpConfig cfg;
    cfg.beta = 1.0;
    cfg.layer_lo = 0;
    cfg.layer_hi = 5;
    with.kfp = cfg;

    const auto a = model.forward(visual, text, base);
    const auto b = model.forward(visual, text, with);
    CHECK(bitwise_equal(a.digit_logits, b.digit_logits));
    REQUIRE(a.taps.size() == 6);
    for (std::size_t i = 0; i < a.taps.size(); ++i) {
        CHECK(bitwise_equal(a.taps[i].hidden.values(), b.taps[i].hidden.values()));
    }
}

TEST_CASE("a layer range outside the model is a no-op") {
    const ToyModel model(small_config(6));
    const auto visual = random_visual(model.config(), 3);
    ForwardOptions opts;
    kfp::KfpConfig cfg;
    cfg.beta = 0.0;
    cfg.layer_lo = 99;
    cfg.layer_hi = 99;
    opts.kfp = cfg;
    CHECK(bitwise_equal(model.forward(visual, {20, 21}).digit_logits, model.forward(visual, {20, 21}, opts).digit_logits));
}

TEST_CASE("the hook changes only visual rows at its layer and nothing before it") {
    const ToyModel model(small_config(7));
    const auto visual = random_visual(model.config(), 4);
    const std::vector<TokenId> text{30, 31, 32};
    ForwardOptions base;
    base.tap_layers = {2, 3, 4};
    ForwardOptions with = base;
    kfp::KfpConfig cfg;
    cfg.k = 1;
    cfg.beta = 0.0;
    cfg.layer_lo = 3;
    cfg.layer_hi = 3;
    with.kfp = cfg;

    const auto a = model.forward(visual, text, base);
    const auto b = model.forward(visual, text, with);
    const auto layout = model.layout_for(text.size());

    CHECK(bitwise_equal(a.taps[0].hidden.values(), b.taps[0].hidden.values()));
    CHECK(a.taps[0].attention == b.taps[0].attention);
    CHECK(a.taps[1].attention == b.taps[1].attention);

    bool visual_changed = false;
    for (std::size_t pos = 0; pos < layout.total_len; ++pos) {
        const bool same = bitwise_equal(a.taps[1].hidden.row(pos), b.taps[1].hidden.row(pos));
        if (layout.is_visual(pos)) {
            visual_changed = visual_changed || !same;
        } else {
            CHECK(same);
        }
    }
    CHECK(visual_changed);

    // BOS attends only to itself, so it never sees the visual block
    CHECK(bitwise_equal(a.taps[2].hidden.row(0), b.taps[2].hidden.row(0)));
    // later text positions do
    CHECK_FALSE(bitwise_equal(a.taps[2].hidden.row(layout.total_len - 1), b.taps[2].hidden.row(layout.total_len - 1)));
}

TEST_CASE("a peaked ranking override at beta = 0 moves the logits") {
    const ToyModel model(small_config(8));
    std::mt19937_64 rng(77);
    int changed = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto visual = random_visual(model.config(), rng());
        const auto text = random_text(rng, 5);
        ForwardOptions opts;
        kfp::KfpConfig cfg;
        cfg.k = 1;
        cfg.beta = 0.0;
        cfg.layer_lo = 0;
        cfg.layer_hi = 5;
        opts.kfp = cfg;
        std::vector<double> peak(8, 0.0);
        peak[rng() % 8] = 1.0;
        opts.ranking_override = kfp::FrameAttention{peak, "override"};
        if (!bitwise_equal(model.forward(visual, text).digit_logits, model.forward(visual, text, opts).digit_logits)) {
            ++changed;
        }
    }
    CHECK(changed == 20);
}

TEST_CASE("frame_attention_summary") {
    // BOS, 2 frames x 2 tokens, 1 text token
    const kfp::SequenceLayout layout{1, 2, 2, 6};
    AttentionMap attn(2, 6);
    const double h0[6] = {0.1, 0.4, 0.2, 0.1, 0.1, 0.1};
    const double h1[6] = {0.2, 0.0, 0.0, 0.3, 0.3, 0.2};
    for (std::size_t k = 0; k < 6; ++k) {
        attn.at(0, 5, k) = h0[k];
        attn.at(1, 5, k) = h1[k];
    }

    const auto mean = frame_attention_summary(attn, layout);
    REQUIRE(mean.scores.size() == 2);
    // head mean per key: [0.2, 0.1, 0.2, 0.2]; frame means: 0.15, 0.2
    CHECK(mean.scores[0] == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(mean.scores[1] == doctest::Approx(0.2).epsilon(1e-12));

    const auto mx = frame_attention_summary(attn, layout, {QueryAggregation::FinalText, HeadAggregation::Max});
    // head max per key: [0.4, 0.2, 0.3, 0.3]
    CHECK(mx.scores[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(mx.scores[1] == doctest::Approx(0.3).epsilon(1e-12));

    CHECK_THROWS_AS(frame_attention_summary(AttentionMap(2, 5), layout), InvalidInput);
}

TEST_CASE("mean-text summary averages every text query") {
    const kfp::SequenceLayout layout{1, 1, 1, 4};
    AttentionMap attn(1, 4);
    attn.at(0, 2, 1) = 0.5;
    attn.at(0, 3, 1) = 0.25;
    const auto s = frame_attention_summary(attn, layout, {QueryAggregation::MeanText, HeadAggregation::Mean});
    CHECK(s.scores[0] == doctest::Approx(0.375));

    const kfp::SequenceLayout no_text{1, 1, 1, 2};
    CHECK_THROWS_AS(frame_attention_summary(AttentionMap(1, 2), no_text,
                                            {QueryAggregation::MeanText, HeadAggregation::Mean}),
                    InvalidInput);
}

TEST_CASE("attention rows are causal probability distributions") {
    const ToyModel model(small_config(9));
    ForwardOptions opts;
    opts.tap_layers = {0, 5};
    const auto r = model.forward(random_visual(model.config(), 5), {40, 41}, opts);
    for (const auto & tap : r.taps) {
        const auto & a = tap.attention;
        for (std::size_t h = 0; h < a.heads(); ++h) {
            for (std::size_t q = 0; q < a.seq(); ++q) {
                double total = 0.0;
                for (std::size_t k = 0; k < a.seq(); ++k) {
                    if (k > q) {
                        CHECK(a.at(h, q, k) == 0.0);
                    }
                    total += a.at(h, q, k);
                }
                CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("resume from a residual trace matches a full pass bitwise") {
    const ToyModel model(small_config(10));
    std::mt19937_64 rng(10);
    const auto visual = random_visual(model.config(), rng());
    const auto text = random_text(rng, 7);
    ResidualTrace trace;
    const auto clean = model.forward(visual, text, {}, &trace);
    REQUIRE(trace.entering.size() == 7);
    CHECK(bitwise_equal(model.resume(trace, {}).digit_logits, clean.digit_logits));

    for (int lo : {0, 2, 5, 6, 40}) {
        ForwardOptions opts;
        kfp::KfpConfig cfg;
        cfg.beta = 0.3;
        cfg.layer_lo = lo;
        cfg.layer_hi = lo + 2;
        opts.kfp = cfg;
        opts.answer_choices = 5;
        const auto full = model.forward(visual, text, opts);
        const auto resumed = model.resume(trace, opts);
        CHECK(bitwise_equal(full.digit_logits, resumed.digit_logits));
        CHECK(full.answer_text == resumed.answer_text);
    }

    ForwardOptions hooked;
    hooked.kfp = kfp::KfpConfig{};
    CHECK_THROWS_AS(model.forward(visual, text, hooked, &trace), InvalidInput);
    CHECK_THROWS_AS(model.resume(ResidualTrace{}, {}), InvalidInput);
}
