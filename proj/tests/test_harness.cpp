#include "doctest.h"

#include "verhallu/errors.hpp"
#include "verhallu/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace verhallu;
using namespace verhallu::harness;
namespace fs = std::filesystem;

namespace {

class EchoProvider : public AnswerProvider {
public:
    std::string name() const override { return "echo"; }
    std::string answer(const Sample & sample, const std::string & prompt) const override {
        if (sample.id.find("boom") != std::string::npos) {
            throw std::runtime_error("provider failure");
        }
        return std::to_string(prompt.size() % sample.candidates.size() + 1);
    }
};

ToyProviderConfig small_toy() {
    ToyProviderConfig cfg;
    cfg.model.layers = 4;
    cfg.model.seed = 3;
    return cfg;
}

fs::path temp_path(const std::string & name) { return fs::temp_directory_path() / ("verhallu_test_harness_" + name); }

} // namespace

TEST_CASE("random provider") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(20, 30, 5), 1);
    const RandomProvider a(7), b(7), c(8);
    std::size_t differ = 0;
    for (const auto & s : ds) {
        const auto prompt = build_prompt(s);
        const auto ans = a.answer(s, prompt);
        CHECK(ans == b.answer(s, prompt));
        const auto parsed = parse_answer(ans, s.candidates.size());
        REQUIRE(parsed.parseable());
        CHECK(*parsed.index >= 1);
        CHECK(*parsed.index <= s.candidates.size());
        differ += ans != c.answer(s, prompt) ? 1 : 0;
    }
    CHECK(differ > ds.size() / 2);
    CHECK(a.name() == "random");
}

TEST_CASE("toy provider") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(2, 3, 2), 4);
    const ToyProvider provider(small_toy());
    CHECK(provider.name() == "toy");

    const auto prompt = build_prompt(ds[0]);
    const auto tokens = provider.encode_prompt(prompt);
    CHECK(tokens.size() == 24);
    for (auto t : tokens) {
        CHECK(t >= 11);
        CHECK(t < 64);
    }
    CHECK(provider.encode_prompt("two words").size() == 2);
    CHECK(provider.encode_prompt("").size() == 1);
    CHECK(provider.encode_prompt(prompt) != provider.encode_prompt(prompt + " extra"));

    CHECK(provider.visual_features("video-0001") == provider.visual_features("video-0001"));
    CHECK_FALSE(provider.visual_features("video-0001") == provider.visual_features("video-0002"));

    for (const auto & s : ds) {
        const auto ans = provider.answer(s, build_prompt(s));
        CHECK(ans == provider.answer(s, build_prompt(s)));
        const int digit = std::stoi(ans);
        CHECK(digit >= 1);
        CHECK(digit <= static_cast<int>(s.candidates.size()));
    }

    auto kfp_cfg = small_toy();
    kfp_cfg.kfp = kfp::KfpConfig{};
    CHECK(ToyProvider(kfp_cfg).name() == "toy+kfp");
    kfp_cfg.kfp->m = 0;
    CHECK_THROWS_AS(ToyProvider{kfp_cfg}, InvalidConfig);
}

TEST_CASE("toy provider with beta = 1 answers exactly like the baseline") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(3, 3, 3), 12);
    auto cfg = small_toy();
    const ToyProvider base(cfg);
    cfg.kfp = kfp::KfpConfig{};
    cfg.kfp->beta = 1.0;
    cfg.kfp->layer_lo = 0;
    cfg.kfp->layer_hi = 3;
    const ToyProvider hooked(cfg);
    for (const auto & s : ds) {
        const auto prompt = build_prompt(s);
        CHECK(base.decode(s, prompt).digit_logits == hooked.decode(s, prompt).digit_logits);
    }
}

TEST_CASE("replay provider") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(1, 3, 1), 0);
    std::vector<Prediction> preds{{ds[0].id, "2", {}, {}, {}}};
    const ReplayProvider replay(preds, "external");
    CHECK(replay.name() == "external");
    CHECK(replay.answer(ds[0], "") == "2");
    CHECK_THROWS_AS(replay.answer(ds[1], ""), InvalidInput);
    preds.push_back(preds[0]);
    CHECK_THROWS_AS(ReplayProvider{preds}, ValidationError);
}

TEST_CASE("evaluate keeps dataset order and survives provider failures") {
    auto ds = generate_synthetic(SyntheticSpec::balanced(2, 3, 2), 2);
    ds[3].id = "boom-3";
    const EchoProvider echo;
    const auto result = evaluate(ds, echo, {});
    REQUIRE(result.predictions.size() == ds.size());
    CHECK(result.failures == 1);
    CHECK(result.latency_ms.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(result.predictions[i].sample_id == ds[i].id);
        CHECK_FALSE(result.predictions[i].latency_ms.has_value());
    }
    CHECK(result.predictions[3].raw_text.empty());
    CHECK(result.predictions[0].raw_text == echo.answer(ds[0], build_prompt(ds[0])));

    EvalOptions opts;
    opts.record_latency = true;
    opts.model_name = "echo-model";
    const auto timed = evaluate(ds, echo, opts);
    CHECK(timed.predictions[0].latency_ms.has_value());
    CHECK(timed.predictions[0].model_name == "echo-model");
}

TEST_CASE("parallel evaluation matches serial") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(2, 3, 3), 6);
    const ToyProvider provider(small_toy());
    EvalOptions parallel;
    parallel.workers = 3;
    CHECK(evaluate(ds, provider, {}).predictions == evaluate(ds, provider, parallel).predictions);
}

TEST_CASE("shuffled evaluation records the seed and scores against stored order") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(5, 3, 3), 9);
    EvalOptions opts;
    opts.shuffle_seed = 77;
    const RandomProvider provider(1);
    const auto result = evaluate(ds, provider, opts);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds[i].task == TaskKind::RC) {
            CHECK_FALSE(result.predictions[i].shuffle_seed.has_value());
        } else {
            CHECK(result.predictions[i].shuffle_seed == 77u);
        }
    }
    // manual remap through the permutation
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto idx = *parse_answer(result.predictions[i].raw_text, ds[i].candidates.size()).index - 1;
        const auto original = ds[i].task == TaskKind::RC ? idx : candidate_permutation(ds[i], 77)[idx];
        correct += original == ds[i].gold_index ? 1 : 0;
    }
    CHECK(score(ds, result.predictions).overall().correct == correct);
}

TEST_CASE("layer ranges and sweep axes") {
    CHECK(parse_layer_range("8..15") == LayerRange{8, 15});
    CHECK(parse_layer_range("0-5") == LayerRange{0, 5});
    CHECK_THROWS_AS(parse_layer_range("5..2"), InvalidConfig);
    CHECK_THROWS_AS(parse_layer_range("abc"), InvalidConfig);
    CHECK(parse_sweep_axis("beta") == SweepAxis::Beta);
    CHECK(to_string(SweepAxis::Layers) == "layers");
    CHECK_THROWS_AS(parse_sweep_axis("gamma"), InvalidConfig);
}

TEST_CASE("sweep defaults") {
    const auto m = SweepSpec::defaults(SweepAxis::M);
    CHECK(m.values == std::vector<double>{2, 3, 4, 5, 6});
    const auto beta = SweepSpec::defaults(SweepAxis::Beta);
    REQUIRE(beta.values.size() == 5);
    CHECK(beta.values.front() == doctest::Approx(0.55));
    CHECK(beta.values.back() == doctest::Approx(0.75));
    const auto layers = SweepSpec::defaults(SweepAxis::Layers);
    CHECK(layers.ranges == std::vector<LayerRange>{{0, 5}, {0, 10}, {5, 10}, {5, 15}, {10, 15}, {10, 20}, {15, 20},
                                                   {15, 25}, {20, 25}});

    const auto points = beta.points();
    REQUIRE(points.size() == 5);
    CHECK(points[1].first == "0.60");
    CHECK(points[1].second.beta == doctest::Approx(0.6));
    CHECK(points[1].second.m == 5);
    CHECK(layers.points()[3].first == "5-15");
    CHECK(layers.points()[3].second.layer_lo == 5);
    CHECK(layers.points()[3].second.layer_hi == 15);
    CHECK(m.points()[0].first == "2");
}

TEST_CASE("sweep rows equal independent eval and score runs") {
    const auto ds = generate_synthetic(SyntheticSpec::balanced(2, 3, 2), 13);
    auto toy = small_toy();
    auto spec = SweepSpec::defaults(SweepAxis::M);
    spec.fixed.layer_lo = 1;
    spec.fixed.layer_hi = 2;
    spec.values = {2, 4};
    const auto result = run_sweep(ds, spec, toy);
    REQUIRE(result.rows.size() == 3);
    CHECK(result.rows[0].label == "Base");
    CHECK_FALSE(result.rows[0].kfp.has_value());

    CHECK(result.rows[0].report == score(ds, evaluate(ds, ToyProvider(toy), {}).predictions));
    for (std::size_t i = 0; i < 2; ++i) {
        auto cfg = toy;
        cfg.kfp = spec.points()[i].second;
        CHECK(result.rows[i + 1].label == spec.points()[i].first);
        CHECK(result.rows[i + 1].report == score(ds, evaluate(ds, ToyProvider(cfg), {}).predictions));
    }

    const auto table = render_sweep(result, ReportFormat::Table);
    CHECK(table.find("Base") != std::string::npos);
    CHECK(table.find("SRH") != std::string::npos);
    const auto doc = nlohmann::json::parse(render_sweep(result, ReportFormat::Json));
    CHECK(doc["rows"].size() == 3);

    auto layer_spec = SweepSpec::defaults(SweepAxis::Layers);
    layer_spec.ranges = {{0, 1}};
    CHECK(run_sweep(ds, layer_spec, toy).rows[0].label == "Baseline");
}

TEST_CASE("parse_config_text") {
    const auto cfg = parse_config_text("# comment\nbeta = 0.7\n\n  m=3  # trailing\nlayers = 8..15\n");
    CHECK(cfg.at("beta") == "0.7");
    CHECK(cfg.at("m") == "3");
    CHECK(cfg.at("layers") == "8..15");
    CHECK(cfg.size() == 3);
    CHECK_THROWS_AS(parse_config_text("no equals sign"), InvalidConfig);
}

TEST_CASE("command-line flags take precedence over the config file") {
    const auto ds_path = temp_path("cfg_ds.jsonl");
    write_dataset(ds_path, generate_synthetic(SyntheticSpec::balanced(2, 3, 2), 21));
    const auto cfg_path = temp_path("run.cfg");
    std::ofstream(cfg_path) << "provider = random\nseed = 5\nmodel-name = from-config\n";

    std::ostringstream out, err;
    const auto a = temp_path("cfg_a.jsonl");
    REQUIRE(run_cli({"eval", "--dataset", ds_path.string(), "--out", a.string(), "--config", cfg_path.string()}, out,
                    err) == 0);
    const auto from_config = read_predictions(a);
    CHECK(from_config[0].model_name == "from-config");

    const auto b = temp_path("cfg_b.jsonl");
    REQUIRE(run_cli({"eval", "--dataset", ds_path.string(), "--out", b.string(), "--config", cfg_path.string(),
                     "--seed", "6", "--model-name", "cli"},
                    out, err) == 0);
    const auto overridden = read_predictions(b);
    CHECK(overridden[0].model_name == "cli");

    const auto ds = load_dataset(ds_path);
    const RandomProvider five(5), six(6);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(from_config[i].raw_text == five.answer(ds[i], ""));
        CHECK(overridden[i].raw_text == six.answer(ds[i], ""));
    }
}
