#pragma once

// Evaluation orchestration: answer providers, the eval loop, ablation sweeps
// and the command-line front end.

#include "verhallu/dataset.hpp"
#include "verhallu/kfp.hpp"
#include "verhallu/scoring.hpp"
#include "verhallu/toy_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace verhallu::harness {

// Maps (sample, prompt) to raw answer text. Implementations are deterministic
// and safe to call concurrently.
class AnswerProvider {
public:
    virtual ~AnswerProvider() = default;
    virtual std::string name() const = 0;
    virtual std::string answer(const Sample & sample, const std::string & prompt) const = 0;
};

// Uniform over the sample's candidate numbers, seeded per (seed, sample id).
class RandomProvider : public AnswerProvider {
public:
    explicit RandomProvider(uint64_t seed) : seed_(seed) {}
    std::string name() const override { return "random"; }
    std::string answer(const Sample & sample, const std::string & prompt) const override;

private:
    uint64_t seed_;
};

struct ToyProviderConfig {
    toy::ToyModelConfig model;
    std::optional<kfp::KfpConfig> kfp;
    toy::RankingOptions ranking;
    // prompt words are folded into at most this many text tokens
    std::size_t max_text_tokens = 24;
    // seed of the synthetic per-video frame features
    uint64_t feature_seed = 0x76657268616c6c75ULL;
};

// Runs the toy decoder: frame features are drawn from the sample's video_ref,
// prompt words are hashed into token ids.
class ToyProvider : public AnswerProvider {
public:
    explicit ToyProvider(ToyProviderConfig cfg);
    ToyProvider(std::shared_ptr<const toy::ToyModel> model, ToyProviderConfig cfg);

    std::string name() const override { return cfg_.kfp ? "toy+kfp" : "toy"; }
    std::string answer(const Sample & sample, const std::string & prompt) const override;

    kfp::FrameTokenGrid visual_features(const std::string & video_ref) const;
    std::vector<toy::TokenId> encode_prompt(const std::string & prompt) const;
    toy::DecodeResult decode(const Sample & sample, const std::string & prompt) const;

    // One answer per entry of `variants` (nullopt runs without the
    // intervention), sharing a single clean pass over the prompt.
    std::vector<std::string> answer_variants(const Sample & sample, const std::string & prompt,
                                             const std::vector<std::optional<kfp::KfpConfig>> & variants) const;

    const toy::ToyModel & model() const { return *model_; }

private:
    toy::ForwardOptions forward_options(const Sample & sample, const std::optional<kfp::KfpConfig> & kfp) const;

    ToyProviderConfig cfg_;
    std::shared_ptr<const toy::ToyModel> model_;
};

// Replays raw answers from a predictions file. "external" marks answers
// produced by the model bridge; both kinds go through the predictions schema.
class ReplayProvider : public AnswerProvider {
public:
    ReplayProvider(const std::vector<Prediction> & predictions, std::string kind = "file");
    static ReplayProvider from_file(const std::filesystem::path & path, std::string kind = "file");

    std::string name() const override { return kind_; }
    // throws InvalidInput when the sample has no recorded answer
    std::string answer(const Sample & sample, const std::string & prompt) const override;

private:
    std::string kind_;
    std::map<std::string, std::string> answers_;
};

struct EvalOptions {
    // candidates of QA/CFQA samples are shuffled with this seed when set
    std::optional<uint64_t> shuffle_seed;
    // concurrent samples in flight; 1 is serial
    int workers = 1;
    bool record_latency = false;
    std::optional<std::string> model_name;
};

struct EvalResult {
    std::vector<Prediction> predictions;
    // per-sample latency in dataset order, always measured
    std::vector<double> latency_ms;
    double wall_seconds = 0.0;
    std::size_t failures = 0;

    double samples_per_second() const;
};

// Prompts the provider with every sample and records its answers in dataset
// order. A provider exception yields an empty raw_text and the run continues.
EvalResult evaluate(const std::vector<Sample> & dataset, const AnswerProvider & provider, const EvalOptions & options);

enum class SweepAxis { M, Beta, Layers };
SweepAxis parse_sweep_axis(std::string_view s);
std::string_view to_string(SweepAxis axis);

struct LayerRange {
    int lo = 0;
    int hi = 0;
    bool operator==(const LayerRange &) const = default;
};

// "8..15" or "8-15"
LayerRange parse_layer_range(std::string_view s);

struct SweepSpec {
    SweepAxis axis = SweepAxis::Beta;
    // swept values for M and Beta
    std::vector<double> values;
    // swept ranges for Layers
    std::vector<LayerRange> ranges;
    kfp::KfpConfig fixed;

    // m in {2..6}, beta in {0.55..0.75}, or the nine layer ranges 0-5 .. 20-25
    static SweepSpec defaults(SweepAxis axis, kfp::KfpConfig fixed = {});

    // (row label, config) for every swept value, in order
    std::vector<std::pair<std::string, kfp::KfpConfig>> points() const;
};

struct SweepRow {
    std::string label;
    std::optional<kfp::KfpConfig> kfp;
    ScoreReport report;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::Beta;
    std::vector<SweepRow> rows; // baseline first
};

// One toy-provider eval + score per swept value plus a KFP-free baseline row
// ("Base", or "Baseline" for the layer axis).
SweepResult run_sweep(const std::vector<Sample> & dataset, const SweepSpec & spec, const ToyProviderConfig & toy,
                      const EvalOptions & options = {});

nlohmann::json sweep_to_json(const SweepResult & result);
std::string render_sweep(const SweepResult & result, ReportFormat format);

// Parses "key = value" lines; '#' starts a comment. Throws InvalidConfig.
std::map<std::string, std::string> parse_config_text(const std::string & text);

// Command-line entry point. Exit codes: 0 success, 1 validation or scoring
// failure, 2 usage error.
int run_cli(std::vector<std::string> args, std::ostream & out, std::ostream & err);

} // namespace verhallu::harness
