#include "verhallu/harness.hpp"

#include "verhallu/errors.hpp"
#include "verhallu/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <thread>

namespace verhallu::harness {

using nlohmann::json;

std::string RandomProvider::answer(const Sample & sample, const std::string &) const {
    if (sample.candidates.empty()) {
        throw InvalidInput("sample " + sample.id + " has no candidates");
    }
    SplitMix64 rng(derive_seed(seed_, sample.id));
    return std::to_string(rng.below(sample.candidates.size()) + 1);
}

ToyProvider::ToyProvider(ToyProviderConfig cfg)
    : ToyProvider(std::make_shared<const toy::ToyModel>(cfg.model), cfg) {}

ToyProvider::ToyProvider(std::shared_ptr<const toy::ToyModel> model, ToyProviderConfig cfg)
    : cfg_(std::move(cfg)), model_(std::move(model)) {
    if (!model_) {
        throw InvalidConfig("toy provider needs a model");
    }
    if (cfg_.kfp) {
        cfg_.kfp->validate();
    }
    if (cfg_.max_text_tokens == 0) {
        throw InvalidConfig("max_text_tokens must be positive");
    }
    const auto & mc = model_->config();
    const std::size_t room = static_cast<std::size_t>(mc.max_positions) - model_->layout_for(0).total_len;
    cfg_.max_text_tokens = std::min(cfg_.max_text_tokens, room);
}

kfp::FrameTokenGrid ToyProvider::visual_features(const std::string & video_ref) const {
    const auto & mc = model_->config();
    const auto t = static_cast<std::size_t>(mc.frames);
    const auto n = static_cast<std::size_t>(mc.tokens_per_frame);
    const auto d = static_cast<std::size_t>(mc.d_model);
    SplitMix64 rng(derive_seed(cfg_.feature_seed, video_ref));
    std::vector<double> data(t * n * d);
    for (double & v : data) {
        v = rng.uniform(-1.0, 1.0);
    }
    return kfp::FrameTokenGrid(t, n, d, std::move(data));
}

std::vector<toy::TokenId> ToyProvider::encode_prompt(const std::string & prompt) const {
    std::vector<uint64_t> words;
    std::istringstream in(prompt);
    std::string word;
    while (in >> word) {
        words.push_back(fnv1a(word));
    }
    if (words.empty()) {
        words.push_back(fnv1a(""));
    }

    // fold word i into bucket i mod L so every word influences the tokens
    const std::size_t len = std::min(words.size(), cfg_.max_text_tokens);
    std::vector<uint64_t> buckets(len, 0xcbf29ce484222325ULL);
    for (std::size_t i = 0; i < words.size(); ++i) {
        uint64_t & b = buckets[i % len];
        b = (b ^ words[i]) * 0x100000001b3ULL;
    }

    // ids above "<bos>" are free of special meaning in the default vocab
    const std::size_t vocab = model_->config().vocab.size();
    const std::size_t first = vocab > 11 ? 11 : 0;
    std::vector<toy::TokenId> out;
    out.reserve(len);
    for (uint64_t b : buckets) {
        out.push_back(first + static_cast<toy::TokenId>(b % (vocab - first)));
    }
    return out;
}

toy::ForwardOptions ToyProvider::forward_options(const Sample & sample, const std::optional<kfp::KfpConfig> & kfp) const {
    toy::ForwardOptions opts;
    opts.kfp = kfp;
    opts.ranking = cfg_.ranking;
    opts.answer_choices = static_cast<int>(std::min<std::size_t>(sample.candidates.size(), 7));
    return opts;
}

toy::DecodeResult ToyProvider::decode(const Sample & sample, const std::string & prompt) const {
    return model_->forward(visual_features(sample.video_ref), encode_prompt(prompt), forward_options(sample, cfg_.kfp));
}

std::vector<std::string> ToyProvider::answer_variants(const Sample & sample, const std::string & prompt,
                                                      const std::vector<std::optional<kfp::KfpConfig>> & variants) const {
    toy::ResidualTrace trace;
    const auto clean = model_->forward(visual_features(sample.video_ref), encode_prompt(prompt),
                                       forward_options(sample, std::nullopt), &trace);
    std::vector<std::string> out;
    out.reserve(variants.size());
    for (const auto & v : variants) {
        out.push_back(v ? model_->resume(trace, forward_options(sample, v)).answer_text : clean.answer_text);
    }
    return out;
}

std::string ToyProvider::answer(const Sample & sample, const std::string & prompt) const {
    return decode(sample, prompt).answer_text;
}

ReplayProvider::ReplayProvider(const std::vector<Prediction> & predictions, std::string kind) : kind_(std::move(kind)) {
    for (const auto & p : predictions) {
        if (!answers_.emplace(p.sample_id, p.raw_text).second) {
            throw ValidationError("duplicate prediction for sample " + p.sample_id, {p.sample_id});
        }
    }
}

ReplayProvider ReplayProvider::from_file(const std::filesystem::path & path, std::string kind) {
    return ReplayProvider(read_predictions(path), std::move(kind));
}

std::string ReplayProvider::answer(const Sample & sample, const std::string &) const {
    const auto it = answers_.find(sample.id);
    if (it == answers_.end()) {
        throw InvalidInput("no recorded answer for sample " + sample.id);
    }
    return it->second;
}

double EvalResult::samples_per_second() const {
    return wall_seconds > 0.0 ? static_cast<double>(predictions.size()) / wall_seconds : 0.0;
}

namespace {

// Calls fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> & fn) {
    const std::size_t threads =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                fn(i);
            }
        });
    }
    for (auto & t : pool) {
        t.join();
    }
}

// The sample as the provider sees it, after the optional candidate shuffle.
Sample shown_sample(const Sample & original, const EvalOptions & options) {
    if (options.shuffle_seed && original.task != TaskKind::RC) {
        return shuffle_candidates(original, *options.shuffle_seed);
    }
    return original;
}

std::optional<uint64_t> applied_seed(const Sample & original, const EvalOptions & options) {
    return original.task == TaskKind::RC ? std::nullopt : options.shuffle_seed;
}

} // namespace

EvalResult evaluate(const std::vector<Sample> & dataset, const AnswerProvider & provider, const EvalOptions & options) {
    using clock = std::chrono::steady_clock;
    EvalResult result;
    result.predictions.resize(dataset.size());
    result.latency_ms.resize(dataset.size(), 0.0);
    std::vector<char> failed(dataset.size(), 0);

    auto run_one = [&](std::size_t i) {
        const Sample & original = dataset[i];
        Prediction & p = result.predictions[i];
        p.sample_id = original.id;
        p.model_name = options.model_name;
        const auto start = clock::now();
        p.shuffle_seed = applied_seed(original, options);
        try {
            const Sample shown = shown_sample(original, options);
            p.raw_text = provider.answer(shown, build_prompt(shown));
        } catch (const std::exception &) {
            p.raw_text.clear();
            failed[i] = 1;
        }
        result.latency_ms[i] = std::chrono::duration<double, std::milli>(clock::now() - start).count();
        if (options.record_latency) {
            p.latency_ms = result.latency_ms[i];
        }
    };

    const auto start = clock::now();
    parallel_for(dataset.size(), options.workers, run_one);
    result.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
    result.failures = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
    return result;
}

SweepAxis parse_sweep_axis(std::string_view s) {
    if (s == "m") {
        return SweepAxis::M;
    }
    if (s == "beta") {
        return SweepAxis::Beta;
    }
    if (s == "layers" || s == "layer_range") {
        return SweepAxis::Layers;
    }
    throw InvalidConfig("unknown sweep axis \"" + std::string(s) + "\" (expected m, beta or layers)");
}

std::string_view to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::M: return "m";
        case SweepAxis::Beta: return "beta";
        case SweepAxis::Layers: return "layers";
    }
    return "?";
}

LayerRange parse_layer_range(std::string_view s) {
    std::size_t sep = s.find("..");
    std::size_t skip = 2;
    if (sep == std::string_view::npos) {
        sep = s.find('-', 1);
        skip = 1;
    }
    if (sep == std::string_view::npos) {
        throw InvalidConfig("layer range \"" + std::string(s) + "\" must look like LO..HI");
    }
    try {
        std::size_t used_lo = 0;
        std::size_t used_hi = 0;
        const std::string lo(s.substr(0, sep));
        const std::string hi(s.substr(sep + skip));
        LayerRange r{std::stoi(lo, &used_lo), std::stoi(hi, &used_hi)};
        if (used_lo != lo.size() || used_hi != hi.size()) {
            throw std::invalid_argument("trailing characters");
        }
        if (r.lo > r.hi) {
            throw InvalidConfig("layer range \"" + std::string(s) + "\" is empty");
        }
        return r;
    } catch (const InvalidConfig &) {
        throw;
    } catch (const std::exception &) {
        throw InvalidConfig("layer range \"" + std::string(s) + "\" must look like LO..HI");
    }
}

SweepSpec SweepSpec::defaults(SweepAxis axis, kfp::KfpConfig fixed) {
    SweepSpec spec;
    spec.axis = axis;
    spec.fixed = fixed;
    switch (axis) {
        case SweepAxis::M: spec.values = {2, 3, 4, 5, 6}; break;
        case SweepAxis::Beta: spec.values = {0.55, 0.60, 0.65, 0.70, 0.75}; break;
        case SweepAxis::Layers:
            spec.ranges = {{0, 5}, {0, 10}, {5, 10}, {5, 15}, {10, 15}, {10, 20}, {15, 20}, {15, 25}, {20, 25}};
            break;
    }
    return spec;
}

std::vector<std::pair<std::string, kfp::KfpConfig>> SweepSpec::points() const {
    std::vector<std::pair<std::string, kfp::KfpConfig>> out;
    char buf[32];
    if (axis == SweepAxis::Layers) {
        for (const auto & r : ranges) {
            kfp::KfpConfig cfg = fixed;
            cfg.layer_lo = r.lo;
            cfg.layer_hi = r.hi;
            std::snprintf(buf, sizeof buf, "%d-%d", r.lo, r.hi);
            out.emplace_back(buf, cfg);
        }
        return out;
    }
    for (double v : values) {
        kfp::KfpConfig cfg = fixed;
        if (axis == SweepAxis::M) {
            if (v != static_cast<double>(static_cast<int>(v))) {
                throw InvalidConfig("m must be an integer");
            }
            cfg.m = static_cast<int>(v);
            std::snprintf(buf, sizeof buf, "%d", cfg.m);
        } else {
            cfg.beta = v;
            std::snprintf(buf, sizeof buf, "%.2f", v);
        }
        out.emplace_back(buf, cfg);
    }
    return out;
}

SweepResult run_sweep(const std::vector<Sample> & dataset, const SweepSpec & spec, const ToyProviderConfig & toy,
                      const EvalOptions & options) {
    const auto points = spec.points();
    if (points.empty()) {
        throw InvalidConfig("sweep has no values");
    }
    for (const auto & [label, cfg] : points) {
        cfg.validate();
    }
    ToyProviderConfig base_cfg = toy;
    base_cfg.kfp.reset();
    const ToyProvider provider(base_cfg);

    // rows share one traced clean pass per sample; each point resumes from its
    // first hooked layer, which gives the same answers as a separate eval
    std::vector<std::optional<kfp::KfpConfig>> variants{std::nullopt};
    for (const auto & [label, cfg] : points) {
        variants.push_back(cfg);
    }
    std::vector<std::vector<Prediction>> rows(variants.size(), std::vector<Prediction>(dataset.size()));
    parallel_for(dataset.size(), options.workers, [&](std::size_t i) {
        const Sample & original = dataset[i];
        std::vector<std::string> answers;
        try {
            const Sample shown = shown_sample(original, options);
            answers = provider.answer_variants(shown, build_prompt(shown), variants);
        } catch (const std::exception &) {
            answers.assign(variants.size(), "");
        }
        for (std::size_t r = 0; r < variants.size(); ++r) {
            rows[r][i] = Prediction{original.id, answers[r], options.model_name, std::nullopt,
                                    applied_seed(original, options)};
        }
    });

    SweepResult result;
    result.axis = spec.axis;
    result.rows.push_back(SweepRow{spec.axis == SweepAxis::Layers ? "Baseline" : "Base", std::nullopt,
                                   score(dataset, rows[0])});
    for (std::size_t p = 0; p < points.size(); ++p) {
        result.rows.push_back(SweepRow{points[p].first, points[p].second, score(dataset, rows[p + 1])});
    }
    return result;
}

namespace {

json kfp_json(const kfp::KfpConfig & c) {
    return {{"k", c.k}, {"m", c.m}, {"sigma", c.sigma}, {"beta", c.beta}, {"layer_lo", c.layer_lo},
            {"layer_hi", c.layer_hi}};
}

} // namespace

nlohmann::json sweep_to_json(const SweepResult & result) {
    json rows = json::array();
    for (const auto & row : result.rows) {
        rows.push_back({{"label", row.label},
                        {"kfp", row.kfp ? kfp_json(*row.kfp) : json(nullptr)},
                        {"report", report_to_json(row.report)}});
    }
    return json{{"axis", to_string(result.axis)}, {"rows", std::move(rows)}};
}

std::string render_sweep(const SweepResult & result, ReportFormat format) {
    if (format == ReportFormat::Json) {
        return sweep_to_json(result).dump(2) + "\n";
    }
    std::vector<std::pair<std::string, ScoreReport>> rows;
    for (const auto & row : result.rows) {
        rows.emplace_back(row.label, row.report);
    }
    return "sweep over " + std::string(to_string(result.axis)) + " (accuracy %)\n" + render_accuracy_table(rows);
}

std::map<std::string, std::string> parse_config_text(const std::string & text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            return std::string();
        }
        return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InvalidConfig("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw InvalidConfig("config line " + std::to_string(lineno) + ": empty key");
        }
        out[std::move(key)] = trim(line.substr(eq + 1));
    }
    return out;
}

} // namespace verhallu::harness
