#include "verhallu/toy_model.hpp"

#include "verhallu/errors.hpp"
#include "verhallu/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace verhallu::toy {

namespace {

constexpr double kWeightRange = 0.1;
constexpr double kNormEps = 1e-6;

std::vector<double> draw(SplitMix64 & rng, std::size_t count) {
    std::vector<double> out(count);
    for (double & v : out) {
        v = rng.uniform(-kWeightRange, kWeightRange);
    }
    return out;
}

// y = W x with W stored input-major: w[c * rows + r] maps input c to output r
void matvec(const std::vector<double> & w, std::size_t rows, std::size_t cols, const double * x, double * y) {
    std::fill_n(y, rows, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
        const double * col = w.data() + c * rows;
        const double xc = x[c];
        for (std::size_t r = 0; r < rows; ++r) {
            y[r] += col[r] * xc;
        }
    }
}

void rms_norm(const double * x, double * y, std::size_t n) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ss += x[i] * x[i];
    }
    const double scale = 1.0 / std::sqrt(ss / static_cast<double>(n) + kNormEps);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = x[i] * scale;
    }
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

uint64_t checksum(uint64_t h, const std::vector<double> & values) {
    for (double v : values) {
        const auto bits = std::bit_cast<uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

} // namespace

std::vector<std::string> default_vocab(std::size_t size) {
    std::vector<std::string> vocab;
    vocab.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        if (i < 10) {
            vocab.push_back(std::to_string(i));
        } else if (i == 10) {
            vocab.emplace_back("<bos>");
        } else {
            vocab.push_back("<t" + std::to_string(i) + ">");
        }
    }
    return vocab;
}

void ToyModelConfig::validate() const {
    if (layers < 1 || heads < 1 || d_model < 1 || mlp_hidden < 1) {
        throw InvalidConfig("layers, heads, d_model and mlp_hidden must be positive");
    }
    if (d_model % heads != 0) {
        throw InvalidConfig("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                            std::to_string(heads));
    }
    if (frames < 1 || tokens_per_frame < 1) {
        throw InvalidConfig("frames and tokens_per_frame must be positive");
    }
    if (max_positions < 1 + frames * tokens_per_frame + 1) {
        throw InvalidConfig("max_positions leaves no room for text after the visual block");
    }
    for (int d = 1; d <= 7; ++d) {
        if (std::find(vocab.begin(), vocab.end(), std::to_string(d)) == vocab.end()) {
            throw InvalidConfig("vocab lacks digit token \"" + std::to_string(d) + "\"");
        }
    }
    if (std::find(vocab.begin(), vocab.end(), "<bos>") == vocab.end()) {
        throw InvalidConfig("vocab lacks the <bos> token");
    }
}

AttentionMap::AttentionMap(std::size_t heads, std::size_t seq)
    : heads_(heads), seq_(seq), probs_(heads * seq * seq, 0.0) {}

kfp::FrameAttention frame_attention_summary(const AttentionMap & attention, const kfp::SequenceLayout & layout,
                                            const RankingOptions & options) {
    layout.validate();
    if (attention.seq() != layout.total_len) {
        throw InvalidInput("attention covers " + std::to_string(attention.seq()) + " positions, layout has " +
                           std::to_string(layout.total_len));
    }
    if (attention.heads() == 0) {
        throw InvalidInput("attention has no heads");
    }

    std::vector<std::size_t> queries;
    if (options.query == QueryAggregation::FinalText) {
        queries.push_back(layout.total_len - 1);
    } else {
        for (std::size_t q = layout.visual_end(); q < layout.total_len; ++q) {
            queries.push_back(q);
        }
        if (queries.empty()) {
            throw InvalidInput("layout has no text positions after the visual block");
        }
    }

    // per-key attention after query and head aggregation
    std::vector<double> per_key(layout.visual_len(), 0.0);
    for (std::size_t i = 0; i < per_key.size(); ++i) {
        const std::size_t key = layout.visual_start + i;
        double acc = 0.0;
        for (std::size_t q : queries) {
            double head_val = 0.0;
            for (std::size_t h = 0; h < attention.heads(); ++h) {
                const double p = attention.at(h, q, key);
                head_val = options.head == HeadAggregation::Max ? std::max(head_val, p) : head_val + p;
            }
            if (options.head == HeadAggregation::Mean) {
                head_val /= static_cast<double>(attention.heads());
            }
            acc += head_val;
        }
        per_key[i] = acc / static_cast<double>(queries.size());
    }

    kfp::FrameAttention out;
    out.scores.assign(layout.frames, 0.0);
    for (std::size_t t = 0; t < layout.frames; ++t) {
        double acc = 0.0;
        for (std::size_t n = 0; n < layout.tokens_per_frame; ++n) {
            acc += per_key[t * layout.tokens_per_frame + n];
        }
        out.scores[t] = acc / static_cast<double>(layout.tokens_per_frame);
    }
    out.provenance = std::string(options.query == QueryAggregation::FinalText ? "final-text" : "mean-text") +
                     "/" + (options.head == HeadAggregation::Mean ? "head-mean" : "head-max") + "/frame-mean";
    return out;
}

ToyModel::ToyModel(ToyModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto hidden = static_cast<std::size_t>(cfg_.mlp_hidden);
    const auto vocab = cfg_.vocab.size();

    // generation order is part of the determinism contract
    SplitMix64 rng(cfg_.seed);
    embed_ = draw(rng, vocab * d);
    pos_ = draw(rng, static_cast<std::size_t>(cfg_.max_positions) * d);
    visual_in_ = draw(rng, d * d);
    layers_.resize(static_cast<std::size_t>(cfg_.layers));
    for (auto & layer : layers_) {
        layer.wq = draw(rng, d * d);
        layer.wk = draw(rng, d * d);
        layer.wv = draw(rng, d * d);
        layer.wo = draw(rng, d * d);
        layer.w1 = draw(rng, hidden * d);
        layer.w2 = draw(rng, d * hidden);
    }
    unembed_ = draw(rng, vocab * d);

    for (int digit = 1; digit <= 7; ++digit) {
        const auto it = std::find(cfg_.vocab.begin(), cfg_.vocab.end(), std::to_string(digit));
        digit_ids_.push_back(static_cast<TokenId>(it - cfg_.vocab.begin()));
    }
    bos_id_ = static_cast<TokenId>(std::find(cfg_.vocab.begin(), cfg_.vocab.end(), "<bos>") - cfg_.vocab.begin());
}

uint64_t ToyModel::layer_checksum(int layer) const {
    if (layer < 0 || layer >= cfg_.layers) {
        throw InvalidInput("layer " + std::to_string(layer) + " out of range");
    }
    const auto & l = layers_[static_cast<std::size_t>(layer)];
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto * w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) {
        h = checksum(h, *w);
    }
    return h;
}

kfp::SequenceLayout ToyModel::layout_for(std::size_t text_len) const {
    const auto frames = static_cast<std::size_t>(cfg_.frames);
    const auto tokens = static_cast<std::size_t>(cfg_.tokens_per_frame);
    return kfp::SequenceLayout{1, frames, tokens, 1 + frames * tokens + text_len};
}

void ToyModel::check_options(const ForwardOptions & options, const kfp::SequenceLayout & layout) const {
    if (options.answer_choices < 1 || options.answer_choices > 7) {
        throw InvalidInput("answer_choices must lie in 1..7");
    }
    if (options.kfp) {
        options.kfp->validate();
    }
    if (layout.total_len > static_cast<std::size_t>(cfg_.max_positions)) {
        throw InvalidInput("sequence of " + std::to_string(layout.total_len) + " positions exceeds max_positions");
    }
    if (options.ranking_override && options.ranking_override->frames() != layout.frames) {
        throw InvalidInput("ranking override has the wrong number of frames");
    }
}

DecodeResult ToyModel::forward(const kfp::FrameTokenGrid & visual, const std::vector<TokenId> & text,
                               const ForwardOptions & options, ResidualTrace * trace) const {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    if (visual.frames() != static_cast<std::size_t>(cfg_.frames) ||
        visual.tokens() != static_cast<std::size_t>(cfg_.tokens_per_frame) || visual.channels() != d) {
        throw InvalidInput("visual grid shape does not match the model");
    }
    if (text.empty()) {
        throw InvalidInput("text must contain at least one token");
    }
    for (TokenId tok : text) {
        if (tok >= cfg_.vocab.size()) {
            throw InvalidInput("token id " + std::to_string(tok) + " outside the vocabulary");
        }
    }
    if (trace && options.kfp) {
        throw InvalidInput("a residual trace is recorded only without the intervention");
    }
    const kfp::SequenceLayout layout = layout_for(text.size());
    check_options(options, layout);

    // residual stream
    std::vector<double> x(layout.total_len * d, 0.0);
    auto add_pos = [&](std::size_t s) {
        for (std::size_t c = 0; c < d; ++c) {
            x[s * d + c] += pos_[s * d + c];
        }
    };
    std::copy_n(embed_.begin() + static_cast<std::ptrdiff_t>(bos_id_ * d), d, x.begin());
    add_pos(0);
    for (std::size_t t = 0; t < layout.frames; ++t) {
        for (std::size_t n = 0; n < layout.tokens_per_frame; ++n) {
            const std::size_t s = layout.visual_start + t * layout.tokens_per_frame + n;
            matvec(visual_in_, d, d, visual.frame(t).data() + n * d, &x[s * d]);
            add_pos(s);
        }
    }
    for (std::size_t i = 0; i < text.size(); ++i) {
        const std::size_t s = layout.visual_end() + i;
        std::copy_n(embed_.begin() + static_cast<std::ptrdiff_t>(text[i] * d), d,
                    x.begin() + static_cast<std::ptrdiff_t>(s * d));
        add_pos(s);
    }

    if (trace) {
        trace->text_len = text.size();
        trace->entering.clear();
    }
    return run_layers(std::move(x), layout, 0, options, trace);
}

DecodeResult ToyModel::resume(const ResidualTrace & trace, const ForwardOptions & options) const {
    if (trace.entering.size() != layers_.size() + 1 || trace.text_len == 0) {
        throw InvalidInput("residual trace does not come from this model");
    }
    const kfp::SequenceLayout layout = layout_for(trace.text_len);
    check_options(options, layout);

    // layers before the first hooked one match the recorded pass exactly
    std::size_t first = layers_.size();
    if (options.kfp && options.kfp->layer_lo < cfg_.layers) {
        first = static_cast<std::size_t>(std::max(options.kfp->layer_lo, 0));
    }
    const auto & x = trace.entering[first];
    if (x.size() != layout.total_len * static_cast<std::size_t>(cfg_.d_model)) {
        throw InvalidInput("residual trace has the wrong size");
    }
    return run_layers(x, layout, first, options, nullptr);
}

DecodeResult ToyModel::run_layers(std::vector<double> x, const kfp::SequenceLayout & layout, std::size_t first_layer,
                                  const ForwardOptions & options, ResidualTrace * trace) const {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto heads = static_cast<std::size_t>(cfg_.heads);
    const std::size_t head_dim = d / heads;
    const auto hidden_dim = static_cast<std::size_t>(cfg_.mlp_hidden);
    const std::size_t seq = layout.total_len;

    DecodeResult result;
    std::vector<double> normed(seq * d), q(seq * d), k(seq * d), v(seq * d), ctx(seq * d);
    std::vector<double> scores(seq), act(hidden_dim), proj(d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    for (std::size_t li = first_layer; li < layers_.size(); ++li) {
        const Layer & layer = layers_[li];
        const int layer_idx = static_cast<int>(li);
        if (trace) {
            trace->entering.push_back(x);
        }

        for (std::size_t s = 0; s < seq; ++s) {
            rms_norm(&x[s * d], &normed[s * d], d);
            matvec(layer.wq, d, d, &normed[s * d], &q[s * d]);
            matvec(layer.wk, d, d, &normed[s * d], &k[s * d]);
            matvec(layer.wv, d, d, &normed[s * d], &v[s * d]);
        }

        AttentionMap attn(heads, seq);
        std::fill(ctx.begin(), ctx.end(), 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t qi = 0; qi < seq; ++qi) {
                double peak = -INFINITY;
                for (std::size_t ki = 0; ki <= qi; ++ki) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < head_dim; ++c) {
                        dot += q[qi * d + off + c] * k[ki * d + off + c];
                    }
                    scores[ki] = dot * scale;
                    peak = std::max(peak, scores[ki]);
                }
                double total = 0.0;
                for (std::size_t ki = 0; ki <= qi; ++ki) {
                    scores[ki] = std::exp(scores[ki] - peak);
                    total += scores[ki];
                }
                double * out = &ctx[qi * d + off];
                for (std::size_t ki = 0; ki <= qi; ++ki) {
                    const double p = scores[ki] / total;
                    attn.at(h, qi, ki) = p;
                    for (std::size_t c = 0; c < head_dim; ++c) {
                        out[c] += p * v[ki * d + off + c];
                    }
                }
            }
        }
        for (std::size_t s = 0; s < seq; ++s) {
            matvec(layer.wo, d, d, &ctx[s * d], proj.data());
            for (std::size_t c = 0; c < d; ++c) {
                x[s * d + c] += proj[c];
            }
        }

        // x now holds the state that enters the MLP
        if (options.kfp && kfp::layer_in_range(layer_idx, *options.kfp)) {
            const kfp::FrameAttention ranking = options.ranking_override
                                                    ? *options.ranking_override
                                                    : frame_attention_summary(attn, layout, options.ranking);
            kfp::LayerHiddenState state(layout, d, std::move(x));
            state = kfp::apply_kfp_layer(state, ranking, *options.kfp);
            x.assign(state.values().begin(), state.values().end());
        }
        if (std::find(options.tap_layers.begin(), options.tap_layers.end(), layer_idx) != options.tap_layers.end()) {
            result.taps.push_back(LayerTap{layer_idx, kfp::LayerHiddenState(layout, d, x), attn});
        }

        for (std::size_t s = 0; s < seq; ++s) {
            rms_norm(&x[s * d], normed.data(), d);
            matvec(layer.w1, hidden_dim, d, normed.data(), act.data());
            for (double & a : act) {
                a = silu(a);
            }
            matvec(layer.w2, d, hidden_dim, act.data(), proj.data());
            for (std::size_t c = 0; c < d; ++c) {
                x[s * d + c] += proj[c];
            }
        }
    }

    if (trace) {
        trace->entering.push_back(x);
    }

    std::vector<double> final_state(d);
    rms_norm(&x[(seq - 1) * d], final_state.data(), d);
    result.digit_logits.resize(7);
    for (std::size_t i = 0; i < 7; ++i) {
        const double * row = unembed_.data() + digit_ids_[i] * d;
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc += row[c] * final_state[c];
        }
        result.digit_logits[i] = acc;
    }

    // greedy argmax over the permitted digits, ties to the lower digit
    std::size_t best = 0;
    for (std::size_t i = 1; i < static_cast<std::size_t>(options.answer_choices); ++i) {
        if (result.digit_logits[i] > result.digit_logits[best]) {
            best = i;
        }
    }
    result.chosen_logit_index = digit_ids_[best];
    result.answer_text = std::to_string(best + 1);
    return result;
}

} // namespace verhallu::toy
