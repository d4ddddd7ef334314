#include "verhallu/kfp.hpp"

#include "verhallu/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace verhallu::kfp {

namespace {

void require_dims(std::size_t frames, std::size_t tokens, std::size_t channels) {
    if (frames == 0 || tokens == 0 || channels == 0) {
        throw InvalidInput("frame token grid needs T, N, D >= 1");
    }
}

// Exact at the endpoints and when both inputs agree, so untouched positions
// survive the blend bit for bit.
inline double blend_value(double original, double enhanced, double beta) {
    if (beta == 1.0 || original == enhanced) {
        return original;
    }
    if (beta == 0.0) {
        return enhanced;
    }
    return (1.0 - beta) * enhanced + beta * original;
}

} // namespace

FrameTokenGrid::FrameTokenGrid(std::size_t frames, std::size_t tokens, std::size_t channels)
    : frames_(frames), tokens_(tokens), channels_(channels) {
    require_dims(frames, tokens, channels);
    data_.assign(frames * tokens * channels, 0.0);
}

FrameTokenGrid::FrameTokenGrid(std::size_t frames, std::size_t tokens, std::size_t channels, std::vector<double> data)
    : frames_(frames), tokens_(tokens), channels_(channels), data_(std::move(data)) {
    require_dims(frames, tokens, channels);
    if (data_.size() != frames * tokens * channels) {
        throw InvalidInput("frame token grid data has " + std::to_string(data_.size()) + " values, expected " +
                           std::to_string(frames * tokens * channels));
    }
    if (!std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); })) {
        throw InvalidInput("frame token grid contains non-finite values");
    }
}

void SequenceLayout::validate() const {
    if (frames == 0 || tokens_per_frame == 0) {
        throw InvalidInput("sequence layout needs at least one frame and one token per frame");
    }
    if (visual_end() > total_len) {
        throw InvalidInput("visual block [" + std::to_string(visual_start) + ", " + std::to_string(visual_end()) +
                           ") exceeds sequence length " + std::to_string(total_len));
    }
}

LayerHiddenState::LayerHiddenState(SequenceLayout layout, std::size_t width)
    : layout_(layout), width_(width) {
    layout_.validate();
    if (width_ == 0) {
        throw InvalidInput("hidden state width must be positive");
    }
    data_.assign(layout_.total_len * width_, 0.0);
}

LayerHiddenState::LayerHiddenState(SequenceLayout layout, std::size_t width, std::vector<double> data)
    : layout_(layout), width_(width), data_(std::move(data)) {
    layout_.validate();
    if (width_ == 0) {
        throw InvalidInput("hidden state width must be positive");
    }
    if (data_.size() != layout_.total_len * width_) {
        throw InvalidInput("hidden state data has " + std::to_string(data_.size()) + " values, expected " +
                           std::to_string(layout_.total_len * width_));
    }
}

FrameTokenGrid LayerHiddenState::visual_grid() const {
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(layout_.visual_start * width_);
    const auto last = first + static_cast<std::ptrdiff_t>(layout_.visual_len() * width_);
    return FrameTokenGrid(layout_.frames, layout_.tokens_per_frame, width_, std::vector<double>(first, last));
}

void LayerHiddenState::set_visual_grid(const FrameTokenGrid & grid) {
    if (grid.frames() != layout_.frames || grid.tokens() != layout_.tokens_per_frame || grid.channels() != width_) {
        throw InvalidInput("visual grid shape does not match the hidden state layout");
    }
    std::copy(grid.values().begin(), grid.values().end(),
              data_.begin() + static_cast<std::ptrdiff_t>(layout_.visual_start * width_));
}

void KfpConfig::validate() const {
    if (k < 1) {
        throw InvalidConfig("k must be >= 1, got " + std::to_string(k));
    }
    if (m < 1) {
        throw InvalidConfig("m must be >= 1, got " + std::to_string(m));
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw InvalidConfig("sigma must be a positive finite number");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw InvalidConfig("beta must lie in [0, 1]");
    }
    if (layer_lo > layer_hi) {
        throw InvalidConfig("layer range " + std::to_string(layer_lo) + ".." + std::to_string(layer_hi) +
                            " is empty");
    }
}

std::vector<std::size_t> select_key_frames(const FrameAttention & att, int k) {
    if (k < 1) {
        throw InvalidConfig("k must be >= 1");
    }
    if (att.scores.empty()) {
        throw InvalidInput("frame attention is empty");
    }
    for (double s : att.scores) {
        if (!std::isfinite(s) || s < 0.0) {
            throw InvalidInput("frame attention scores must be finite and non-negative");
        }
    }

    std::vector<std::size_t> order(att.scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(k));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (att.scores[a] != att.scores[b]) {
                              return att.scores[a] > att.scores[b];
                          }
                          return a < b;
                      });
    order.resize(take);
    std::sort(order.begin(), order.end());
    return order;
}

double gaussian_weight(long t, long t_star, double sigma) {
    if (!(sigma > 0.0)) {
        throw InvalidConfig("sigma must be positive");
    }
    const double dist = static_cast<double>(t - t_star);
    return std::exp(-(dist * dist) / (2.0 * sigma * sigma));
}

PropagationField propagate_field(std::span<const std::size_t> key_frames, std::size_t frames, int m, double sigma) {
    if (frames == 0) {
        throw InvalidInput("propagation needs at least one frame");
    }
    if (m < 1) {
        throw InvalidConfig("m must be >= 1");
    }
    if (!(sigma > 0.0)) {
        throw InvalidConfig("sigma must be positive");
    }

    PropagationField field{std::vector<double>(frames, 0.0)};
    const long half = m / 2;
    const long last = static_cast<long>(frames) - 1;
    for (std::size_t key : key_frames) {
        if (key >= frames) {
            throw InvalidInput("key frame " + std::to_string(key) + " out of range for " + std::to_string(frames) +
                               " frames");
        }
        const long center = static_cast<long>(key);
        for (long t = std::max(0L, center - half); t <= std::min(last, center + half); ++t) {
            auto & slot = field.alpha[static_cast<std::size_t>(t)];
            slot = std::max(slot, gaussian_weight(t, center, sigma));
        }
    }
    return field;
}

std::vector<double> frame_weights(const PropagationField & field) {
    if (field.alpha.empty()) {
        throw InvalidInput("propagation field is empty");
    }
    // shifting by the max leaves softmax unchanged
    const double peak = *std::max_element(field.alpha.begin(), field.alpha.end()) + 1.0;
    std::vector<double> w(field.alpha.size());
    double total = 0.0;
    for (std::size_t t = 0; t < w.size(); ++t) {
        w[t] = std::exp(field.alpha[t] + 1.0 - peak);
        total += w[t];
    }
    for (double & v : w) {
        v /= total;
    }
    return w;
}

FrameTokenGrid enhance_visual_tokens(const FrameTokenGrid & visual, const PropagationField & field) {
    if (field.alpha.size() != visual.frames()) {
        throw InvalidInput("propagation field has " + std::to_string(field.alpha.size()) + " frames, grid has " +
                           std::to_string(visual.frames()));
    }
    const std::vector<double> w = frame_weights(field);
    FrameTokenGrid out = visual;
    for (std::size_t t = 0; t < out.frames(); ++t) {
        for (double & v : out.frame(t)) {
            v *= w[t];
        }
    }
    return out;
}

LayerHiddenState blend_hidden(const LayerHiddenState & original, const LayerHiddenState & enhanced, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw InvalidConfig("beta must lie in [0, 1]");
    }
    if (original.layout() != enhanced.layout() || original.width() != enhanced.width()) {
        throw InvalidInput("blend requires hidden states of identical shape and layout");
    }
    LayerHiddenState out = original;
    auto dst = out.values();
    auto src = enhanced.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = blend_value(dst[i], src[i], beta);
    }
    return out;
}

LayerHiddenState apply_kfp_layer(const LayerHiddenState & hidden, const FrameAttention & att, const KfpConfig & cfg) {
    cfg.validate();
    if (att.frames() != hidden.layout().frames) {
        throw InvalidInput("frame attention covers " + std::to_string(att.frames()) + " frames, layout has " +
                           std::to_string(hidden.layout().frames));
    }
    const auto keys = select_key_frames(att, cfg.k);
    const auto field = propagate_field(keys, hidden.layout().frames, cfg.m, cfg.sigma);

    LayerHiddenState enhanced = hidden;
    enhanced.set_visual_grid(enhance_visual_tokens(hidden.visual_grid(), field));
    return blend_hidden(hidden, enhanced, cfg.beta);
}

bool layer_in_range(int layer, const KfpConfig & cfg) {
    return cfg.layer_lo <= layer && layer <= cfg.layer_hi;
}

} // namespace verhallu::kfp
