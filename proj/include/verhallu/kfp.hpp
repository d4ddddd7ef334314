#pragma once

// Key-frame propagation: re-weights the visual tokens of a layer's hidden
// state toward frames that neighbour the most attended frames, then blends the
// re-weighted state back with the original.
//
//   select_key_frames -> propagate_field -> enhance_visual_tokens -> blend_hidden
//
// All functions are pure and safe to call concurrently.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace verhallu::kfp {

// Visual tokens of one layer, laid out frame-major: (frame, token, channel).
class FrameTokenGrid {
public:
    FrameTokenGrid(std::size_t frames, std::size_t tokens, std::size_t channels);
    FrameTokenGrid(std::size_t frames, std::size_t tokens, std::size_t channels, std::vector<double> data);

    std::size_t frames() const { return frames_; }
    std::size_t tokens() const { return tokens_; }
    std::size_t channels() const { return channels_; }

    double & at(std::size_t t, std::size_t n, std::size_t d) { return data_[(t * tokens_ + n) * channels_ + d]; }
    double at(std::size_t t, std::size_t n, std::size_t d) const { return data_[(t * tokens_ + n) * channels_ + d]; }

    // all N*D values of frame t
    std::span<double> frame(std::size_t t) { return {data_.data() + t * tokens_ * channels_, tokens_ * channels_}; }
    std::span<const double> frame(std::size_t t) const { return {data_.data() + t * tokens_ * channels_, tokens_ * channels_}; }

    std::span<const double> values() const { return data_; }

    bool operator==(const FrameTokenGrid &) const = default;

private:
    std::size_t frames_;
    std::size_t tokens_;
    std::size_t channels_;
    std::vector<double> data_;
};

// Where the visual block sits inside a sequence of total_len positions.
struct SequenceLayout {
    std::size_t visual_start = 0;
    std::size_t frames = 1;
    std::size_t tokens_per_frame = 1;
    std::size_t total_len = 1;

    std::size_t visual_len() const { return frames * tokens_per_frame; }
    std::size_t visual_end() const { return visual_start + visual_len(); }
    bool is_visual(std::size_t pos) const { return pos >= visual_start && pos < visual_end(); }

    // throws InvalidInput when the block does not fit or a dimension is zero
    void validate() const;

    bool operator==(const SequenceLayout &) const = default;
};

// S x D hidden state with the layout of its visual block.
class LayerHiddenState {
public:
    LayerHiddenState(SequenceLayout layout, std::size_t width);
    LayerHiddenState(SequenceLayout layout, std::size_t width, std::vector<double> data);

    const SequenceLayout & layout() const { return layout_; }
    std::size_t width() const { return width_; }
    std::size_t positions() const { return layout_.total_len; }

    std::span<double> row(std::size_t pos) { return {data_.data() + pos * width_, width_}; }
    std::span<const double> row(std::size_t pos) const { return {data_.data() + pos * width_, width_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    // Copies the visual block out as a (T, N, D) grid.
    FrameTokenGrid visual_grid() const;
    // Overwrites the visual block with `grid`; shapes must agree.
    void set_visual_grid(const FrameTokenGrid & grid);

    bool operator==(const LayerHiddenState &) const = default;

private:
    SequenceLayout layout_;
    std::size_t width_;
    std::vector<double> data_;
};

// One non-negative ranking score per frame.
struct FrameAttention {
    std::vector<double> scores;
    std::string provenance;

    std::size_t frames() const { return scores.size(); }
};

struct KfpConfig {
    int k = 3;
    int m = 5;
    double sigma = 1.0;
    double beta = 0.6;
    int layer_lo = 8;
    int layer_hi = 15;

    // throws InvalidConfig
    void validate() const;

    bool operator==(const KfpConfig &) const = default;
};

// Per-frame propagated attention, each entry in [0, 1].
struct PropagationField {
    std::vector<double> alpha;
};

// Indices of the min(k, T) highest-scoring frames, ties to the lower index,
// returned in ascending order.
std::vector<std::size_t> select_key_frames(const FrameAttention & att, int k);

// exp(-(t - t_star)^2 / (2 sigma^2))
double gaussian_weight(long t, long t_star, double sigma);

// Gaussian window of half-width floor(m / 2) around each key frame; windows
// are combined by elementwise maximum and frames outside every window get 0.
PropagationField propagate_field(std::span<const std::size_t> key_frames, std::size_t frames, int m, double sigma);

// softmax over frames of (alpha + 1)
std::vector<double> frame_weights(const PropagationField & field);

// Scales every token of frame t by frame_weights(field)[t].
FrameTokenGrid enhance_visual_tokens(const FrameTokenGrid & visual, const PropagationField & field);

// (1 - beta) * enhanced + beta * original, elementwise. beta = 1 returns
// `original` and beta = 0 returns `enhanced` bit for bit.
LayerHiddenState blend_hidden(const LayerHiddenState & original, const LayerHiddenState & enhanced, double beta);

// Full intervention on one layer. Positions outside the visual block are
// copied through untouched.
LayerHiddenState apply_kfp_layer(const LayerHiddenState & hidden, const FrameAttention & att, const KfpConfig & cfg);

bool layer_in_range(int layer, const KfpConfig & cfg);

} // namespace verhallu::kfp
