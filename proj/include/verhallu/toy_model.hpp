#pragma once

// A tiny random-weight decoder with a visual-token prefix, used to exercise the
// key-frame intervention end to end. Weights are untrained; the model checks
// plumbing and invariants, not answer quality.

#include "verhallu/kfp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace verhallu::toy {

using TokenId = std::size_t;

// vocabulary of `size` entries: ids 0..9 are the digits "0".."9", id 10 is
// "<bos>", the rest are opaque "<tN>" tokens
std::vector<std::string> default_vocab(std::size_t size = 64);

struct ToyModelConfig {
    int layers = 16;
    int heads = 4;
    int d_model = 32;
    int mlp_hidden = 64;
    std::vector<std::string> vocab = default_vocab();
    int frames = 8;
    int tokens_per_frame = 4;
    int max_positions = 128;
    uint64_t seed = 0;

    // throws InvalidConfig
    void validate() const;
};

// Softmax attention probabilities of one layer, (head, query, key).
class AttentionMap {
public:
    AttentionMap(std::size_t heads, std::size_t seq);

    std::size_t heads() const { return heads_; }
    std::size_t seq() const { return seq_; }

    double & at(std::size_t h, std::size_t q, std::size_t k) { return probs_[(h * seq_ + q) * seq_ + k]; }
    double at(std::size_t h, std::size_t q, std::size_t k) const { return probs_[(h * seq_ + q) * seq_ + k]; }

    bool operator==(const AttentionMap &) const = default;

private:
    std::size_t heads_;
    std::size_t seq_;
    std::vector<double> probs_;
};

enum class QueryAggregation { FinalText, MeanText };
enum class HeadAggregation { Mean, Max };

struct RankingOptions {
    QueryAggregation query = QueryAggregation::FinalText;
    HeadAggregation head = HeadAggregation::Mean;
};

// Per-frame attention used to rank key frames. Default: the attention row of
// the last position, averaged over heads, then averaged over each frame's N
// tokens. MeanText averages the rows of every position after the visual block.
kfp::FrameAttention frame_attention_summary(const AttentionMap & attention, const kfp::SequenceLayout & layout,
                                            const RankingOptions & options = {});

struct LayerTap {
    int layer = 0;
    // residual stream entering the MLP, after any intervention
    kfp::LayerHiddenState hidden;
    AttentionMap attention;
};

struct DecodeResult {
    std::string answer_text;
    TokenId chosen_logit_index = 0;
    // logits of the digit tokens "1".."7", in that order
    std::vector<double> digit_logits;
    std::vector<LayerTap> taps;
};

struct ForwardOptions {
    std::optional<kfp::KfpConfig> kfp;
    RankingOptions ranking;
    // replaces every layer's own summary when ranking key frames
    std::optional<kfp::FrameAttention> ranking_override;
    // decoding is restricted to "1".."answer_choices"; at most 7
    int answer_choices = 7;
    std::vector<int> tap_layers;
};

// Residual stream entering every layer, plus the stream after the last one,
// recorded by a pass without the intervention.
struct ResidualTrace {
    std::size_t text_len = 0;
    std::vector<std::vector<double>> entering;
};

class ToyModel {
public:
    explicit ToyModel(ToyModelConfig cfg);

    const ToyModelConfig & config() const { return cfg_; }

    // FNV-1a over the bit patterns of one layer's weights
    uint64_t layer_checksum(int layer) const;

    // Layout of a sequence holding a BOS token, the visual block, then
    // `text_len` text tokens.
    kfp::SequenceLayout layout_for(std::size_t text_len) const;

    // Reentrant; the model is never mutated. When `trace` is given the pass
    // must run without the intervention and records its residual stream.
    DecodeResult forward(const kfp::FrameTokenGrid & visual, const std::vector<TokenId> & text,
                         const ForwardOptions & options = {}, ResidualTrace * trace = nullptr) const;

    // Same result as forward() on the traced input, recomputing only from the
    // first hooked layer on. Taps of earlier layers are not produced.
    DecodeResult resume(const ResidualTrace & trace, const ForwardOptions & options) const;

    TokenId digit_token(int digit) const { return digit_ids_.at(static_cast<std::size_t>(digit - 1)); }
    TokenId bos_token() const { return bos_id_; }

private:
    void check_options(const ForwardOptions & options, const kfp::SequenceLayout & layout) const;
    DecodeResult run_layers(std::vector<double> x, const kfp::SequenceLayout & layout, std::size_t first_layer,
                            const ForwardOptions & options, ResidualTrace * trace) const;

    struct Layer {
        // all projections stored input-major, (in, out)
        std::vector<double> wq, wk, wv, wo; // D x D
        std::vector<double> w1;             // D x H
        std::vector<double> w2;             // H x D
    };

    ToyModelConfig cfg_;
    std::vector<double> embed_;     // V x D
    std::vector<double> pos_;       // max_positions x D
    std::vector<double> visual_in_; // D x D projection applied to frame tokens
    std::vector<Layer> layers_;
    std::vector<double> unembed_;   // V x D
    std::vector<TokenId> digit_ids_;
    TokenId bos_id_ = 0;
};

} // namespace verhallu::toy
