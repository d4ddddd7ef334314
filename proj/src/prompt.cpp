#include "verhallu/dataset.hpp"

#include "verhallu/errors.hpp"
#include "verhallu/rng.hpp"

#include <numeric>

namespace verhallu {

namespace {

constexpr std::string_view kInstructionPrefix = "According to the video, ";
constexpr std::string_view kInstructionSuffix =
    " Your answer should choose from the following candidate answers. You should only answer the candidate number.";

} // namespace

std::string build_prompt(const Sample & sample) {
    validate_sample(sample);

    std::string out;
    out += kInstructionPrefix;
    out += sample.question;
    out += kInstructionSuffix;
    out += "\nCandidate answers:";
    for (std::size_t i = 0; i < sample.candidates.size(); ++i) {
        out += " (" + std::to_string(i + 1) + ") " + sample.candidates[i].text;
    }
    if (sample.task == TaskKind::RC) {
        out += ".\n";
        out += rc_gloss(sample.relation);
    }
    return out;
}

std::vector<std::size_t> candidate_permutation(const Sample & sample, uint64_t seed) {
    std::vector<std::size_t> perm(sample.candidates.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    SplitMix64 rng(derive_seed(seed, sample.id));
    // Fisher-Yates
    for (std::size_t i = perm.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

Sample shuffle_candidates(const Sample & sample, uint64_t seed) {
    if (sample.task == TaskKind::RC) {
        throw InvalidInput("rc candidate order is fixed by the template and cannot be shuffled");
    }
    const auto perm = candidate_permutation(sample, seed);
    Sample out = sample;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out.candidates[i] = sample.candidates[perm[i]];
        if (perm[i] == sample.gold_index) {
            out.gold_index = i;
        }
    }
    return out;
}

} // namespace verhallu
