#include "verhallu/dataset.hpp"

#include "verhallu/errors.hpp"
#include "verhallu/rng.hpp"

#include <algorithm>
#include <cstdio>

namespace verhallu {

namespace {

constexpr std::array<std::string_view, 12> kActors{
    "the man",     "the woman",   "the teddy bear", "the landlady", "the waiter",   "the driver",
    "the student", "the painter", "the baby",       "the guard",    "the neighbour", "the old lady"};
constexpr std::array<std::string_view, 16> kActions{
    "opens",   "hides",  "throws", "paints", "drops",   "cuts",    "carries", "pushes",
    "flattens", "hangs", "washes", "kicks",  "borrows", "repairs", "buries",  "swallows"};
constexpr std::array<std::string_view, 16> kObjects{
    "the umbrella", "the turkey",   "the armchair", "the sandwich", "the shoe",   "the vase",
    "the pepper",   "the suitcase", "the curtain",  "the ladder",   "the mirror", "the flowers",
    "the oyster",   "the car door", "the tie",      "the letter"};

template <std::size_t N>
std::string_view pick(SplitMix64 & rng, const std::array<std::string_view, N> & words) {
    return words[static_cast<std::size_t>(rng.below(N))];
}

std::string event_phrase(SplitMix64 & rng) {
    std::string out(pick(rng, kActors));
    out += ' ';
    out += pick(rng, kActions);
    out += ' ';
    out += pick(rng, kObjects);
    return out;
}

std::string qa_question(RelationKind relation, const std::string & event) {
    switch (relation) {
        case RelationKind::Temporal: return "What happens after " + event + "?";
        case RelationKind::Causal: return "Why does the person perform " + event + "?";
        case RelationKind::Subevent: return "During " + event + ", which of the following event occurred?";
    }
    return event;
}

std::vector<Candidate> qa_candidates(SplitMix64 & rng, TaskKind task, std::size_t & gold_index) {
    std::vector<Candidate> cands;
    cands.push_back({event_phrase(rng), CandidateRole::GroundTruth});
    cands.push_back({event_phrase(rng) + " in plain view", CandidateRole::VlBias});
    cands.push_back({event_phrase(rng) + " next to the camera", CandidateRole::VlBias});
    cands.push_back({event_phrase(rng) + " as usual", CandidateRole::LBias});
    cands.push_back({event_phrase(rng) + " out of habit", CandidateRole::LBias});
    cands.push_back({std::string(kAbstainIncomplete), CandidateRole::Abstention});
    cands.push_back({std::string(kAbstainConfused), CandidateRole::Abstention});

    for (std::size_t i = cands.size(); i > 1; --i) {
        std::swap(cands[i - 1], cands[static_cast<std::size_t>(rng.below(i))]);
    }
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const bool gold = task == TaskKind::QA ? cands[i].role == CandidateRole::GroundTruth
                                               : cands[i].text == kAbstainIncomplete;
        if (gold) {
            gold_index = i;
        }
    }
    return cands;
}

} // namespace

SyntheticSpec SyntheticSpec::published() {
    using R = RelationKind;
    using T = TaskKind;
    SyntheticSpec spec;
    spec.videos = 574;
    for (auto task : {T::QA, T::CFQA}) {
        spec.counts[{task, R::Temporal, ""}] = 212;
        spec.counts[{task, R::Causal, ""}] = 497;
        spec.counts[{task, R::Subevent, ""}] = 258;
    }
    spec.counts[{T::RC, R::Temporal, "Before"}] = 665;
    spec.counts[{T::RC, R::Temporal, "After"}] = 669;
    spec.counts[{T::RC, R::Temporal, "None"}] = 1349;
    spec.counts[{T::RC, R::Causal, "Cause"}] = 135;
    spec.counts[{T::RC, R::Causal, "Effect"}] = 138;
    spec.counts[{T::RC, R::Causal, "None"}] = 1238;
    spec.counts[{T::RC, R::Subevent, "Main_Event"}] = 258;
    spec.counts[{T::RC, R::Subevent, "Sub_Event"}] = 258;
    spec.counts[{T::RC, R::Subevent, "None"}] = 1032;
    return spec;
}

SyntheticSpec SyntheticSpec::balanced(std::size_t qa, std::size_t rc, std::size_t videos) {
    SyntheticSpec spec;
    spec.videos = videos;
    for (RelationKind r : kAllRelations) {
        if (qa > 0) {
            spec.counts[{TaskKind::QA, r, ""}] = qa;
            spec.counts[{TaskKind::CFQA, r, ""}] = qa;
        }
        const auto & labels = rc_labels(r);
        for (std::size_t i = 0; i < 3; ++i) {
            // remainder goes to None
            const std::size_t n = rc / 3 + (i == 0 ? rc % 3 : 0);
            if (n > 0) {
                spec.counts[{TaskKind::RC, r, labels[i]}] = n;
            }
        }
    }
    return spec;
}

std::vector<Sample> generate_synthetic(const SyntheticSpec & spec, uint64_t seed) {
    SplitMix64 rng(seed);
    const std::size_t videos = spec.videos == 0 ? 1 : spec.videos;
    std::vector<Sample> out;
    std::size_t serial = 0;
    char id_buf[64];
    char video_buf[32];

    for (const auto & [key, count] : spec.counts) {
        const auto & labels = rc_labels(key.relation);
        if (key.task == TaskKind::RC && std::find(labels.begin(), labels.end(), key.label) == labels.end()) {
            throw InvalidInput("unknown " + std::string(to_string(key.relation)) + " label \"" + key.label + "\"");
        }
        for (std::size_t i = 0; i < count; ++i, ++serial) {
            Sample s;
            std::snprintf(id_buf, sizeof id_buf, "syn-%s-%s-%06zu", std::string(to_string(key.task)).c_str(),
                          std::string(to_string(key.relation)).c_str(), serial);
            std::snprintf(video_buf, sizeof video_buf, "video-%04zu", serial % videos);
            s.id = id_buf;
            s.video_ref = video_buf;
            s.task = key.task;
            s.relation = key.relation;

            if (key.task == TaskKind::RC) {
                const std::string a = event_phrase(rng);
                const std::string b = event_phrase(rng);
                s.question = "What is the relation between Event A (" + a + ") and Event B (" + b + ")?";
                for (std::size_t l = 0; l < 3; ++l) {
                    s.candidates.push_back({labels[l], CandidateRole::RelationLabel});
                    if (labels[l] == key.label) {
                        s.gold_index = l;
                    }
                }
            } else {
                s.question = qa_question(key.relation, event_phrase(rng));
                s.candidates = qa_candidates(rng, key.task, s.gold_index);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

} // namespace verhallu
