#pragma once

// Benchmark samples: schema, JSON Lines I/O, validation, prompt rendering and
// synthetic generation.

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace verhallu {

enum class TaskKind { RC, QA, CFQA };
enum class RelationKind { Causal, Temporal, Subevent };
enum class CandidateRole { GroundTruth, VlBias, LBias, Abstention, RelationLabel };

inline constexpr std::array<TaskKind, 3> kAllTasks{TaskKind::RC, TaskKind::QA, TaskKind::CFQA};
inline constexpr std::array<RelationKind, 3> kAllRelations{RelationKind::Causal, RelationKind::Temporal,
                                                           RelationKind::Subevent};

std::string_view to_string(TaskKind task);
std::string_view to_string(RelationKind relation);
std::string_view to_string(CandidateRole role);
TaskKind parse_task(std::string_view s);
RelationKind parse_relation(std::string_view s);
CandidateRole parse_role(std::string_view s);

// Relation-classification labels in template order: None, then the two
// directed labels.
const std::array<std::string, 3> & rc_labels(RelationKind relation);
// The direction gloss printed under the RC candidate line.
const std::string & rc_gloss(RelationKind relation);

inline constexpr std::string_view kAbstainIncomplete = "Video information is incomplete, unable to judge.";
inline constexpr std::string_view kAbstainConfused = "I can't understand, don't know what to choose.";

struct Candidate {
    std::string text;
    CandidateRole role = CandidateRole::GroundTruth;

    bool operator==(const Candidate &) const = default;
};

struct Sample {
    std::string id;
    std::string video_ref;
    TaskKind task = TaskKind::QA;
    RelationKind relation = RelationKind::Causal;
    std::string question;
    std::vector<Candidate> candidates;
    std::size_t gold_index = 0;
    std::optional<std::string> rc_label_gloss;

    // the gold RC label text, e.g. "Cause"; empty for QA/CFQA
    std::string rc_gold_label() const;

    bool operator==(const Sample &) const = default;
};

// Throws ValidationError (carrying the sample id) on any schema violation.
void validate_sample(const Sample & sample);

nlohmann::json to_json(const Sample & sample);
// Decodes one record; throws ParseError on missing or mistyped fields. Does
// not run validate_sample.
Sample sample_from_json(const nlohmann::json & record);

struct Diagnostic {
    std::size_t line = 0;
    std::string sample_id;
    std::string message;
};

struct DatasetLoad {
    std::vector<Sample> samples;
    std::vector<Diagnostic> errors;
    std::vector<std::string> warnings;
};

// Reads every line and collects all diagnostics; never throws on bad records.
DatasetLoad load_dataset_checked(const std::filesystem::path & path);

// Throws ParseError / ValidationError on the first bad record. Warnings go to
// stderr.
std::vector<Sample> load_dataset(const std::filesystem::path & path);

void write_dataset(const std::filesystem::path & path, const std::vector<Sample> & samples);
std::string serialize_dataset(const std::vector<Sample> & samples);

// Keyed by (task, relation, label); label is the RC gold label or "" for QA/CFQA.
struct StatsKey {
    TaskKind task;
    RelationKind relation;
    std::string label;

    auto operator<=>(const StatsKey &) const = default;
};

struct DatasetStats {
    std::map<StatsKey, std::size_t> counts;
    std::size_t total = 0;
    std::size_t videos = 0;

    std::size_t count(TaskKind task) const;
    std::size_t count(TaskKind task, RelationKind relation) const;
    std::size_t count(TaskKind task, RelationKind relation, const std::string & label) const;
};

DatasetStats compute_stats(const std::vector<Sample> & samples);

struct StatCheck {
    std::string field;
    long long expected = 0;
    long long actual = 0;

    long long delta() const { return actual - expected; }
    bool ok() const { return expected == actual; }
};

struct OfficialStatsReport {
    std::vector<StatCheck> checks;

    bool passed() const;
    std::vector<StatCheck> mismatches() const;
};

// Compares against the published benchmark counts.
OfficialStatsReport validate_official_stats(const DatasetStats & stats);

// Renders the task prompt. Lines are joined with '\n' and there is no
// trailing newline. Throws ValidationError on an inconsistent sample.
std::string build_prompt(const Sample & sample);

// The permutation shuffle_candidates applies: result[i] is the original index
// of the candidate placed at position i.
std::vector<std::size_t> candidate_permutation(const Sample & sample, uint64_t seed);

// Seeded reordering of QA/CFQA candidates; throws InvalidInput on RC.
Sample shuffle_candidates(const Sample & sample, uint64_t seed);

// Requested sample counts for the synthetic generator.
struct SyntheticSpec {
    // keyed like DatasetStats; RC entries need a label, QA/CFQA use ""
    std::map<StatsKey, std::size_t> counts;
    std::size_t videos = 16;

    // counts matching the published benchmark statistics
    static SyntheticSpec published();
    // `qa` QA and CFQA samples per relation and `rc` RC samples per relation,
    // spread evenly over labels
    static SyntheticSpec balanced(std::size_t qa, std::size_t rc, std::size_t videos);
};

std::vector<Sample> generate_synthetic(const SyntheticSpec & spec, uint64_t seed);

} // namespace verhallu
