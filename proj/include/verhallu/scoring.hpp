#pragma once

// Answer parsing and every benchmark metric: accuracy per (task, relation),
// RC confusion and precision/recall/F1, the per-video SRH score and the
// bias-rate breakdown of QA answers.

#include "verhallu/dataset.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace verhallu {

struct ParsedAnswer {
    // 1-based candidate number; nullopt when unparseable
    std::optional<std::size_t> index;

    bool parseable() const { return index.has_value(); }
    bool operator==(const ParsedAnswer &) const = default;
};

// First standalone integer in 1..n_candidates ("3", "(3)", "answer is 3"),
// else a case-insensitive exact match against a candidate text, else
// unparseable.
ParsedAnswer parse_answer(std::string_view raw_text, std::size_t n_candidates,
                          std::span<const std::string> candidate_texts = {});

struct Prediction {
    std::string sample_id;
    std::string raw_text;
    std::optional<std::string> model_name;
    std::optional<double> latency_ms;
    // set when the sample's candidates were shuffled before prompting
    std::optional<uint64_t> shuffle_seed;

    bool operator==(const Prediction &) const = default;
};

nlohmann::json to_json(const Prediction & p);
Prediction prediction_from_json(const nlohmann::json & record);
std::vector<Prediction> read_predictions(const std::filesystem::path & path);
std::string serialize_predictions(const std::vector<Prediction> & predictions);
void write_predictions(const std::filesystem::path & path, const std::vector<Prediction> & predictions);

enum class Averaging { Macro, Weighted };

struct ScoreOptions {
    Averaging averaging = Averaging::Macro;
    // also accept the second abstention candidate as correct on CFQA
    bool cfqa_accept_any_abstention = false;
};

struct Tally {
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t unparseable = 0;
    std::size_t missing = 0;

    std::optional<double> accuracy() const {
        return total == 0 ? std::nullopt : std::optional<double>(static_cast<double>(correct) / total);
    }
    Tally & operator+=(const Tally & o);
    bool operator==(const Tally &) const = default;
};

// rows: gold label, columns: predicted label, both in template order
using ConfusionMatrix = std::array<std::array<std::size_t, 3>, 3>;

struct RcMetrics {
    ConfusionMatrix confusion{};
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    std::size_t scored() const;
    std::size_t trace() const;
    bool operator==(const RcMetrics &) const = default;
};

struct BiasReport {
    std::size_t parseable = 0;
    std::size_t unparseable = 0;
    double correct_rate = 0.0;
    double vl_bias_rate = 0.0;
    double l_bias_rate = 0.0;
    double abstention_rate = 0.0;
    // answers whose role fits none of the above; 0 for valid QA data
    double residual_rate = 0.0;

    bool operator==(const BiasReport &) const = default;
};

struct CellKey {
    TaskKind task;
    RelationKind relation;
    auto operator<=>(const CellKey &) const = default;
};

struct ScoreReport {
    std::map<CellKey, Tally> cells;
    std::map<RelationKind, RcMetrics> rc;
    std::optional<double> srh;
    BiasReport bias;
    std::size_t cfqa_other_abstention = 0;
    Averaging averaging = Averaging::Macro;

    Tally task(TaskKind t) const;
    Tally overall() const;
    std::optional<double> accuracy(TaskKind t, RelationKind r) const;
    double unparseable_rate() const;

    bool operator==(const ScoreReport &) const = default;
};

// Scores `predictions` against `dataset`. Throws ValidationError on duplicate
// prediction ids or ids absent from the dataset (ids() lists them).
ScoreReport score(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
                  const ScoreOptions & options = {});

// Throws EmptySetError when the dataset has no RC samples of `relation`.
RcMetrics rc_confusion_and_prf(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
                               RelationKind relation, Averaging averaging = Averaging::Macro);

// Mean over videos of each video's fraction of correctly answered samples.
double srh(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
           const ScoreOptions & options = {});

BiasReport bias_rates(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions);

enum class ReportFormat { Table, Json };
ReportFormat parse_report_format(std::string_view s);

nlohmann::json report_to_json(const ScoreReport & report);
ScoreReport report_from_json(const nlohmann::json & j);

// Table cell for an accuracy: one-decimal percent, or an em dash when absent.
std::string percent_cell(std::optional<double> value);

// One labelled row per report, columns CFQA | QA C/T/S | RC C/T/S | SRH.
std::string render_accuracy_table(const std::vector<std::pair<std::string, ScoreReport>> & rows);

// Full report: accuracy table, RC precision/recall/F1, bias rates and
// coverage (Table), or the structured document (Json).
std::string render_report(const ScoreReport & report, ReportFormat format);
std::string render_report(const ScoreReport & report, std::string_view format);

} // namespace verhallu
