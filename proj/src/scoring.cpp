#include "verhallu/scoring.hpp"

#include "verhallu/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <unordered_map>

namespace verhallu {

using nlohmann::json;

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string normalize_text(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    s = s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
    while (!s.empty() && s.back() == '.') {
        s.remove_suffix(1);
    }
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// What a single sample's answer resolved to.
struct Outcome {
    const Sample * sample = nullptr;
    // the sample as it was shown to the answerer (after any shuffle)
    Sample shown;
    bool missing = true;
    std::optional<std::size_t> chosen; // 0-based in `shown`
    bool correct = false;

    std::optional<CandidateRole> chosen_role() const {
        if (!chosen) {
            return std::nullopt;
        }
        return shown.candidates[*chosen].role;
    }
};

std::vector<Outcome> resolve(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
                             const ScoreOptions & options) {
    std::unordered_map<std::string, const Sample *> by_id;
    for (const auto & s : dataset) {
        by_id.emplace(s.id, &s);
    }

    std::unordered_map<std::string, const Prediction *> pred_by_id;
    std::vector<std::string> duplicates;
    std::vector<std::string> orphans;
    for (const auto & p : predictions) {
        if (!by_id.count(p.sample_id)) {
            orphans.push_back(p.sample_id);
            continue;
        }
        if (!pred_by_id.emplace(p.sample_id, &p).second) {
            duplicates.push_back(p.sample_id);
        }
    }
    if (!duplicates.empty()) {
        throw ValidationError("duplicate predictions for " + std::to_string(duplicates.size()) + " sample id(s)",
                              duplicates);
    }
    if (!orphans.empty()) {
        throw ValidationError(std::to_string(orphans.size()) + " prediction(s) reference unknown sample ids", orphans);
    }

    std::vector<Outcome> out;
    out.reserve(dataset.size());
    for (const auto & s : dataset) {
        Outcome o;
        o.sample = &s;
        const auto it = pred_by_id.find(s.id);
        if (it == pred_by_id.end()) {
            o.shown = s;
            out.push_back(std::move(o));
            continue;
        }
        const Prediction & p = *it->second;
        o.missing = false;
        o.shown = (p.shuffle_seed && s.task != TaskKind::RC) ? shuffle_candidates(s, *p.shuffle_seed) : s;

        std::vector<std::string> texts;
        for (const auto & c : o.shown.candidates) {
            texts.push_back(c.text);
        }
        const ParsedAnswer parsed = parse_answer(p.raw_text, texts.size(), texts);
        if (parsed.index) {
            o.chosen = *parsed.index - 1;
            o.correct = *o.chosen == o.shown.gold_index;
            if (!o.correct && options.cfqa_accept_any_abstention && s.task == TaskKind::CFQA) {
                o.correct = o.shown.candidates[*o.chosen].role == CandidateRole::Abstention;
            }
        }
        out.push_back(std::move(o));
    }
    return out;
}

RcMetrics metrics_from_confusion(const ConfusionMatrix & cm, Averaging averaging) {
    RcMetrics m;
    m.confusion = cm;
    const double scored = static_cast<double>(m.scored());
    for (std::size_t c = 0; c < 3; ++c) {
        std::size_t col = 0;
        std::size_t row = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            col += cm[i][c];
            row += cm[c][i];
        }
        const double tp = static_cast<double>(cm[c][c]);
        const double p = col == 0 ? 0.0 : tp / static_cast<double>(col);
        const double r = row == 0 ? 0.0 : tp / static_cast<double>(row);
        const double f = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
        const double w = averaging == Averaging::Macro ? 1.0 / 3.0
                                                       : (scored == 0.0 ? 0.0 : static_cast<double>(row) / scored);
        m.precision += w * p;
        m.recall += w * r;
        m.f1 += w * f;
    }
    return m;
}

ConfusionMatrix confusion_for(const std::vector<Outcome> & outcomes, RelationKind relation, bool & any) {
    ConfusionMatrix cm{};
    any = false;
    for (const auto & o : outcomes) {
        if (o.sample->task != TaskKind::RC || o.sample->relation != relation) {
            continue;
        }
        any = true;
        if (o.chosen) {
            ++cm[o.sample->gold_index][*o.chosen];
        }
    }
    return cm;
}

std::optional<double> srh_of(const std::vector<Outcome> & outcomes) {
    if (outcomes.empty()) {
        return std::nullopt;
    }
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_video; // correct, total
    for (const auto & o : outcomes) {
        auto & [correct, total] = per_video[o.sample->video_ref];
        correct += o.correct ? 1 : 0;
        ++total;
    }
    double acc = 0.0;
    for (const auto & [video, ct] : per_video) {
        acc += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    }
    return acc / static_cast<double>(per_video.size());
}

BiasReport bias_of(const std::vector<Outcome> & outcomes) {
    BiasReport b;
    std::size_t gt = 0, vl = 0, l = 0, ab = 0, other = 0;
    for (const auto & o : outcomes) {
        if (o.sample->task != TaskKind::QA || o.missing) {
            continue;
        }
        const auto role = o.chosen_role();
        if (!role) {
            ++b.unparseable;
            continue;
        }
        ++b.parseable;
        switch (*role) {
            case CandidateRole::GroundTruth: ++gt; break;
            case CandidateRole::VlBias: ++vl; break;
            case CandidateRole::LBias: ++l; break;
            case CandidateRole::Abstention: ++ab; break;
            case CandidateRole::RelationLabel: ++other; break;
        }
    }
    if (b.parseable > 0) {
        const double n = static_cast<double>(b.parseable);
        b.correct_rate = static_cast<double>(gt) / n;
        b.vl_bias_rate = static_cast<double>(vl) / n;
        b.l_bias_rate = static_cast<double>(l) / n;
        b.abstention_rate = static_cast<double>(ab) / n;
        b.residual_rate = static_cast<double>(other) / n;
    }
    return b;
}

} // namespace

ParsedAnswer parse_answer(std::string_view raw, std::size_t n_candidates, std::span<const std::string> texts) {
    for (std::size_t i = 0; i < raw.size();) {
        if (!is_digit(raw[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < raw.size() && is_digit(raw[j])) {
            ++j;
        }
        const bool left_ok = i == 0 || (!is_alnum(raw[i - 1]) && !(raw[i - 1] == '.' && i >= 2 && is_digit(raw[i - 2])));
        const bool right_ok =
            j == raw.size() || (!is_alnum(raw[j]) && !(raw[j] == '.' && j + 1 < raw.size() && is_digit(raw[j + 1])));
        if (left_ok && right_ok && j - i <= 6) {
            const std::size_t value = std::stoul(std::string(raw.substr(i, j - i)));
            if (value >= 1 && value <= n_candidates) {
                return ParsedAnswer{value};
            }
        }
        i = j;
    }

    const std::string needle = normalize_text(raw);
    if (!needle.empty()) {
        for (std::size_t c = 0; c < texts.size() && c < n_candidates; ++c) {
            if (normalize_text(texts[c]) == needle) {
                return ParsedAnswer{c + 1};
            }
        }
    }
    return ParsedAnswer{};
}

json to_json(const Prediction & p) {
    json j = {{"sample_id", p.sample_id}, {"raw_text", p.raw_text}};
    if (p.model_name) {
        j["model_name"] = *p.model_name;
    }
    if (p.latency_ms) {
        j["latency_ms"] = *p.latency_ms;
    }
    if (p.shuffle_seed) {
        j["shuffle_seed"] = *p.shuffle_seed;
    }
    return j;
}

Prediction prediction_from_json(const json & j) {
    if (!j.is_object()) {
        throw ParseError("prediction record is not a JSON object", 0);
    }
    Prediction p;
    const auto id = j.find("sample_id");
    if (id == j.end() || !id->is_string()) {
        throw ParseError("prediction needs a string \"sample_id\"", 0);
    }
    p.sample_id = id->get<std::string>();
    const auto raw = j.find("raw_text");
    if (raw == j.end() || !raw->is_string()) {
        throw ParseError("prediction needs a string \"raw_text\"", 0);
    }
    p.raw_text = raw->get<std::string>();
    if (const auto it = j.find("model_name"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) {
            throw ParseError("\"model_name\" must be a string", 0);
        }
        p.model_name = it->get<std::string>();
    }
    if (const auto it = j.find("latency_ms"); it != j.end() && !it->is_null()) {
        if (!it->is_number()) {
            throw ParseError("\"latency_ms\" must be a number", 0);
        }
        p.latency_ms = it->get<double>();
    }
    if (const auto it = j.find("shuffle_seed"); it != j.end() && !it->is_null()) {
        if (!it->is_number_unsigned()) {
            throw ParseError("\"shuffle_seed\" must be a non-negative integer", 0);
        }
        p.shuffle_seed = it->get<uint64_t>();
    }
    return p;
}

std::vector<Prediction> read_predictions(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open predictions " + path.string());
    }
    std::vector<Prediction> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(prediction_from_json(json::parse(line)));
        } catch (const json::parse_error & e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
        } catch (const ParseError & e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return out;
}

std::string serialize_predictions(const std::vector<Prediction> & predictions) {
    std::string out;
    for (const auto & p : predictions) {
        out += to_json(p).dump();
        out += '\n';
    }
    return out;
}

void write_predictions(const std::filesystem::path & path, const std::vector<Prediction> & predictions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InvalidInput("cannot write " + path.string());
    }
    out << serialize_predictions(predictions);
}

Tally & Tally::operator+=(const Tally & o) {
    correct += o.correct;
    total += o.total;
    unparseable += o.unparseable;
    missing += o.missing;
    return *this;
}

std::size_t RcMetrics::scored() const {
    std::size_t n = 0;
    for (const auto & row : confusion) {
        for (std::size_t v : row) {
            n += v;
        }
    }
    return n;
}

std::size_t RcMetrics::trace() const { return confusion[0][0] + confusion[1][1] + confusion[2][2]; }

Tally ScoreReport::task(TaskKind t) const {
    Tally out;
    for (const auto & [key, tally] : cells) {
        if (key.task == t) {
            out += tally;
        }
    }
    return out;
}

Tally ScoreReport::overall() const {
    Tally out;
    for (const auto & [key, tally] : cells) {
        out += tally;
    }
    return out;
}

std::optional<double> ScoreReport::accuracy(TaskKind t, RelationKind r) const {
    const auto it = cells.find(CellKey{t, r});
    return it == cells.end() ? std::nullopt : it->second.accuracy();
}

double ScoreReport::unparseable_rate() const {
    const Tally all = overall();
    return all.total == 0 ? 0.0 : static_cast<double>(all.unparseable) / static_cast<double>(all.total);
}

ScoreReport score(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
                  const ScoreOptions & options) {
    const std::vector<Outcome> outcomes = resolve(dataset, predictions, options);

    ScoreReport report;
    report.averaging = options.averaging;
    for (const auto & o : outcomes) {
        Tally & t = report.cells[CellKey{o.sample->task, o.sample->relation}];
        ++t.total;
        t.correct += o.correct ? 1 : 0;
        t.missing += o.missing ? 1 : 0;
        t.unparseable += (!o.missing && !o.chosen) ? 1 : 0;
        if (o.sample->task == TaskKind::CFQA && o.chosen && *o.chosen != o.shown.gold_index &&
            o.shown.candidates[*o.chosen].role == CandidateRole::Abstention) {
            ++report.cfqa_other_abstention;
        }
    }
    for (RelationKind r : kAllRelations) {
        bool any = false;
        const ConfusionMatrix cm = confusion_for(outcomes, r, any);
        if (any) {
            report.rc[r] = metrics_from_confusion(cm, options.averaging);
        }
    }
    report.srh = srh_of(outcomes);
    report.bias = bias_of(outcomes);
    return report;
}

RcMetrics rc_confusion_and_prf(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
                               RelationKind relation, Averaging averaging) {
    const std::vector<Outcome> outcomes = resolve(dataset, predictions, {});
    bool any = false;
    const ConfusionMatrix cm = confusion_for(outcomes, relation, any);
    if (!any) {
        throw EmptySetError("no rc samples with relation " + std::string(to_string(relation)));
    }
    return metrics_from_confusion(cm, averaging);
}

double srh(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions,
           const ScoreOptions & options) {
    const auto value = srh_of(resolve(dataset, predictions, options));
    if (!value) {
        throw EmptySetError("srh over an empty dataset");
    }
    return *value;
}

BiasReport bias_rates(const std::vector<Sample> & dataset, const std::vector<Prediction> & predictions) {
    return bias_of(resolve(dataset, predictions, {}));
}

} // namespace verhallu
