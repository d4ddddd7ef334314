#include "verhallu/dataset.hpp"

#include "verhallu/errors.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace verhallu {

using nlohmann::json;

std::string_view to_string(TaskKind task) {
    switch (task) {
        case TaskKind::RC: return "rc";
        case TaskKind::QA: return "qa";
        case TaskKind::CFQA: return "cfqa";
    }
    return "?";
}

std::string_view to_string(RelationKind relation) {
    switch (relation) {
        case RelationKind::Causal: return "causal";
        case RelationKind::Temporal: return "temporal";
        case RelationKind::Subevent: return "subevent";
    }
    return "?";
}

std::string_view to_string(CandidateRole role) {
    switch (role) {
        case CandidateRole::GroundTruth: return "ground_truth";
        case CandidateRole::VlBias: return "vl_bias";
        case CandidateRole::LBias: return "l_bias";
        case CandidateRole::Abstention: return "abstention";
        case CandidateRole::RelationLabel: return "relation_label";
    }
    return "?";
}

TaskKind parse_task(std::string_view s) {
    for (TaskKind t : kAllTasks) {
        if (to_string(t) == s) {
            return t;
        }
    }
    throw InvalidInput("unknown task \"" + std::string(s) + "\"");
}

RelationKind parse_relation(std::string_view s) {
    for (RelationKind r : kAllRelations) {
        if (to_string(r) == s) {
            return r;
        }
    }
    throw InvalidInput("unknown relation \"" + std::string(s) + "\"");
}

CandidateRole parse_role(std::string_view s) {
    for (CandidateRole r : {CandidateRole::GroundTruth, CandidateRole::VlBias, CandidateRole::LBias,
                            CandidateRole::Abstention, CandidateRole::RelationLabel}) {
        if (to_string(r) == s) {
            return r;
        }
    }
    throw InvalidInput("unknown candidate role \"" + std::string(s) + "\"");
}

const std::array<std::string, 3> & rc_labels(RelationKind relation) {
    static const std::array<std::string, 3> causal{"None", "Cause", "Effect"};
    static const std::array<std::string, 3> temporal{"None", "Before", "After"};
    static const std::array<std::string, 3> subevent{"None", "Main_Event", "Sub_Event"};
    switch (relation) {
        case RelationKind::Causal: return causal;
        case RelationKind::Temporal: return temporal;
        case RelationKind::Subevent: return subevent;
    }
    return causal;
}

const std::string & rc_gloss(RelationKind relation) {
    static const std::string causal = "Cause: Event A causes Event B. Effect: Event B causes Event A.";
    static const std::string temporal = "Before: Event B occurs before Event A. After: Event A occurs before Event B.";
    static const std::string subevent = "Main_Event: Event A contains Event B. Sub_Event: Event B contains Event A.";
    switch (relation) {
        case RelationKind::Causal: return causal;
        case RelationKind::Temporal: return temporal;
        case RelationKind::Subevent: return subevent;
    }
    return causal;
}

std::string Sample::rc_gold_label() const {
    if (task != TaskKind::RC || gold_index >= candidates.size()) {
        return {};
    }
    return candidates[gold_index].text;
}

void validate_sample(const Sample & s) {
    auto fail = [&](const std::string & what) {
        const std::string id = s.id.empty() ? "<missing id>" : s.id;
        throw ValidationError("sample " + id + ": " + what, {id});
    };

    if (s.id.empty()) {
        fail("id is empty");
    }
    if (s.video_ref.empty()) {
        fail("video_ref is empty");
    }
    if (s.question.empty()) {
        fail("question is empty");
    }
    for (const auto & c : s.candidates) {
        if (c.text.empty()) {
            fail("candidate text is empty");
        }
    }
    if (s.rc_label_gloss && s.task != TaskKind::RC) {
        fail("rc_label_gloss is only allowed on rc samples");
    }

    if (s.task == TaskKind::RC) {
        if (s.candidates.size() != 3) {
            fail("rc samples need exactly 3 candidates, found " + std::to_string(s.candidates.size()));
        }
        const auto & labels = rc_labels(s.relation);
        for (std::size_t i = 0; i < 3; ++i) {
            if (s.candidates[i].role != CandidateRole::RelationLabel) {
                fail("rc candidates must all have role relation_label");
            }
            if (s.candidates[i].text != labels[i]) {
                fail("rc candidate " + std::to_string(i + 1) + " is \"" + s.candidates[i].text + "\", expected \"" +
                     labels[i] + "\"");
            }
        }
        if (s.gold_index >= 3) {
            fail("gold_index out of range");
        }
        if (s.rc_label_gloss && *s.rc_label_gloss != rc_gloss(s.relation)) {
            fail("rc_label_gloss does not match the " + std::string(to_string(s.relation)) + " template");
        }
        return;
    }

    if (s.candidates.size() != 7) {
        fail(std::string(to_string(s.task)) + " samples need exactly 7 candidates, found " +
             std::to_string(s.candidates.size()));
    }
    if (s.gold_index >= s.candidates.size()) {
        fail("gold_index out of range");
    }
    std::map<CandidateRole, int> roles;
    for (const auto & c : s.candidates) {
        ++roles[c.role];
    }
    if (roles[CandidateRole::RelationLabel] != 0) {
        fail("relation_label candidates are only allowed on rc samples");
    }
    const CandidateRole gold_role = s.candidates[s.gold_index].role;
    if (s.task == TaskKind::QA) {
        if (roles[CandidateRole::GroundTruth] != 1 || roles[CandidateRole::VlBias] != 2 ||
            roles[CandidateRole::LBias] != 2 || roles[CandidateRole::Abstention] != 2) {
            fail("qa candidates need roles 1 ground_truth, 2 vl_bias, 2 l_bias, 2 abstention");
        }
        if (gold_role != CandidateRole::GroundTruth) {
            fail("qa gold candidate must have role ground_truth");
        }
    } else if (gold_role != CandidateRole::Abstention) {
        fail("cfqa gold candidate must have role abstention");
    }
}

json to_json(const Sample & s) {
    json candidates = json::array();
    for (const auto & c : s.candidates) {
        candidates.push_back({{"text", c.text}, {"role", to_string(c.role)}});
    }
    json j = {
        {"id", s.id},
        {"video_ref", s.video_ref},
        {"task", to_string(s.task)},
        {"relation", to_string(s.relation)},
        {"question", s.question},
        {"candidates", std::move(candidates)},
        {"gold_index", s.gold_index},
    };
    if (s.rc_label_gloss) {
        j["rc_label_gloss"] = *s.rc_label_gloss;
    }
    return j;
}

namespace {

const json & field(const json & record, const char * name) {
    const auto it = record.find(name);
    if (it == record.end()) {
        throw ParseError(std::string("missing field \"") + name + "\"", 0);
    }
    return *it;
}

std::string string_field(const json & record, const char * name) {
    const json & v = field(record, name);
    if (!v.is_string()) {
        throw ParseError(std::string("field \"") + name + "\" must be a string", 0);
    }
    return v.get<std::string>();
}

} // namespace

Sample sample_from_json(const json & record) {
    if (!record.is_object()) {
        throw ParseError("record is not a JSON object", 0);
    }
    Sample s;
    s.id = string_field(record, "id");
    s.video_ref = string_field(record, "video_ref");
    s.question = string_field(record, "question");
    try {
        s.task = parse_task(string_field(record, "task"));
        s.relation = parse_relation(string_field(record, "relation"));
    } catch (const InvalidInput & e) {
        throw ParseError(e.what(), 0);
    }

    const json & cands = field(record, "candidates");
    if (!cands.is_array()) {
        throw ParseError("field \"candidates\" must be an array", 0);
    }
    for (const json & c : cands) {
        if (!c.is_object()) {
            throw ParseError("candidate is not an object", 0);
        }
        Candidate cand;
        cand.text = string_field(c, "text");
        try {
            cand.role = parse_role(string_field(c, "role"));
        } catch (const InvalidInput & e) {
            throw ParseError(e.what(), 0);
        }
        s.candidates.push_back(std::move(cand));
    }

    const json & gold = field(record, "gold_index");
    if (!gold.is_number_unsigned()) {
        throw ParseError("field \"gold_index\" must be a non-negative integer", 0);
    }
    s.gold_index = gold.get<std::size_t>();

    if (const auto it = record.find("rc_label_gloss"); it != record.end() && !it->is_null()) {
        if (!it->is_string()) {
            throw ParseError("field \"rc_label_gloss\" must be a string", 0);
        }
        s.rc_label_gloss = it->get<std::string>();
    }
    return s;
}

DatasetLoad load_dataset_checked(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open dataset " + path.string());
    }
    DatasetLoad out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        Sample s;
        try {
            s = sample_from_json(json::parse(line));
        } catch (const json::parse_error & e) {
            out.errors.push_back({lineno, "", std::string("malformed JSON: ") + e.what()});
            continue;
        } catch (const ParseError & e) {
            out.errors.push_back({lineno, "", e.what()});
            continue;
        }
        try {
            validate_sample(s);
        } catch (const ValidationError & e) {
            out.errors.push_back({lineno, s.id, e.what()});
            continue;
        }
        if (!seen.insert(s.id).second) {
            out.errors.push_back({lineno, s.id, "duplicate sample id " + s.id});
            continue;
        }
        out.samples.push_back(std::move(s));
    }
    if (lineno == 0 || (out.samples.empty() && out.errors.empty())) {
        out.warnings.push_back("dataset " + path.string() + " contains no samples");
    }
    return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path & path) {
    DatasetLoad load = load_dataset_checked(path);
    for (const auto & w : load.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    if (!load.errors.empty()) {
        const Diagnostic & d = load.errors.front();
        if (d.sample_id.empty()) {
            throw ParseError(d.message, d.line);
        }
        throw ValidationError("line " + std::to_string(d.line) + ": " + d.message, {d.sample_id});
    }
    return std::move(load.samples);
}

std::string serialize_dataset(const std::vector<Sample> & samples) {
    std::string out;
    for (const auto & s : samples) {
        out += to_json(s).dump();
        out += '\n';
    }
    return out;
}

void write_dataset(const std::filesystem::path & path, const std::vector<Sample> & samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InvalidInput("cannot write " + path.string());
    }
    out << serialize_dataset(samples);
}

std::size_t DatasetStats::count(TaskKind task) const {
    std::size_t n = 0;
    for (const auto & [key, c] : counts) {
        if (key.task == task) {
            n += c;
        }
    }
    return n;
}

std::size_t DatasetStats::count(TaskKind task, RelationKind relation) const {
    std::size_t n = 0;
    for (const auto & [key, c] : counts) {
        if (key.task == task && key.relation == relation) {
            n += c;
        }
    }
    return n;
}

std::size_t DatasetStats::count(TaskKind task, RelationKind relation, const std::string & label) const {
    const auto it = counts.find(StatsKey{task, relation, label});
    return it == counts.end() ? 0 : it->second;
}

DatasetStats compute_stats(const std::vector<Sample> & samples) {
    DatasetStats stats;
    std::set<std::string> videos;
    for (const auto & s : samples) {
        ++stats.counts[StatsKey{s.task, s.relation, s.rc_gold_label()}];
        videos.insert(s.video_ref);
    }
    stats.total = samples.size();
    stats.videos = videos.size();
    return stats;
}

bool OfficialStatsReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const StatCheck & c) { return c.ok(); });
}

std::vector<StatCheck> OfficialStatsReport::mismatches() const {
    std::vector<StatCheck> out;
    std::copy_if(checks.begin(), checks.end(), std::back_inserter(out), [](const StatCheck & c) { return !c.ok(); });
    return out;
}

OfficialStatsReport validate_official_stats(const DatasetStats & stats) {
    OfficialStatsReport report;
    auto check = [&](std::string field, long long expected, std::size_t actual) {
        report.checks.push_back({std::move(field), expected, static_cast<long long>(actual)});
    };
    using R = RelationKind;
    using T = TaskKind;

    check("qa", 967, stats.count(T::QA));
    check("qa.temporal", 212, stats.count(T::QA, R::Temporal));
    check("qa.causal", 497, stats.count(T::QA, R::Causal));
    check("qa.subevent", 258, stats.count(T::QA, R::Subevent));
    check("cfqa", 967, stats.count(T::CFQA));
    check("rc", 5742, stats.count(T::RC));
    check("rc.temporal", 2683, stats.count(T::RC, R::Temporal));
    check("rc.temporal.Before", 665, stats.count(T::RC, R::Temporal, "Before"));
    check("rc.temporal.After", 669, stats.count(T::RC, R::Temporal, "After"));
    check("rc.temporal.None", 1349, stats.count(T::RC, R::Temporal, "None"));
    check("rc.causal", 1511, stats.count(T::RC, R::Causal));
    check("rc.causal.Cause", 135, stats.count(T::RC, R::Causal, "Cause"));
    check("rc.causal.Effect", 138, stats.count(T::RC, R::Causal, "Effect"));
    check("rc.causal.None", 1238, stats.count(T::RC, R::Causal, "None"));
    check("rc.subevent", 1548, stats.count(T::RC, R::Subevent));
    check("rc.subevent.Main_Event", 258, stats.count(T::RC, R::Subevent, "Main_Event"));
    check("rc.subevent.Sub_Event", 258, stats.count(T::RC, R::Subevent, "Sub_Event"));
    check("rc.subevent.None", 1032, stats.count(T::RC, R::Subevent, "None"));
    check("total", 7676, stats.total);
    check("videos", 574, stats.videos);
    return report;
}

} // namespace verhallu
