#include "verhallu/errors.hpp"
#include "verhallu/scoring.hpp"

#include <cstdio>
#include <sstream>

namespace verhallu {

using nlohmann::json;

namespace {

// display columns of a UTF-8 string
std::size_t display_width(const std::string & s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        n += (c & 0xC0) != 0x80 ? 1 : 0;
    }
    return n;
}

std::string pad_left(const std::string & s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : std::string(width - w, ' ') + s;
}

std::string pad_right(const std::string & s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : s + std::string(width - w, ' ');
}

std::string render_grid(const std::vector<std::string> & header, const std::vector<std::vector<std::string>> & rows) {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        widths[c] = display_width(header[c]);
        for (const auto & row : rows) {
            widths[c] = std::max(widths[c], display_width(row[c]));
        }
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string> & cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            out << (c == 0 ? pad_right(cells[c], widths[c]) : "  " + pad_left(cells[c], widths[c]));
        }
        out << '\n';
    };
    emit(header);
    std::size_t total = 0;
    for (std::size_t c = 0; c < widths.size(); ++c) {
        total += widths[c] + (c == 0 ? 0 : 2);
    }
    out << std::string(total, '-') << '\n';
    for (const auto & row : rows) {
        emit(row);
    }
    return out.str();
}

std::string fixed1(double percent) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", percent);
    return buf;
}

json tally_json(const Tally & t) {
    return {{"correct", t.correct}, {"total", t.total}, {"unparseable", t.unparseable}, {"missing", t.missing}};
}

Tally tally_from(const json & j) {
    return Tally{j.at("correct").get<std::size_t>(), j.at("total").get<std::size_t>(),
                 j.at("unparseable").get<std::size_t>(), j.at("missing").get<std::size_t>()};
}

json optional_number(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

} // namespace

ReportFormat parse_report_format(std::string_view s) {
    if (s == "table") {
        return ReportFormat::Table;
    }
    if (s == "json") {
        return ReportFormat::Json;
    }
    throw InvalidConfig("unknown report format \"" + std::string(s) + "\" (expected table or json)");
}

json report_to_json(const ScoreReport & r) {
    json cells = json::array();
    for (const auto & [key, tally] : r.cells) {
        json c = tally_json(tally);
        c["task"] = to_string(key.task);
        c["relation"] = to_string(key.relation);
        c["accuracy"] = optional_number(tally.accuracy());
        cells.push_back(std::move(c));
    }
    json rc = json::object();
    for (const auto & [relation, m] : r.rc) {
        rc[std::string(to_string(relation))] = {
            {"labels", rc_labels(relation)},
            {"confusion", m.confusion},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
        };
    }
    const Tally all = r.overall();
    return {
        {"averaging", r.averaging == Averaging::Macro ? "macro" : "weighted"},
        {"cells", std::move(cells)},
        {"overall", {{"correct", all.correct}, {"total", all.total}, {"accuracy", optional_number(all.accuracy())}}},
        {"rc", std::move(rc)},
        {"srh", optional_number(r.srh)},
        {"bias",
         {{"parseable", r.bias.parseable},
          {"unparseable", r.bias.unparseable},
          {"correct_rate", r.bias.correct_rate},
          {"vl_bias_rate", r.bias.vl_bias_rate},
          {"l_bias_rate", r.bias.l_bias_rate},
          {"abstention_rate", r.bias.abstention_rate},
          {"residual_rate", r.bias.residual_rate}}},
        {"cfqa_other_abstention", r.cfqa_other_abstention},
        {"unparseable_rate", r.unparseable_rate()},
        {"missing", all.missing},
    };
}

ScoreReport report_from_json(const json & j) {
    ScoreReport r;
    const std::string averaging = j.at("averaging").get<std::string>();
    if (averaging != "macro" && averaging != "weighted") {
        throw ParseError("unknown averaging \"" + averaging + "\"", 0);
    }
    r.averaging = averaging == "macro" ? Averaging::Macro : Averaging::Weighted;
    for (const auto & c : j.at("cells")) {
        r.cells[CellKey{parse_task(c.at("task").get<std::string>()),
                        parse_relation(c.at("relation").get<std::string>())}] = tally_from(c);
    }
    for (const auto & [name, m] : j.at("rc").items()) {
        RcMetrics metrics;
        metrics.confusion = m.at("confusion").get<ConfusionMatrix>();
        metrics.precision = m.at("precision").get<double>();
        metrics.recall = m.at("recall").get<double>();
        metrics.f1 = m.at("f1").get<double>();
        r.rc[parse_relation(name)] = metrics;
    }
    if (!j.at("srh").is_null()) {
        r.srh = j.at("srh").get<double>();
    }
    const json & b = j.at("bias");
    r.bias.parseable = b.at("parseable").get<std::size_t>();
    r.bias.unparseable = b.at("unparseable").get<std::size_t>();
    r.bias.correct_rate = b.at("correct_rate").get<double>();
    r.bias.vl_bias_rate = b.at("vl_bias_rate").get<double>();
    r.bias.l_bias_rate = b.at("l_bias_rate").get<double>();
    r.bias.abstention_rate = b.at("abstention_rate").get<double>();
    r.bias.residual_rate = b.at("residual_rate").get<double>();
    r.cfqa_other_abstention = j.at("cfqa_other_abstention").get<std::size_t>();
    return r;
}

std::string percent_cell(std::optional<double> value) {
    return value ? fixed1(*value * 100.0) : "—";
}

std::string render_accuracy_table(const std::vector<std::pair<std::string, ScoreReport>> & rows) {
    const std::vector<std::string> header{"", "CFQA", "QA-C", "QA-T", "QA-S", "RC-C", "RC-T", "RC-S", "SRH"};
    std::vector<std::vector<std::string>> body;
    for (const auto & [label, r] : rows) {
        std::vector<std::string> row{label, percent_cell(r.task(TaskKind::CFQA).accuracy())};
        for (TaskKind t : {TaskKind::QA, TaskKind::RC}) {
            for (RelationKind rel : kAllRelations) {
                row.push_back(percent_cell(r.accuracy(t, rel)));
            }
        }
        row.push_back(percent_cell(r.srh));
        body.push_back(std::move(row));
    }
    return render_grid(header, body);
}

std::string render_report(const ScoreReport & report, ReportFormat format) {
    if (format == ReportFormat::Json) {
        return report_to_json(report).dump(2) + "\n";
    }

    std::ostringstream out;
    out << render_accuracy_table({{"accuracy (%)", report}});

    if (!report.rc.empty()) {
        out << "\nRC precision / recall / F1 (%, "
            << (report.averaging == Averaging::Macro ? "macro" : "weighted") << ")\n";
        std::vector<std::vector<std::string>> rows;
        for (const auto & [relation, m] : report.rc) {
            rows.push_back({std::string(to_string(relation)), fixed1(m.precision * 100.0), fixed1(m.recall * 100.0),
                            fixed1(m.f1 * 100.0)});
        }
        out << render_grid({"relation", "P", "R", "F1"}, rows);
    }

    if (report.bias.parseable + report.bias.unparseable > 0) {
        const BiasReport & b = report.bias;
        out << "\nQA answer breakdown (%, over " << b.parseable << " parseable answers)\n";
        out << render_grid({"", "correct", "vl_bias", "l_bias", "abstention"},
                           {{"rate", fixed1(b.correct_rate * 100.0), fixed1(b.vl_bias_rate * 100.0),
                             fixed1(b.l_bias_rate * 100.0), fixed1(b.abstention_rate * 100.0)}});
    }

    const Tally all = report.overall();
    out << "\noverall " << percent_cell(all.accuracy()) << "% over " << all.total << " samples; unparseable "
        << all.unparseable << ", missing " << all.missing;
    if (report.cfqa_other_abstention > 0) {
        out << "; cfqa second-abstention answers " << report.cfqa_other_abstention;
    }
    out << "\n";
    return out.str();
}

std::string render_report(const ScoreReport & report, std::string_view format) {
    return render_report(report, parse_report_format(format));
}

} // namespace verhallu
