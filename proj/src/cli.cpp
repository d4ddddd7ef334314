#include "verhallu/errors.hpp"
#include "verhallu/harness.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace verhallu::harness {

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct KfpFlags {
    bool enabled = false;
    kfp::KfpConfig cfg;
    std::string layers = "8..15";

    void add_to(CLI::App * app, bool with_switch) {
        if (with_switch) {
            app->add_flag("--kfp", enabled, "Enable the key-frame intervention");
        }
        app->add_option("--k", cfg.k, "Key frames per layer")->capture_default_str();
        app->add_option("--m", cfg.m, "Window width in frames")->capture_default_str();
        app->add_option("--sigma", cfg.sigma, "Gaussian spread")->capture_default_str();
        app->add_option("--beta", cfg.beta, "Blend weight of the original hidden state")->capture_default_str();
        app->add_option("--layers", layers, "Intervened layers, LO..HI")->capture_default_str();
    }

    kfp::KfpConfig resolve() const {
        kfp::KfpConfig out = cfg;
        const LayerRange r = parse_layer_range(layers);
        out.layer_lo = r.lo;
        out.layer_hi = r.hi;
        out.validate();
        return out;
    }
};

struct ToyFlags {
    std::string ranking_query = "final";
    std::string ranking_head = "mean";
    std::size_t max_text_tokens = 24;

    void add_to(CLI::App * app) {
        app->add_option("--ranking-query", ranking_query, "Attention rows used to rank frames")
            ->check(CLI::IsMember({"final", "mean"}))
            ->capture_default_str();
        app->add_option("--ranking-head", ranking_head, "Head aggregation used to rank frames")
            ->check(CLI::IsMember({"mean", "max"}))
            ->capture_default_str();
        app->add_option("--max-text-tokens", max_text_tokens, "Text tokens fed to the toy model")
            ->capture_default_str();
    }

    ToyProviderConfig resolve(uint64_t seed, std::optional<kfp::KfpConfig> kfp) const {
        ToyProviderConfig cfg;
        cfg.model.seed = seed;
        cfg.kfp = kfp;
        cfg.max_text_tokens = max_text_tokens;
        cfg.ranking.query = ranking_query == "mean" ? toy::QueryAggregation::MeanText : toy::QueryAggregation::FinalText;
        cfg.ranking.head = ranking_head == "max" ? toy::HeadAggregation::Max : toy::HeadAggregation::Mean;
        return cfg;
    }
};

std::string read_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InvalidInput("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string & path, const std::string & text, std::ostream & fallback) {
    if (path.empty() || path == "-") {
        fallback << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InvalidInput("cannot write " + path);
    }
    out << text;
}

std::string stats_table(const DatasetStats & stats) {
    std::ostringstream out;
    out << "task  relation  label        count\n";
    out << "----------------------------------\n";
    char buf[128];
    for (const auto & [key, count] : stats.counts) {
        std::snprintf(buf, sizeof buf, "%-5s %-9s %-12s %5zu\n", std::string(to_string(key.task)).c_str(),
                      std::string(to_string(key.relation)).c_str(), key.label.empty() ? "-" : key.label.c_str(),
                      count);
        out << buf;
    }
    out << "total " << stats.total << " samples from " << stats.videos << " videos\n";
    return out.str();
}

json stats_json(const DatasetStats & stats) {
    json counts = json::array();
    for (const auto & [key, count] : stats.counts) {
        counts.push_back({{"task", to_string(key.task)},
                          {"relation", to_string(key.relation)},
                          {"label", key.label},
                          {"count", count}});
    }
    return {{"counts", std::move(counts)}, {"total", stats.total}, {"videos", stats.videos}};
}

std::string official_table(const OfficialStatsReport & report) {
    std::ostringstream out;
    out << "field                       expected   actual    delta\n";
    out << "------------------------------------------------------\n";
    char buf[128];
    for (const auto & c : report.checks) {
        std::snprintf(buf, sizeof buf, "%-26s %9lld %8lld %+8lld%s\n", c.field.c_str(), c.expected, c.actual,
                      c.delta(), c.ok() ? "" : "  MISMATCH");
        out << buf;
    }
    out << (report.passed() ? "official counts: PASS\n"
                            : "official counts: FAIL (" + std::to_string(report.mismatches().size()) +
                                  " mismatched fields)\n");
    return out.str();
}

// Appends "--key=value" for every config entry the chosen subcommand knows
// and the command line did not already set.
void inject_config(CLI::App & app, std::vector<std::string> & args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        }
    }
    if (path.empty()) {
        return;
    }
    const auto it = std::find_if(args.begin(), args.end(), [](const std::string & a) { return a.rfind('-', 0) != 0; });
    if (it == args.end()) {
        return;
    }
    CLI::App * sub = nullptr;
    try {
        sub = app.get_subcommand(*it);
    } catch (const CLI::OptionNotFound &) {
        return;
    }
    for (const auto & [key, value] : parse_config_text(read_file(path))) {
        const std::string flag = "--" + key;
        if (key == "config" || sub->get_option_no_throw(flag) == nullptr) {
            continue;
        }
        const bool given = std::any_of(args.begin(), args.end(), [&](const std::string & a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
        if (!given) {
            args.push_back(flag + "=" + value);
        }
    }
}

} // namespace

int run_cli(std::vector<std::string> args, std::ostream & out, std::ostream & err) {
    CLI::App app{"Event-relation hallucination benchmark harness with key-frame propagation"};
    app.require_subcommand(1);

    std::string config_path;
    auto add_config = [&](CLI::App * sub) {
        sub->add_option("--config", config_path, "key = value file; command-line flags take precedence");
    };

    // gen
    auto * gen = app.add_subcommand("gen", "Write a synthetic dataset");
    std::string gen_out;
    std::string gen_preset = "balanced";
    uint64_t gen_seed = 0;
    std::size_t gen_qa = 10;
    std::size_t gen_rc = 30;
    std::size_t gen_videos = 16;
    gen->add_option("--out", gen_out, "Output JSON Lines path")->required();
    gen->add_option("--preset", gen_preset, "balanced or published")
        ->check(CLI::IsMember({"balanced", "published"}))
        ->capture_default_str();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--qa", gen_qa, "QA and CFQA samples per relation (balanced)")->capture_default_str();
    gen->add_option("--rc", gen_rc, "RC samples per relation (balanced)")->capture_default_str();
    gen->add_option("--videos", gen_videos, "Distinct video refs (balanced)")->capture_default_str();
    add_config(gen);

    // validate
    auto * validate = app.add_subcommand("validate", "Load and validate a dataset");
    std::string dataset_path;
    bool check_official = false;
    std::string format = "table";
    validate->add_option("--dataset", dataset_path, "Dataset JSON Lines")->required();
    validate->add_flag("--check-official", check_official, "Compare against the published counts");
    validate->add_option("--format", format, "table or json")->capture_default_str();
    add_config(validate);

    // prompts
    auto * prompts = app.add_subcommand("prompts", "Dump the prompt of every sample");
    std::string out_path;
    uint64_t seed = 0;
    bool shuffle = false;
    prompts->add_option("--dataset", dataset_path, "Dataset JSON Lines")->required();
    prompts->add_option("--out", out_path, "Output path, stdout when omitted");
    prompts->add_flag("--shuffle-candidates", shuffle, "Shuffle QA/CFQA candidates with --seed");
    prompts->add_option("--seed", seed, "Shuffle seed")->capture_default_str();
    add_config(prompts);

    // eval
    auto * eval = app.add_subcommand("eval", "Query an answer provider for every sample");
    std::string provider_name = "random";
    std::string predictions_path;
    std::string model_name;
    int workers = 1;
    bool record_latency = false;
    KfpFlags eval_kfp;
    ToyFlags eval_toy;
    eval->add_option("--dataset", dataset_path, "Dataset JSON Lines")->required();
    eval->add_option("--provider", provider_name, "toy, random, file or external")
        ->check(CLI::IsMember({"toy", "random", "file", "external"}))
        ->capture_default_str();
    eval->add_option("--predictions", predictions_path, "Answers to replay (file and external providers)");
    eval->add_option("--out", out_path, "Predictions output path")->required();
    eval->add_option("--seed", seed, "Provider and model seed")->capture_default_str();
    eval->add_flag("--shuffle-candidates", shuffle, "Shuffle QA/CFQA candidates with --seed");
    eval->add_option("--workers", workers, "Samples evaluated concurrently")->capture_default_str();
    eval->add_flag("--record-latency", record_latency, "Write per-sample latency_ms into the predictions");
    eval->add_option("--model-name", model_name, "model_name recorded with each prediction");
    eval_kfp.add_to(eval, true);
    eval_toy.add_to(eval);
    add_config(eval);

    // score
    auto * score_cmd = app.add_subcommand("score", "Score a predictions file");
    std::string report_out;
    bool weighted = false;
    bool accept_any_abstention = false;
    score_cmd->add_option("--dataset", dataset_path, "Dataset JSON Lines")->required();
    score_cmd->add_option("--predictions", predictions_path, "Predictions JSON Lines")->required();
    score_cmd->add_option("--format", format, "table or json")->capture_default_str();
    score_cmd->add_option("--report-out", report_out, "Also write the structured report here");
    score_cmd->add_flag("--weighted", weighted, "Support-weighted instead of macro P/R/F1");
    score_cmd->add_flag("--cfqa-accept-any-abstention", accept_any_abstention,
                        "Count either abstention candidate as correct on CFQA");
    add_config(score_cmd);

    // sweep
    auto * sweep = app.add_subcommand("sweep", "Ablation sweep with the toy model");
    std::string axis_name;
    std::string values;
    KfpFlags sweep_kfp;
    ToyFlags sweep_toy;
    sweep->add_option("--dataset", dataset_path, "Dataset JSON Lines")->required();
    sweep->add_option("--axis", axis_name, "m, beta, layers or all")
        ->check(CLI::IsMember({"m", "beta", "layers", "layer_range", "all"}))
        ->required();
    sweep->add_option("--values", values, "Comma-separated values overriding the defaults");
    sweep->add_option("--seed", seed, "Model seed")->capture_default_str();
    sweep->add_option("--format", format, "table or json")->capture_default_str();
    sweep->add_option("--workers", workers, "Samples evaluated concurrently")->capture_default_str();
    sweep->add_option("--out", out_path, "Write the sweep report here instead of stdout");
    sweep_kfp.add_to(sweep, false);
    sweep_toy.add_to(sweep);
    add_config(sweep);

    try {
        inject_config(app, args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError & e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidConfig & e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidInput & e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*gen) {
            const SyntheticSpec spec =
                gen_preset == "published" ? SyntheticSpec::published() : SyntheticSpec::balanced(gen_qa, gen_rc, gen_videos);
            const auto samples = generate_synthetic(spec, gen_seed);
            write_dataset(gen_out, samples);
            err << "wrote " << samples.size() << " samples to " << gen_out << "\n";
            return kExitOk;
        }

        if (*validate) {
            const ReportFormat fmt = parse_report_format(format);
            const DatasetLoad load = load_dataset_checked(dataset_path);
            for (const auto & w : load.warnings) {
                err << "warning: " << w << "\n";
            }
            for (const auto & d : load.errors) {
                err << dataset_path << ":" << d.line << ": " << d.message << "\n";
            }
            const DatasetStats stats = compute_stats(load.samples);
            std::optional<OfficialStatsReport> official;
            if (check_official) {
                official = validate_official_stats(stats);
            }
            if (fmt == ReportFormat::Json) {
                json j = stats_json(stats);
                j["errors"] = load.errors.size();
                if (official) {
                    json checks = json::array();
                    for (const auto & c : official->checks) {
                        checks.push_back({{"field", c.field}, {"expected", c.expected}, {"actual", c.actual},
                                          {"delta", c.delta()}});
                    }
                    j["official"] = {{"passed", official->passed()}, {"checks", std::move(checks)}};
                }
                out << j.dump(2) << "\n";
            } else {
                out << stats_table(stats);
                if (official) {
                    out << "\n" << official_table(*official);
                }
            }
            const bool ok = load.errors.empty() && (!official || official->passed());
            return ok ? kExitOk : kExitFailure;
        }

        if (*prompts) {
            const auto samples = load_dataset(dataset_path);
            std::string dump;
            for (const auto & s : samples) {
                const Sample shown = (shuffle && s.task != TaskKind::RC) ? shuffle_candidates(s, seed) : s;
                dump += json{{"sample_id", s.id}, {"prompt", build_prompt(shown)}}.dump();
                dump += '\n';
            }
            write_text(out_path, dump, out);
            return kExitOk;
        }

        if (*eval) {
            const auto samples = load_dataset(dataset_path);
            std::optional<kfp::KfpConfig> kfp_cfg;
            if (eval_kfp.enabled) {
                kfp_cfg = eval_kfp.resolve();
            }
            std::unique_ptr<AnswerProvider> provider;
            if (provider_name == "toy") {
                provider = std::make_unique<ToyProvider>(eval_toy.resolve(seed, kfp_cfg));
            } else if (provider_name == "random") {
                provider = std::make_unique<RandomProvider>(seed);
            } else {
                if (predictions_path.empty()) {
                    err << "error: --provider " << provider_name << " needs --predictions\n";
                    return kExitUsage;
                }
                provider = std::make_unique<ReplayProvider>(ReplayProvider::from_file(predictions_path, provider_name));
            }
            if (kfp_cfg && provider_name != "toy") {
                err << "warning: --kfp only affects the toy provider\n";
            }

            EvalOptions opts;
            opts.workers = workers;
            opts.record_latency = record_latency;
            if (shuffle) {
                opts.shuffle_seed = seed;
            }
            if (!model_name.empty()) {
                opts.model_name = model_name;
            }
            const EvalResult result = evaluate(samples, *provider, opts);
            write_predictions(out_path, result.predictions);
            char buf[160];
            std::snprintf(buf, sizeof buf, "%zu samples, %zu provider failures, %.3f s, %.1f samples/s (harness throughput)\n",
                          result.predictions.size(), result.failures, result.wall_seconds,
                          result.samples_per_second());
            err << provider->name() << ": " << buf;
            return kExitOk;
        }

        if (*score_cmd) {
            const ReportFormat fmt = parse_report_format(format);
            const auto samples = load_dataset(dataset_path);
            const auto preds = read_predictions(predictions_path);
            ScoreOptions opts;
            opts.averaging = weighted ? Averaging::Weighted : Averaging::Macro;
            opts.cfqa_accept_any_abstention = accept_any_abstention;
            ScoreReport report;
            try {
                report = score(samples, preds, opts);
            } catch (const ValidationError & e) {
                err << "error: " << e.what() << "\n";
                for (const auto & id : e.ids()) {
                    err << "  " << id << "\n";
                }
                return kExitFailure;
            }
            out << render_report(report, fmt);
            if (!report_out.empty()) {
                write_text(report_out, render_report(report, ReportFormat::Json), out);
            }
            return kExitOk;
        }

        if (*sweep) {
            const ReportFormat fmt = parse_report_format(format);
            const auto samples = load_dataset(dataset_path);
            kfp::KfpConfig fixed = sweep_kfp.resolve();
            std::vector<SweepAxis> axes;
            if (axis_name == "all") {
                axes = {SweepAxis::M, SweepAxis::Beta, SweepAxis::Layers};
            } else {
                axes = {parse_sweep_axis(axis_name)};
            }
            if (!values.empty() && axes.size() != 1) {
                err << "error: --values needs a single --axis\n";
                return kExitUsage;
            }
            EvalOptions opts;
            opts.workers = workers;
            std::string text;
            // several axes in json form one array document
            nlohmann::json docs = nlohmann::json::array();
            for (SweepAxis axis : axes) {
                SweepSpec spec = SweepSpec::defaults(axis, fixed);
                if (!values.empty()) {
                    spec.values.clear();
                    spec.ranges.clear();
                    std::stringstream ss(values);
                    std::string item;
                    while (std::getline(ss, item, ',')) {
                        if (axis == SweepAxis::Layers) {
                            spec.ranges.push_back(parse_layer_range(item));
                        } else {
                            spec.values.push_back(std::stod(item));
                        }
                    }
                }
                const SweepResult result = run_sweep(samples, spec, sweep_toy.resolve(seed, std::nullopt), opts);
                if (fmt == ReportFormat::Json) {
                    docs.push_back(sweep_to_json(result));
                } else {
                    text += render_sweep(result, fmt) + "\n";
                }
            }
            if (fmt == ReportFormat::Json) {
                text = (docs.size() == 1 ? docs[0] : docs).dump(2) + "\n";
            }
            write_text(out_path, text, out);
            return kExitOk;
        }
    } catch (const InvalidConfig & e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument & e) {
        // InvalidInput and numeric conversion failures
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError & e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const ParseError & e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception & e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace verhallu::harness
