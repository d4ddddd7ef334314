#include "doctest.h"

#include "verhallu/dataset.hpp"
#include "verhallu/scoring.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace verhallu;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "verhallu_test_cli";

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path & path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run cli(const std::string & args) {
    fs::create_directories(kWork);
    const auto out = kWork / "stdout.txt";
    const auto err = kWork / "stderr.txt";
    const std::string cmd = std::string("\"") + VERHALLU_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string p(const std::string & name) { return (kWork / name).string(); }

} // namespace

TEST_CASE("usage errors exit 2 and help exits 0") {
    CHECK(cli("").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("validate").code == 2);
    CHECK(cli("eval --dataset x.jsonl --out y.jsonl --provider psychic").code == 2);
    CHECK(cli("--help").code == 0);
    CHECK(cli("sweep --help").code == 0);
}

TEST_CASE("gen, validate, eval, score") {
    REQUIRE(cli("gen --out " + p("ds.jsonl") + " --qa 3 --rc 6 --videos 4 --seed 2").code == 0);
    const auto v = cli("validate --dataset " + p("ds.jsonl"));
    CHECK(v.code == 0);
    CHECK(v.out.find("total 36 samples from 4 videos") != std::string::npos);
    CHECK(load_dataset(p("ds.jsonl")).size() == 36);

    const auto official = cli("validate --dataset " + p("ds.jsonl") + " --check-official");
    CHECK(official.code == 1);
    CHECK(official.out.find("7676") != std::string::npos);

    REQUIRE(cli("eval --dataset " + p("ds.jsonl") + " --provider random --seed 4 --out " + p("pred.jsonl")).code == 0);
    const auto s = cli("score --dataset " + p("ds.jsonl") + " --predictions " + p("pred.jsonl") + " --format json");
    REQUIRE(s.code == 0);
    const auto report = report_from_json(nlohmann::json::parse(s.out));
    CHECK(report.overall().total == 36);
    CHECK(report.overall().missing == 0);

    REQUIRE(cli("eval --dataset " + p("ds.jsonl") + " --provider external --predictions " + p("pred.jsonl") +
                " --out " + p("replay.jsonl"))
                .code == 0);
    CHECK(read_predictions(p("replay.jsonl")) == read_predictions(p("pred.jsonl")));
}

TEST_CASE("validate reports a bad line with exit 1") {
    REQUIRE(cli("gen --out " + p("ok.jsonl") + " --qa 1 --rc 3 --videos 1").code == 0);
    std::string content = slurp(p("ok.jsonl"));
    content += "{\"id\": \"broken\"}\n";
    std::ofstream(p("bad.jsonl"), std::ios::binary) << content;
    const auto r = cli("validate --dataset " + p("bad.jsonl"));
    CHECK(r.code == 1);
    const auto lines = std::count(content.begin(), content.end(), '\n');
    CHECK(r.err.find("bad.jsonl:" + std::to_string(lines) + ":") != std::string::npos);
}

TEST_CASE("orphan prediction ids fail scoring with exit 1") {
    REQUIRE(cli("gen --out " + p("orph.jsonl") + " --qa 1 --rc 3 --videos 1").code == 0);
    std::ofstream(p("orph_pred.jsonl")) << R"({"sample_id":"not-in-dataset","raw_text":"1"})" << "\n";
    const auto r = cli("score --dataset " + p("orph.jsonl") + " --predictions " + p("orph_pred.jsonl"));
    CHECK(r.code == 1);
    CHECK(r.err.find("not-in-dataset") != std::string::npos);
}

TEST_CASE("prompts are byte-identical to the golden files") {
    const fs::path golden = VERHALLU_GOLDEN_DIR;
    REQUIRE(cli("prompts --dataset \"" + (golden / "samples.jsonl").string() + "\" --out " + p("prompts.jsonl")).code ==
            0);
    std::ifstream in(p("prompts.jsonl"));
    const char * names[] = {"rc_causal.txt", "rc_temporal.txt", "rc_subevent.txt", "qa.txt"};
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
        REQUIRE(i < 4);
        const auto record = nlohmann::json::parse(line);
        CHECK(record.at("prompt").get<std::string>() == slurp(golden / names[i]));
        ++i;
    }
    CHECK(i == 4);
}

TEST_CASE("toy eval with the intervention and a small sweep") {
    REQUIRE(cli("gen --out " + p("toy.jsonl") + " --qa 1 --rc 3 --videos 2").code == 0);
    REQUIRE(cli("eval --dataset " + p("toy.jsonl") + " --provider toy --kfp --beta 0.6 --layers 8..15 --out " +
                p("toy_pred.jsonl"))
                .code == 0);
    CHECK(read_predictions(p("toy_pred.jsonl")).size() == 15);

    const auto sweep = cli("sweep --dataset " + p("toy.jsonl") + " --axis beta --format json");
    REQUIRE(sweep.code == 0);
    const auto doc = nlohmann::json::parse(sweep.out);
    CHECK(doc["rows"].size() == 6);

    CHECK(cli("eval --dataset " + p("toy.jsonl") + " --provider toy --kfp --beta 1.5 --out " + p("x.jsonl")).code ==
          2);
}
