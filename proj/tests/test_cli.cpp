// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedpara/cli.hpp"

using namespace fedpara;
namespace fs = std::filesystem;

namespace {

const std::string source_dir = FEDPARA_SOURCE_DIR;

struct Invocation {
    int code = 0;
    std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "fedpara");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Invocation r;
    r.code = cli::run(int(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("fedpara-cli-" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
        unsetenv(cli::output_dir_env);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(path / name) << text;
        return path / name;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string minimal() { return source_dir + "/configs/minimal.json"; }

const char* const minimal_text = R"({
  "schema_version": 1,
  "seed": 3,
  "dataset": {"type": "synthetic", "classes": 3, "per_class": 20, "dim": 4, "spread": 0.5, "test_per_class": 5},
  "model": {"scheme": "fedpara", "layers": [{"type": "fc", "out": 8}, {"type": "fc", "out": 3}]},
  "federation": {"clients": 3, "sampled": 2, "rounds": 2, "batch": 5, "lr": 0.1}
}
)";

}  // namespace

TEST_CASE("param-count reproduces the reference table") {
    const Invocation r = invoke({"param-count", "--csv"});
    REQUIRE(r.code == 0);
    const auto rows = lines(r.out);
    const std::vector<std::string> expect = {"scheme,count,max_rank",
                                             "fc/original,65536,256",
                                             "fc/lowrank,16384,32",
                                             "fc/fedpara,16384,256",
                                             "conv/original,589824,256",
                                             "conv/lowrank,20992,32",
                                             "conv/fedpara_reshape,81920,256",
                                             "conv/fedpara,20992,256"};
    CHECK(rows == expect);
    CHECK(invoke({"param-count", "-R", "0"}).code == cli::ConfigFailure);
    CHECK(invoke({"param-count", "-R", "4", "-m", "7", "-n", "9", "--schemes", "original", "--csv"}).out ==
          "scheme,count,max_rank\nfc/original,63,7\nconv/original,589824,256\n");
}

TEST_CASE("param-count table helper") {
    const auto rows = cli::param_count_table(LayerShape::fc(10, 20), LayerShape::conv(8, 8, 3, 3), 2,
                                             {Scheme::PFedPara});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].label() == "fc/pfedpara");
    CHECK(rows[0].count == 2u * 2 * (10 + 20));
    CHECK_THROWS(cli::param_count_table(LayerShape::fc(10, 20), LayerShape::conv(8, 8, 3, 3), 0));
}

TEST_CASE("rank-verify histogram") {
    const auto h = cli::rank_verify(20, 20, 5, 50, 1);
    CHECK(h.full_rank_fraction() == 1.0);
    CHECK(h.counts[20] == 50);
    const auto ones = cli::rank_verify(12, 9, 1, 20, 2);
    CHECK(ones.counts[1] == 20);
    CHECK(cli::rank_verify(12, 9, 2, 20, 5).counts == cli::rank_verify(12, 9, 2, 20, 5).counts);
    CHECK_THROWS_AS(cli::rank_verify(5, 5, 6, 1, 0), DomainError);

    const Invocation r = invoke({"rank-verify", "-m", "10", "-n", "10", "-r", "4", "--trials", "5", "--csv"});
    CHECK(r.code == 0);
    CHECK(r.out == "rank,count\n10,5\n");
    CHECK(invoke({"rank-verify", "-m", "4", "-n", "4", "-r", "9"}).code == cli::ConfigFailure);
    CHECK(invoke({"rank-verify", "-m", "0", "-n", "4", "-r", "1"}).code == cli::ConfigFailure);
}

TEST_CASE("usage errors") {
    CHECK(invoke({}).code != 0);
    CHECK(invoke({"bogus"}).code == cli::ConfigFailure);
    CHECK(invoke({"--help"}).code == 0);
    CHECK(invoke({"train"}).code == cli::ConfigFailure);
}

TEST_CASE("config errors name the file and location") {
    TempDir tmp("errors");
    const auto broken = tmp.write("broken.json", "{\n  \"schema_version\": 1,\n  \"seed\": ,\n}\n");
    Invocation r = invoke({"train", broken.string()});
    CHECK(r.code == cli::ConfigFailure);
    CHECK(r.err.find(broken.string() + ":3:") != std::string::npos);

    std::string text = minimal_text;
    text.replace(text.find("\"lr\""), 4, "\"learning_rate\"");
    const auto unknown = tmp.write("unknown.json", text);
    r = invoke({"train", unknown.string()});
    CHECK(r.code == cli::ConfigFailure);
    CHECK(r.err.find(unknown.string() + ":/federation/learning_rate") != std::string::npos);

    text = minimal_text;
    text.replace(text.find("\"schema_version\": 1"), 19, "\"schema_version\": 7");
    r = invoke({"cost", tmp.write("version.json", text).string()});
    CHECK(r.code == cli::ConfigFailure);
    CHECK(r.err.find("schema_version") != std::string::npos);

    r = invoke({"train", (tmp.path / "missing.json").string()});
    CHECK(r.code == cli::ConfigFailure);
    CHECK(invoke({"train", minimal(), "--sampled", "9"}).code == cli::ConfigFailure);
}

TEST_CASE("config parser rejects bad values with JSON pointers") {
    CHECK_THROWS_AS(parse_config("[]"), ConfigError);
    try {
        parse_config(R"({"schema_version": 1, "model": {"input": [4], "layers": [{"type": "fc", "out": 0}]}})", "inline");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.location().find("inline") == 0);
        CHECK(std::string(e.what()).find("/model/layers/0") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "model": {"layers": [{"type": "fc", "out": 3}]},
                                      "federation": {"algorithm": "pfedpara"}})"),
                    ConfigError);
}

TEST_CASE("train writes a one-row CSV for a single round") {
    TempDir tmp("train");
    const Invocation r = invoke({"train", minimal(), "--output", tmp.path.string()});
    REQUIRE(r.code == 0);
    const auto rows = lines(slurp(tmp.path / "rounds.csv"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == "round,accuracy,loss,up_bytes,down_bytes,sim_seconds,sim_joules");
    CHECK(rows[1].rfind("1,", 0) == 0);

    const auto summary = nlohmann::json::parse(slurp(tmp.path / "summary.json"));
    CHECK(summary["schema_version"] == cli::summary_json_version);
    CHECK(summary["rounds_csv_version"] == cli::rounds_csv_version);
    CHECK(summary["code_version"] == cli::code_version());
    CHECK(summary["rounds"] == 1);
    CHECK(summary["config"]["seed"] == 1);
    for (const char* key : {"final_accuracy", "final_loss", "model_parameters", "transmitted_parameters",
                            "total_up_bytes", "total_down_bytes", "total_sim_seconds", "initial_broadcast_bytes"})
        CHECK(summary.contains(key));
}

TEST_CASE("summary and CSV golden layout") {
    RunResult result;
    RoundReport row;
    row.round = 1;
    row.accuracy = 0.5;
    row.loss = 1.25;
    row.up_bytes = 100;
    row.down_bytes = 200;
    row.sim_seconds = 0.1;
    row.sim_joules = 0.0;
    result.rounds = {row};
    CHECK(cli::rounds_csv(result) ==
          "round,accuracy,loss,up_bytes,down_bytes,sim_seconds,sim_joules\n1,0.5,1.25,100,200,0.1,0\n");
    CHECK(cli::rounds_csv(RunResult{}) == "round,accuracy,loss,up_bytes,down_bytes,sim_seconds,sim_joules\n");
}

TEST_CASE("reruns are byte identical across thread counts") {
    TempDir tmp("replay");
    const auto config = tmp.write("run.json", minimal_text);
    std::vector<std::string> csvs;
    for (const char* threads : {"1", "2", "3", "1"}) {
        const fs::path dir = tmp.path / (std::string("t") + threads + std::to_string(csvs.size()));
        REQUIRE(invoke({"train", config.string(), "--threads", threads, "--output", dir.string()}).code == 0);
        csvs.push_back(slurp(dir / "rounds.csv"));
    }
    for (const auto& c : csvs) CHECK(c == csvs.front());
    CHECK(lines(csvs.front()).size() == 3);

    const fs::path other = tmp.path / "seed";
    REQUIRE(invoke({"train", config.string(), "--seed", "4", "--output", other.string()}).code == 0);
    CHECK(slurp(other / "rounds.csv") != csvs.front());
}

TEST_CASE("output directory environment override") {
    TempDir tmp("env");
    const fs::path from_flag = tmp.path / "flag", from_env = tmp.path / "env";
    setenv(cli::output_dir_env, from_env.c_str(), 1);
    const Invocation r = invoke({"train", minimal(), "--output", from_flag.string()});
    unsetenv(cli::output_dir_env);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(from_env / "rounds.csv"));
    CHECK_FALSE(fs::exists(from_flag));
}

TEST_CASE("personalized training reports per-client accuracy") {
    TempDir tmp("personal");
    const Invocation r = invoke({"train", source_dir + "/configs/personalization.json", "--rounds", "2", "--epochs",
                                 "1", "--output", tmp.path.string()});
    REQUIRE(r.code == 0);
    const auto summary = nlohmann::json::parse(slurp(tmp.path / "summary.json"));
    REQUIRE(summary["final_client_accuracy"].is_array());
    CHECK(summary["final_client_accuracy"].size() == 10);
    for (const auto& a : summary["final_client_accuracy"]) CHECK((a.get<double>() >= 0.0 && a.get<double>() <= 1.0));
    CHECK(summary["algorithm"] == "pfedpara");
    CHECK(summary["initial_broadcast_bytes"].get<std::uint64_t>() > 0);
}

TEST_CASE("divergence exits with code 3") {
    TempDir tmp("diverge");
    const Invocation r =
        invoke({"train", minimal(), "--lr", "1e12", "--rounds", "3", "--output", tmp.path.string()});
    CHECK(r.code == cli::Diverged);
    CHECK(r.err.find("diverg") != std::string::npos);
}

TEST_CASE("cost projection") {
    const std::string vgg = source_dir + "/configs/vgg16_cifar10_shapes.json";
    auto bytes = [&](std::vector<std::string> extra) {
        std::vector<std::string> args = {"cost", vgg, "--json"};
        args.insert(args.end(), extra.begin(), extra.end());
        const Invocation r = invoke(args);
        REQUIRE(r.code == 0);
        return std::stod(nlohmann::json::parse(r.out)["total_bytes"].get<std::string>());
    };
    CHECK(bytes({"--rounds", "0"}) == 0.0);
    CHECK(bytes({"--rounds", "400"}) == 2.0 * bytes({"--rounds", "200"}));
    const double ratio = bytes({"--scheme", "fedpara", "--gamma", "0.1"}) / bytes({});
    CHECK(ratio == doctest::Approx(1.55 / 15.25).epsilon(0.01));

    const auto report = cli::project_cost(load_config(vgg));
    CHECK(report.model_parameters == 15253578);
    CHECK(report.participants == 16);
    CHECK(report.rounds == 200);
    CHECK(report.total_bytes == total_comm_cost(16, report.up_bytes_per_client + report.down_bytes_per_client, 200));

    const Invocation text = invoke({"cost", vgg});
    CHECK(text.code == 0);
    CHECK(text.out.find("model parameters") != std::string::npos);
}
