// SPDX-License-Identifier: Apache-2.0

#include "fedpara/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fedpara/rng.hpp"

#ifndef FEDPARA_VERSION
#define FEDPARA_VERSION "0.0.0"
#endif

namespace fedpara::cli {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << content;
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

const char* kind_name(LayerKind k) { return k == LayerKind::FC ? "fc" : "conv"; }

bool applies(LayerKind kind, Scheme scheme) {
    if (kind == LayerKind::FC) return scheme != Scheme::FedParaReshape;
    return scheme != Scheme::PFedPara;
}

}  // namespace

std::string code_version() { return FEDPARA_VERSION; }

double RankHistogram::full_rank_fraction() const {
    if (trials == 0) return 0.0;
    const std::size_t full = full_rank();
    return full < counts.size() ? double(counts[full]) / double(trials) : 0.0;
}

RankHistogram rank_verify(std::size_t m, std::size_t n, std::size_t r, std::size_t trials, std::uint64_t seed) {
    if (m == 0 || n == 0) throw DomainError("matrix dimensions must be positive");
    if (r == 0 || r > std::min(m, n)) throw DomainError("inner rank must lie in [1, min(m, n)]");
    RankHistogram h{m, n, r, trials, std::vector<std::size_t>(std::min(m, n) + 1, 0)};
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(seed, "rank-verify", t);
        auto gaussian = [&](std::size_t rows) {
            Tensor x({rows, r});
            for (auto& v : x.data()) v = rng.normal();
            return x;
        };
        FedParaMatrixWeight w;
        w.x1 = gaussian(m);
        w.y1 = gaussian(n);
        w.x2 = gaussian(m);
        w.y2 = gaussian(n);
        ++h.counts[numerical_rank(compose_matrix(w))];
    }
    return h;
}

std::string ParamRow::label() const { return std::string(kind_name(kind)) + "/" + to_string(scheme); }

std::vector<ParamRow> param_count_table(const LayerShape& fc, const LayerShape& conv, std::size_t rank,
                                        const std::vector<Scheme>& schemes) {
    if (rank == 0) throw DomainError("inner rank R must be >= 1");
    std::vector<Scheme> chosen = schemes;
    if (chosen.empty()) {
        chosen = {Scheme::Original, Scheme::LowRank, Scheme::FedParaReshape, Scheme::FedPara};
    }
    std::vector<ParamRow> rows;
    for (const LayerShape& shape : {fc, conv}) {
        for (Scheme s : chosen) {
            if (!applies(shape.kind, s)) continue;
            rows.push_back({shape.kind, s, param_count(s, shape, rank), max_rank(s, shape, rank)});
        }
    }
    return rows;
}

std::string param_count_csv(const std::vector<ParamRow>& rows) {
    std::string out = "scheme,count,max_rank\n";
    for (const auto& r : rows) out += r.label() + "," + std::to_string(r.count) + "," + std::to_string(r.max_rank) + "\n";
    return out;
}

std::string rounds_csv(const RunResult& result) {
    std::string out = "round,accuracy,loss,up_bytes,down_bytes,sim_seconds,sim_joules\n";
    for (const auto& r : result.rounds) {
        out += std::to_string(r.round) + "," + fmt(r.accuracy) + "," + fmt(r.loss) + "," + std::to_string(r.up_bytes) +
               "," + std::to_string(r.down_bytes) + "," + fmt(r.sim_seconds) + "," + fmt(r.sim_joules) + "\n";
    }
    return out;
}

json summary_json(const ExperimentConfig& config, const RunResult& result) {
    std::uint64_t up = 0, down = 0;
    double seconds = 0.0, joules = 0.0;
    for (const auto& r : result.rounds) {
        up += r.up_bytes;
        down += r.down_bytes;
        seconds += r.sim_seconds;
        joules += r.sim_joules;
    }
    json j;
    j["schema_version"] = summary_json_version;
    j["rounds_csv_version"] = rounds_csv_version;
    j["code_version"] = code_version();
    j["algorithm"] = to_string(config.federation.algorithm);
    j["seed"] = config.seed;
    j["rounds"] = result.rounds.size();
    j["final_accuracy"] = result.final_accuracy;
    j["final_global_accuracy"] = result.final_global_accuracy;
    j["final_loss"] = result.rounds.empty() ? 0.0 : result.rounds.back().loss;
    j["final_client_accuracy"] = result.final_client_accuracy;
    j["model_parameters"] = result.model_parameters;
    j["transmitted_parameters"] = transmitted_parameter_count(config.model, config.federation.algorithm);
    j["initial_broadcast_bytes"] = result.initial_broadcast_bytes;
    j["total_up_bytes"] = up;
    j["total_down_bytes"] = down;
    j["total_sim_seconds"] = seconds;
    j["total_sim_joules"] = joules;
    j["config"] = config.source;
    return j;
}

std::filesystem::path output_directory(const ExperimentConfig& config) {
    if (const char* env = std::getenv(output_dir_env); env && *env) return env;
    return config.output;
}

CostReport project_cost(const ExperimentConfig& config) {
    const auto& fed = config.federation;
    const auto& cost = config.cost;
    CostReport r;
    r.rounds = fed.rounds;
    r.participants = fed.sampled;
    r.model_parameters = spec_parameter_count(config.model);
    r.transmitted_parameters = transmitted_parameter_count(config.model, fed.algorithm);
    r.up_bytes_per_client = model_bytes(config.model, fed.algorithm, Direction::Up, cost);
    r.down_bytes_per_client = model_bytes(config.model, fed.algorithm, Direction::Down, cost);
    if (is_personalized(fed.algorithm) && fed.rounds > 0) {
        r.initial_broadcast_bytes = fed.clients * payload_bytes(r.model_parameters, cost.bits(Direction::Down));
    }
    r.total_bytes = total_comm_cost(fed.sampled, r.up_bytes_per_client + r.down_bytes_per_client, fed.rounds) +
                    r.initial_broadcast_bytes;
    if (fed.rounds > 0) {
        r.seconds = double(fed.rounds) * round_time(r.up_bytes_per_client, r.down_bytes_per_client, cost).total;
    }
    r.joules = energy(r.total_bytes, cost);
    return r;
}

json to_json(const CostReport& r) {
    json j;
    j["rounds"] = r.rounds;
    j["participants_per_round"] = r.participants;
    j["model_parameters"] = r.model_parameters;
    j["transmitted_parameters"] = r.transmitted_parameters;
    j["up_bytes_per_client"] = r.up_bytes_per_client;
    j["down_bytes_per_client"] = r.down_bytes_per_client;
    j["initial_broadcast_bytes"] = r.initial_broadcast_bytes;
    // Decimal string: the total can exceed 64 bits.
    j["total_bytes"] = to_string(r.total_bytes);
    j["total_megabytes"] = to_double(r.total_bytes) / 1e6;
    j["seconds"] = r.seconds;
    j["joules"] = r.joules;
    return j;
}

namespace {

// Command-line flags that mirror config fields; only given flags are merged.
struct Overrides {
    std::uint64_t seed = 0;
    std::size_t clients = 0, sampled = 0, rounds = 0, epochs = 0, batch = 0, threads = 0;
    double lr = 0, lambda = 0, gamma = 0;
    std::string algorithm, scheme, output;
    std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> setters;

    void attach(CLI::App* app) {
        auto add = [&](auto& field, const char* flag, const char* help, std::vector<std::string> pointer) {
            CLI::Option* opt = app->add_option(flag, field, help);
            setters.emplace_back(opt, [&field, pointer](json& patch) {
                json* at = &patch;
                for (const auto& key : pointer) at = &(*at)[key];
                *at = field;
            });
        };
        add(seed, "--seed", "Top-level seed", {"seed"});
        add(clients, "--clients", "Total clients K", {"federation", "clients"});
        add(sampled, "--sampled", "Clients sampled per round S", {"federation", "sampled"});
        add(rounds, "--rounds", "Communication rounds T", {"federation", "rounds"});
        add(epochs, "--epochs", "Local epochs E", {"federation", "epochs"});
        add(batch, "--batch", "Local minibatch size B", {"federation", "batch"});
        add(lr, "--lr", "Learning rate", {"federation", "lr"});
        add(threads, "--threads", "Client worker threads", {"federation", "threads"});
        add(algorithm, "--algorithm", "fedavg|fedpara|pfedpara|fedper|local", {"federation", "algorithm"});
        add(lambda, "--lambda", "Jacobian penalty weight", {"model", "lambda"});
        add(gamma, "--gamma", "Default rank mixing ratio", {"model", "gamma"});
        add(scheme, "--scheme", "Default layer scheme", {"model", "scheme"});
        add(output, "--output", "Output directory", {"output"});
    }

    json patch() const {
        json p = json::object();
        for (const auto& [opt, set] : setters) {
            if (opt->count() > 0) set(p);
        }
        // --sampled and a configured fraction are mutually exclusive.
        if (p.contains("federation") && p["federation"].contains("sampled")) p["federation"]["fraction"] = nullptr;
        return p;
    }
};

std::vector<Scheme> parse_scheme_list(const std::string& list) {
    std::vector<Scheme> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(scheme_from_string(item));
    }
    return out;
}

int cmd_rank_verify(std::size_t m, std::size_t n, std::size_t r, std::size_t trials, std::uint64_t seed, bool csv,
                    std::ostream& out) {
    const auto h = rank_verify(m, n, r, trials, seed);
    if (csv) {
        out << "rank,count\n";
        for (std::size_t k = 0; k < h.counts.size(); ++k) {
            if (h.counts[k]) out << k << "," << h.counts[k] << "\n";
        }
        return Success;
    }
    out << "rank histogram: m=" << m << " n=" << n << " r1=r2=" << r << " trials=" << trials << " seed=" << seed
        << "\n";
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        if (h.counts[k]) out << "  rank " << std::setw(5) << k << ": " << h.counts[k] << "\n";
    }
    out << "full_rank_fraction " << fmt(h.full_rank_fraction()) << "\n";
    return Success;
}

int cmd_param_count(const LayerShape& fc, const LayerShape& conv, std::size_t rank, const std::string& schemes,
                    bool csv, std::ostream& out) {
    const auto rows = param_count_table(fc, conv, rank, parse_scheme_list(schemes));
    if (csv) {
        out << param_count_csv(rows);
        return Success;
    }
    out << "FC " << to_string(fc) << ", conv " << to_string(conv) << ", R=" << rank << "\n";
    out << std::left << std::setw(22) << "scheme" << std::right << std::setw(14) << "count" << std::setw(10)
        << "max_rank" << "\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(22) << r.label() << std::right << std::setw(14) << r.count << std::setw(10)
            << r.max_rank << "\n";
    }
    return Success;
}

int cmd_train(const std::string& path, const Overrides& ov, std::ostream& out) {
    const ExperimentConfig config = load_config(path, ov.patch());
    const Experiment ex = build_experiment(config);
    const RunResult result = run(config.federation, config.model, ex.train, ex.partition,
                                 ex.test ? &*ex.test : nullptr, config.cost);
    const auto dir = output_directory(config);
    std::filesystem::create_directories(dir);
    write_file(dir / "rounds.csv", rounds_csv(result));
    write_file(dir / "summary.json", summary_json(config, result).dump(2) + "\n");
    out << "rounds " << result.rounds.size() << ", final accuracy " << fmt(result.final_accuracy) << ", wrote "
        << (dir / "rounds.csv").string() << " and " << (dir / "summary.json").string() << "\n";
    return Success;
}

int cmd_cost(const std::string& path, const Overrides& ov, bool as_json, std::ostream& out) {
    const ExperimentConfig config = load_config(path, ov.patch());
    const CostReport r = project_cost(config);
    if (as_json) {
        out << to_json(r).dump(2) << "\n";
        return Success;
    }
    out << "model parameters        " << r.model_parameters << "\n"
        << "transmitted parameters  " << r.transmitted_parameters << "\n"
        << "bytes per client/round  up " << r.up_bytes_per_client << ", down " << r.down_bytes_per_client << "\n"
        << "initial broadcast bytes " << r.initial_broadcast_bytes << "\n"
        << "total bytes             " << to_string(r.total_bytes) << " (" << fmt(to_double(r.total_bytes) / 1e6)
        << " MB)\n"
        << "simulated seconds       " << fmt(r.seconds) << "\n"
        << "energy joules           " << fmt(r.joules) << "\n";
    return Success;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"FedPara federated-learning simulator and parameterization auditor", "fedpara"};
    app.require_subcommand(1);
    app.set_version_flag("--version", code_version());

    auto* rv = app.add_subcommand("rank-verify", "Monte Carlo rank histogram of Hadamard-composed Gaussian factors");
    std::size_t rv_m = 100, rv_n = 100, rv_r = 10, rv_trials = 1000;
    std::uint64_t rv_seed = 0;
    bool rv_csv = false;
    rv->add_option("-m", rv_m, "Rows")->capture_default_str();
    rv->add_option("-n", rv_n, "Columns")->capture_default_str();
    rv->add_option("-r,--rank", rv_r, "Inner rank r1 = r2")->capture_default_str();
    rv->add_option("--trials", rv_trials, "Number of trials")->capture_default_str();
    rv->add_option("--seed", rv_seed, "Seed")->capture_default_str();
    rv->add_flag("--csv", rv_csv, "Print rank,count CSV only");

    auto* pc = app.add_subcommand("param-count", "Parameter counts and maximal ranks per scheme");
    std::size_t pc_m = 256, pc_n = 256, pc_o = 256, pc_i = 256, pc_k = 3, pc_rank = 16;
    std::string pc_schemes;
    bool pc_csv = false;
    pc->add_option("-m", pc_m, "FC output features")->capture_default_str();
    pc->add_option("-n", pc_n, "FC input features")->capture_default_str();
    pc->add_option("-O,--out-channels", pc_o, "Conv output channels")->capture_default_str();
    pc->add_option("-I,--in-channels", pc_i, "Conv input channels")->capture_default_str();
    pc->add_option("-K,--kernel", pc_k, "Conv kernel size K1 = K2")->capture_default_str();
    pc->add_option("-R,--rank", pc_rank, "Inner rank R")->capture_default_str();
    pc->add_option("--schemes", pc_schemes, "Comma-separated scheme subset");
    pc->add_flag("--csv", pc_csv, "Print scheme,count,max_rank CSV only");

    auto* tr = app.add_subcommand("train", "Run a federated training experiment");
    std::string tr_config;
    Overrides tr_ov;
    tr->add_option("config", tr_config, "Experiment config (JSON)")->required();
    tr_ov.attach(tr);

    auto* co = app.add_subcommand("cost", "Project communication bytes, wall clock and energy without training");
    std::string co_config;
    Overrides co_ov;
    bool co_json = false;
    co->add_option("config", co_config, "Experiment config (JSON)")->required();
    co->add_flag("--json", co_json, "Print the report as JSON");
    co_ov.attach(co);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? Success : ConfigFailure;
    }

    try {
        if (*rv) return cmd_rank_verify(rv_m, rv_n, rv_r, rv_trials, rv_seed, rv_csv, out);
        if (*pc) {
            return cmd_param_count(LayerShape::fc(pc_m, pc_n), LayerShape::conv(pc_o, pc_i, pc_k, pc_k), pc_rank,
                                   pc_schemes, pc_csv, out);
        }
        if (*tr) return cmd_train(tr_config, tr_ov, out);
        if (*co) return cmd_cost(co_config, co_ov, co_json, out);
    } catch (const NumericError& e) {
        err << "error: numeric divergence: " << e.what() << "\n";
        return Diverged;
    } catch (const ConfigError& e) {
        err << "error: config: " << e.what() << "\n";
        return ConfigFailure;
    } catch (const FormatError& e) {
        err << "error: data: " << e.what() << "\n";
        return ConfigFailure;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return ConfigFailure;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return ConfigFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return ConfigFailure;
}

}  // namespace fedpara::cli
