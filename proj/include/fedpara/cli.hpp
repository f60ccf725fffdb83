// SPDX-License-Identifier: Apache-2.0
//
// Subcommands behind the `fedpara` executable. Each command is also callable
// in-process so tests can drive it without spawning.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpara/accounting.hpp"
#include "fedpara/config.hpp"
#include "fedpara/federation.hpp"
#include "fedpara/parameterization.hpp"

namespace fedpara::cli {

enum ExitCode : int { Success = 0, ConfigFailure = 2, Diverged = 3 };

/// Output schema versions; bumped whenever a column or key changes.
inline constexpr int rounds_csv_version = 1;
inline constexpr int summary_json_version = 1;

std::string code_version();

/// Environment variable that, when set, replaces the configured output directory.
inline constexpr const char* output_dir_env = "FEDPARA_OUTPUT_DIR";

// rank-verify ---------------------------------------------------------------

struct RankHistogram {
    std::size_t m = 0, n = 0, r = 0, trials = 0;
    std::vector<std::size_t> counts;  // counts[k] = trials with numerical rank k
    std::size_t full_rank() const { return std::min(m, n); }
    double full_rank_fraction() const;
};

/// Composes (X1 Y1ᵀ) ⊙ (X2 Y2ᵀ) from standard Gaussian m x r / n x r factors
/// `trials` times and tallies numerical ranks.
RankHistogram rank_verify(std::size_t m, std::size_t n, std::size_t r, std::size_t trials, std::uint64_t seed);

// param-count ---------------------------------------------------------------

struct ParamRow {
    LayerKind kind;
    Scheme scheme;
    std::uint64_t count = 0;
    std::size_t max_rank = 0;
    std::string label() const;  // e.g. "fc/fedpara"
};

/// Rows for every requested scheme that applies to each layer kind; an empty
/// scheme list selects all of them except pfedpara.
std::vector<ParamRow> param_count_table(const LayerShape& fc, const LayerShape& conv, std::size_t rank,
                                        const std::vector<Scheme>& schemes = {});

std::string param_count_csv(const std::vector<ParamRow>& rows);

// train ---------------------------------------------------------------------

std::string rounds_csv(const RunResult& result);
nlohmann::json summary_json(const ExperimentConfig& config, const RunResult& result);

/// Directory the run writes into, honoring the environment override.
std::filesystem::path output_directory(const ExperimentConfig& config);

// cost ----------------------------------------------------------------------

struct CostReport {
    std::size_t rounds = 0;
    std::size_t participants = 0;
    std::uint64_t model_parameters = 0;
    std::uint64_t transmitted_parameters = 0;
    std::uint64_t up_bytes_per_client = 0;
    std::uint64_t down_bytes_per_client = 0;
    std::uint64_t initial_broadcast_bytes = 0;
    ByteCount total_bytes = 0;
    double seconds = 0.0;
    double joules = 0.0;
};

CostReport project_cost(const ExperimentConfig& config);
nlohmann::json to_json(const CostReport& report);

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedpara::cli
