// SPDX-License-Identifier: Apache-2.0
//
// Transferred-size, wall-clock and energy bookkeeping. MB means 10^6 bytes
// and Mbps 10^6 bits per second throughout.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedpara/model.hpp"
#include "fedpara/protocol.hpp"

namespace fedpara {

/// Cumulative byte totals can exceed 64 bits in long simulated campaigns.
using ByteCount = unsigned __int128;

std::string to_string(ByteCount bytes);
double to_double(ByteCount bytes);

enum class Direction { Up, Down };

struct CostConfig {
    double bytes_per_parameter = 4.0;
    /// Quantization width per direction; defaults to 8 * bytes_per_parameter.
    std::optional<unsigned> uplink_bits;
    std::optional<unsigned> downlink_bits;
    double bandwidth_bps = 10e6;
    double joules_per_byte = 0.0;
    double compute_seconds = 0.0;

    unsigned bits(Direction direction) const;
};

void validate(const CostConfig& cost);

/// ceil(params * bits / 8).
std::uint64_t payload_bytes(std::uint64_t parameters, unsigned bits);

std::uint64_t model_bytes(const Model& model, Algorithm algorithm, Direction direction, const CostConfig& cost);
std::uint64_t model_bytes(const ModelSpec& spec, Algorithm algorithm, Direction direction, const CostConfig& cost);

/// participants * round_bytes * rounds, where round_bytes already holds
/// up + down for one participant.
ByteCount total_comm_cost(std::uint64_t participants, std::uint64_t round_bytes, std::uint64_t rounds);

struct RoundTime {
    double compute = 0.0;
    double communication = 0.0;
    double total = 0.0;
};

RoundTime round_time(std::uint64_t up_bytes, std::uint64_t down_bytes, const CostConfig& cost);

double energy(ByteCount total_bytes, const CostConfig& cost);

}  // namespace fedpara
