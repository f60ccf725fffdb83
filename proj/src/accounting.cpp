// SPDX-License-Identifier: Apache-2.0

#include "fedpara/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedpara {

std::string to_string(ByteCount bytes) {
    if (bytes == 0) return "0";
    std::string s;
    while (bytes > 0) {
        s.push_back(static_cast<char>('0' + static_cast<int>(bytes % 10)));
        bytes /= 10;
    }
    std::reverse(s.begin(), s.end());
    return s;
}

double to_double(ByteCount bytes) { return static_cast<double>(bytes); }

unsigned CostConfig::bits(Direction direction) const {
    const auto& chosen = direction == Direction::Up ? uplink_bits : downlink_bits;
    if (chosen) return *chosen;
    return static_cast<unsigned>(std::lround(bytes_per_parameter * 8.0));
}

void validate(const CostConfig& c) {
    if (!(c.bytes_per_parameter > 0.0)) throw DomainError("bytes_per_parameter must be > 0");
    if (c.uplink_bits && *c.uplink_bits == 0) throw DomainError("uplink_bits must be > 0");
    if (c.downlink_bits && *c.downlink_bits == 0) throw DomainError("downlink_bits must be > 0");
    if (!(c.bandwidth_bps > 0.0)) throw DomainError("bandwidth must be > 0");
    if (!(c.joules_per_byte >= 0.0)) throw DomainError("joules_per_byte must be >= 0");
    if (!(c.compute_seconds >= 0.0)) throw DomainError("compute_seconds must be >= 0");
}

std::uint64_t payload_bytes(std::uint64_t parameters, unsigned bits) {
    const ByteCount total_bits = ByteCount(parameters) * bits;
    const ByteCount bytes = (total_bits + 7) / 8;
    if (bytes > std::numeric_limits<std::uint64_t>::max()) throw std::overflow_error("payload size overflows 64 bits");
    return static_cast<std::uint64_t>(bytes);
}

std::uint64_t model_bytes(const Model& model, Algorithm algorithm, Direction direction, const CostConfig& cost) {
    return payload_bytes(transmitted_parameter_count(model, algorithm), cost.bits(direction));
}

std::uint64_t model_bytes(const ModelSpec& spec, Algorithm algorithm, Direction direction, const CostConfig& cost) {
    return payload_bytes(transmitted_parameter_count(spec, algorithm), cost.bits(direction));
}

ByteCount total_comm_cost(std::uint64_t participants, std::uint64_t round_bytes, std::uint64_t rounds) {
    const ByteCount partial = ByteCount(participants) * round_bytes;
    if (round_bytes != 0 && partial / round_bytes != participants) throw std::overflow_error("communication cost overflow");
    const ByteCount total = partial * rounds;
    if (rounds != 0 && total / rounds != partial) throw std::overflow_error("communication cost overflow");
    return total;
}

RoundTime round_time(std::uint64_t up_bytes, std::uint64_t down_bytes, const CostConfig& cost) {
    if (!(cost.bandwidth_bps > 0.0)) throw DomainError("bandwidth must be > 0");
    RoundTime t;
    t.compute = cost.compute_seconds;
    t.communication = (static_cast<double>(up_bytes) + static_cast<double>(down_bytes)) * 8.0 / cost.bandwidth_bps;
    t.total = t.compute + t.communication;
    return t;
}

double energy(ByteCount total_bytes, const CostConfig& cost) {
    if (!(cost.joules_per_byte >= 0.0)) throw DomainError("joules_per_byte must be >= 0");
    return to_double(total_bytes) * cost.joules_per_byte;
}

}  // namespace fedpara
