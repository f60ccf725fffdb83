// SPDX-License-Identifier: Apache-2.0
//
// Server/client round loop: sample clients, download the shared tensors,
// train locally, upload, aggregate by sample-count weighted averaging.

#pragma once

#include <cstdint>
#include <vector>

#include "fedpara/accounting.hpp"
#include "fedpara/data.hpp"
#include "fedpara/model.hpp"
#include "fedpara/protocol.hpp"

namespace fedpara {

struct FedConfig {
    std::size_t clients = 10;  // K
    std::size_t sampled = 10;  // S clients per round
    std::size_t rounds = 1;    // T
    SgdConfig sgd;
    Algorithm algorithm = Algorithm::FedPara;
    std::uint64_t seed = 0;
    /// Worker threads for client updates; results never depend on it.
    std::size_t threads = 1;
};

void validate(const FedConfig& config);

struct ClientState {
    std::size_t id = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    Model model;
};

struct RoundReport {
    std::size_t round = 0;  // 1-based
    std::vector<std::size_t> sampled;
    double loss = 0.0;
    /// Global test accuracy, or the mean personal accuracy for personalized
    /// algorithms when clients hold test splits.
    double accuracy = 0.0;
    std::vector<double> client_accuracy;
    std::uint64_t up_bytes = 0;
    std::uint64_t down_bytes = 0;
    double sim_seconds = 0.0;
    double sim_joules = 0.0;
};

struct RunResult {
    std::vector<RoundReport> rounds;
    /// Full model sent once to every client before round 1 (personalized algorithms).
    std::uint64_t initial_broadcast_bytes = 0;
    double final_accuracy = 0.0;
    double final_global_accuracy = 0.0;
    std::vector<double> final_client_accuracy;
    std::uint64_t model_parameters = 0;
};

/// Uniform sample of `config.sampled` distinct ids, ascending, replayable
/// from (seed, round).
std::vector<std::size_t> sample_clients(std::size_t round, const FedConfig& config);

struct LocalResult {
    Payload payload;
    double loss = 0.0;
    std::size_t samples = 0;
    bool skipped = false;
};

/// Loads `global` into the client's model, runs E epochs of minibatch SGD on
/// its training indices and returns what the algorithm uploads.
LocalResult local_update(ClientState& client, const Payload& global, const Dataset& train, const FedConfig& config,
                         std::size_t round_index);

/// Per-tensor mean weighted by `sample_counts`.
Payload aggregate(const std::vector<Payload>& payloads, const std::vector<std::size_t>& sample_counts);

struct PersonalizedAccuracy {
    double mean = 0.0;
    std::vector<double> per_client;
};

/// Accuracy of models[k] on client k's own test indices.
PersonalizedAccuracy evaluate_personalized(const std::vector<const Model*>& models, const Dataset& data,
                                           const Partition& partition);

/// Full training run. `test` may be null; personal accuracies are reported
/// when the partition carries test splits.
RunResult run(const FedConfig& config, const ModelSpec& spec, const Dataset& train, const Partition& partition,
              const Dataset* test, const CostConfig& cost = {});

}  // namespace fedpara
