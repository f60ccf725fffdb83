// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a JSON document validated against a fixed
// schema. Every error names its location, either line:column for syntax
// errors or a JSON pointer for schema errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "fedpara/accounting.hpp"
#include "fedpara/data.hpp"
#include "fedpara/federation.hpp"
#include "fedpara/model.hpp"

namespace fedpara {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& location, const std::string& what)
        : std::runtime_error(location + ": " + what), location_(location), detail_(what) {}
    const std::string& location() const noexcept { return location_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string location_;
    std::string detail_;
};

struct DatasetConfig {
    enum class Kind { None, Synthetic, Idx };
    Kind kind = Kind::None;
    BlobOptions blobs;
    std::size_t test_per_class = 0;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct PartitionConfig {
    enum class Kind { Iid, Dirichlet, Pathological };
    Kind kind = Kind::Iid;
    double alpha = 0.5;
    std::size_t classes_per_client = 2;
    /// Share of each client's examples held out as its personal test split.
    double test_fraction = 0.0;
    /// Share of each client's training examples kept.
    double subsample = 1.0;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output = "fedpara-out";
    DatasetConfig dataset;
    PartitionConfig partition;
    ModelSpec model;
    FedConfig federation;
    CostConfig cost;
    /// The document as parsed, echoed into run summaries.
    nlohmann::json source;
};

ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Loads `path` with `overrides` merged in (RFC 7386 merge patch) before validation.
ExperimentConfig load_config(const std::filesystem::path& path, const nlohmann::json& overrides);

struct Experiment {
    Dataset train;
    std::optional<Dataset> test;
    Partition partition;
};

/// Materializes data and client partitions from the config's sub-seeds.
Experiment build_experiment(const ExperimentConfig& config);

}  // namespace fedpara
