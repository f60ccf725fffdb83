// SPDX-License-Identifier: Apache-2.0
//
// Datasets and client partitioning: synthetic Gaussian blobs, IDX (MNIST)
// ingestion, and IID / Dirichlet / pathological label-skew splits.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpara/tensor.hpp"

namespace fedpara {

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

enum class Split { Train, Test };

struct Dataset {
    Tensor features;  // N x d
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    Split split = Split::Train;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t feature_dim() const { return features.dim(1); }

    /// Rows in the given order.
    Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Checks labels < classes and row count; throws DomainError otherwise.
void validate(const Dataset& dataset);

struct BlobOptions {
    std::size_t classes = 10;
    std::size_t per_class = 100;
    std::size_t dim = 16;
    double spread = 0.5;
    /// Gaussian modes per class; more than one makes the task non-linear.
    std::size_t modes_per_class = 1;
    double center_scale = 1.0;
};

/// Class clusters around seeded centers. Train and test splits of the same
/// seed share centers and differ only in the sample noise.
Dataset synth_blobs(const BlobOptions& options, std::uint64_t seed, Split split = Split::Train);
Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed);

/// IDX image/label pair (e.g. MNIST). Pixels are scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Per-client example indices into a dataset; `test` is empty unless a
/// personal test split has been carved.
struct Partition {
    std::vector<std::vector<std::size_t>> train;
    std::vector<std::vector<std::size_t>> test;

    std::size_t clients() const noexcept { return train.size(); }
};

Partition split_iid(std::size_t examples, std::size_t clients, std::uint64_t seed);
Partition split_dirichlet(const Dataset& dataset, std::size_t clients, double alpha, std::uint64_t seed);
Partition split_pathological(const Dataset& dataset, std::size_t clients, std::size_t classes_per_client,
                             std::uint64_t seed);

/// Moves `fraction` of each client's (shuffled) examples into its test list.
Partition carve_test_split(Partition partition, double fraction, std::uint64_t seed);

/// Keeps `fraction` (at least one) of each client's training examples.
Partition subsample_train(Partition partition, double fraction, std::uint64_t seed);

/// True when every index is < examples and no index appears twice across
/// all train and test lists.
bool is_disjoint(const Partition& partition, std::size_t examples);

}  // namespace fedpara
