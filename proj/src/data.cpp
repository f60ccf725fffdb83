// SPDX-License-Identifier: Apache-2.0

#include "fedpara/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "fedpara/parameterization.hpp"
#include "fedpara/rng.hpp"

namespace fedpara {

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.classes = classes;
    out.split = split;
    if (indices.empty()) return out;
    const std::size_t d = feature_dim();
    std::vector<double> rows;
    rows.reserve(indices.size() * d);
    auto src = features.data();
    for (auto i : indices) {
        if (i >= size()) throw DomainError("subset index " + std::to_string(i) + " out of range");
        rows.insert(rows.end(), src.begin() + std::ptrdiff_t(i * d), src.begin() + std::ptrdiff_t((i + 1) * d));
        out.labels.push_back(labels[i]);
    }
    out.features = Tensor({indices.size(), d}, std::move(rows));
    return out;
}

void validate(const Dataset& dataset) {
    if (dataset.features.rank() != 2 || dataset.features.dim(0) != dataset.labels.size()) {
        throw DomainError("dataset feature rows do not match label count");
    }
    for (auto y : dataset.labels) {
        if (y >= dataset.classes) throw DomainError("label " + std::to_string(y) + " outside class range");
    }
}

Dataset synth_blobs(const BlobOptions& o, std::uint64_t seed, Split split) {
    if (o.classes < 2) throw DomainError("synth_blobs needs at least two classes");
    if (o.per_class < 1 || o.dim < 1 || o.modes_per_class < 1) throw DomainError("synth_blobs sizes must be >= 1");
    if (!(o.spread >= 0.0)) throw DomainError("spread must be >= 0");

    Rng center_rng(seed, "blob-centers");
    std::vector<Tensor> centers;
    for (std::size_t c = 0; c < o.classes * o.modes_per_class; ++c) {
        Tensor mu({o.dim});
        for (auto& v : mu.data()) v = center_rng.normal(0.0, o.center_scale);
        centers.push_back(std::move(mu));
    }

    Rng noise(seed, "blob-samples", split == Split::Train ? 0 : 1);
    const std::size_t n = o.classes * o.per_class;
    Dataset ds;
    ds.classes = o.classes;
    ds.split = split;
    ds.features = Tensor({n, o.dim});
    ds.labels.reserve(n);
    std::size_t row = 0;
    for (std::size_t c = 0; c < o.classes; ++c) {
        for (std::size_t i = 0; i < o.per_class; ++i, ++row) {
            const Tensor& mu = centers[c * o.modes_per_class + i % o.modes_per_class];
            for (std::size_t j = 0; j < o.dim; ++j) ds.features.at(row, j) = mu[j] + o.spread * noise.normal();
            ds.labels.push_back(c);
        }
    }
    return ds;
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
    BlobOptions o;
    o.classes = classes;
    o.per_class = per_class;
    o.dim = dim;
    o.spread = spread;
    return synth_blobs(o, seed);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& file) {
    if (offset + 4 > buf.size()) throw FormatError(file + ": truncated header", offset);
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_all(images);
    const auto lab = read_all(labels);
    const std::string img_name = images.filename().string();
    const std::string lab_name = labels.filename().string();

    const std::uint32_t img_magic = read_be32(img, 0, img_name);
    if (img_magic != 0x00000803) throw FormatError(img_name + ": bad image magic", 0);
    const std::uint32_t lab_magic = read_be32(lab, 0, lab_name);
    if (lab_magic != 0x00000801) throw FormatError(lab_name + ": bad label magic", 0);

    const std::size_t count = read_be32(img, 4, img_name);
    const std::size_t rows = read_be32(img, 8, img_name);
    const std::size_t cols = read_be32(img, 12, img_name);
    const std::size_t label_count = read_be32(lab, 4, lab_name);
    if (label_count != count) {
        throw FormatError(lab_name + ": " + std::to_string(label_count) + " labels for " + std::to_string(count) +
                              " images",
                          4);
    }
    if (count == 0 || rows == 0 || cols == 0) throw FormatError(img_name + ": empty image set", 4);
    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + count * pixels) throw FormatError(img_name + ": truncated pixel data", img.size());
    if (lab.size() < 8 + count) throw FormatError(lab_name + ": truncated label data", lab.size());

    Dataset ds;
    ds.features = Tensor({count, pixels});
    auto f = ds.features.data();
    for (std::size_t i = 0; i < count * pixels; ++i) f[i] = static_cast<double>(img[16 + i]) / 255.0;
    ds.labels.resize(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = std::max<std::size_t>(10, max_label + 1);
    return ds;
}

// ---------------------------------------------------------------------------

Partition split_iid(std::size_t examples, std::size_t clients, std::uint64_t seed) {
    if (clients < 1 || clients > examples) throw DomainError("split_iid requires 1 <= K <= N");
    std::vector<std::size_t> order(examples);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, "partition-iid");
    std::shuffle(order.begin(), order.end(), rng.engine());
    Partition p;
    p.train.resize(clients);
    p.test.resize(clients);
    const std::size_t base = examples / clients, extra = examples % clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
        const std::size_t len = base + (k < extra ? 1 : 0);
        p.train[k].assign(order.begin() + std::ptrdiff_t(pos), order.begin() + std::ptrdiff_t(pos + len));
        pos += len;
    }
    return p;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& dataset) {
    std::vector<std::vector<std::size_t>> by_class(dataset.classes);
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class.at(dataset.labels[i]).push_back(i);
    return by_class;
}

}  // namespace

Partition split_dirichlet(const Dataset& dataset, std::size_t clients, double alpha, std::uint64_t seed) {
    if (!(alpha > 0.0)) throw DomainError("Dirichlet alpha must be > 0");
    if (clients < 1 || clients > dataset.size()) throw DomainError("split_dirichlet requires 1 <= K <= N");
    const auto by_class = indices_by_class(dataset);

    constexpr std::uint64_t max_attempts = 1000;
    for (std::uint64_t attempt = 0; attempt < max_attempts; ++attempt) {
        Rng rng(seed, "partition-dirichlet", attempt);
        Partition p;
        p.train.assign(clients, {});
        p.test.assign(clients, {});
        for (const auto& members : by_class) {
            if (members.empty()) continue;
            std::vector<std::size_t> shuffled = members;
            std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
            std::vector<double> w(clients);
            double total = 0.0;
            for (auto& v : w) total += (v = rng.gamma(alpha));
            if (total <= 0.0) {
                std::fill(w.begin(), w.end(), 1.0);
                total = static_cast<double>(clients);
            }
            // Cut points at floor(cumsum(p) * n), matching the usual numpy recipe.
            const double n = static_cast<double>(shuffled.size());
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t k = 0; k < clients; ++k) {
                cum += w[k] / total;
                std::size_t end = k + 1 == clients ? shuffled.size()
                                                   : std::min(shuffled.size(), static_cast<std::size_t>(cum * n));
                end = std::max(end, start);
                p.train[k].insert(p.train[k].end(), shuffled.begin() + std::ptrdiff_t(start),
                                  shuffled.begin() + std::ptrdiff_t(end));
                start = end;
            }
        }
        const bool all_nonempty =
            std::all_of(p.train.begin(), p.train.end(), [](const auto& v) { return !v.empty(); });
        if (all_nonempty) {
            for (auto& v : p.train) std::sort(v.begin(), v.end());
            return p;
        }
    }
    throw DomainError("split_dirichlet could not give every client data after " + std::to_string(max_attempts) +
                      " draws");
}

Partition split_pathological(const Dataset& dataset, std::size_t clients, std::size_t classes_per_client,
                             std::uint64_t seed) {
    if (clients < 1 || classes_per_client < 1) throw DomainError("split_pathological needs K, k >= 1");
    auto by_class = indices_by_class(dataset);
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (!by_class[c].empty()) present.push_back(c);
    const std::size_t shards = clients * classes_per_client;
    if (shards < present.size()) {
        throw DomainError("split_pathological: " + std::to_string(clients) + " clients x " +
                          std::to_string(classes_per_client) + " classes cannot cover " +
                          std::to_string(present.size()) + " labels");
    }

    Rng rng(seed, "partition-pathological");
    // Shards never straddle a label boundary, so each shard is single-label.
    std::vector<std::vector<std::size_t>> shard_list;
    const std::size_t base = shards / present.size(), extra = shards % present.size();
    for (std::size_t j = 0; j < present.size(); ++j) {
        auto& members = by_class[present[j]];
        std::shuffle(members.begin(), members.end(), rng.engine());
        const std::size_t count = base + (j < extra ? 1 : 0);
        if (members.size() < count) {
            throw DomainError("split_pathological: label " + std::to_string(present[j]) + " has fewer examples than shards");
        }
        const std::size_t per = members.size() / count, rem = members.size() % count;
        std::size_t pos = 0;
        for (std::size_t s = 0; s < count; ++s) {
            const std::size_t len = per + (s < rem ? 1 : 0);
            shard_list.emplace_back(members.begin() + std::ptrdiff_t(pos), members.begin() + std::ptrdiff_t(pos + len));
            pos += len;
        }
    }
    std::shuffle(shard_list.begin(), shard_list.end(), rng.engine());

    Partition p;
    p.train.assign(clients, {});
    p.test.assign(clients, {});
    for (std::size_t s = 0; s < shard_list.size(); ++s) {
        auto& dst = p.train[s / classes_per_client];
        dst.insert(dst.end(), shard_list[s].begin(), shard_list[s].end());
    }
    for (auto& v : p.train) std::sort(v.begin(), v.end());
    return p;
}

Partition carve_test_split(Partition p, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DomainError("test fraction must lie in [0, 1)");
    p.test.resize(p.train.size());
    for (std::size_t k = 0; k < p.train.size(); ++k) {
        auto& train = p.train[k];
        Rng rng(seed, "personal-test", k);
        std::shuffle(train.begin(), train.end(), rng.engine());
        std::size_t n_test = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size())));
        if (n_test >= train.size()) n_test = train.size() - 1;
        auto& test = p.test[k];
        test.insert(test.end(), train.end() - std::ptrdiff_t(n_test), train.end());
        train.resize(train.size() - n_test);
        std::sort(train.begin(), train.end());
        std::sort(test.begin(), test.end());
    }
    return p;
}

Partition subsample_train(Partition p, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("subsample fraction must lie in (0, 1]");
    for (std::size_t k = 0; k < p.train.size(); ++k) {
        auto& train = p.train[k];
        if (train.empty()) continue;
        Rng rng(seed, "subsample", k);
        std::shuffle(train.begin(), train.end(), rng.engine());
        const auto keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size()))));
        train.resize(std::min(keep, train.size()));
        std::sort(train.begin(), train.end());
    }
    return p;
}

bool is_disjoint(const Partition& p, std::size_t examples) {
    std::vector<bool> seen(examples, false);
    auto visit = [&](const std::vector<std::vector<std::size_t>>& lists) {
        for (const auto& list : lists)
            for (auto i : list) {
                if (i >= examples || seen[i]) return false;
                seen[i] = true;
            }
        return true;
    };
    return visit(p.train) && visit(p.test);
}

}  // namespace fedpara
