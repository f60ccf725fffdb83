// SPDX-License-Identifier: Apache-2.0

#include "fedpara/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fedpara/rng.hpp"

namespace fedpara {

using nlohmann::json;

namespace {

std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return std::to_string(line) + ":" + std::to_string(col);
}

std::string pointer_escape(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else out += c;
    }
    return out;
}

const char* type_name(const json& j) {
    return j.type_name();
}

// An object node whose keys must all be consumed before finish().
class Node {
public:
    Node(const json& value, std::string path) : value_(value), path_(std::move(path)) {
        if (!value_.is_object()) fail("expected an object, got " + std::string(type_name(value_)));
    }

    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(display(), what); }
    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(child_path(key), what);
    }

    bool has(const std::string& key) const { return value_.contains(key); }

    const json* raw(const std::string& key) {
        used_.insert(key);
        auto it = value_.find(key);
        return it == value_.end() ? nullptr : &*it;
    }

    Node object(const std::string& key) {
        const json* j = raw(key);
        if (!j) fail(key, "required object is missing");
        return Node(*j, child_path(key));
    }

    std::optional<Node> optional_object(const std::string& key) {
        if (!has(key)) {
            used_.insert(key);
            return std::nullopt;
        }
        return object(key);
    }

    std::optional<double> number(const std::string& key) {
        const json* j = raw(key);
        if (!j) return std::nullopt;
        if (!j->is_number()) fail(key, "expected a number, got " + std::string(type_name(*j)));
        const double v = j->get<double>();
        if (!std::isfinite(v)) fail(key, "must be finite");
        return v;
    }

    double number(const std::string& key, double fallback) { return number(key).value_or(fallback); }

    std::optional<std::uint64_t> count(const std::string& key) {
        const json* j = raw(key);
        if (!j) return std::nullopt;
        if (j->is_number_unsigned()) return j->get<std::uint64_t>();
        if (j->is_number_integer()) fail(key, "must be non-negative");
        if (j->is_number_float()) {
            const double v = j->get<double>();
            if (v >= 0.0 && v == std::floor(v) && v < 9.0e15) return static_cast<std::uint64_t>(v);
        }
        fail(key, "expected a non-negative integer, got " + std::string(type_name(*j)));
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        return static_cast<std::size_t>(count(key).value_or(fallback));
    }

    std::optional<bool> boolean(const std::string& key) {
        const json* j = raw(key);
        if (!j) return std::nullopt;
        if (!j->is_boolean()) fail(key, "expected true or false, got " + std::string(type_name(*j)));
        return j->get<bool>();
    }

    std::optional<std::string> string(const std::string& key) {
        const json* j = raw(key);
        if (!j) return std::nullopt;
        if (!j->is_string()) fail(key, "expected a string, got " + std::string(type_name(*j)));
        return j->get<std::string>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        return string(key).value_or(fallback);
    }

    void finish() const {
        for (auto it = value_.begin(); it != value_.end(); ++it) {
            if (!used_.count(it.key())) fail(it.key(), "unknown key");
        }
    }

    std::string child_path(const std::string& key) const { return path_ + "/" + pointer_escape(key); }
    std::string display() const { return path_.empty() ? "/" : path_; }

private:
    const json& value_;
    std::string path_;
    std::set<std::string> used_;
};

template <class Fn>
auto checked(const Node& node, const std::string& key, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        node.fail(key, e.what());
    }
}

void parse_dataset(Node node, DatasetConfig& out) {
    const std::string kind = node.string("type", "synthetic");
    if (kind == "synthetic") {
        out.kind = DatasetConfig::Kind::Synthetic;
        auto& b = out.blobs;
        b.classes = node.count("classes", b.classes);
        b.per_class = node.count("per_class", b.per_class);
        b.dim = node.count("dim", b.dim);
        b.spread = node.number("spread", b.spread);
        b.modes_per_class = node.count("modes_per_class", b.modes_per_class);
        b.center_scale = node.number("center_scale", b.center_scale);
        out.test_per_class = node.count("test_per_class", out.test_per_class);
        if (b.classes < 2) node.fail("classes", "need at least two classes");
        if (b.per_class < 1) node.fail("per_class", "must be >= 1");
        if (b.dim < 1) node.fail("dim", "must be >= 1");
        if (!(b.spread > 0.0)) node.fail("spread", "must be > 0");
        if (b.modes_per_class < 1) node.fail("modes_per_class", "must be >= 1");
        if (!(b.center_scale > 0.0)) node.fail("center_scale", "must be > 0");
    } else if (kind == "idx") {
        out.kind = DatasetConfig::Kind::Idx;
        auto path = [&](const std::string& key, bool required) -> std::filesystem::path {
            auto s = node.string(key);
            if (!s && required) node.fail(key, "required path is missing");
            return s.value_or("");
        };
        out.train_images = path("train_images", true);
        out.train_labels = path("train_labels", true);
        out.test_images = path("test_images", false);
        out.test_labels = path("test_labels", false);
        if (out.test_images.empty() != out.test_labels.empty()) {
            node.fail("test_images and test_labels must be given together");
        }
    } else {
        node.fail("type", "unknown dataset type '" + kind + "' (expected synthetic or idx)");
    }
    node.finish();
}

void parse_partition(Node node, PartitionConfig& out) {
    const std::string kind = node.string("type", "iid");
    if (kind == "iid") {
        out.kind = PartitionConfig::Kind::Iid;
    } else if (kind == "dirichlet") {
        out.kind = PartitionConfig::Kind::Dirichlet;
        out.alpha = node.number("alpha", out.alpha);
        if (!(out.alpha > 0.0)) node.fail("alpha", "must be > 0");
    } else if (kind == "pathological") {
        out.kind = PartitionConfig::Kind::Pathological;
        out.classes_per_client = node.count("classes_per_client", out.classes_per_client);
        if (out.classes_per_client < 1) node.fail("classes_per_client", "must be >= 1");
    } else {
        node.fail("type", "unknown partition type '" + kind + "' (expected iid, dirichlet or pathological)");
    }
    out.test_fraction = node.number("test_fraction", out.test_fraction);
    out.subsample = node.number("subsample", out.subsample);
    if (out.test_fraction < 0.0 || out.test_fraction >= 1.0) node.fail("test_fraction", "must lie in [0, 1)");
    if (!(out.subsample > 0.0) || out.subsample > 1.0) node.fail("subsample", "must lie in (0, 1]");
    node.finish();
}

Scheme parse_scheme(Node& node, const std::string& key, Scheme fallback) {
    auto s = node.string(key);
    if (!s) return fallback;
    return checked(node, key, [&] { return scheme_from_string(*s); });
}

Nonlinearity parse_nonlinearity(Node& node, const std::string& key, Nonlinearity fallback) {
    auto s = node.string(key);
    if (!s) return fallback;
    if (*s == "none") return Nonlinearity::None;
    if (*s == "tanh") return Nonlinearity::Tanh;
    node.fail(key, "unknown nonlinearity '" + *s + "' (expected none or tanh)");
}

void parse_model(Node node, const DatasetConfig& dataset, ExperimentConfig& out) {
    ModelSpec& spec = out.model;
    if (const json* input = node.raw("input")) {
        if (!input->is_array() || (input->size() != 1 && input->size() != 3)) {
            node.fail("input", "expected [features] or [channels, height, width]");
        }
        spec.input.clear();
        for (std::size_t i = 0; i < input->size(); ++i) {
            const json& d = (*input)[i];
            if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
                throw ConfigError(node.child_path("input") + "/" + std::to_string(i), "expected a positive integer");
            }
            spec.input.push_back(d.get<std::size_t>());
        }
    } else if (dataset.kind == DatasetConfig::Kind::Synthetic) {
        spec.input = {dataset.blobs.dim};
    } else {
        node.fail("input", "required when the dataset is not synthetic");
    }

    const Scheme default_scheme = parse_scheme(node, "scheme", Scheme::FedPara);
    const double default_gamma = node.number("gamma", 0.5);
    const Nonlinearity default_nl = parse_nonlinearity(node, "nonlinearity", Nonlinearity::None);
    out.federation.sgd.lambda = node.number("lambda", 1.0);

    const json* layers = node.raw("layers");
    if (!layers) node.fail("layers", "required array is missing");
    if (!layers->is_array() || layers->empty()) node.fail("layers", "expected a non-empty array");

    Shape current = spec.input;
    spec.layers.clear();
    for (std::size_t l = 0; l < layers->size(); ++l) {
        Node ln((*layers)[l], node.child_path("layers") + "/" + std::to_string(l));
        LayerSpec layer;
        const bool last = l + 1 == layers->size();
        const std::string type = ln.string("type", "fc");
        const auto width = ln.count("out");
        if (!width || *width == 0) ln.fail("out", "required positive integer");

        if (type == "conv") {
            if (current.size() != 3) ln.fail("type", "conv layer needs an image-shaped input");
            const std::size_t k = ln.count("kernel", 3);
            if (k == 0) ln.fail("kernel", "must be >= 1");
            layer.shape = LayerShape::conv(*width, current[0], k, k);
            layer.padding = ln.count("padding", 0);
            layer.pool = ln.count("pool", 1);
            if (layer.pool == 0) ln.fail("pool", "must be >= 1");
            layer.group_norm = ln.boolean("group_norm").value_or(false);
            const std::size_t padded_h = current[1] + 2 * layer.padding, padded_w = current[2] + 2 * layer.padding;
            if (padded_h < k || padded_w < k) ln.fail("kernel", "larger than the padded input");
            current = {*width, (padded_h - k + 1) / layer.pool, (padded_w - k + 1) / layer.pool};
            if (current[1] == 0 || current[2] == 0) ln.fail("pool", "pooling collapses the feature map");
        } else if (type == "fc") {
            layer.shape = LayerShape::fc(*width, shape_size(current));
            current = {*width};
        } else {
            ln.fail("type", "unknown layer type '" + type + "' (expected fc or conv)");
        }

        layer.scheme = parse_scheme(ln, "scheme", default_scheme);
        layer.gamma = ln.number("gamma", default_gamma);
        if (layer.gamma < 0.0 || layer.gamma > 1.0) ln.fail("gamma", "must lie in [0, 1]");
        if (auto r = ln.count("rank")) {
            if (*r == 0) ln.fail("rank", "must be >= 1");
            layer.rank = static_cast<std::size_t>(*r);
        }
        layer.nonlinearity = parse_nonlinearity(ln, "nonlinearity", default_nl);
        if (layer.scheme != Scheme::FedPara && layer.scheme != Scheme::FedParaReshape) {
            // Only the Hadamard forms take an inner nonlinearity.
            if (ln.has("nonlinearity") && layer.nonlinearity != Nonlinearity::None) {
                ln.fail("nonlinearity", "only fedpara layers accept tanh");
            }
            layer.nonlinearity = Nonlinearity::None;
        }
        layer.bias = ln.boolean("bias").value_or(true);
        const std::string act = ln.string("activation", last ? "none" : "relu");
        if (act == "relu") layer.activation = Activation::ReLU;
        else if (act == "none") layer.activation = Activation::None;
        else ln.fail("activation", "unknown activation '" + act + "' (expected relu or none)");
        ln.finish();
        spec.layers.push_back(layer);
    }
    spec.classes = spec.layers.back().shape.out;
    if (dataset.kind == DatasetConfig::Kind::Synthetic && spec.classes != dataset.blobs.classes) {
        node.fail("layers", "last layer has " + std::to_string(spec.classes) + " outputs, dataset has " +
                                std::to_string(dataset.blobs.classes) + " classes");
    }
    checked(node, "layers", [&] {
        validate(spec);
        return resolved_ranks(spec);
    });
    node.finish();
}

void parse_federation(Node node, FedConfig& out) {
    out.clients = node.count("clients", out.clients);
    if (out.clients < 1) node.fail("clients", "must be >= 1");
    const auto sampled = node.count("sampled");
    const auto fraction = node.number("fraction");
    if (sampled && fraction) node.fail("sampled", "give either sampled or fraction, not both");
    if (sampled) {
        out.sampled = *sampled;
        if (out.sampled < 1 || out.sampled > out.clients) node.fail("sampled", "must lie in [1, clients]");
    } else if (fraction) {
        if (!(*fraction > 0.0) || *fraction > 1.0) node.fail("fraction", "must lie in (0, 1]");
        out.sampled = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(*fraction * double(out.clients))));
    } else {
        out.sampled = out.clients;
    }
    out.rounds = node.count("rounds", out.rounds);
    auto& sgd = out.sgd;
    sgd.epochs = node.count("epochs", sgd.epochs);
    sgd.batch = node.count("batch", sgd.batch);
    sgd.eta = node.number("lr", sgd.eta);
    sgd.tau = node.number("lr_decay", sgd.tau);
    sgd.momentum = node.number("momentum", sgd.momentum);
    sgd.weight_decay = node.number("weight_decay", sgd.weight_decay);
    if (auto a = node.string("algorithm")) {
        out.algorithm = checked(node, "algorithm", [&] { return algorithm_from_string(*a); });
    }
    out.threads = node.count("threads", out.threads);
    if (out.threads < 1) node.fail("threads", "must be >= 1");
    checked(node, "", [&] {
        validate(sgd);
        return 0;
    });
    node.finish();
}

void parse_accounting(Node node, CostConfig& out) {
    out.bytes_per_parameter = node.number("bytes_per_parameter", out.bytes_per_parameter);
    auto bits = [&](const std::string& key) -> std::optional<unsigned> {
        auto v = node.count(key);
        if (!v) return std::nullopt;
        if (*v == 0 || *v > 64) node.fail(key, "must lie in [1, 64]");
        return static_cast<unsigned>(*v);
    };
    out.uplink_bits = bits("uplink_bits");
    out.downlink_bits = bits("downlink_bits");
    out.bandwidth_bps = node.number("bandwidth_mbps", out.bandwidth_bps / 1e6) * 1e6;
    out.joules_per_byte = node.number("joules_per_byte", out.joules_per_byte);
    out.compute_seconds = node.number("compute_seconds", out.compute_seconds);
    checked(node, "", [&] {
        validate(out);
        return 0;
    });
    node.finish();
}

void check_compatibility(const ExperimentConfig& c) {
    const bool has_pfedpara = std::any_of(c.model.layers.begin(), c.model.layers.end(),
                                          [](const LayerSpec& l) { return l.scheme == Scheme::PFedPara; });
    if (c.federation.algorithm == Algorithm::PFedPara && !has_pfedpara) {
        throw ConfigError("/federation/algorithm", "pfedpara needs at least one layer with scheme pfedpara");
    }
    if (c.federation.algorithm != Algorithm::PFedPara && has_pfedpara) {
        throw ConfigError("/model/layers", "pfedpara layers need algorithm pfedpara");
    }
}

ExperimentConfig parse_document(json doc);

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
        std::string what = e.what();
        // Drop the library's "[json.exception.parse_error.101] " prefix.
        if (auto p = what.find("] "); p != std::string::npos) what = what.substr(p + 2);
        throw ConfigError(origin + ":" + line_column(text, at), what);
    }

    try {
        return parse_document(std::move(doc));
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + e.location(), e.detail());
    }
}

namespace {

ExperimentConfig parse_document(json doc) {
    ExperimentConfig out;
    Node root(doc, "");
    out.seed = root.count("seed").value_or(0);
    out.output = root.string("output", out.output.string());
    if (auto n = root.optional_object("dataset")) parse_dataset(std::move(*n), out.dataset);
    if (auto n = root.optional_object("partition")) parse_partition(std::move(*n), out.partition);
    parse_model(root.object("model"), out.dataset, out);
    if (auto n = root.optional_object("federation")) parse_federation(std::move(*n), out.federation);
    if (auto n = root.optional_object("accounting")) parse_accounting(std::move(*n), out.cost);
    if (const json* schema = root.raw("schema_version")) {
        if (!schema->is_number_unsigned() || schema->get<std::uint64_t>() != 1) {
            root.fail("schema_version", "unsupported schema version (expected 1)");
        }
    }
    root.finish();
    out.federation.seed = out.seed;
    check_compatibility(out);
    out.source = std::move(doc);
    return out;
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) { return load_config(path, json::object()); }

ExperimentConfig load_config(const std::filesystem::path& path, const json& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    auto config = parse_config(buf.str(), path.string());
    if (!overrides.empty()) {
        json patched = config.source;
        patched.merge_patch(overrides);
        config = parse_config(patched.dump(2), path.string() + " (with overrides)");
    }
    // Relative data paths resolve against the config file's directory.
    const auto base = path.parent_path();
    for (auto* p : {&config.dataset.train_images, &config.dataset.train_labels, &config.dataset.test_images,
                    &config.dataset.test_labels}) {
        if (!p->empty() && p->is_relative()) *p = base / *p;
    }
    return config;
}

Experiment build_experiment(const ExperimentConfig& config) {
    Experiment ex;
    const auto& d = config.dataset;
    switch (d.kind) {
        case DatasetConfig::Kind::None: throw ConfigError("/dataset", "a dataset block is required to train");
        case DatasetConfig::Kind::Synthetic: {
            const std::uint64_t data_seed = derive_seed(config.seed, "data");
            ex.train = synth_blobs(d.blobs, data_seed, Split::Train);
            if (d.test_per_class > 0) {
                BlobOptions t = d.blobs;
                t.per_class = d.test_per_class;
                ex.test = synth_blobs(t, data_seed, Split::Test);
            }
            break;
        }
        case DatasetConfig::Kind::Idx:
            ex.train = load_idx(d.train_images, d.train_labels);
            if (!d.test_images.empty()) {
                ex.test = load_idx(d.test_images, d.test_labels);
                ex.test->split = Split::Test;
            }
            break;
    }
    if (ex.train.feature_dim() != shape_size(config.model.input)) {
        throw ConfigError("/model/input", "model expects " + std::to_string(shape_size(config.model.input)) +
                                              " features, dataset has " + std::to_string(ex.train.feature_dim()));
    }
    if (ex.train.classes > config.model.classes) {
        throw ConfigError("/model/layers", "dataset has " + std::to_string(ex.train.classes) +
                                               " classes, model outputs " + std::to_string(config.model.classes));
    }

    const auto& p = config.partition;
    const std::size_t k = config.federation.clients;
    const std::uint64_t seed = derive_seed(config.seed, "partition");
    switch (p.kind) {
        case PartitionConfig::Kind::Iid: ex.partition = split_iid(ex.train.size(), k, seed); break;
        case PartitionConfig::Kind::Dirichlet: ex.partition = split_dirichlet(ex.train, k, p.alpha, seed); break;
        case PartitionConfig::Kind::Pathological:
            ex.partition = split_pathological(ex.train, k, p.classes_per_client, seed);
            break;
    }
    if (p.test_fraction > 0.0) ex.partition = carve_test_split(std::move(ex.partition), p.test_fraction, seed + 1);
    if (p.subsample < 1.0) ex.partition = subsample_train(std::move(ex.partition), p.subsample, seed + 2);
    return ex;
}

}  // namespace fedpara
