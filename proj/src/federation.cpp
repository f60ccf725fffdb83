// SPDX-License-Identifier: Apache-2.0

#include "fedpara/federation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

#include "fedpara/rng.hpp"

namespace fedpara {

void validate(const FedConfig& c) {
    if (c.clients < 1) throw DomainError("need at least one client");
    if (c.sampled < 1 || c.sampled > c.clients) throw DomainError("sampled clients must lie in [1, K]");
    if (c.threads < 1) throw DomainError("threads must be >= 1");
    validate(c.sgd);
}

std::vector<std::size_t> sample_clients(std::size_t round, const FedConfig& config) {
    if (config.sampled > config.clients) throw DomainError("cannot sample more clients than exist");
    std::vector<std::size_t> ids(config.clients);
    std::iota(ids.begin(), ids.end(), 0);
    if (config.sampled == config.clients) return ids;
    Rng rng(config.seed, "sampling", round);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < config.sampled; ++i) {
        const std::size_t j = i + rng.index(config.clients - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(config.sampled);
    std::sort(ids.begin(), ids.end());
    return ids;
}

LocalResult local_update(ClientState& client, const Payload& global, const Dataset& train, const FedConfig& config,
                         std::size_t round_index) {
    LocalResult out;
    apply_payload(client.model, global);
    if (client.train.empty()) {
        out.skipped = true;
        out.payload = global;
        return out;
    }
    out.samples = client.train.size();

    Rng rng(config.seed, "batching", round_index, client.id);
    std::vector<std::size_t> order = client.train;
    OptimizerState state;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    const std::size_t batch = config.sgd.batch;
    for (std::size_t epoch = 0; epoch < config.sgd.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
            const Dataset mb = train.subset(idx);
            loss_sum += train_step(client.model, mb.features, mb.labels, config.sgd, round_index, &state);
            ++steps;
        }
    }
    out.loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    out.payload = extract_payload(client.model, config.algorithm);
    return out;
}

Payload aggregate(const std::vector<Payload>& payloads, const std::vector<std::size_t>& sample_counts) {
    if (payloads.empty()) throw ShapeError("aggregate: no payloads");
    if (payloads.size() != sample_counts.size()) throw ShapeError("aggregate: one sample count per payload required");
    const double total = static_cast<double>(std::accumulate(sample_counts.begin(), sample_counts.end(), std::size_t{0}));
    if (total <= 0.0) throw DomainError("aggregate: total sample count must be positive");

    const auto& first = payloads.front();
    for (const auto& p : payloads) {
        if (p.tensors.size() != first.tensors.size()) throw ShapeError("aggregate: payloads differ in tensor count");
        for (std::size_t i = 0; i < p.tensors.size(); ++i) {
            if (p.tensors[i].name != first.tensors[i].name || p.tensors[i].value.shape() != first.tensors[i].value.shape()) {
                throw ShapeError("aggregate: tensor '" + p.tensors[i].name + "' is not congruent with '" +
                                 first.tensors[i].name + "'");
            }
        }
    }

    Payload out;
    for (std::size_t i = 0; i < first.tensors.size(); ++i) {
        Tensor acc(first.tensors[i].value.shape(), 0.0);
        for (std::size_t k = 0; k < payloads.size(); ++k) {
            const double w = static_cast<double>(sample_counts[k]) / total;
            auto a = acc.data();
            auto v = payloads[k].tensors[i].value.data();
            for (std::size_t j = 0; j < a.size(); ++j) a[j] += w * v[j];
        }
        out.tensors.push_back({first.tensors[i].name, std::move(acc)});
    }
    return out;
}

PersonalizedAccuracy evaluate_personalized(const std::vector<const Model*>& models, const Dataset& data,
                                           const Partition& partition) {
    if (models.size() != partition.clients()) throw ShapeError("one model per client required");
    PersonalizedAccuracy out;
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < models.size(); ++k) {
        const auto& idx = k < partition.test.size() ? partition.test[k] : std::vector<std::size_t>{};
        if (idx.empty()) {
            out.per_client.push_back(0.0);
            continue;
        }
        const Dataset own = data.subset(idx);
        const double acc = accuracy(*models[k], own.features, own.labels);
        out.per_client.push_back(acc);
        sum += acc;
        ++counted;
    }
    out.mean = counted ? sum / static_cast<double>(counted) : 0.0;
    return out;
}

namespace {

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next++; i < count; i = next++) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

bool has_personal_tests(const Partition& p) {
    return std::any_of(p.test.begin(), p.test.end(), [](const auto& v) { return !v.empty(); });
}

}  // namespace

RunResult run(const FedConfig& config, const ModelSpec& spec, const Dataset& train, const Partition& partition,
              const Dataset* test, const CostConfig& cost) {
    validate(config);
    validate(cost);
    if (partition.clients() != config.clients) {
        throw DomainError("partition has " + std::to_string(partition.clients()) + " clients, config expects " +
                          std::to_string(config.clients));
    }

    Rng init_rng(config.seed, "init");
    Model global = make_model(spec, init_rng);
    const bool personalized = is_personalized(config.algorithm);

    // Every client starts from the same initial point.
    std::vector<ClientState> clients;
    clients.reserve(config.clients);
    for (std::size_t k = 0; k < config.clients; ++k) {
        clients.push_back(ClientState{k, partition.train[k],
                                      k < partition.test.size() ? partition.test[k] : std::vector<std::size_t>{},
                                      global});
    }

    RunResult result;
    result.model_parameters = global.parameter_count();
    if (personalized && config.rounds > 0) {
        result.initial_broadcast_bytes =
            config.clients * payload_bytes(global.parameter_count(), cost.bits(Direction::Down));
    }
    const std::uint64_t up_per_client = model_bytes(global, config.algorithm, Direction::Up, cost);
    const std::uint64_t down_per_client = model_bytes(global, config.algorithm, Direction::Down, cost);
    const bool personal_eval = has_personal_tests(partition);

    for (std::size_t t = 0; t < config.rounds; ++t) {
        RoundReport report;
        report.round = t + 1;
        report.sampled = sample_clients(t, config);

        const Payload broadcast = extract_payload(global, config.algorithm);
        std::vector<LocalResult> locals(report.sampled.size());
        parallel_for(report.sampled.size(), config.threads, [&](std::size_t i) {
            ClientState& client = clients[report.sampled[i]];
            if (!personalized) {
                // Stateless clients: the download is the whole model.
                client.model = global;
            }
            locals[i] = local_update(client, broadcast, train, config, t);
        });

        // Aggregate in ascending client-id order (sampled is sorted).
        std::vector<Payload> uploads;
        std::vector<std::size_t> counts;
        double loss_sum = 0.0;
        for (auto& local : locals) {
            if (local.skipped) continue;
            loss_sum += local.loss;
            uploads.push_back(std::move(local.payload));
            counts.push_back(local.samples);
        }
        const std::size_t participants = uploads.size();
        if (participants > 0) {
            apply_payload(global, aggregate(uploads, counts));
            report.loss = loss_sum / static_cast<double>(participants);
        }
        report.up_bytes = participants * up_per_client;
        report.down_bytes = participants * down_per_client;
        if (participants > 0) report.sim_seconds = round_time(up_per_client, down_per_client, cost).total;
        report.sim_joules = energy(ByteCount(report.up_bytes) + report.down_bytes, cost);

        double global_acc = 0.0;
        if (test && test->size() > 0) global_acc = accuracy(global, test->features, test->labels);
        if (personal_eval) {
            std::vector<const Model*> models;
            for (const auto& c : clients) models.push_back(personalized ? &c.model : &global);
            const auto pa = evaluate_personalized(models, train, partition);
            report.client_accuracy = pa.per_client;
            report.accuracy = personalized || !test ? pa.mean : global_acc;
            if (!personalized && !test) global_acc = pa.mean;
        } else {
            report.accuracy = global_acc;
        }
        result.final_global_accuracy = global_acc;
        result.rounds.push_back(std::move(report));
    }

    if (!result.rounds.empty()) {
        const auto& last = result.rounds.back();
        result.final_accuracy = last.accuracy;
        result.final_client_accuracy = last.client_accuracy;
    }
    return result;
}

}  // namespace fedpara
