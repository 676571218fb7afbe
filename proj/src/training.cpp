#include "snsteg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "snsteg/init.hpp"

namespace snsteg {

namespace {

// Images scored together when the network output does not depend on batch composition.
constexpr std::size_t kIndependentChunk = 32;
constexpr std::uint64_t kEvalOrderTag = 0xe7a1;

std::string num(double v, const char* f = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

bool batch_independent(const Network<float>& net, std::optional<StatsSource> src) {
    const NormKind k = net.config().norm;
    if (k == NormKind::SN) return true;
    const StatsSource eff = src.value_or(k == NormKind::BnFixed ? StatsSource::Fixed : StatsSource::Batch);
    return eff == StatsSource::Fixed;
}

void check_batch_size(std::size_t batch_size) {
    if (batch_size < 2 || batch_size % 2 != 0)
        throw ConfigError("batch size must be even and >= 2, got " + std::to_string(batch_size));
}

}  // namespace

void OptimConfig::validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (!(lr_high > 0.0 && lr_low > 0.0)) throw ConfigError("learning rates must be > 0");
    if (lr_high > 1.0 || lr_low > 1.0)
        throw ConfigError("learning rates above 1 are rejected (they also drive the statistics EMA)");
    if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0))
        throw ConfigError("lr drop fraction must lie in [0, 1]");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    check_batch_size(batch_size);
}

double lr_schedule(std::size_t epoch, std::size_t total_epochs, double lr_high, double lr_low,
                   double drop_fraction) {
    const auto drop = static_cast<std::size_t>(std::llround(drop_fraction * static_cast<double>(total_epochs)));
    return epoch < drop ? lr_high : lr_low;
}

template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr,
              double momentum, double weight_decay) {
    if (weights.size() != grads.size() || weights.size() != velocity.size())
        throw ShapeError("sgd_step: weights (" + std::to_string(weights.size()) + "), grads (" +
                         std::to_string(grads.size()) + ") and velocity (" +
                         std::to_string(velocity.size()) + ") differ in length");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i];
        const double v = momentum * velocity[i] - lr * (static_cast<double>(grads[i]) + weight_decay * w);
        velocity[i] = static_cast<T>(v);
        weights[i] = static_cast<T>(w + v);
    }
}

template void sgd_step(std::span<float>, std::span<const float>, std::span<float>, double, double, double);
template void sgd_step(std::span<double>, std::span<const double>, std::span<double>, double, double, double);

DetectionError detection_error(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw ShapeError("detection_error: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    std::size_t covers = 0, stegos = 0, missed = 0, false_alarms = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ++stegos;
            if (predictions[i] == 0) ++missed;
        } else if (labels[i] == 0) {
            ++covers;
            if (predictions[i] == 1) ++false_alarms;
        } else {
            throw ConfigError("detection_error: label " + std::to_string(labels[i]) + " is not 0 or 1");
        }
    }
    if (covers == 0) throw NumericError("detection_error: no cover samples, false-alarm rate undefined");
    if (stegos == 0) throw NumericError("detection_error: no stego samples, miss rate undefined");
    DetectionError e;
    e.pmd = static_cast<double>(missed) / static_cast<double>(stegos);
    e.pfa = static_cast<double>(false_alarms) / static_cast<double>(covers);
    // (P_MD + P_FA) / 2 over a common denominator: one rounding instead of three.
    e.pe = static_cast<double>(missed * covers + false_alarms * stegos) / static_cast<double>(2 * stegos * covers);
    return e;
}

std::string to_string(Pairing p) { return p == Pairing::Paired ? "paired" : "unpaired"; }

void for_each_eval_batch(const PairSet& test, std::size_t batch_size, Pairing pairing,
                         const std::function<void(const PairedBatch&)>& fn,
                         std::optional<std::uint64_t> order_seed) {
    check_batch_size(batch_size);
    const std::size_t n = test.size();
    if (n == 0) throw ConfigError("evaluation set is empty");
    const std::size_t h = batch_size / 2;
    if (pairing == Pairing::Unpaired && n < 2 * h)
        throw ConfigError("unpaired evaluation needs at least " + std::to_string(2 * h) +
                          " test covers, have " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (order_seed) {
        std::mt19937_64 rng(*order_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t b = 0; b < n; b += h) {
        const std::size_t e = std::min(n, b + h);
        const std::vector<std::size_t> covers(order.begin() + b, order.begin() + e);
        if (pairing == Pairing::Paired) {
            fn(make_paired_batch(test, covers));
        } else {
            std::vector<std::size_t> sources;
            for (std::size_t i = b; i < e; ++i) sources.push_back(order[(i + h) % n]);
            fn(make_unpaired_batch(test, covers, sources));
        }
    }
}

DetectionError evaluate(Network<float>& net, const PairSet& test, std::size_t batch_size,
                        Pairing pairing, std::optional<StatsSource> bn_source,
                        std::optional<std::uint64_t> order_seed) {
    std::vector<int> preds;
    std::vector<int> labels;
    if (batch_independent(net, bn_source)) {
        // Both pairings hold exactly the same images, and no output depends on the batch.
        if (test.size() == 0) throw ConfigError("evaluation set is empty");
        check_batch_size(batch_size);
        for (int label = 0; label < 2; ++label) {
            const auto& imgs = label == 0 ? test.covers : test.stegos;
            for (std::size_t b = 0; b < imgs.size(); b += kIndependentChunk) {
                std::vector<const ImageGray*> chunk;
                for (std::size_t i = b; i < std::min(imgs.size(), b + kIndependentChunk); ++i)
                    chunk.push_back(&imgs[i]);
                const auto p = net.predict(images_to_tensor<float>(chunk), bn_source);
                preds.insert(preds.end(), p.labels.begin(), p.labels.end());
                labels.insert(labels.end(), chunk.size(), label);
            }
        }
    } else {
        for_each_eval_batch(
            test, batch_size, pairing,
            [&](const PairedBatch& b) {
                const auto p = net.predict(b.images, bn_source);
                preds.insert(preds.end(), p.labels.begin(), p.labels.end());
                labels.insert(labels.end(), b.labels.begin(), b.labels.end());
            },
            order_seed);
    }
    return detection_error(preds, labels);
}

std::string metrics_csv_line(const MetricsRow& r) {
    return std::to_string(r.epoch) + "," + num(r.lr, "%.6g") + "," + num(r.loss) + "," +
           num(r.train_err) + "," + num(r.test_err_paired) + "," + num(r.test_err_unpaired);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string s = std::string(kMetricsHeader) + "\n";
    for (const auto& r : rows) s += metrics_csv_line(r) + "\n";
    return s;
}

std::string bn_stats_csv(const std::vector<MetricsRow>& rows, NormKind kind) {
    const bool batch_default = kind != NormKind::BnFixed;
    std::string s = "epoch,batch_paired,batch_unpaired,fixed_paired,fixed_unpaired\n";
    for (const auto& r : rows) {
        const double ap = r.alt_paired.value_or(std::nan(""));
        const double au = r.alt_unpaired.value_or(std::nan(""));
        const double bp = batch_default ? r.test_err_paired : ap;
        const double bu = batch_default ? r.test_err_unpaired : au;
        const double fp = batch_default ? ap : r.test_err_paired;
        const double fu = batch_default ? au : r.test_err_unpaired;
        s += std::to_string(r.epoch) + "," + num(bp) + "," + num(bu) + "," + num(fp) + "," + num(fu) + "\n";
    }
    return s;
}

TrainState::TrainState(const NetworkConfig& cfg, std::uint64_t seed) : net(cfg, seed) {
    reset_velocity();
}

void TrainState::reset_velocity() {
    velocity.clear();
    for (const auto& p : net.params()) velocity.emplace_back(p.value.size(), 0.0f);
}

double batch_loss(Network<float>& net, const PairedBatch& batch) {
    const auto logits = net.forward(batch.images, Mode::Eval);
    return softmax_loss(logits, std::span<const int>(batch.labels)).loss;
}

std::vector<MetricsRow> train_loop(TrainState& state, const PairSet& train, const PairSet& test,
                                   const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.optim.validate();
    Network<float>& net = state.net;
    if (!net.config().compatible_with(cfg.net))
        throw ConfigError("train_loop: network does not match the configured architecture");
    const std::size_t h = cfg.optim.batch_size / 2;
    if (train.size() < h)
        throw ConfigError("training set has " + std::to_string(train.size()) + " covers, fewer than " +
                          std::to_string(h) + " per batch");

    if (!state.stats_initialized) {
        const std::size_t half = std::max<std::size_t>(1, std::min(cfg.sn_init_samples / 2, train.size()));
        std::vector<const ImageGray*> imgs;
        for (std::size_t i = 0; i < half; ++i) imgs.push_back(&train.covers[i]);
        for (std::size_t i = 0; i < half; ++i) imgs.push_back(&train.stegos[i]);
        net.init_norm_stats(images_to_tensor<float>(imgs));
        state.stats_initialized = true;
    }
    auto params = net.params();
    if (state.velocity.size() != params.size()) state.reset_velocity();

    std::vector<MetricsRow> rows;
    for (std::size_t epoch = net.epoch(); epoch < cfg.optim.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.optim.epochs, cfg.optim.lr_high, cfg.optim.lr_low,
                                      cfg.optim.drop_fraction);
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(cfg.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t steps = 0;
        std::vector<int> preds;
        std::vector<int> labels;
        for (std::size_t b = 0; b + h <= order.size(); b += h) {
            const PairedBatch batch =
                make_paired_batch(train, std::vector<std::size_t>(order.begin() + b, order.begin() + b + h));
            const auto logits = net.forward(batch.images, Mode::Train);
            const auto loss = softmax_loss(logits, std::span<const int>(batch.labels));
            if (!std::isfinite(loss.loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(steps));
            for (std::size_t i = 0; i < batch.labels.size(); ++i)
                preds.push_back(argmax_label(logits[2 * i], logits[2 * i + 1]));
            labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
            net.backward(loss.grad);
            for (std::size_t k = 0; k < params.size(); ++k)
                sgd_step<float>(params[k].value, params[k].grad, state.velocity[k], lr,
                                cfg.optim.momentum, cfg.optim.weight_decay);
            net.apply_stat_updates(lr);
            loss_sum += loss.loss;
            ++steps;
        }

        MetricsRow row;
        row.epoch = epoch;
        row.lr = lr;
        row.loss = loss_sum / static_cast<double>(steps);
        row.train_err = detection_error(preds, labels).pe;
        std::optional<std::uint64_t> eval_seed;
        if (cfg.reshuffle_eval) eval_seed = derive_seed(derive_seed(cfg.seed, epoch), kEvalOrderTag);
        // Returns {paired, unpaired}; a batch-independent network gives both from one pass.
        auto both = [&](std::optional<StatsSource> src) {
            const double p = evaluate(net, test, cfg.optim.batch_size, Pairing::Paired, src, eval_seed).pe;
            if (batch_independent(net, src)) return std::pair{p, p};
            return std::pair{p, evaluate(net, test, cfg.optim.batch_size, Pairing::Unpaired, src, eval_seed).pe};
        };
        std::tie(row.test_err_paired, row.test_err_unpaired) = both(std::nullopt);
        if (net.config().norm != NormKind::SN && cfg.record_alt_bn) {
            const StatsSource alt =
                net.config().norm == NormKind::BnFixed ? StatsSource::Batch : StatsSource::Fixed;
            std::tie(row.alt_paired, row.alt_unpaired) = both(alt);
        }
        net.set_epoch(epoch + 1);
        rows.push_back(row);
        if (on_epoch) on_epoch(row, state);
    }
    return rows;
}

std::vector<MetricsRow> transfer_finetune(TrainState& state, const PairSet& train,
                                          const PairSet& test, const TrainConfig& cfg,
                                          const EpochCallback& on_epoch) {
    if (!state.net.config().compatible_with(cfg.net))
        throw ConfigError("transfer_finetune: checkpoint architecture differs from the configuration");
    state.net.set_epoch(0);
    state.reset_velocity();
    state.stats_initialized = true;
    return train_loop(state, train, test, cfg, on_epoch);
}

std::vector<int> ensemble_vote(const std::vector<std::vector<int>>& member_labels) {
    if (member_labels.empty() || member_labels.size() % 2 == 0)
        throw ConfigError("ensemble needs an odd number of members, got " + std::to_string(member_labels.size()));
    const std::size_t n = member_labels.front().size();
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t votes = 0;
        for (const auto& m : member_labels) {
            if (m.size() != n) throw ShapeError("ensemble members labelled different sample counts");
            votes += m[i] == 1 ? 1 : 0;
        }
        out[i] = 2 * votes > member_labels.size() ? 1 : 0;
    }
    return out;
}

std::vector<int> ensemble_predict(const std::vector<Network<float>*>& members,
                                  const Tensor<float>& images) {
    std::vector<std::vector<int>> labels;
    for (Network<float>* m : members) labels.push_back(m->predict(images).labels);
    return ensemble_vote(labels);
}

DetectionError evaluate_ensemble(const std::vector<Network<float>*>& members, const PairSet& test,
                                 std::size_t batch_size, Pairing pairing) {
    std::vector<int> preds;
    std::vector<int> labels;
    for_each_eval_batch(test, batch_size, pairing, [&](const PairedBatch& b) {
        const auto p = ensemble_predict(members, b.images);
        preds.insert(preds.end(), p.begin(), p.end());
        labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    });
    return detection_error(preds, labels);
}

std::string MismatchMatrix::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "train\\test";
    for (const auto& t : test_tags) os << ',' << t;
    os << '\n';
    for (std::size_t r = 0; r < train_tags.size(); ++r) {
        os << train_tags[r];
        for (double v : pe[r]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

MismatchMatrix payload_mismatch_matrix(const std::vector<std::string>& tags,
                                       const std::vector<Network<float>*>& models,
                                       const std::vector<const PairSet*>& tests,
                                       std::size_t batch_size, Pairing pairing) {
    if (tags.size() != models.size() || tags.size() != tests.size())
        throw ConfigError("mismatch matrix: need one checkpoint and one test set per payload");
    MismatchMatrix m;
    m.train_tags = tags;
    m.test_tags = tags;
    for (std::size_t r = 0; r < models.size(); ++r) {
        if (!models[r]) throw ConfigError("mismatch matrix: missing checkpoint for " + tags[r]);
        std::vector<double> row;
        for (std::size_t c = 0; c < tests.size(); ++c) {
            if (!tests[c]) throw ConfigError("mismatch matrix: missing test set for " + tags[c]);
            row.push_back(evaluate(*models[r], *tests[c], batch_size, pairing).pe);
        }
        m.pe.push_back(std::move(row));
    }
    return m;
}

}  // namespace snsteg
