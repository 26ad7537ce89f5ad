#include "rastg/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rastg/error.hpp"
#include "rastg/rng.hpp"

namespace rastg::train {

using nd::NdArray;
using nd::Shape;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (lr < 0) throw ConfigError("learning rate must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must be in [0,1)");
    if (eps <= 0) throw ConfigError("eps must be positive");
    if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
    if (huber_delta <= 0) throw ConfigError("huber delta must be positive");
}

AdamW::AdamW(std::vector<nd::Parameter*> params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (auto* p : params_) {
        m_.emplace_back(p->value().shape());
        v_.emplace_back(p->value().shape());
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        nd::Parameter* p = params_[i];
        if (!p->trainable()) continue;
        const std::int64_t n = p->value().size();
        double* theta = p->value_mut().data();
        const double* g = p->grad().data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::int64_t j = 0; j < n; ++j) {
            theta[j] -= cfg_.lr * cfg_.weight_decay * theta[j]; // decoupled decay
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

DatasetSplit split_dataset(const data::DatasetManifest& manifest, const SplitRatios& ratios,
                           std::uint64_t seed) {
    if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
        throw ConfigError("split ratios must be positive");
    }
    const std::int64_t n = static_cast<std::int64_t>(manifest.records.size());
    if (n < 3) throw ConfigError("degenerate split: need at least 3 samples, got " + std::to_string(n));

    const double total = ratios.train + ratios.val + ratios.test;
    const double rv = ratios.val / total;
    const double rt = ratios.test / total;
    const std::int64_t target_val = std::llround(static_cast<double>(n) * rv);
    const std::int64_t target_test = std::llround(static_cast<double>(n) * rt);

    // per-class shuffled id lists
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& r : manifest.records) by_class[r.class_label].push_back(r.id);
    for (auto& [label, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(ids);
    }

    // largest-remainder allocation: per split, per class quota n_c * r
    auto allocate = [&](double ratio, std::int64_t target) {
        std::map<int, std::int64_t> take;
        std::vector<std::pair<double, int>> rema;
        std::int64_t assigned = 0;
        for (const auto& [label, ids] : by_class) {
            const double q = static_cast<double>(ids.size()) * ratio;
            const std::int64_t fl = static_cast<std::int64_t>(std::floor(q));
            take[label] = fl;
            assigned += fl;
            rema.emplace_back(q - static_cast<double>(fl), label);
        }
        std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (const auto& [frac, label] : rema) {
            if (assigned >= target) break;
            if (take[label] < static_cast<std::int64_t>(by_class[label].size())) {
                ++take[label];
                ++assigned;
            }
        }
        return take;
    };
    auto test_take = allocate(rt, target_test);
    auto val_take = allocate(rv, target_val);

    DatasetSplit split;
    for (auto& [label, ids] : by_class) {
        std::int64_t tt = test_take[label];
        std::int64_t vv = val_take[label];
        // keep at least one training sample per class when the class allows
        while (tt + vv >= static_cast<std::int64_t>(ids.size()) && (tt > 0 || vv > 0)) {
            if (vv > 0) {
                --vv;
            } else {
                --tt;
            }
        }
        std::int64_t i = 0;
        for (; i < tt; ++i) split.test_ids.push_back(ids[static_cast<std::size_t>(i)]);
        for (; i < tt + vv; ++i) split.val_ids.push_back(ids[static_cast<std::size_t>(i)]);
        for (; i < static_cast<std::int64_t>(ids.size()); ++i) {
            split.train_ids.push_back(ids[static_cast<std::size_t>(i)]);
        }
    }
    return split;
}

NdArray batch_input(const std::vector<TrainingSample>& samples,
                    const std::vector<std::int64_t>& order, std::int64_t first,
                    std::int64_t count) {
    const auto& s0 = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(first)])];
    const std::int64_t t = s0.input.dim(0), v = s0.input.dim(1), c = s0.input.dim(2);
    NdArray batch(Shape{count, t, v, c});
    const std::int64_t stride = t * v * c;
    for (std::int64_t i = 0; i < count; ++i) {
        const auto& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(first + i)])];
        nd::require_same_shape(s.input, s0.input, "batch assembly");
        std::copy(s.input.data(), s.input.data() + stride, batch.data() + i * stride);
    }
    return batch;
}

namespace {

NdArray batch_targets(const std::vector<TrainingSample>& samples,
                      const std::vector<std::int64_t>& order, std::int64_t first,
                      std::int64_t count) {
    NdArray t(Shape{count, 1});
    for (std::int64_t i = 0; i < count; ++i) {
        t.data()[i] = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(first + i)])].target;
    }
    return t;
}

double param_l2_norm(const std::vector<nd::Parameter*>& params) {
    double acc = 0.0;
    for (const auto* p : params) {
        const double* d = p->value().data();
        for (std::int64_t i = 0; i < p->value().size(); ++i) acc += d[i] * d[i];
    }
    return std::sqrt(acc);
}

} // namespace

double dataset_loss(model::RastGModel& m, const std::vector<TrainingSample>& samples,
                    double huber_delta, int batch_size) {
    if (samples.empty()) return 0.0;
    std::vector<std::int64_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    double acc = 0.0;
    for (std::int64_t first = 0; first < static_cast<std::int64_t>(samples.size());
         first += batch_size) {
        const std::int64_t count =
            std::min<std::int64_t>(batch_size, static_cast<std::int64_t>(samples.size()) - first);
        auto x = nd::constant(batch_input(samples, order, first, count));
        auto res = m.forward(x, /*train=*/false);
        auto loss = nd::huber_loss(res.scores, batch_targets(samples, order, first, count),
                                   huber_delta);
        acc += loss->value.value() * static_cast<double>(count);
    }
    return acc / static_cast<double>(samples.size());
}

TrainResult train_model(model::RastGModel& m, const std::vector<TrainingSample>& train_set,
                        const std::vector<TrainingSample>& val_set, const TrainConfig& cfg,
                        const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");

    auto params = m.parameters();
    AdamW opt(params, cfg);
    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<std::int64_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.shuffle) {
            std::iota(order.begin(), order.end(), 0);
            Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
            rng.shuffle(order);
        }
        double epoch_loss = 0.0;
        for (std::int64_t first = 0; first < static_cast<std::int64_t>(train_set.size());
             first += cfg.batch_size) {
            const std::int64_t count = std::min<std::int64_t>(
                cfg.batch_size, static_cast<std::int64_t>(train_set.size()) - first);
            auto x = nd::constant(batch_input(train_set, order, first, count));
            auto targets = batch_targets(train_set, order, first, count);

            opt.zero_grad();
            nd::Tape tape;
            auto res = m.forward(x, /*train=*/true);
            auto loss = nd::huber_loss(res.scores, targets, cfg.huber_delta);
            const double batch_loss = loss->value.value();
            if (!std::isfinite(batch_loss)) {
                std::string ids;
                for (std::int64_t i = 0; i < count; ++i) {
                    if (!ids.empty()) ids += ",";
                    ids += train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(first + i)])].id;
                }
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   " (batch ids: " + ids +
                                   "; parameter L2 norm: " + std::to_string(param_l2_norm(params)) + ")");
            }
            tape.backward(loss);
            opt.step();
            epoch_loss += batch_loss * static_cast<double>(count);
        }
        epoch_loss /= static_cast<double>(train_set.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss;
        rec.val_loss = val_set.empty()
                           ? epoch_loss
                           : dataset_loss(m, val_set, cfg.huber_delta, cfg.batch_size);
        result.curve.push_back(rec);
        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            result.best_state = m.snapshot();
        }
        if (on_epoch) on_epoch(rec);
        if (cfg.stop_train_loss > 0.0 && epoch_loss < cfg.stop_train_loss) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

MetricsReport compute_metrics(const std::vector<double>& y, const std::vector<double>& y_hat,
                              const std::vector<int>& labels) {
    if (y.size() != y_hat.size() || (!labels.empty() && labels.size() != y.size())) {
        throw ShapeError("metric inputs must have equal lengths");
    }
    if (y.empty()) throw ConfigError("evaluate requires a non-empty dataset");

    struct Acc {
        double abs = 0, sq = 0, ape = 0;
        std::int64_t n = 0, mape_n = 0, excluded = 0;
    };
    auto fold = [](Acc& a, double yi, double pi) {
        const double r = yi - pi;
        a.abs += std::abs(r);
        a.sq += r * r;
        if (yi != 0.0) {
            a.ape += std::abs(r / yi) * 100.0;
            ++a.mape_n;
        } else {
            ++a.excluded;
        }
        ++a.n;
    };
    auto entry = [](const Acc& a) {
        MetricEntry e;
        e.n = a.n;
        e.mape_excluded = a.excluded;
        e.mad = a.abs / static_cast<double>(a.n);
        e.rmse = std::sqrt(a.sq / static_cast<double>(a.n));
        e.mape = a.mape_n > 0 ? a.ape / static_cast<double>(a.mape_n) : 0.0;
        return e;
    };

    Acc overall;
    std::map<int, Acc> per_class;
    for (std::size_t i = 0; i < y.size(); ++i) {
        fold(overall, y[i], y_hat[i]);
        if (!labels.empty()) fold(per_class[labels[i]], y[i], y_hat[i]);
    }
    MetricsReport rep;
    rep.overall = entry(overall);
    for (const auto& [label, acc] : per_class) rep.per_class[label] = entry(acc);
    return rep;
}

EvalResult evaluate(model::RastGModel& m, const std::vector<TrainingSample>& samples,
                    int batch_size) {
    if (samples.empty()) throw ConfigError("evaluate requires a non-empty dataset");
    std::vector<std::int64_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    EvalResult out;
    std::vector<double> y, labels_d;
    std::vector<int> labels;
    for (std::int64_t first = 0; first < static_cast<std::int64_t>(samples.size());
         first += batch_size) {
        const std::int64_t count =
            std::min<std::int64_t>(batch_size, static_cast<std::int64_t>(samples.size()) - first);
        auto x = nd::constant(batch_input(samples, order, first, count));
        auto res = m.forward(x, /*train=*/false);
        const double* pred = res.scores->value.data();
        for (std::int64_t i = 0; i < count; ++i) {
            const auto& s = samples[static_cast<std::size_t>(first + i)];
            out.predictions.push_back(pred[i]);
            y.push_back(s.target);
            labels.push_back(s.class_label);
        }
    }
    out.report = compute_metrics(y, out.predictions, labels);
    return out;
}

} // namespace rastg::train
