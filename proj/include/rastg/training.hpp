#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rastg/data_io.hpp"
#include "rastg/model.hpp"

namespace rastg::train {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 64;
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double huber_delta = 0.1;
    std::uint64_t seed = 1;
    bool shuffle = true;
    double stop_train_loss = 0.0; // <= 0 disables early stopping
    void validate() const;
};

// Decoupled weight decay variant; step matches the reference closed form.
class AdamW {
public:
    AdamW(std::vector<nd::Parameter*> params, const TrainConfig& cfg);
    void step();
    void zero_grad();
    std::int64_t steps_taken() const { return t_; }

private:
    std::vector<nd::Parameter*> params_;
    std::vector<nd::NdArray> m_, v_;
    TrainConfig cfg_;
    std::int64_t t_ = 0;
};

struct SplitRatios {
    double train = 8, val = 1, test = 1;
};

struct DatasetSplit {
    std::vector<std::string> train_ids, val_ids, test_ids;
};

// Stratified by class label, deterministic in the seed; global val/test
// sizes hit round(N * ratio) via largest-remainder allocation per class.
DatasetSplit split_dataset(const data::DatasetManifest& manifest, const SplitRatios& ratios,
                           std::uint64_t seed);

// A preprocessed sample held in memory: input (T,V,C), normalized target.
struct TrainingSample {
    std::string id;
    nd::NdArray input;
    double target = 0.0; // model space (total / score_scale)
    int class_label = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> curve;
    int best_epoch = -1;
    double best_val_loss = 0.0;
    bool stopped_early = false;
    model::RastGModel::Snapshot best_state;
};

TrainResult train_model(model::RastGModel& m, const std::vector<TrainingSample>& train_set,
                        const std::vector<TrainingSample>& val_set, const TrainConfig& cfg,
                        const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

struct MetricEntry {
    double mad = 0.0;
    double rmse = 0.0;
    double mape = 0.0; // percent, over samples with y != 0
    std::int64_t n = 0;
    std::int64_t mape_excluded = 0;
};

struct MetricsReport {
    MetricEntry overall;
    std::map<int, MetricEntry> per_class;
};

// Pure metric computation (the evaluate() examples run against this).
MetricsReport compute_metrics(const std::vector<double>& y, const std::vector<double>& y_hat,
                              const std::vector<int>& labels);

struct EvalResult {
    MetricsReport report;
    std::vector<double> predictions; // model space, sample order preserved
};

EvalResult evaluate(model::RastGModel& m, const std::vector<TrainingSample>& samples,
                    int batch_size = 64);

// Batched eval-mode losses, used for the validation curve.
double dataset_loss(model::RastGModel& m, const std::vector<TrainingSample>& samples,
                    double huber_delta, int batch_size);

// Assemble (N,T,V,C) batch input from samples[first..first+count).
nd::NdArray batch_input(const std::vector<TrainingSample>& samples,
                        const std::vector<std::int64_t>& order, std::int64_t first,
                        std::int64_t count);

} // namespace rastg::train
