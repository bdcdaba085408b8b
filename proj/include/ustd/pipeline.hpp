#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ustd/baselines.hpp"
#include "ustd/dataset.hpp"
#include "ustd/denoiser.hpp"
#include "ustd/diffusion.hpp"
#include "ustd/encoder.hpp"
#include "ustd/graph.hpp"
#include "ustd/metrics.hpp"

namespace ustd {

struct PrepareOptions {
    Task task = Task::forecast;
    int t_cond = 12;
    int t_target = 12;  // forecast horizon; kriging windows span t_cond only
    double split_train = 0.6, split_val = 0.2, split_test = 0.2;
    double krige_target_fraction = 1.0 / 3.0;  // 2:1 observed:target
    int d_s = 8;
    int gcn_depth = 2;
    std::uint64_t partition_seed = 7;
};

/// Prepared experiment inputs shared by training, inference and evaluation:
/// normalized signals, per-split window sets (training windows overlap,
/// evaluation windows have disjoint targets), spatial embeddings, and
/// propagation powers for the full graph plus the observed-node subgraph
/// when kriging.
struct DatasetBundle {
    Task task = Task::forecast;
    Graph graph;
    SignalSeries raw;     // original units, for baselines and reporting
    SignalSeries series;  // z-scored with the training-range statistics
    Normalizer normalizer;
    SplitSpec split;
    SpatialEmbedding spatial;
    std::vector<Mat> powers;           // full graph, P^0..P^L
    std::vector<Mat> powers_observed;  // kriging only
    std::vector<int> observed_nodes, target_nodes;  // kriging partition
    int t_cond = 12, t_target = 12;
    std::vector<WindowPair> train_windows, val_windows, test_windows;
};

DatasetBundle prepare_dataset(const Graph& graph, const SignalSeries& series,
                              const PrepareOptions& opt);

/// Keep only windows whose target ranges do not overlap (greedy by start).
std::vector<WindowPair> thin_windows(const std::vector<WindowPair>& windows, int step);

struct PretrainOptions {
    int steps = 600;
    int batch = 8;
    double lr = 1e-3;
    double mask_ratio = 0.25;
    double sample_rate = 0.8;
    bool masked = true;  // false: plain reconstruction of every cell, no token
    std::uint64_t seed = 1;
    long start_step = 0;  // resumed runs continue the counter here
    int log_every = 0;
};

/// Reconstruction pre-training over the training windows; returns the
/// per-step loss curve (length opt.steps - opt.start_step).
std::vector<double> run_pretraining(StEncoder& enc, const DatasetBundle& data,
                                    const PretrainOptions& opt, Adam* opt_state = nullptr);

struct TrainOptions {
    int batch = 8;
    double lr = 1e-3;
    double encoder_lr_scale = 0.1;  // finetune at one tenth of the base rate
    bool freeze_encoder = false;
    int max_epochs = 200;
    int steps_per_epoch = 0;  // 0: one pass worth of batches
    int patience = 10;        // epochs without validation improvement
    int val_window_cap = 64;
    int K = 50;
    double beta_start = 1e-4, beta_end = 0.5;
    ScheduleShape shape = ScheduleShape::quadratic;
    std::uint64_t seed = 1;
    double divergence_factor = 10.0;
    int divergence_steps = 500;
    int log_every = 0;
};

struct TrainRun {
    Task task = Task::forecast;
    std::map<std::string, std::string> config;
    long steps = 0;
    std::vector<double> epoch_loss;  // mean training loss per epoch
    std::vector<double> val_loss;    // fixed-draw validation loss per epoch
    double best_val = 0;
    int best_epoch = -1;
    std::uint64_t seed = 0;
    std::string encoder_ckpt, denoiser_ckpt;  // filled by the caller on save
};

/// Denoiser training loop: sample windows, corrupt targets, regress the
/// injected noise; the encoder is finetuned at a reduced rate unless frozen.
/// Restores the best-validation parameters before returning.
TrainRun train_denoiser(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                        const TrainOptions& opt);

/// Conditioning block for one window (spatial embeddings and absolute time);
/// cond.h is left empty and supplied by the caller.
Denoiser::Cond window_cond(const DatasetBundle& data, const WindowPair& w);

/// Encode a window's condition side without gradient tracking.
Mat encode_condition(StEncoder& enc, const DatasetBundle& data, const WindowPair& w);

struct SampleOptions {
    int n_samples = 8;
    int K = 50;
    double beta_start = 1e-4, beta_end = 0.5;
    ScheduleShape shape = ScheduleShape::quadratic;
    std::uint64_t seed = 9;
};

/// De-normalized ensemble for one window plus its per-element median.
struct SampleSet {
    std::vector<Mat> samples;
    Mat point_estimate;
};

Mat elementwise_median(const std::vector<Mat>& mats);

SampleSet infer_window(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                       const WindowPair& w, const NoiseSchedule& sched, int n_samples,
                       std::uint64_t window_seed);

struct EvalOptions {
    SampleOptions sampling;
    std::string split = "test";  // "val" or "test"
    bool compare_baselines = false;
    bool fair_crps = true;
    bool keep_predictions = true;
};

struct WindowPrediction {
    int start_step = 0;
    std::vector<int> target_nodes;
    SampleSet set;
    Mat truth;  // de-normalized target
};

struct EvalResult {
    MetricReport report;
    std::vector<WindowPrediction> predictions;
};

/// Full-split probabilistic evaluation; all metrics on de-normalized values.
EvalResult evaluate_model(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                          const EvalOptions& opt);

struct TimingStats {
    double mean_s = 0, std_s = 0;
    int trials = 0;
};

/// Wall-clock of one full reverse-chain sampling pass per trial.
TimingStats time_sampling(Denoiser& den, const Denoiser::Cond& cond, Eigen::Index rows,
                          Eigen::Index cols, const NoiseSchedule& sched, int trials,
                          std::uint64_t seed);

}  // namespace ustd
