#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ustd/graph.hpp"

namespace ustd {

enum class Task { forecast, krige };

std::string task_name(Task t);
Task parse_task(const std::string& s);

/// Multichannel signals over all nodes and time steps. Rows are laid out
/// node-major: row = node * t_total + t, one column per channel.
struct SignalSeries {
    int n_nodes = 0;
    int t_total = 0;
    int channels = 0;
    Mat values;                   // (n_nodes * t_total) x channels
    std::vector<char> valid;      // per (node, t) cell; 0 marks an unfilled gap
    std::map<std::string, std::string> meta;  // granularity, attribute, generator params

    double& at(int node, int t, int c) { return values(node * t_total + t, c); }
    double at(int node, int t, int c) const { return values(node * t_total + t, c); }
    bool cell_valid(int node, int t) const {
        return valid.empty() || valid[static_cast<std::size_t>(node) * t_total + t] != 0;
    }
    void validate() const;
};

/// One (condition, target) example. Matrices use the same node-major row
/// layout as SignalSeries but with local node indices and window-local time.
struct WindowPair {
    Task task = Task::forecast;
    Mat condition;                   // (|cond_nodes| * T) x d
    Mat target;                      // (|target_nodes| * T_t) x d
    int start_step = 0;              // series index of the first condition step
    int t_cond = 0;                  // T
    int t_target = 0;                // T' (forecast) or T (krige)
    std::vector<int> cond_nodes;     // global node indices
    std::vector<int> target_nodes;   // global node indices
};

/// Per-channel z-score statistics fit on the training segment only.
struct Normalizer {
    Eigen::VectorXd mean, stdev;
    Mat apply(const Mat& x) const;
    Mat invert(const Mat& x) const;
};

/// Temporal split boundaries plus the fixed kriging node partition.
struct SplitSpec {
    double ratios[3] = {0.6, 0.2, 0.2};
    int t_train_end = 0;  // train = [0, t_train_end)
    int t_val_end = 0;    // val = [t_train_end, t_val_end), test = [t_val_end, t_total)
    std::vector<int> observed_nodes;  // kriging condition side (size N_obs)
    std::vector<int> target_nodes;    // kriging target side (size M)
};

SplitSpec make_split(int t_total, double r_train, double r_val, double r_test);

Normalizer fit_normalizer(const SignalSeries& series, int t_begin, int t_end);

/// Forecast pairs: condition [s, s+T), target [s+T, s+T+T'), all nodes.
/// Windows overlapping invalid cells are dropped.
std::vector<WindowPair> make_forecast_windows(const SignalSeries& series, int T, int T_prime,
                                              int stride);

/// Fixed transductive node partition with observed:target = 2:1 by default
/// (target count = round(N * target_fraction)), then T-step windows over the
/// full series with observed nodes as condition and the rest as target.
struct KrigingData {
    std::vector<int> observed_nodes, target_nodes;
    std::vector<WindowPair> windows;
};
KrigingData make_kriging_partition(const Graph& graph, const SignalSeries& series, int T,
                                   int stride, double target_fraction, Rng& rng);

/// Restrict windows to those whose full extent lies in [t_begin, t_end).
std::vector<WindowPair> windows_in_range(const std::vector<WindowPair>& all, int t_begin,
                                         int t_end);

// -- container I/O --
// Binary: header line "USTD1 N T d\n" then N*T*d little-endian 32-bit floats
// (node-major, then time, then channel). CSV fallback: "node,t,channel,value"
// rows; unlisted cells count as missing. A ".meta" sidecar holds "key=value"
// lines. Missing cells are forward-filled per node/channel; cells before the
// first observation stay invalid and windows covering them are dropped.
void save_signals(const std::string& path, const SignalSeries& series);
SignalSeries load_signals(const std::string& path);

struct DatasetPaths {
    std::string signals;
    std::string adjacency;  // edge list; optional when coords present
    std::string coords;     // optional; builds a Gaussian-kernel graph
};

struct GraphKernelConfig {
    double sigma = 0.0;  // 0 -> standard deviation of pairwise distances
    double epsilon = 0.1;
};

std::pair<Graph, SignalSeries> load_dataset(const DatasetPaths& paths,
                                            const GraphKernelConfig& kernel = {});

}  // namespace ustd
