#pragma once

#include <vector>

#include "ustd/dataset.hpp"
#include "ustd/graph.hpp"

namespace ustd {

/// Repeat the last condition step of each node across the horizon.
/// condition is (n_nodes * t_cond) x d in the window row layout; the result
/// is (n_nodes * t_target) x d.
Mat persistence_forecast(const Mat& condition, int n_nodes, int t_cond, int t_target);

/// Per-node, per-channel Gaussian summary of a training range, used both as a
/// mean forecast and as an ensemble sampler for probabilistic scoring.
struct ClimatologyModel {
    Mat mean;    // n_nodes x channels
    Mat stddev;  // n_nodes x channels, sample standard deviation

    /// Moments over t in [t_begin, t_end), valid cells only.
    static ClimatologyModel fit(const SignalSeries& series, int t_begin, int t_end);

    /// Mean forecast for the listed nodes: (|nodes| * t_steps) x channels.
    Mat point(const std::vector<int>& nodes, int t_steps) const;

    /// m Gaussian draws shaped like point().
    std::vector<Mat> sample(const std::vector<int>& nodes, int t_steps, int m,
                            Rng& rng) const;
};

/// Inverse-distance-weighted interpolation of target-node series from
/// observed-node series (weights 1/d^2 in coordinate space). A target that
/// coincides with an observed node copies that node's series directly.
/// observed_values is (|observed| * t_steps) x channels in the window layout;
/// the result covers the targets in the given order.
Mat idw_krige(const Graph& graph, const std::vector<int>& observed,
              const std::vector<int>& targets, const Mat& observed_values, int t_steps);

}  // namespace ustd
