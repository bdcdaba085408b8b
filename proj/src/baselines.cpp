#include "ustd/baselines.hpp"

#include <cmath>

namespace ustd {

Mat persistence_forecast(const Mat& condition, int n_nodes, int t_cond, int t_target) {
    if (n_nodes < 1 || t_cond < 1 || t_target < 1 ||
        condition.rows() != static_cast<Eigen::Index>(n_nodes) * t_cond)
        throw DataError("persistence: condition shape mismatch");
    Mat out(static_cast<Eigen::Index>(n_nodes) * t_target, condition.cols());
    for (int node = 0; node < n_nodes; ++node) {
        auto last = condition.row(static_cast<Eigen::Index>(node) * t_cond + t_cond - 1);
        for (int t = 0; t < t_target; ++t)
            out.row(static_cast<Eigen::Index>(node) * t_target + t) = last;
    }
    return out;
}

ClimatologyModel ClimatologyModel::fit(const SignalSeries& series, int t_begin, int t_end) {
    if (t_begin < 0 || t_end > series.t_total || t_end <= t_begin)
        throw DataError("climatology: bad time range");
    ClimatologyModel m;
    m.mean = Mat::Zero(series.n_nodes, series.channels);
    m.stddev = Mat::Zero(series.n_nodes, series.channels);
    for (int node = 0; node < series.n_nodes; ++node) {
        for (int c = 0; c < series.channels; ++c) {
            double sum = 0, sq = 0;
            long n = 0;
            for (int t = t_begin; t < t_end; ++t) {
                if (!series.cell_valid(node, t)) continue;
                double v = series.at(node, t, c);
                sum += v;
                sq += v * v;
                ++n;
            }
            if (n == 0) throw DataError("climatology: node with no valid training data");
            double mu = sum / static_cast<double>(n);
            m.mean(node, c) = mu;
            if (n > 1) {
                double var = (sq - static_cast<double>(n) * mu * mu) /
                             static_cast<double>(n - 1);
                m.stddev(node, c) = std::sqrt(std::max(var, 0.0));
            }
        }
    }
    return m;
}

Mat ClimatologyModel::point(const std::vector<int>& nodes, int t_steps) const {
    Mat out(static_cast<Eigen::Index>(nodes.size()) * t_steps, mean.cols());
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (int t = 0; t < t_steps; ++t)
            out.row(static_cast<Eigen::Index>(i) * t_steps + t) = mean.row(nodes[i]);
    return out;
}

std::vector<Mat> ClimatologyModel::sample(const std::vector<int>& nodes, int t_steps,
                                          int m, Rng& rng) const {
    if (m < 1) throw DataError("climatology: sample count must be positive");
    std::vector<Mat> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int s = 0; s < m; ++s) {
        Mat draw(static_cast<Eigen::Index>(nodes.size()) * t_steps, mean.cols());
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (int t = 0; t < t_steps; ++t)
                for (Eigen::Index c = 0; c < mean.cols(); ++c)
                    draw(static_cast<Eigen::Index>(i) * t_steps + t, c) =
                        mean(nodes[i], c) + stddev(nodes[i], c) * rng.normal();
        out.push_back(std::move(draw));
    }
    return out;
}

Mat idw_krige(const Graph& graph, const std::vector<int>& observed,
              const std::vector<int>& targets, const Mat& observed_values, int t_steps) {
    if (!graph.has_coords()) throw DataError("idw: graph has no coordinates");
    if (observed.empty()) throw DataError("idw: no observed nodes");
    if (observed_values.rows() != static_cast<Eigen::Index>(observed.size()) * t_steps)
        throw DataError("idw: observed series shape mismatch");
    const Eigen::Index d = observed_values.cols();
    Mat out = Mat::Zero(static_cast<Eigen::Index>(targets.size()) * t_steps, d);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        // Exact-position match: copy that node's series verbatim.
        std::ptrdiff_t exact = -1;
        std::vector<double> w(observed.size());
        double w_sum = 0;
        for (std::size_t j = 0; j < observed.size(); ++j) {
            double dx = graph.coords(targets[i], 0) - graph.coords(observed[j], 0);
            double dy = graph.coords(targets[i], 1) - graph.coords(observed[j], 1);
            double d2 = dx * dx + dy * dy;
            if (d2 == 0.0) {
                exact = static_cast<std::ptrdiff_t>(j);
                break;
            }
            w[j] = 1.0 / d2;
            w_sum += w[j];
        }
        for (int t = 0; t < t_steps; ++t) {
            auto dst = out.row(static_cast<Eigen::Index>(i) * t_steps + t);
            if (exact >= 0) {
                dst = observed_values.row(exact * t_steps + t);
            } else {
                for (std::size_t j = 0; j < observed.size(); ++j)
                    dst += (w[j] / w_sum) *
                           observed_values.row(static_cast<Eigen::Index>(j) * t_steps + t);
            }
        }
    }
    return out;
}

}  // namespace ustd
