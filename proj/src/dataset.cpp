#include "ustd/dataset.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace ustd {

std::string task_name(Task t) { return t == Task::forecast ? "forecast" : "krige"; }

Task parse_task(const std::string& s) {
    if (s == "forecast") return Task::forecast;
    if (s == "krige") return Task::krige;
    throw ConfigError("unknown task '" + s + "' (expected forecast or krige)");
}

void SignalSeries::validate() const {
    if (n_nodes <= 0 || t_total <= 0 || channels <= 0)
        throw DataError("signal series: dimensions must be positive");
    if (values.rows() != static_cast<Eigen::Index>(n_nodes) * t_total ||
        values.cols() != channels)
        throw DataError("signal series: value matrix shape mismatch");
    if (!valid.empty() && valid.size() != static_cast<std::size_t>(n_nodes) * t_total)
        throw DataError("signal series: validity mask shape mismatch");
    for (int n = 0; n < n_nodes; ++n)
        for (int t = 0; t < t_total; ++t)
            if (cell_valid(n, t) && !values.row(n * t_total + t).allFinite())
                throw DataError("signal series: non-finite value in valid cell");
}

Mat Normalizer::apply(const Mat& x) const {
    if (x.cols() != mean.size()) throw DataError("normalizer: channel count mismatch");
    Mat out = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        out.col(c) = (x.col(c).array() - mean(c)) / stdev(c);
    return out;
}

Mat Normalizer::invert(const Mat& x) const {
    if (x.cols() != mean.size()) throw DataError("normalizer: channel count mismatch");
    Mat out = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        out.col(c) = x.col(c).array() * stdev(c) + mean(c);
    return out;
}

SplitSpec make_split(int t_total, double r_train, double r_val, double r_test) {
    if (r_train < 0 || r_val < 0 || r_test < 0 ||
        std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
        throw ConfigError("split ratios must be non-negative and sum to 1");
    SplitSpec s;
    s.ratios[0] = r_train;
    s.ratios[1] = r_val;
    s.ratios[2] = r_test;
    s.t_train_end = static_cast<int>(r_train * t_total);
    s.t_val_end = static_cast<int>((r_train + r_val) * t_total);
    if (s.t_train_end <= 0) throw ConfigError("split leaves an empty training segment");
    return s;
}

Normalizer fit_normalizer(const SignalSeries& series, int t_begin, int t_end) {
    series.validate();
    if (t_begin < 0 || t_end > series.t_total || t_begin >= t_end)
        throw ConfigError("fit_normalizer: empty or out-of-range training segment");
    Normalizer nz;
    nz.mean.resize(series.channels);
    nz.stdev.resize(series.channels);
    for (int c = 0; c < series.channels; ++c) {
        double sum = 0.0, sum2 = 0.0;
        long count = 0;
        for (int n = 0; n < series.n_nodes; ++n) {
            for (int t = t_begin; t < t_end; ++t) {
                if (!series.cell_valid(n, t)) continue;
                double v = series.at(n, t, c);
                sum += v;
                sum2 += v * v;
                ++count;
            }
        }
        if (count == 0) throw DataError("fit_normalizer: no valid cells in training segment");
        double mean = sum / count;
        double var = sum2 / count - mean * mean;
        if (var <= 1e-24)
            throw DataError("fit_normalizer: channel " + std::to_string(c) +
                            " has zero variance in the training segment");
        nz.mean(c) = mean;
        nz.stdev(c) = std::sqrt(var);
    }
    return nz;
}

namespace {

bool window_all_valid(const SignalSeries& s, const std::vector<int>& nodes, int t0, int len) {
    if (s.valid.empty()) return true;
    for (int n : nodes)
        for (int t = t0; t < t0 + len; ++t)
            if (!s.cell_valid(n, t)) return false;
    return true;
}

Mat slice_window(const SignalSeries& s, const std::vector<int>& nodes, int t0, int len) {
    Mat out(static_cast<Eigen::Index>(nodes.size()) * len, s.channels);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        out.middleRows(static_cast<Eigen::Index>(i) * len, len) =
            s.values.middleRows(static_cast<Eigen::Index>(nodes[i]) * s.t_total + t0, len);
    return out;
}

}  // namespace

std::vector<WindowPair> make_forecast_windows(const SignalSeries& series, int T, int T_prime,
                                              int stride) {
    series.validate();
    if (T < 1 || T_prime < 1 || stride < 1)
        throw ConfigError("make_forecast_windows: T, T', stride must be positive");
    if (series.t_total < T + T_prime)
        throw DataError("make_forecast_windows: series too short (" +
                        std::to_string(series.t_total) + " < " + std::to_string(T + T_prime) +
                        ")");
    std::vector<int> all_nodes(series.n_nodes);
    for (int i = 0; i < series.n_nodes; ++i) all_nodes[i] = i;
    std::vector<WindowPair> out;
    for (int s = 0; s + T + T_prime <= series.t_total; s += stride) {
        if (!window_all_valid(series, all_nodes, s, T + T_prime)) continue;
        WindowPair w;
        w.task = Task::forecast;
        w.start_step = s;
        w.t_cond = T;
        w.t_target = T_prime;
        w.cond_nodes = all_nodes;
        w.target_nodes = all_nodes;
        w.condition = slice_window(series, all_nodes, s, T);
        w.target = slice_window(series, all_nodes, s + T, T_prime);
        out.push_back(std::move(w));
    }
    return out;
}

KrigingData make_kriging_partition(const Graph& graph, const SignalSeries& series, int T,
                                   int stride, double target_fraction, Rng& rng) {
    graph.validate();
    series.validate();
    if (graph.n_nodes != series.n_nodes)
        throw DataError("kriging partition: graph has " + std::to_string(graph.n_nodes) +
                        " nodes but series has " + std::to_string(series.n_nodes));
    if (graph.n_nodes < 3) throw DataError("kriging partition: need at least 3 nodes");
    if (target_fraction <= 0.0 || target_fraction >= 1.0)
        throw ConfigError("kriging partition: target fraction must be in (0,1)");
    int m = static_cast<int>(std::lround(target_fraction * graph.n_nodes));
    if (m < 1 || m >= graph.n_nodes)
        throw DataError("kriging partition: fraction leaves no target or no observed nodes");
    KrigingData kd;
    kd.target_nodes = rng.sample_without_replacement(graph.n_nodes, m);
    std::vector<char> is_target(graph.n_nodes, 0);
    for (int t : kd.target_nodes) is_target[t] = 1;
    for (int i = 0; i < graph.n_nodes; ++i)
        if (!is_target[i]) kd.observed_nodes.push_back(i);
    if (series.t_total < T) throw DataError("kriging partition: series shorter than T");
    for (int s = 0; s + T <= series.t_total; s += stride) {
        if (!window_all_valid(series, kd.observed_nodes, s, T) ||
            !window_all_valid(series, kd.target_nodes, s, T))
            continue;
        WindowPair w;
        w.task = Task::krige;
        w.start_step = s;
        w.t_cond = T;
        w.t_target = T;
        w.cond_nodes = kd.observed_nodes;
        w.target_nodes = kd.target_nodes;
        w.condition = slice_window(series, kd.observed_nodes, s, T);
        w.target = slice_window(series, kd.target_nodes, s, T);
        kd.windows.push_back(std::move(w));
    }
    return kd;
}

std::vector<WindowPair> windows_in_range(const std::vector<WindowPair>& all, int t_begin,
                                         int t_end) {
    std::vector<WindowPair> out;
    for (const auto& w : all) {
        int span = (w.task == Task::forecast) ? w.t_cond + w.t_target : w.t_cond;
        if (w.start_step >= t_begin && w.start_step + span <= t_end) out.push_back(w);
    }
    return out;
}

namespace {

void write_meta(const std::string& path, const std::map<std::string, std::string>& meta) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& [k, v] : meta) out << k << "=" << v << "\n";
}

std::map<std::string, std::string> read_meta(const std::string& path) {
    std::map<std::string, std::string> meta;
    std::ifstream in(path);
    if (!in) return meta;
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

void forward_fill(SignalSeries& s, long missing_cells) {
    if (missing_cells == 0) {
        s.valid.clear();
        return;
    }
    long imputed = 0;
    for (int n = 0; n < s.n_nodes; ++n) {
        for (int c = 0; c < s.channels; ++c) {
            double last = std::nan("");
            for (int t = 0; t < s.t_total; ++t) {
                double& v = s.values(static_cast<Eigen::Index>(n) * s.t_total + t, c);
                if (std::isfinite(v)) {
                    last = v;
                } else if (std::isfinite(last)) {
                    v = last;
                    ++imputed;
                } else {
                    s.valid[static_cast<std::size_t>(n) * s.t_total + t] = 0;
                }
            }
        }
    }
    s.meta["imputed_cells"] = std::to_string(imputed);
    bool any_invalid = false;
    for (char v : s.valid) any_invalid |= (v == 0);
    if (!any_invalid) s.valid.clear();
}

SignalSeries load_signals_binary(std::ifstream& in, const std::string& path) {
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string magic;
    long n = 0, t = 0, d = 0;
    hs >> magic >> n >> t >> d;
    if (magic != "USTD1" || n <= 0 || t <= 0 || d <= 0)
        throw DataError("bad signals header in " + path + ": '" + header + "'");
    SignalSeries s;
    s.n_nodes = static_cast<int>(n);
    s.t_total = static_cast<int>(t);
    s.channels = static_cast<int>(d);
    s.values.resize(n * t, d);
    s.valid.assign(static_cast<std::size_t>(n) * t, 1);
    std::vector<float> buf(static_cast<std::size_t>(t) * d);
    long missing = 0;
    for (long node = 0; node < n; ++node) {
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw DataError("truncated signals file: " + path);
        for (long tt = 0; tt < t; ++tt) {
            for (long c = 0; c < d; ++c) {
                float f = buf[static_cast<std::size_t>(tt) * d + c];
                s.values(node * t + tt, c) = static_cast<double>(f);
                if (!std::isfinite(f)) ++missing;
            }
        }
    }
    forward_fill(s, missing);
    return s;
}

SignalSeries load_signals_csv(std::ifstream& in, const std::string& path) {
    struct Cell {
        int node, t, c;
        double v;
    };
    std::vector<Cell> cells;
    int max_node = -1, max_t = -1, max_c = -1;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0])))
            continue;  // comment or header row
        Cell cell{};
        if (std::sscanf(line.c_str(), "%d,%d,%d,%lf", &cell.node, &cell.t, &cell.c, &cell.v) !=
            4)
            throw DataError("bad signals CSV line " + std::to_string(lineno) + " in " + path);
        if (cell.node < 0 || cell.t < 0 || cell.c < 0)
            throw DataError("negative index in signals CSV line " + std::to_string(lineno));
        max_node = std::max(max_node, cell.node);
        max_t = std::max(max_t, cell.t);
        max_c = std::max(max_c, cell.c);
        cells.push_back(cell);
    }
    if (cells.empty()) throw DataError("empty signals file: " + path);
    SignalSeries s;
    s.n_nodes = max_node + 1;
    s.t_total = max_t + 1;
    s.channels = max_c + 1;
    s.values = Mat::Constant(static_cast<Eigen::Index>(s.n_nodes) * s.t_total, s.channels,
                             std::nan(""));
    s.valid.assign(static_cast<std::size_t>(s.n_nodes) * s.t_total, 1);
    for (const Cell& cell : cells)
        s.values(static_cast<Eigen::Index>(cell.node) * s.t_total + cell.t, cell.c) = cell.v;
    long missing = 0;
    for (Eigen::Index i = 0; i < s.values.rows(); ++i)
        for (Eigen::Index c = 0; c < s.values.cols(); ++c)
            if (!std::isfinite(s.values(i, c))) ++missing;
    forward_fill(s, missing);
    return s;
}

}  // namespace

void save_signals(const std::string& path, const SignalSeries& series) {
    series.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "USTD1 " << series.n_nodes << " " << series.t_total << " " << series.channels
        << "\n";
    std::vector<float> buf(static_cast<std::size_t>(series.t_total) * series.channels);
    for (int n = 0; n < series.n_nodes; ++n) {
        for (int t = 0; t < series.t_total; ++t)
            for (int c = 0; c < series.channels; ++c)
                buf[static_cast<std::size_t>(t) * series.channels + c] =
                    series.cell_valid(n, t)
                        ? static_cast<float>(series.at(n, t, c))
                        : std::numeric_limits<float>::quiet_NaN();
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing signals file: " + path);
    if (!series.meta.empty()) write_meta(path + ".meta", series.meta);
}

SignalSeries load_signals(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open signals file: " + path);
    char magic[5] = {0};
    in.read(magic, 5);
    if (!in) throw DataError("empty signals file: " + path);
    in.seekg(0);
    SignalSeries s = std::strncmp(magic, "USTD1", 5) == 0 ? load_signals_binary(in, path)
                                                          : load_signals_csv(in, path);
    auto meta = read_meta(path + ".meta");
    for (const auto& [k, v] : meta) s.meta.emplace(k, v);
    s.validate();
    return s;
}

std::pair<Graph, SignalSeries> load_dataset(const DatasetPaths& paths,
                                            const GraphKernelConfig& kernel) {
    SignalSeries series = load_signals(paths.signals);
    Graph g;
    if (!paths.coords.empty()) {
        Mat coords = load_coords_csv(paths.coords);
        if (coords.rows() != series.n_nodes)
            throw DataError("coordinates list " + std::to_string(coords.rows()) +
                            " nodes but signals have " + std::to_string(series.n_nodes));
        double sigma = kernel.sigma > 0.0 ? kernel.sigma : default_kernel_sigma(coords);
        g = build_adjacency_from_coords(coords, sigma, kernel.epsilon);
        if (!paths.adjacency.empty())
            g.adjacency = load_edge_list(paths.adjacency, series.n_nodes);
    } else if (!paths.adjacency.empty()) {
        g.n_nodes = series.n_nodes;
        g.adjacency = load_edge_list(paths.adjacency, series.n_nodes);
        g.coords.resize(0, 2);
    } else {
        throw ConfigError("load_dataset: need an adjacency or coordinates file");
    }
    g.validate();
    return {std::move(g), std::move(series)};
}

}  // namespace ustd
