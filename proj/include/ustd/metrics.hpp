#pragma once

#include <string>
#include <vector>

#include "ustd/common.hpp"
#include "ustd/dataset.hpp"

namespace ustd {

/// Elementwise mean absolute error. Shapes must match and be non-empty.
double mae(const Mat& pred, const Mat& truth);
double rmse(const Mat& pred, const Mat& truth);

/// Energy-form CRPS of a scalar observation against an m-sample ensemble:
/// (1/m) sum |s_i - y| - spread, where the spread term is the mean pairwise
/// distance halved; `fair` applies the m/(m-1) small-ensemble correction.
/// Needs m >= 2.
double crps_point(const std::vector<double>& samples, double truth, bool fair);

/// Streaming MAE/RMSE, optionally split by forecast horizon step.
class ErrorStats {
public:
    explicit ErrorStats(int horizons = 0);
    void add(double pred, double truth, int horizon = 0);
    void add_matrix(const Mat& pred, const Mat& truth);
    void merge(const ErrorStats& other);
    long count() const { return total_.n; }
    int horizons() const { return static_cast<int>(by_horizon_.size()); }
    double mae() const;
    double rmse() const;
    double mae_at(int horizon) const;
    double rmse_at(int horizon) const;

private:
    struct Cell {
        double abs_sum = 0, sq_sum = 0;
        long n = 0;
    };
    Cell total_;
    std::vector<Cell> by_horizon_;
};

/// Streaming CRPS over evaluation points. `normalized()` divides the summed
/// CRPS by the summed |truth| (scale-free score); it rejects all-zero truth.
class CrpsStats {
public:
    bool fair = true;
    void add(const std::vector<double>& samples, double truth);
    void merge(const CrpsStats& other);
    long count() const { return n_; }
    double mean() const;
    double normalized() const;

private:
    double crps_sum_ = 0, abs_truth_sum_ = 0;
    long n_ = 0;
};

/// Evaluation summary for one split, plus optional reference-method rows.
struct MetricReport {
    std::string split = "test";
    Task task = Task::forecast;
    long windows = 0;
    int samples = 0;
    double mae = 0, rmse = 0, crps = 0;
    std::vector<double> horizon_mae, horizon_rmse;

    struct Row {
        std::string name;
        double mae = 0, rmse = 0, crps = 0;
    };
    std::vector<Row> baselines;

    std::string to_text() const;   // key=value lines
    std::string to_table() const;  // tab-separated, one row per method
    void save(const std::string& text_path, const std::string& table_path) const;
};

}  // namespace ustd
