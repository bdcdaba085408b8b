#include "ustd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ustd {

namespace {

void check_pair(const Mat& pred, const Mat& truth) {
    if (pred.size() == 0) throw DataError("metrics: empty input");
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DataError("metrics: prediction and truth shapes differ");
}

}  // namespace

double mae(const Mat& pred, const Mat& truth) {
    check_pair(pred, truth);
    return (pred - truth).cwiseAbs().sum() / static_cast<double>(pred.size());
}

double rmse(const Mat& pred, const Mat& truth) {
    check_pair(pred, truth);
    return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

double crps_point(const std::vector<double>& samples, double truth, bool fair) {
    const std::size_t m = samples.size();
    if (m < 2) throw DataError("crps needs at least two samples");
    double dist = 0;
    for (double s : samples) dist += std::fabs(s - truth);
    dist /= static_cast<double>(m);

    // Mean pairwise distance via the sorted-order identity:
    // sum_{i,j} |s_i - s_j| = 2 * sum_i (2i + 1 - m) * s_(i), ascending, 0-based.
    std::vector<double> sorted(samples);
    std::sort(sorted.begin(), sorted.end());
    double pairwise = 0;
    for (std::size_t i = 0; i < m; ++i)
        pairwise += (2.0 * static_cast<double>(i) + 1.0 - static_cast<double>(m)) * sorted[i];
    pairwise *= 2.0;

    double denom = fair ? 2.0 * static_cast<double>(m) * static_cast<double>(m - 1)
                        : 2.0 * static_cast<double>(m) * static_cast<double>(m);
    return dist - pairwise / denom;
}

ErrorStats::ErrorStats(int horizons) : by_horizon_(static_cast<std::size_t>(std::max(horizons, 0))) {}

void ErrorStats::add(double pred, double truth, int horizon) {
    double e = pred - truth;
    total_.abs_sum += std::fabs(e);
    total_.sq_sum += e * e;
    ++total_.n;
    if (!by_horizon_.empty()) {
        if (horizon < 0 || horizon >= static_cast<int>(by_horizon_.size()))
            throw DataError("metrics: horizon index out of range");
        Cell& c = by_horizon_[static_cast<std::size_t>(horizon)];
        c.abs_sum += std::fabs(e);
        c.sq_sum += e * e;
        ++c.n;
    }
}

void ErrorStats::add_matrix(const Mat& pred, const Mat& truth) {
    check_pair(pred, truth);
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
        for (Eigen::Index c = 0; c < pred.cols(); ++c)
            add(pred(r, c), truth(r, c));
}

void ErrorStats::merge(const ErrorStats& other) {
    if (by_horizon_.size() != other.by_horizon_.size())
        throw DataError("metrics: cannot merge stats with different horizon counts");
    total_.abs_sum += other.total_.abs_sum;
    total_.sq_sum += other.total_.sq_sum;
    total_.n += other.total_.n;
    for (std::size_t h = 0; h < by_horizon_.size(); ++h) {
        by_horizon_[h].abs_sum += other.by_horizon_[h].abs_sum;
        by_horizon_[h].sq_sum += other.by_horizon_[h].sq_sum;
        by_horizon_[h].n += other.by_horizon_[h].n;
    }
}

double ErrorStats::mae() const {
    if (total_.n == 0) throw DataError("metrics: no observations");
    return total_.abs_sum / static_cast<double>(total_.n);
}

double ErrorStats::rmse() const {
    if (total_.n == 0) throw DataError("metrics: no observations");
    return std::sqrt(total_.sq_sum / static_cast<double>(total_.n));
}

double ErrorStats::mae_at(int horizon) const {
    const Cell& c = by_horizon_.at(static_cast<std::size_t>(horizon));
    if (c.n == 0) throw DataError("metrics: no observations at this horizon");
    return c.abs_sum / static_cast<double>(c.n);
}

double ErrorStats::rmse_at(int horizon) const {
    const Cell& c = by_horizon_.at(static_cast<std::size_t>(horizon));
    if (c.n == 0) throw DataError("metrics: no observations at this horizon");
    return std::sqrt(c.sq_sum / static_cast<double>(c.n));
}

void CrpsStats::add(const std::vector<double>& samples, double truth) {
    crps_sum_ += crps_point(samples, truth, fair);
    abs_truth_sum_ += std::fabs(truth);
    ++n_;
}

void CrpsStats::merge(const CrpsStats& other) {
    if (fair != other.fair) throw DataError("metrics: cannot merge mixed crps modes");
    crps_sum_ += other.crps_sum_;
    abs_truth_sum_ += other.abs_truth_sum_;
    n_ += other.n_;
}

double CrpsStats::mean() const {
    if (n_ == 0) throw DataError("metrics: no observations");
    return crps_sum_ / static_cast<double>(n_);
}

double CrpsStats::normalized() const {
    if (n_ == 0) throw DataError("metrics: no observations");
    if (abs_truth_sum_ == 0.0)
        throw DataError(
            "crps normalization undefined for all-zero truth; use the unnormalized score");
    return crps_sum_ / abs_truth_sum_;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os << "split=" << split << "\n";
    os << "task=" << task_name(task) << "\n";
    os << "windows=" << windows << "\n";
    os << "samples=" << samples << "\n";
    os << "mae=" << fmt(mae) << "\n";
    os << "rmse=" << fmt(rmse) << "\n";
    os << "crps=" << fmt(crps) << "\n";
    for (std::size_t h = 0; h < horizon_mae.size(); ++h)
        os << "horizon_mae." << h + 1 << "=" << fmt(horizon_mae[h]) << "\n";
    for (std::size_t h = 0; h < horizon_rmse.size(); ++h)
        os << "horizon_rmse." << h + 1 << "=" << fmt(horizon_rmse[h]) << "\n";
    for (const Row& row : baselines) {
        os << "baseline." << row.name << ".mae=" << fmt(row.mae) << "\n";
        os << "baseline." << row.name << ".rmse=" << fmt(row.rmse) << "\n";
        os << "baseline." << row.name << ".crps=" << fmt(row.crps) << "\n";
    }
    return os.str();
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << "method\tmae\trmse\tcrps\n";
    os << "model\t" << fmt(mae) << "\t" << fmt(rmse) << "\t" << fmt(crps) << "\n";
    for (const Row& row : baselines)
        os << row.name << "\t" << fmt(row.mae) << "\t" << fmt(row.rmse) << "\t"
           << fmt(row.crps) << "\n";
    return os.str();
}

void MetricReport::save(const std::string& text_path, const std::string& table_path) const {
    std::ofstream t(text_path);
    if (!t) throw DataError("cannot write report file: " + text_path);
    t << to_text();
    std::ofstream tb(table_path);
    if (!tb) throw DataError("cannot write report table: " + table_path);
    tb << to_table();
}

}  // namespace ustd
