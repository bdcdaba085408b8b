#pragma once

#include <functional>

#include "ustd/autodiff.hpp"
#include "ustd/common.hpp"

namespace ustd {

enum class ScheduleShape { linear, quadratic };

ScheduleShape parse_schedule_shape(const std::string& s);
std::string schedule_shape_name(ScheduleShape s);

/// Variance schedule of the forward noising chain. Step indices are 1-based
/// in the API; beta(k) = beta_[k-1].
struct NoiseSchedule {
    int K = 0;
    std::vector<double> beta;       // increasing, each in (0,1)
    std::vector<double> alpha_hat;  // 1 - beta_k
    std::vector<double> alpha;      // prod_{s<=k} alpha_hat_s, decreasing

    static NoiseSchedule make(int K, double beta_start, double beta_end, ScheduleShape shape);
    void validate() const;

    double b(int k) const { return beta.at(static_cast<std::size_t>(k - 1)); }
    double ah(int k) const { return alpha_hat.at(static_cast<std::size_t>(k - 1)); }
    double a(int k) const { return alpha.at(static_cast<std::size_t>(k - 1)); }
};

/// One-shot forward corruption y_k = sqrt(alpha_k) y0 + sqrt(1-alpha_k) eps.
Mat q_sample(const Mat& y0, int k, const Mat& eps, const NoiseSchedule& sched);

/// One reverse-chain update
///   y_{k-1} = (y_k - beta_k / sqrt(1-alpha_k) * eps_hat) / sqrt(alpha_hat_k)
///             + sqrt(beta_k) * z,
/// with z = 0 on the final step k=1.
Mat reverse_step(const Mat& y_k, int k, const Mat& eps_hat, const Mat& z,
                 const NoiseSchedule& sched);

/// Noise-prediction network under training: given the corrupted target and
/// the step index, emit eps_hat on the tape.
using DenoiserTrainFn = std::function<ad::Var(ad::Tape&, const Mat& y_k, int k)>;

/// Squared-error noise-matching objective: mean((eps - eps_hat)^2) with
/// y_k built from (y0, k, eps). Gradients flow through the denoiser closure.
ad::Var diffusion_training_loss(ad::Tape& tape, const Mat& y0, int k, const Mat& eps,
                                const NoiseSchedule& sched, const DenoiserTrainFn& denoiser);

/// Forward-only noise prediction used by the sampler.
using DenoiserEvalFn = std::function<Mat(const Mat& y_k, int k)>;

/// Run the full reverse chain once from pure Gaussian noise; the result is a
/// single target-shaped sample. Aborts with the step index when the chain
/// leaves the finite range.
Mat sample_chain(Eigen::Index rows, Eigen::Index cols, const NoiseSchedule& sched,
                 const DenoiserEvalFn& denoiser, Rng& rng);

}  // namespace ustd
