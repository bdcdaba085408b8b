#include "ustd/diffusion.hpp"

namespace ustd {

ScheduleShape parse_schedule_shape(const std::string& s) {
    if (s == "linear") return ScheduleShape::linear;
    if (s == "quadratic") return ScheduleShape::quadratic;
    throw ConfigError("unknown schedule shape '" + s + "' (expected linear or quadratic)");
}

std::string schedule_shape_name(ScheduleShape s) {
    return s == ScheduleShape::linear ? "linear" : "quadratic";
}

NoiseSchedule NoiseSchedule::make(int K, double beta_start, double beta_end,
                                  ScheduleShape shape) {
    if (K < 1) throw ConfigError("noise schedule: K must be at least 1");
    if (!(beta_start > 0.0) || !(beta_start < beta_end) || !(beta_end < 1.0))
        throw ConfigError("noise schedule: need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.K = K;
    s.beta.resize(static_cast<std::size_t>(K));
    for (int k = 1; k <= K; ++k) {
        double frac = K == 1 ? 1.0 : static_cast<double>(k - 1) / (K - 1);
        double b;
        if (shape == ScheduleShape::linear) {
            b = beta_start + frac * (beta_end - beta_start);
        } else {
            double root = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) -
                                                          std::sqrt(beta_start));
            b = root * root;
        }
        s.beta[static_cast<std::size_t>(k - 1)] = b;
    }
    s.alpha_hat.resize(s.beta.size());
    s.alpha.resize(s.beta.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < s.beta.size(); ++i) {
        s.alpha_hat[i] = 1.0 - s.beta[i];
        prod *= s.alpha_hat[i];
        s.alpha[i] = prod;
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (K < 1 || beta.size() != static_cast<std::size_t>(K) ||
        alpha_hat.size() != beta.size() || alpha.size() != beta.size())
        throw ConfigError("noise schedule: inconsistent lengths");
    double prod = 1.0;
    for (int k = 1; k <= K; ++k) {
        double bk = b(k);
        if (!(bk > 0.0) || !(bk < 1.0))
            throw NumericError("noise schedule: beta out of (0,1) at step " +
                               std::to_string(k));
        if (k > 1 && !(bk > b(k - 1)))
            throw NumericError("noise schedule: beta not strictly increasing at step " +
                               std::to_string(k));
        if (ah(k) != 1.0 - bk)
            throw NumericError("noise schedule: alpha_hat mismatch at step " +
                               std::to_string(k));
        prod *= ah(k);
        if (a(k) != prod)
            throw NumericError("noise schedule: alpha product mismatch at step " +
                               std::to_string(k));
        if (!(a(k) > 0.0) || !(a(k) < 1.0))
            throw NumericError("noise schedule: alpha out of (0,1) at step " +
                               std::to_string(k));
        if (k > 1 && !(a(k) < a(k - 1)))
            throw NumericError("noise schedule: alpha not strictly decreasing at step " +
                               std::to_string(k));
    }
}

namespace {
void check_step(int k, int K) {
    if (k < 1 || k > K)
        throw ConfigError("diffusion step " + std::to_string(k) + " outside [1, " +
                          std::to_string(K) + "]");
}
}  // namespace

Mat q_sample(const Mat& y0, int k, const Mat& eps, const NoiseSchedule& sched) {
    check_step(k, sched.K);
    if (eps.rows() != y0.rows() || eps.cols() != y0.cols())
        throw DataError("q_sample: noise shape differs from target shape");
    double ak = sched.a(k);
    return std::sqrt(ak) * y0 + std::sqrt(1.0 - ak) * eps;
}

Mat reverse_step(const Mat& y_k, int k, const Mat& eps_hat, const Mat& z,
                 const NoiseSchedule& sched) {
    check_step(k, sched.K);
    if (eps_hat.rows() != y_k.rows() || eps_hat.cols() != y_k.cols())
        throw DataError("reverse_step: noise estimate shape differs from state shape");
    double bk = sched.b(k);
    double coeff = bk / std::sqrt(1.0 - sched.a(k));
    Mat mean = (y_k - coeff * eps_hat) / std::sqrt(sched.ah(k));
    if (k == 1) return mean;
    if (z.rows() != y_k.rows() || z.cols() != y_k.cols())
        throw DataError("reverse_step: z shape differs from state shape");
    return mean + std::sqrt(bk) * z;
}

ad::Var diffusion_training_loss(ad::Tape& tape, const Mat& y0, int k, const Mat& eps,
                                const NoiseSchedule& sched,
                                const DenoiserTrainFn& denoiser) {
    Mat y_k = q_sample(y0, k, eps, sched);
    ad::Var eps_hat = denoiser(tape, y_k, k);
    if (eps_hat.rows() != eps.rows() || eps_hat.cols() != eps.cols())
        throw DataError("training loss: denoiser output shape differs from noise shape");
    ad::Var diff = sub(eps_hat, tape.constant(eps));
    return mean_all(mul(diff, diff));
}

Mat sample_chain(Eigen::Index rows, Eigen::Index cols, const NoiseSchedule& sched,
                 const DenoiserEvalFn& denoiser, Rng& rng) {
    Mat y = rng.normal_matrix(rows, cols);
    for (int k = sched.K; k >= 1; --k) {
        Mat eps_hat = denoiser(y, k);
        Mat z = k > 1 ? rng.normal_matrix(rows, cols) : Mat::Zero(rows, cols);
        y = reverse_step(y, k, eps_hat, z, sched);
        if (!all_finite(y))
            throw NumericError("sampling chain diverged at step " + std::to_string(k));
    }
    return y;
}

}  // namespace ustd
