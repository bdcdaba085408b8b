#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ustd/diffusion.hpp"

using namespace ustd;

namespace {

Mat scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

// Independent scalar evaluator for the reverse update, written directly from
// the closed-form update with no shared code.
double reverse_oracle(double y, double beta, double alpha_hat, double alpha, double eps_hat,
                      double z) {
    double mean = (y - beta / std::sqrt(1.0 - alpha) * eps_hat) / std::sqrt(alpha_hat);
    return mean + std::sqrt(beta) * z;
}

}  // namespace

TEST_CASE("schedule construction") {
    SUBCASE("two-step linear products") {
        NoiseSchedule s = NoiseSchedule::make(2, 0.1, 0.2, ScheduleShape::linear);
        CHECK(s.b(1) == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(s.b(2) == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(s.ah(1) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(s.ah(2) == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(s.a(1) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(s.a(2) == doctest::Approx(0.72).epsilon(1e-15));
    }
    SUBCASE("single step") {
        NoiseSchedule s = NoiseSchedule::make(1, 0.1, 0.3, ScheduleShape::quadratic);
        CHECK(s.a(1) == 1.0 - s.b(1));
    }
    SUBCASE("default quadratic schedule crushes alpha") {
        NoiseSchedule s = NoiseSchedule::make(50, 1e-4, 0.5, ScheduleShape::quadratic);
        CHECK(s.a(50) < 1e-4);
        CHECK(s.a(50) == doctest::Approx(3.3540788754e-05).epsilon(1e-9));
        CHECK(s.b(1) == doctest::Approx(1e-4).epsilon(1e-12));
        CHECK(s.b(50) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("invariants hold for random configs") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            int K = 2 + rng.index(99);
            double bs = 1e-5 + rng.uniform() * 1e-2;
            double be = bs + 0.05 + rng.uniform() * 0.4;
            ScheduleShape shape =
                rng.uniform() < 0.5 ? ScheduleShape::linear : ScheduleShape::quadratic;
            NoiseSchedule s = NoiseSchedule::make(K, bs, be, shape);
            s.validate();  // throws on violation
            for (int k = 2; k <= K; ++k) {
                CHECK(s.b(k) > s.b(k - 1));
                CHECK(s.a(k) < s.a(k - 1));
            }
        }
    }
    SUBCASE("bad ranges rejected") {
        CHECK_THROWS_AS(NoiseSchedule::make(10, 0.2, 0.1, ScheduleShape::linear),
                        ConfigError);
        CHECK_THROWS_AS(NoiseSchedule::make(10, 0.0, 0.5, ScheduleShape::linear),
                        ConfigError);
        CHECK_THROWS_AS(NoiseSchedule::make(0, 0.1, 0.5, ScheduleShape::linear), ConfigError);
    }
}

TEST_CASE("forward corruption") {
    NoiseSchedule s = NoiseSchedule::make(2, 0.1, 0.2, ScheduleShape::linear);
    SUBCASE("deterministic arithmetic") {
        Mat y = q_sample(scalar(1.0), 2, scalar(0.0), s);
        CHECK(y(0, 0) == doctest::Approx(0.848528137423857).epsilon(1e-15));
        Mat y2 = q_sample(scalar(0.0), 2, scalar(1.5), s);
        CHECK(y2(0, 0) == doctest::Approx(1.5 * std::sqrt(1.0 - 0.72)).epsilon(1e-15));
    }
    SUBCASE("step bounds enforced") {
        CHECK_THROWS_AS(q_sample(scalar(1.0), 0, scalar(0.0), s), ConfigError);
        CHECK_THROWS_AS(q_sample(scalar(1.0), 3, scalar(0.0), s), ConfigError);
    }
    SUBCASE("monte carlo marginal matches the closed form") {
        Rng rng(7);
        const double y0 = 1.7;
        const int n = 100000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double y = q_sample(scalar(y0), 2, scalar(rng.normal()), s)(0, 0);
            sum += y;
            sum2 += y * y;
        }
        double mean = sum / n;
        double var = sum2 / n - mean * mean;
        CHECK(mean == doctest::Approx(std::sqrt(0.72) * y0).epsilon(0.02));
        CHECK(var == doctest::Approx(1.0 - 0.72).epsilon(0.02));
    }
    SUBCASE("stepwise chain composes to the one-shot marginal") {
        NoiseSchedule s5 = NoiseSchedule::make(5, 0.05, 0.4, ScheduleShape::quadratic);
        Rng rng(8);
        const double y0 = -1.3;
        const int n = 100000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double x = y0;
            for (int k = 1; k <= 5; ++k)
                x = std::sqrt(1.0 - s5.b(k)) * x + std::sqrt(s5.b(k)) * rng.normal();
            sum += x;
            sum2 += x * x;
        }
        double mean = sum / n;
        double var = sum2 / n - mean * mean;
        CHECK(mean == doctest::Approx(std::sqrt(s5.a(5)) * y0).epsilon(0.02));
        CHECK(var == doctest::Approx(1.0 - s5.a(5)).epsilon(0.02));
    }
}

TEST_CASE("reverse update") {
    NoiseSchedule s = NoiseSchedule::make(2, 0.1, 0.2, ScheduleShape::linear);
    SUBCASE("matches the independent scalar evaluator on the pinned point") {
        // beta=0.2, alpha_hat=0.8, alpha=0.72 at k=2 of the two-step schedule
        Mat out = reverse_step(scalar(1.0), 2, scalar(0.5), scalar(0.0), s);
        double oracle = reverse_oracle(1.0, 0.2, 0.8, 0.72, 0.5, 0.0);
        CHECK(out(0, 0) == doctest::Approx(oracle).epsilon(1e-15));
        CHECK(out(0, 0) == doctest::Approx(0.906745425067766).epsilon(1e-12));
    }
    SUBCASE("matches the evaluator on random tuples") {
        Rng rng(9);
        for (int trial = 0; trial < 100; ++trial) {
            int K = 2 + rng.index(40);
            NoiseSchedule rs = NoiseSchedule::make(K, 1e-4 + rng.uniform() * 0.01,
                                                   0.1 + rng.uniform() * 0.5,
                                                   ScheduleShape::quadratic);
            int k = 1 + rng.index(K);
            double y = rng.normal(), eh = rng.normal(), z = k > 1 ? rng.normal() : 0.0;
            Mat out = reverse_step(scalar(y), k, scalar(eh), scalar(z), rs);
            double oracle = reverse_oracle(y, rs.b(k), rs.ah(k), rs.a(k), eh, z);
            double rel = std::abs(out(0, 0) - oracle) /
                         std::max({std::abs(oracle), std::abs(out(0, 0)), 1e-300});
            CHECK(rel < 1e-12);
        }
    }
    SUBCASE("vanishing beta leaves the state unchanged") {
        NoiseSchedule tiny = NoiseSchedule::make(2, 1e-9, 2e-9, ScheduleShape::linear);
        Mat out = reverse_step(scalar(0.8), 2, scalar(0.0), scalar(0.0), tiny);
        CHECK(std::abs(out(0, 0) - 0.8) < 1e-8);
    }
    SUBCASE("final step ignores z and recovers y0 under the exact noise estimate") {
        Rng rng(10);
        for (int trial = 0; trial < 3; ++trial) {
            NoiseSchedule rs = NoiseSchedule::make(
                3, 1e-4 + rng.uniform() * 0.05, 0.2 + rng.uniform() * 0.3,
                ScheduleShape::linear);
            double y0 = rng.normal(), eps = rng.normal();
            Mat y1 = q_sample(scalar(y0), 1, scalar(eps), rs);
            // the exact noise estimate at k=1
            double eh = (y1(0, 0) - std::sqrt(rs.a(1)) * y0) / std::sqrt(1.0 - rs.a(1));
            Mat out = reverse_step(y1, 1, scalar(eh), Mat(), rs);
            CHECK(out(0, 0) == doctest::Approx(y0).epsilon(1e-10));
        }
    }
    SUBCASE("deterministic given identical inputs") {
        Mat a = reverse_step(scalar(0.3), 1, scalar(-0.2), Mat(), s);
        Mat b = reverse_step(scalar(0.3), 1, scalar(-0.2), Mat(), s);
        CHECK(a(0, 0) == b(0, 0));
    }
    SUBCASE("invalid step rejected") {
        CHECK_THROWS_AS(reverse_step(scalar(1.0), 0, scalar(0.0), scalar(0.0), s),
                        ConfigError);
    }
}

TEST_CASE("training objective") {
    NoiseSchedule s = NoiseSchedule::make(10, 1e-3, 0.3, ScheduleShape::quadratic);
    SUBCASE("zero predictor scores the noise power") {
        Rng rng(11);
        Mat y0 = rng.normal_matrix(100, 100);
        Mat eps = rng.normal_matrix(100, 100);
        ad::Tape tape(false);
        ad::Var loss = diffusion_training_loss(
            tape, y0, 4, eps, s, [](ad::Tape& t, const Mat& yk, int) {
                return t.constant(Mat::Zero(yk.rows(), yk.cols()));
            });
        CHECK(loss.value()(0, 0) == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("perfect predictor scores zero") {
        Rng rng(12);
        Mat y0 = rng.normal_matrix(4, 3);
        Mat eps = rng.normal_matrix(4, 3);
        ad::Tape tape(false);
        ad::Var loss = diffusion_training_loss(
            tape, y0, 7, eps, s, [&eps](ad::Tape& t, const Mat&, int) {
                return t.constant(eps);
            });
        CHECK(loss.value()(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("gradients flow to denoiser parameters") {
        Rng rng(13);
        Mat y0 = rng.normal_matrix(3, 2);
        Mat eps = rng.normal_matrix(3, 2);
        Mat w = rng.normal_matrix(2, 2);
        Mat grad = Mat::Zero(2, 2);
        double base;
        {
            ad::Tape tape;
            ad::Var loss = diffusion_training_loss(
                tape, y0, 5, eps, s, [&](ad::Tape& t, const Mat& yk, int) {
                    return matmul(t.constant(yk), t.param(w, &grad));
                });
            base = loss.value()(0, 0);
            tape.backward(loss);
        }
        (void)base;
        double h = 1e-6;
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) {
                auto eval = [&](double delta) {
                    Mat wp = w;
                    wp(r, c) += delta;
                    ad::Tape tape(false);
                    return diffusion_training_loss(
                               tape, y0, 5, eps, s,
                               [&](ad::Tape& t, const Mat& yk, int) {
                                   return matmul(t.constant(yk), t.constant(wp));
                               })
                        .value()(0, 0);
                };
                double fd = (eval(h) - eval(-h)) / (2 * h);
                CHECK(grad(r, c) == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
    SUBCASE("shape mismatch caught") {
        ad::Tape tape(false);
        CHECK_THROWS_AS(
            static_cast<void>(diffusion_training_loss(
                tape, Mat::Zero(2, 2), 3, Mat::Zero(2, 2), s,
                [](ad::Tape& t, const Mat&, int) { return t.constant(Mat::Zero(1, 1)); })),
            DataError);
    }
}

TEST_CASE("sampling loop") {
    NoiseSchedule s = NoiseSchedule::make(50, 1e-4, 0.5, ScheduleShape::quadratic);
    SUBCASE("deterministic given the stream") {
        auto denoiser = [](const Mat& yk, int) { return Mat(0.1 * yk); };
        Rng a(21), b(21);
        Mat sa = sample_chain(3, 2, s, denoiser, a);
        Mat sb = sample_chain(3, 2, s, denoiser, b);
        CHECK(sa.isApprox(sb, 0.0));
        CHECK(sa.rows() == 3);
        CHECK(sa.cols() == 2);
    }
    SUBCASE("divergence reports the step index") {
        auto bad = [](const Mat& yk, int k) {
            if (k == 37) return Mat(yk.array() + std::nan(""));
            return Mat(Mat::Zero(yk.rows(), yk.cols()));
        };
        Rng rng(22);
        CHECK_THROWS_WITH_AS(static_cast<void>(sample_chain(2, 2, s, bad, rng)),
                             doctest::Contains("step 37"), NumericError);
    }
    SUBCASE("posterior-exact denoiser recovers a gaussian target distribution") {
        // Targets y0 ~ N(mu, sigma^2): the conditional expectation of the
        // injected noise given y_k is available in closed form, which makes
        // the whole reverse chain testable end to end.
        const double mu = 2.0, sigma = 0.5;
        auto oracle = [&](const Mat& yk, int k) {
            double a = s.a(k);
            double c = std::sqrt(1.0 - a) / (a * sigma * sigma + 1.0 - a);
            return Mat(c * (yk.array() - std::sqrt(a) * mu));
        };
        Rng rng(23);
        const int n = 2000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double v = sample_chain(1, 1, s, oracle, rng)(0, 0);
            sum += v;
            sum2 += v * v;
        }
        double mean = sum / n;
        double stdev = std::sqrt(sum2 / n - mean * mean);
        CHECK(mean == doctest::Approx(mu).epsilon(0.025));
        CHECK(stdev == doctest::Approx(sigma).epsilon(0.05));
    }
}
