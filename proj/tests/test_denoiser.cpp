#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "ustd/denoiser.hpp"

using namespace ustd;
using ad::Tape;
using ad::Var;

namespace {

DenoiserConfig small_cfg() {
    DenoiserConfig cfg;
    cfg.channel = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.steps = 3;
    cfg.latent = 4;
    cfg.tau = 2;
    cfg.d_s = 2;
    cfg.diff_dim = 6;
    return cfg;
}

Denoiser::Cond make_cond(const DenoiserConfig& cfg, int n_target, int n_cond, Rng& rng,
                         int t_abs = 17) {
    Denoiser::Cond c;
    c.h = rng.normal_matrix(static_cast<Eigen::Index>(n_cond) * cfg.tau, cfg.latent);
    c.spatial_target = rng.normal_matrix(n_target, cfg.d_s);
    if (cfg.task == Task::krige) c.spatial_cond = rng.normal_matrix(n_cond, cfg.d_s);
    c.t_abs = t_abs;
    return c;
}

void randomize_head(Denoiser& d, std::uint64_t seed) {
    Rng rng(seed);
    auto& e = d.params.at("out.W");
    e.value = glorot(rng, e.value.rows(), e.value.cols());
    d.params.at("out.b").value = 0.01 * rng.normal_matrix(1, d.params.at("out.b").value.cols());
}

void copy_shared(const Denoiser& src, Denoiser& dst) {
    for (const auto& name : dst.params.names())
        if (src.params.has(name)) dst.params.at(name).value = src.params.at(name).value;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
    DenoiserConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.channel = 95;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DenoiserConfig{};
    cfg.raw_condition = true;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.raw_dim = 12;
    CHECK_NOTHROW(cfg.validate());
    cfg = DenoiserConfig{};
    cfg.full_attention = true;
    cfg.no_self_attention = true;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DenoiserConfig{};
    cfg.heads = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config map round trip") {
    DenoiserConfig cfg;
    cfg.task = Task::krige;
    cfg.tau = 3;
    cfg.no_self_attention = true;
    DenoiserConfig back = DenoiserConfig::from_map(cfg.to_map());
    CHECK(back.task == Task::krige);
    CHECK(back.tau == 3);
    CHECK(back.no_self_attention);
    CHECK(back.channel == cfg.channel);
    CHECK_FALSE(back.full_attention);
}

TEST_CASE("sinusoidal embedding matches the textbook formula") {
    Mat e0 = sinusoidal_embedding(0.0, 4);
    CHECK(e0(0, 0) == 0.0);
    CHECK(e0(0, 1) == 1.0);
    CHECK(e0(0, 2) == 0.0);
    CHECK(e0(0, 3) == 1.0);
    Mat e2 = sinusoidal_embedding(2.0, 4);
    CHECK(e2(0, 0) == doctest::Approx(std::sin(2.0)).epsilon(1e-15));
    CHECK(e2(0, 1) == doctest::Approx(std::cos(2.0)).epsilon(1e-15));
    CHECK(e2(0, 2) == doctest::Approx(std::sin(0.02)).epsilon(1e-15));
    CHECK(e2(0, 3) == doctest::Approx(std::cos(0.02)).epsilon(1e-15));
}

TEST_CASE("parameter counts of the gated and joint variants") {
    Rng rng(1);
    Denoiser gated;
    gated.cfg = DenoiserConfig{};  // forecast defaults
    gated.init(rng);
    CHECK(gated.n_params() == 185100);

    Denoiser joint;
    joint.cfg = DenoiserConfig{};
    joint.cfg.full_attention = true;
    joint.init(rng);
    CHECK(joint.n_params() == 185516);

    double ratio = static_cast<double>(joint.n_params()) / static_cast<double>(gated.n_params());
    CHECK(std::fabs(ratio - 1.0) < 0.10);
}

TEST_CASE("fresh networks predict exactly zero noise") {
    Rng rng(7);
    for (bool krige : {false, true}) {
        Denoiser d;
        d.cfg = small_cfg();
        if (krige) d.cfg.task = Task::krige;
        d.init(rng);
        int n_t = krige ? 3 : 5;
        int n_c = krige ? 6 : 5;
        auto cond = make_cond(d.cfg, n_t, n_c, rng);
        Mat y = rng.normal_matrix(n_t * d.cfg.steps, d.cfg.d_y);
        Mat out = d.forward_value(y, cond, 4);
        CHECK(out.rows() == y.rows());
        CHECK(out.cols() == d.cfg.d_y);
        CHECK(out.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("forward output is finite and depends on the diffusion step") {
    Rng rng(11);
    Denoiser d;
    d.cfg = small_cfg();
    d.init(rng);
    randomize_head(d, 99);
    auto cond = make_cond(d.cfg, 4, 4, rng);
    Mat y = rng.normal_matrix(4 * d.cfg.steps, 1);
    Mat at1 = d.forward_value(y, cond, 1);
    Mat atK = d.forward_value(y, cond, 40);
    CHECK(all_finite(at1));
    CHECK((at1 - atK).cwiseAbs().maxCoeff() > 1e-10);

    // A single node is a valid graph.
    auto cond1 = make_cond(d.cfg, 1, 1, rng);
    Mat y1 = rng.normal_matrix(d.cfg.steps, 1);
    CHECK(all_finite(d.forward_value(y1, cond1, 3)));
}

TEST_CASE("absolute position of the condition window shifts forecasts only") {
    Rng rng(13);
    Denoiser fc;
    fc.cfg = small_cfg();
    fc.init(rng);
    randomize_head(fc, 5);
    auto cond = make_cond(fc.cfg, 4, 4, rng, 17);
    auto cond2 = cond;
    cond2.t_abs = 18;
    Mat y = rng.normal_matrix(4 * fc.cfg.steps, 1);
    CHECK((fc.forward_value(y, cond, 2) - fc.forward_value(y, cond2, 2))
              .cwiseAbs()
              .maxCoeff() > 1e-12);

    Denoiser kg;
    kg.cfg = small_cfg();
    kg.cfg.task = Task::krige;
    kg.init(rng);
    randomize_head(kg, 5);
    auto kc = make_cond(kg.cfg, 2, 5, rng, 17);
    auto kc2 = kc;
    kc2.t_abs = 18;
    Mat yk = rng.normal_matrix(2 * kg.cfg.steps, 1);
    Mat a = kg.forward_value(yk, kc, 2);
    Mat b = kg.forward_value(yk, kc2, 2);
    CHECK(a == b);
}

TEST_CASE("temporal attention is node-local with per-step scores") {
    Rng rng(17);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.tau = 3;
    d.cfg.layers = 2;
    d.init(rng);
    auto cond = make_cond(d.cfg, 5, 5, rng);
    Mat y = rng.normal_matrix(5 * d.cfg.steps, 1);
    Tape tape(false);
    tape.record_attention = true;
    d.forward(tape, tape.constant(y), cond, 2);
    // Two layers, each cross-attention then self-attention.
    REQUIRE(tape.attention_log.size() == 4);
    for (int layer : {0, 1}) {
        const auto& ca = tape.attention_log[2 * layer];
        CHECK(ca.groups == 5);
        CHECK(ca.score_rows == 1);
        CHECK(ca.score_cols == 3);
        REQUIRE(ca.probs.size() == 5 * 2);  // groups x heads
        for (const Mat& p : ca.probs) {
            CHECK(p.rows() == 1);
            CHECK(p.cols() == 3);
            CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(p.minCoeff() > 0.0);
        }
        const auto& sa = tape.attention_log[2 * layer + 1];
        CHECK(sa.groups == 1);
        CHECK(sa.score_rows == 5);
        CHECK(sa.score_cols == 5);
        for (const Mat& p : sa.probs)
            for (Eigen::Index r = 0; r < p.rows(); ++r)
                CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("one latent step per node gives degenerate attention weights") {
    Rng rng(19);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.tau = 1;
    d.init(rng);
    auto cond = make_cond(d.cfg, 4, 4, rng);
    Mat y = rng.normal_matrix(4 * d.cfg.steps, 1);
    Tape tape(false);
    tape.record_attention = true;
    d.forward(tape, tape.constant(y), cond, 2);
    const auto& ca = tape.attention_log[0];
    for (const Mat& p : ca.probs) {
        REQUIRE(p.size() == 1);
        CHECK(p(0, 0) == 1.0);  // softmax over a single key
    }
}

TEST_CASE("cross-node attention spans targets to observed nodes") {
    Rng rng(23);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.task = Task::krige;
    d.init(rng);
    auto cond = make_cond(d.cfg, 3, 7, rng);
    Mat y = rng.normal_matrix(3 * d.cfg.steps, 1);
    Tape tape(false);
    tape.record_attention = true;
    d.forward(tape, tape.constant(y), cond, 2);
    REQUIRE(tape.attention_log.size() == 2);
    const auto& ca = tape.attention_log[0];
    CHECK(ca.groups == 1);
    CHECK(ca.score_rows == 3);
    CHECK(ca.score_cols == 7);
    const auto& sa = tape.attention_log[1];
    CHECK(sa.score_rows == 3);
    CHECK(sa.score_cols == 3);
}

TEST_CASE("kriging output is invariant to observed-node ordering") {
    Rng rng(29);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.task = Task::krige;
    d.init(rng);
    randomize_head(d, 3);
    int n_obs = 6;
    auto cond = make_cond(d.cfg, 2, n_obs, rng);
    Mat y = rng.normal_matrix(2 * d.cfg.steps, 1);
    Mat base = d.forward_value(y, cond, 5);

    std::vector<int> perm = {4, 0, 5, 2, 1, 3};
    auto permuted = cond;
    for (int i = 0; i < n_obs; ++i) {
        permuted.h.middleRows(static_cast<Eigen::Index>(i) * d.cfg.tau, d.cfg.tau) =
            cond.h.middleRows(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]) * d.cfg.tau,
                              d.cfg.tau);
        permuted.spatial_cond.row(i) = cond.spatial_cond.row(perm[static_cast<std::size_t>(i)]);
    }
    Mat same = d.forward_value(y, permuted, 5);
    CHECK((base - same).cwiseAbs().maxCoeff() < 1e-12);

    // Permuting the embeddings without the latents breaks the pairing.
    auto broken = cond;
    for (int i = 0; i < n_obs; ++i)
        broken.spatial_cond.row(i) = cond.spatial_cond.row(perm[static_cast<std::size_t>(i)]);
    Mat other = d.forward_value(y, broken, 5);
    CHECK((base - other).cwiseAbs().maxCoeff() > 1e-10);
}

TEST_CASE("gated fusion interpolates between the two attention branches") {
    Rng rng(31);
    DenoiserConfig cfg = small_cfg();
    cfg.tau = 1;
    Denoiser gated;
    gated.cfg = cfg;
    gated.init(rng);
    randomize_head(gated, 4);
    // Silence the self-attention branch so fused = gate * cross output.
    for (const char* w : {"l0.sa.Wq", "l0.sa.Wk", "l0.sa.Wv"})
        gated.params.at(w).value.setZero();
    gated.params.at("l0.gate.W1").value.setZero();
    gated.params.at("l0.gate.W2").value.setZero();

    DenoiserConfig ccfg = cfg;
    ccfg.no_self_attention = true;
    Denoiser cross;
    cross.cfg = ccfg;
    cross.init(rng);
    copy_shared(gated, cross);

    auto cond = make_cond(cfg, 4, 4, rng);
    Mat y = rng.normal_matrix(4 * cfg.steps, 1);

    // Saturated-open gate: the fused token is the cross-attention token.
    gated.params.at("l0.gate.b").value.setConstant(40.0);
    Mat open = gated.forward_value(y, cond, 2);
    Mat ca_only = cross.forward_value(y, cond, 2);
    CHECK((open - ca_only).cwiseAbs().maxCoeff() < 1e-12);

    // Neutral gate = 1/2: same as halving the cross-attention values.
    gated.params.at("l0.gate.b").value.setZero();
    Mat half = gated.forward_value(y, cond, 2);
    Denoiser halved = cross;
    halved.params.at("l0.ca.Wv").value *= 0.5;
    Mat expect = halved.forward_value(y, cond, 2);
    CHECK((half - expect).cwiseAbs().maxCoeff() < 1e-12);

    // Saturated-closed gate: both branches silent, the token passes through.
    gated.params.at("l0.gate.b").value.setConstant(-40.0);
    Mat closed = gated.forward_value(y, cond, 2);
    Denoiser muted = cross;
    muted.params.at("l0.ca.Wv").value.setZero();
    Mat silent = muted.forward_value(y, cond, 2);
    CHECK((closed - silent).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("removing the self-attention branch changes the prediction") {
    Rng rng(37);
    Denoiser gated;
    gated.cfg = small_cfg();
    gated.init(rng);
    randomize_head(gated, 8);
    Denoiser cross;
    cross.cfg = gated.cfg;
    cross.cfg.no_self_attention = true;
    cross.init(rng);
    copy_shared(gated, cross);
    CHECK(cross.n_params() < gated.n_params());

    auto cond = make_cond(gated.cfg, 4, 4, rng);
    Mat y = rng.normal_matrix(4 * gated.cfg.steps, 1);
    Mat a = gated.forward_value(y, cond, 2);
    Mat b = cross.forward_value(y, cond, 2);
    CHECK((a - b).cwiseAbs().maxCoeff() > 1e-10);

    Tape tape(false);
    tape.record_attention = true;
    cross.forward(tape, tape.constant(y), cond, 2);
    CHECK(tape.attention_log.size() == 1);  // one layer, cross-attention only
}

TEST_CASE("raw-window conditioning bypasses the encoder") {
    Rng rng(41);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.raw_condition = true;
    d.cfg.d_y = 1;
    d.cfg.raw_dim = d.cfg.steps * 2;  // window length = steps here, d_x = 2
    d.init(rng);
    randomize_head(d, 6);
    Denoiser::Cond cond;
    cond.h = rng.normal_matrix(4 * d.cfg.steps, 2);
    cond.spatial_target = rng.normal_matrix(4, d.cfg.d_s);
    cond.t_abs = 9;
    Mat y = rng.normal_matrix(4 * d.cfg.steps, 1);
    Mat out = d.forward_value(y, cond, 3);
    CHECK(all_finite(out));
    CHECK(out.rows() == y.rows());

    auto cond2 = cond;
    cond2.h(5, 1) += 0.25;
    CHECK((d.forward_value(y, cond2, 3) - out).cwiseAbs().maxCoeff() > 1e-12);

    Denoiser kd;
    kd.cfg = d.cfg;
    kd.cfg.task = Task::krige;
    kd.init(rng);
    randomize_head(kd, 6);
    Denoiser::Cond kc;
    kc.h = rng.normal_matrix(5 * kd.cfg.steps, 2);
    kc.spatial_target = rng.normal_matrix(2, kd.cfg.d_s);
    kc.spatial_cond = rng.normal_matrix(5, kd.cfg.d_s);
    Mat yk = rng.normal_matrix(2 * kd.cfg.steps, 1);
    CHECK(all_finite(kd.forward_value(yk, kc, 3)));
}

TEST_CASE("joint-attention variant mixes target and condition tokens") {
    Rng rng(43);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.full_attention = true;
    d.cfg.tau = 1;
    d.init(rng);
    auto cond = make_cond(d.cfg, 4, 4, rng);
    Mat y = rng.normal_matrix(4 * d.cfg.steps, 1);
    CHECK(d.forward_value(y, cond, 2).cwiseAbs().maxCoeff() == 0.0);  // zero head

    randomize_head(d, 2);
    Tape tape(false);
    tape.record_attention = true;
    Mat out = d.forward(tape, tape.constant(y), cond, 2).value();
    CHECK(out.rows() == y.rows());
    REQUIRE(tape.attention_log.size() == 1);  // one joint block per layer
    const auto& rec = tape.attention_log[0];
    CHECK(rec.groups == 1);
    CHECK(rec.score_rows == 8);  // 4 target + 4 condition tokens
    CHECK(rec.score_cols == 8);

    auto cond2 = cond;
    cond2.h(1, 2) += 0.3;
    CHECK((d.forward_value(y, cond2, 2) - out).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("analytic gradients agree with finite differences") {
    Rng rng(47);
    auto loss_of = [](Denoiser& d, const Mat& y, const Denoiser::Cond& cond) {
        Tape tape;
        Var f = d.forward(tape, tape.constant(y), cond, 3);
        Var loss = mean_all(mul(f, f));
        tape.backward(loss);
        return loss.value()(0, 0);
    };
    auto fd_check = [&](Denoiser& d, const Mat& y, const Denoiser::Cond& cond,
                        const std::string& name) {
        d.params.zero_grad();
        loss_of(d, y, cond);
        Mat analytic = d.params.at(name).grad;
        const double h = 1e-6;
        for (auto [r, c] : {std::pair<int, int>{0, 0}, {0, 1}}) {
            double saved = d.params.at(name).value(r, c);
            d.params.at(name).value(r, c) = saved + h;
            double up = loss_of(d, y, cond);
            d.params.at(name).value(r, c) = saved - h;
            double dn = loss_of(d, y, cond);
            d.params.at(name).value(r, c) = saved;
            double fd = (up - dn) / (2 * h);
            double denom = std::max({std::fabs(fd), std::fabs(analytic(r, c)), 1e-8});
            INFO(name << "(" << r << "," << c << ")");
            CHECK(std::fabs(fd - analytic(r, c)) < 1e-4 * denom + 1e-9);
        }
    };

    Denoiser fc;
    fc.cfg = small_cfg();
    fc.init(rng);
    randomize_head(fc, 12);
    auto cond = make_cond(fc.cfg, 3, 3, rng);
    Mat y = rng.normal_matrix(3 * fc.cfg.steps, 1);
    for (const char* name : {"in.W", "semb.W", "demb.W2", "l0.hproj.W", "l0.ca.Wk",
                             "l0.sa.Wv", "l0.gate.W1", "out.W"})
        fd_check(fc, y, cond, name);

    Denoiser kg;
    kg.cfg = small_cfg();
    kg.cfg.task = Task::krige;
    kg.init(rng);
    randomize_head(kg, 12);
    auto kc = make_cond(kg.cfg, 2, 5, rng);
    Mat yk = rng.normal_matrix(2 * kg.cfg.steps, 1);
    for (const char* name : {"absorb.W", "l0.ca.Wq", "l0.gate.W2"})
        fd_check(kg, yk, kc, name);

    Denoiser tf;
    tf.cfg = small_cfg();
    tf.cfg.full_attention = true;
    tf.init(rng);
    randomize_head(tf, 12);
    for (const char* name : {"hproj.W", "l0.att.Wq", "l0.ffn.W1"})
        fd_check(tf, y, cond, name);
}

TEST_CASE("shape contracts are enforced") {
    Rng rng(53);
    Denoiser d;
    d.cfg = small_cfg();
    d.init(rng);
    auto cond = make_cond(d.cfg, 4, 4, rng);
    CHECK_THROWS_AS(d.forward_value(rng.normal_matrix(4 * d.cfg.steps, 2), cond, 1),
                    DataError);
    CHECK_THROWS_AS(d.forward_value(rng.normal_matrix(4 * d.cfg.steps + 1, 1), cond, 1),
                    DataError);
    auto bad = cond;
    bad.spatial_target = rng.normal_matrix(3, d.cfg.d_s);
    CHECK_THROWS_AS(d.forward_value(rng.normal_matrix(4 * d.cfg.steps, 1), bad, 1),
                    DataError);
    auto short_h = cond;
    short_h.h = rng.normal_matrix(3 * d.cfg.tau, d.cfg.latent);
    CHECK_THROWS_AS(d.forward_value(rng.normal_matrix(4 * d.cfg.steps, 1), short_h, 1),
                    DataError);
}

TEST_CASE("checkpoints restore the network bit for bit") {
    Rng rng(59);
    Denoiser d;
    d.cfg = small_cfg();
    d.cfg.task = Task::krige;
    d.cfg.tau = 2;
    d.init(rng);
    randomize_head(d, 21);
    auto cond = make_cond(d.cfg, 2, 5, rng);
    Mat y = rng.normal_matrix(2 * d.cfg.steps, 1);
    Mat before = d.forward_value(y, cond, 4);

    std::string path = "denoiser_roundtrip.ckpt";
    save_checkpoint(path, d.to_checkpoint());
    Denoiser back = Denoiser::from_checkpoint(load_checkpoint(path));
    CHECK(back.cfg.task == Task::krige);
    CHECK(back.cfg.tau == 2);
    Mat after = back.forward_value(y, cond, 4);
    CHECK(before == after);
    std::remove(path.c_str());

    Checkpoint wrong;
    wrong.config = d.cfg.to_map();
    wrong.config["kind"] = "encoder";
    CHECK_THROWS_AS(Denoiser::from_checkpoint(wrong), ConfigError);
}
