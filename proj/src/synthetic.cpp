#include "ustd/synthetic.hpp"

#include <sstream>

namespace ustd {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace

std::pair<Graph, SignalSeries> synthesize_graph_signal(const SynthConfig& cfg, Rng& rng) {
    if (cfg.n_nodes < 4) throw ConfigError("synthesize: need at least 4 nodes");
    if (cfg.t_total < 2) throw ConfigError("synthesize: need at least 2 steps");
    if (cfg.ar_coeff < 0.0 || cfg.ar_coeff >= 1.0)
        throw ConfigError("synthesize: AR coefficient must be in [0,1)");
    const int n = cfg.n_nodes, t_total = cfg.t_total;

    Mat coords(n, 2);
    for (int i = 0; i < n; ++i) {
        coords(i, 0) = rng.uniform();
        coords(i, 1) = rng.uniform();
    }
    Graph g = build_adjacency_from_coords(coords, default_kernel_sigma(coords),
                                          cfg.kernel_epsilon);
    Mat prop = normalize_adjacency(g);

    // Smoothly varying phase fields: a random planar direction per sinusoid,
    // phase advancing phase_smoothness cycles across the unit square, plus
    // independent per-node jitter.
    Eigen::VectorXd phase1(n), phase2(n);
    double dir1 = kTwoPi * rng.uniform();
    double dir2 = kTwoPi * rng.uniform();
    for (int i = 0; i < n; ++i) {
        double proj1 = coords(i, 0) * std::cos(dir1) + coords(i, 1) * std::sin(dir1);
        double proj2 = coords(i, 0) * std::cos(dir2) + coords(i, 1) * std::sin(dir2);
        phase1(i) = kTwoPi * cfg.phase_smoothness * proj1 + cfg.phase_jitter * rng.normal();
        phase2(i) = kTwoPi * cfg.phase_smoothness * proj2 + cfg.phase_jitter * rng.normal();
    }

    Mat clean(static_cast<Eigen::Index>(n) * t_total, 1);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    for (int t = -cfg.burn_in; t < t_total; ++t) {
        if (cfg.ar_sigma > 0.0) {
            Eigen::VectorXd eta = rng.normal_matrix(n, 1) * cfg.ar_sigma;
            u = cfg.ar_coeff * u + prop * eta;
        }
        if (t < 0) continue;
        for (int i = 0; i < n; ++i) {
            double seasonal = cfg.amp1 * std::sin(kTwoPi * t / cfg.p1 + phase1(i)) +
                              cfg.amp2 * std::sin(kTwoPi * t / cfg.p2 + phase2(i));
            clean(static_cast<Eigen::Index>(i) * t_total + t, 0) = seasonal + u(i);
        }
    }

    double obs_sigma = 0.0;
    if (std::isfinite(cfg.snr_db)) {
        double power = clean.array().square().mean();
        obs_sigma = std::sqrt(power / std::pow(10.0, cfg.snr_db / 10.0));
    }

    SignalSeries s;
    s.n_nodes = n;
    s.t_total = t_total;
    s.channels = 1;
    s.values = clean;
    if (obs_sigma > 0.0) s.values += obs_sigma * rng.normal_matrix(n * t_total, 1);
    s.meta["attribute"] = "synthetic";
    s.meta["granularity"] = "1 step";
    s.meta["units"] = "arbitrary";
    s.meta["gen.p1"] = fmt(cfg.p1);
    s.meta["gen.p2"] = fmt(cfg.p2);
    s.meta["gen.amp1"] = fmt(cfg.amp1);
    s.meta["gen.amp2"] = fmt(cfg.amp2);
    s.meta["gen.phase_smoothness"] = fmt(cfg.phase_smoothness);
    s.meta["gen.phase_jitter"] = fmt(cfg.phase_jitter);
    s.meta["gen.ar_coeff"] = fmt(cfg.ar_coeff);
    s.meta["gen.ar_sigma"] = fmt(cfg.ar_sigma);
    s.meta["gen.snr_db"] = fmt(cfg.snr_db);
    s.meta["gen.obs_sigma"] = fmt(obs_sigma);
    s.meta["gen.kernel_epsilon"] = fmt(cfg.kernel_epsilon);
    s.validate();
    return {std::move(g), std::move(s)};
}

}  // namespace ustd
