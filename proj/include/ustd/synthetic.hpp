#pragma once

#include "ustd/dataset.hpp"

namespace ustd {

/// Generator for diffusion-coupled seasonal graph signals. Each node carries
/// two incommensurate sinusoids whose phases vary smoothly over the plane
/// (plus per-node jitter), a graph-smoothed AR(1) noise component whose
/// innovations are mixed through the normalized adjacency, and white
/// observation noise at a configured signal-to-noise ratio.
struct SynthConfig {
    int n_nodes = 16;
    int t_total = 4096;
    double p1 = 24.0;
    double p2 = 33.941125496954285;  // 24*sqrt(2), incommensurate with p1
    double amp1 = 1.0;
    double amp2 = 0.5;
    double phase_smoothness = 1.5;  // phase cycles across the unit square
    double phase_jitter = 0.35;     // radians, i.i.d. per node
    double ar_coeff = 0.8;          // lag-1 autocorrelation of the noise field
    double ar_sigma = 0.4;          // innovation scale before graph mixing
    double snr_db = 10.0;           // observation noise level; +inf disables
    double kernel_epsilon = 0.1;    // adjacency threshold
    int burn_in = 100;              // AR warm-up steps discarded
};

std::pair<Graph, SignalSeries> synthesize_graph_signal(const SynthConfig& cfg, Rng& rng);

}  // namespace ustd
