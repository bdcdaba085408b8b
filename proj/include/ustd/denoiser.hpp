#pragma once

#include "ustd/dataset.hpp"
#include "ustd/nn.hpp"

namespace ustd {

/// Noise-prediction network configuration shared by the forecasting variant
/// (temporal gated attention: per-node cross-attention over the latent time
/// axis) and the kriging variant (spatial gated attention: target-to-observed
/// cross-attention), plus two ablation switches.
struct DenoiserConfig {
    Task task = Task::forecast;
    int d_y = 1;
    int steps = 12;    // target steps per node (T' forecasting, T kriging)
    int channel = 96;  // token width d_h'
    int layers = 2;
    int heads = 4;
    int latent = 64;   // conditional representation channels
    int tau = 1;       // latent steps per node
    int d_s = 8;       // spatial embedding width
    int diff_dim = 128;  // sinusoidal diffusion-step embedding width

    bool no_self_attention = false;  // drop the node self-attention branch
    bool raw_condition = false;      // condition on the raw window, no encoder
    int raw_dim = 0;                 // T*d_x of the raw condition per node

    bool full_attention = false;  // joint attention over target+condition tokens
    int ffn_hidden = 256;         // feed-forward width of the joint variant

    void validate() const;
    std::map<std::string, std::string> to_map() const;
    static DenoiserConfig from_map(const std::map<std::string, std::string>& m);
};

/// Fixed sinusoidal position code (1 x dim).
Mat sinusoidal_embedding(double pos, int dim);

class Denoiser {
public:
    DenoiserConfig cfg;
    ParamStore params;

    void init(Rng& rng);

    /// Conditioning inputs for one window. `h` is the conditional
    /// representation (n_cond*tau) x latent, or the raw condition window
    /// (n_cond*T) x d_x when raw_condition is set. Spatial embedding rows are
    /// taken from the full graph; for kriging the target and condition node
    /// sets differ, for forecasting they coincide (spatial_cond left empty).
    struct Cond {
        Mat h;
        Mat spatial_target;
        Mat spatial_cond;
        int t_abs = 0;  // absolute series index of the last condition step
    };

    /// y_k: (n_target*steps) x d_y corrupted targets -> noise estimate of the
    /// same shape.
    ad::Var forward(ad::Tape& tape, ad::Var y_k, const Cond& cond, int k);

    /// Same, but with the conditional representation as a tape variable so
    /// gradients can flow back into the encoder; cond.h is ignored.
    ad::Var forward_with(ad::Tape& tape, ad::Var y_k, ad::Var h, const Cond& cond, int k);

    Mat forward_value(const Mat& y_k, const Cond& cond, int k);

    std::size_t n_params() const { return params.count_scalars(); }

    Checkpoint to_checkpoint() const;
    static Denoiser from_checkpoint(const Checkpoint& ckpt);
};

}  // namespace ustd
