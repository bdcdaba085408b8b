#pragma once

#include "ustd/dataset.hpp"
#include "ustd/nn.hpp"

namespace ustd {

/// Architecture of the pre-trained spatio-temporal encoder and its
/// reconstruction decoder. Valid (no-padding) temporal convolutions shrink
/// the window from T to tau = T - (kernel-1) * sum(dilations).
struct EncoderConfig {
    int d_x = 1;
    int hidden = 32;    // channels inside each layer
    int latent = 64;    // output representation channels
    int skip = 64;      // skip-aggregation channels
    int kernel = 2;     // temporal kernel width c
    std::vector<int> dilations = {1, 2, 3, 1, 2, 2};
    int gcn_depth = 2;  // propagation hops L
    int decoder_layers = 3;
    int T = 12;

    int tau() const;
    void validate() const;
    std::map<std::string, std::string> to_map() const;
    static EncoderConfig from_map(const std::map<std::string, std::string>& m);
};

/// Binary (node, time) mask with an exact without-replacement cell count.
struct MaskSpec {
    std::vector<char> mask;  // size n*T, row-major (node-major) like windows
    int count = 0;
    double ratio = 0.0;
};
MaskSpec sample_mask(int n_nodes, int T, double ratio, Rng& rng);

/// Powers of the propagation matrix P^0..P^L (P^0 = I).
std::vector<Mat> propagation_powers(const Mat& norm_adj, int depth);

class StEncoder {
public:
    EncoderConfig cfg;
    ParamStore params;  // mask token "tk", encoder "enc.*", decoder "dec.*"

    void init(Rng& rng);

    /// tanh/sigmoid-gated valid dilated convolution of encoder layer `layer`
    /// applied to (n*t_in) x hidden input; output keeps t_in - (c-1)*dilation
    /// steps per node.
    ad::Var gated_tcn(ad::Tape& tape, ad::Var h, int n_nodes, int t_in, int layer);

    /// Multi-hop graph convolution sum_l P^l H W_l of encoder layer `layer`,
    /// applied independently at each of `stride` time positions.
    ad::Var gcn(ad::Tape& tape, ad::Var h, const std::vector<Mat>& powers, int stride,
                int layer);

    /// x: (n*T) x d_x node-major -> representations (n*tau) x latent.
    ad::Var encode(ad::Tape& tape, ad::Var x, const std::vector<Mat>& powers);

    /// Representations (n*tau) x latent -> reconstruction (n*T) x d_x.
    ad::Var reconstruct(ad::Tape& tape, ad::Var h, const std::vector<Mat>& powers);

    /// Replace masked (node, time) cells with the learnable token.
    ad::Var apply_mask(ad::Tape& tape, ad::Var x, const MaskSpec& spec);

    /// Mean absolute error over masked cells only.
    ad::Var masked_mae(ad::Tape& tape, ad::Var recon, const Mat& target,
                       const MaskSpec& spec);

    /// One pre-training iteration over a batch of condition windows: subgraph
    /// sample, mask, encode, reconstruct, masked-MAE gradient step.
    double pretrain_step(const std::vector<const WindowPair*>& batch, const Graph& graph,
                         double sample_rate, double mask_ratio, Rng& rng, Adam& opt);

    /// Forward-only convenience used at inference: encode a window on the
    /// full graph without gradient tracking.
    Mat encode_value(const Mat& x, const std::vector<Mat>& powers);

    Checkpoint to_checkpoint() const;
    static StEncoder from_checkpoint(const Checkpoint& ckpt);
};

}  // namespace ustd
