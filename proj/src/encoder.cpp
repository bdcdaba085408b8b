#include "ustd/encoder.hpp"

#include <numeric>
#include <sstream>

namespace ustd {

using ad::Tape;
using ad::Var;

int EncoderConfig::tau() const {
    int total = std::accumulate(dilations.begin(), dilations.end(), 0);
    return T - (kernel - 1) * total;
}

void EncoderConfig::validate() const {
    if (d_x < 1 || hidden < 1 || latent < 1 || skip < 1 || kernel < 1 || gcn_depth < 0 ||
        decoder_layers < 1 || T < 1 || dilations.empty())
        throw ConfigError("encoder config: dimensions must be positive");
    if (tau() < 1)
        throw ConfigError("encoder config: receptive field " +
                          std::to_string(T - tau()) + " leaves no output steps for T=" +
                          std::to_string(T));
}

std::map<std::string, std::string> EncoderConfig::to_map() const {
    std::ostringstream dil;
    for (std::size_t i = 0; i < dilations.size(); ++i) {
        if (i) dil << ",";
        dil << dilations[i];
    }
    return {{"d_x", std::to_string(d_x)},
            {"hidden", std::to_string(hidden)},
            {"latent", std::to_string(latent)},
            {"skip", std::to_string(skip)},
            {"kernel", std::to_string(kernel)},
            {"dilations", dil.str()},
            {"gcn_depth", std::to_string(gcn_depth)},
            {"decoder_layers", std::to_string(decoder_layers)},
            {"T", std::to_string(T)}};
}

EncoderConfig EncoderConfig::from_map(const std::map<std::string, std::string>& m) {
    EncoderConfig cfg;
    auto get = [&](const char* key) -> const std::string& {
        auto it = m.find(key);
        if (it == m.end()) throw ConfigError(std::string("encoder config missing ") + key);
        return it->second;
    };
    cfg.d_x = std::stoi(get("d_x"));
    cfg.hidden = std::stoi(get("hidden"));
    cfg.latent = std::stoi(get("latent"));
    cfg.skip = std::stoi(get("skip"));
    cfg.kernel = std::stoi(get("kernel"));
    cfg.gcn_depth = std::stoi(get("gcn_depth"));
    cfg.decoder_layers = std::stoi(get("decoder_layers"));
    cfg.T = std::stoi(get("T"));
    cfg.dilations.clear();
    std::istringstream ds(get("dilations"));
    std::string tok;
    while (std::getline(ds, tok, ',')) cfg.dilations.push_back(std::stoi(tok));
    cfg.validate();
    return cfg;
}

MaskSpec sample_mask(int n_nodes, int T, double ratio, Rng& rng) {
    if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("mask ratio must lie in [0,1)");
    MaskSpec spec;
    spec.ratio = ratio;
    long cells = static_cast<long>(n_nodes) * T;
    spec.count = static_cast<int>(std::lround(ratio * static_cast<double>(cells)));
    spec.mask.assign(static_cast<std::size_t>(cells), 0);
    for (int idx : rng.sample_without_replacement(static_cast<int>(cells), spec.count))
        spec.mask[static_cast<std::size_t>(idx)] = 1;
    return spec;
}

std::vector<Mat> propagation_powers(const Mat& norm_adj, int depth) {
    std::vector<Mat> powers;
    powers.push_back(Mat::Identity(norm_adj.rows(), norm_adj.cols()));
    for (int l = 1; l <= depth; ++l) powers.push_back(powers.back() * norm_adj);
    return powers;
}

namespace {

/// Valid dilated convolution along time via row gathers: output position t of
/// a node reads input positions t + tap*dilation, tap = 0..kernel-1; the
/// output is aligned with the *end* of each receptive window so residual
/// crops take the last t_out steps.
Var dilated_conv(Tape& tape, Var h, int n, int t_in, int kernel, int dilation,
                 ParamStore& params, const std::string& prefix) {
    int t_out = t_in - (kernel - 1) * dilation;
    if (t_out < 1)
        throw ConfigError("temporal convolution needs at least " +
                          std::to_string((kernel - 1) * dilation + 1) + " steps, got " +
                          std::to_string(t_in));
    Var out;
    for (int tap = 0; tap < kernel; ++tap) {
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(n) * t_out);
        for (int node = 0; node < n; ++node)
            for (int t = 0; t < t_out; ++t) idx.push_back(node * t_in + t + tap * dilation);
        Var term = matmul(gather_rows(h, std::move(idx)),
                          params.use(tape, prefix + ".W" + std::to_string(tap)));
        out = (tap == 0) ? term : add(out, term);
    }
    return add_row(out, params.use(tape, prefix + ".b"));
}

/// Last `keep` time steps of each node's block.
std::vector<int> tail_index(int n, int t_in, int keep) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n) * keep);
    for (int node = 0; node < n; ++node)
        for (int t = t_in - keep; t < t_in; ++t) idx.push_back(node * t_in + t);
    return idx;
}

Var gcn_stack(Tape& tape, Var h, const std::vector<Mat>& powers, int stride,
              ParamStore& params, const std::string& prefix) {
    Var out = matmul(h, params.use(tape, prefix + ".W0"));
    for (std::size_t l = 1; l < powers.size(); ++l)
        out = add(out, matmul(mix_rows(h, powers[l], stride),
                              params.use(tape, prefix + ".W" + std::to_string(l))));
    return add_row(out, params.use(tape, prefix + ".b"));
}

}  // namespace

void StEncoder::init(Rng& rng) {
    cfg.validate();
    const int h = cfg.hidden;
    params.add("tk", Mat::Zero(1, cfg.d_x));
    params.add("enc.in.W", glorot(rng, cfg.d_x, h));
    params.add("enc.in.b", Mat::Zero(1, h));
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
        std::string p = "enc.l" + std::to_string(i);
        for (const char* gate : {".t1", ".t2"}) {
            for (int tap = 0; tap < cfg.kernel; ++tap)
                params.add(p + gate + ".W" + std::to_string(tap), glorot(rng, h, h));
            params.add(p + gate + ".b", Mat::Zero(1, h));
        }
        params.add(p + ".skip.W", glorot(rng, h, cfg.skip));
        params.add(p + ".skip.b", Mat::Zero(1, cfg.skip));
        for (int l = 0; l <= cfg.gcn_depth; ++l)
            params.add(p + ".gcn.W" + std::to_string(l), glorot(rng, h, h));
        params.add(p + ".gcn.b", Mat::Zero(1, h));
        params.add(p + ".res.W", glorot(rng, h, h));
        params.add(p + ".res.b", Mat::Zero(1, h));
    }
    params.add("enc.head.W", glorot(rng, cfg.skip, cfg.latent));
    params.add("enc.head.b", Mat::Zero(1, cfg.latent));

    params.add("dec.in.W", glorot(rng, cfg.latent, h));
    params.add("dec.in.b", Mat::Zero(1, h));
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        std::string p = "dec.l" + std::to_string(i);
        for (const char* gate : {".t1", ".t2"}) {
            params.add(p + gate + ".W0", glorot(rng, h, h));
            params.add(p + gate + ".b", Mat::Zero(1, h));
        }
        for (int l = 0; l <= cfg.gcn_depth; ++l)
            params.add(p + ".gcn.W" + std::to_string(l), glorot(rng, h, h));
        params.add(p + ".gcn.b", Mat::Zero(1, h));
        params.add(p + ".res.W", glorot(rng, h, h));
        params.add(p + ".res.b", Mat::Zero(1, h));
    }
    params.add("dec.out.W1", glorot(rng, h, cfg.latent));
    params.add("dec.out.b1", Mat::Zero(1, cfg.latent));
    params.add("dec.out.W2", glorot(rng, cfg.latent, cfg.T * cfg.d_x));
    params.add("dec.out.b2", Mat::Zero(1, cfg.T * cfg.d_x));
}

Var StEncoder::gated_tcn(Tape& tape, Var h, int n_nodes, int t_in, int layer) {
    std::string p = "enc.l" + std::to_string(layer);
    int d = cfg.dilations.at(static_cast<std::size_t>(layer));
    Var filt = vtanh(dilated_conv(tape, h, n_nodes, t_in, cfg.kernel, d, params, p + ".t1"));
    Var gate = sigmoid(dilated_conv(tape, h, n_nodes, t_in, cfg.kernel, d, params, p + ".t2"));
    return mul(filt, gate);
}

Var StEncoder::gcn(Tape& tape, Var h, const std::vector<Mat>& powers, int stride, int layer) {
    return gcn_stack(tape, h, powers, stride, params,
                     "enc.l" + std::to_string(layer) + ".gcn");
}

Var StEncoder::encode(Tape& tape, Var x, const std::vector<Mat>& powers) {
    const int n = static_cast<int>(powers[0].rows());
    if (x.rows() != static_cast<Eigen::Index>(n) * cfg.T || x.cols() != cfg.d_x)
        throw DataError("encode: window shape does not match graph and config");
    const int tau = cfg.tau();
    Var h = add_row(matmul(x, params.use(tape, "enc.in.W")), params.use(tape, "enc.in.b"));
    int t_cur = cfg.T;
    Var skip_sum;
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
        std::string p = "enc.l" + std::to_string(i);
        int d = cfg.dilations[i];
        int t_out = t_cur - (cfg.kernel - 1) * d;
        Var gated = gated_tcn(tape, h, n, t_cur, static_cast<int>(i));
        Var tap = add_row(matmul(gather_rows(gated, tail_index(n, t_out, tau)),
                                 params.use(tape, p + ".skip.W")),
                          params.use(tape, p + ".skip.b"));
        skip_sum = (i == 0) ? tap : add(skip_sum, tap);
        Var spatial = gcn(tape, gated, powers, t_out, static_cast<int>(i));
        Var res = add_row(matmul(gather_rows(h, tail_index(n, t_cur, t_out)),
                                 params.use(tape, p + ".res.W")),
                          params.use(tape, p + ".res.b"));
        h = add(spatial, res);
        t_cur = t_out;
    }
    if (t_cur != tau) throw NumericError("encode: dilation arithmetic out of sync");
    return add_row(matmul(relu(skip_sum), params.use(tape, "enc.head.W")),
                   params.use(tape, "enc.head.b"));
}

Var StEncoder::reconstruct(Tape& tape, Var h, const std::vector<Mat>& powers) {
    const int n = static_cast<int>(powers[0].rows());
    const int tau = cfg.tau();
    if (h.rows() != static_cast<Eigen::Index>(n) * tau || h.cols() != cfg.latent)
        throw DataError("reconstruct: representation shape mismatch");
    Var d = add_row(matmul(h, params.use(tape, "dec.in.W")), params.use(tape, "dec.in.b"));
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        std::string p = "dec.l" + std::to_string(i);
        Var filt = vtanh(add_row(matmul(d, params.use(tape, p + ".t1.W0")),
                                 params.use(tape, p + ".t1.b")));
        Var gate = sigmoid(add_row(matmul(d, params.use(tape, p + ".t2.W0")),
                                   params.use(tape, p + ".t2.b")));
        Var gated = mul(filt, gate);
        Var spatial = gcn_stack(tape, gated, powers, tau, params, p + ".gcn");
        Var res = add_row(matmul(d, params.use(tape, p + ".res.W")),
                          params.use(tape, p + ".res.b"));
        d = add(spatial, res);
    }
    Var pooled = mean_pool_rows(d, tau);
    Var hidden = relu(add_row(matmul(pooled, params.use(tape, "dec.out.W1")),
                              params.use(tape, "dec.out.b1")));
    Var flat = add_row(matmul(hidden, params.use(tape, "dec.out.W2")),
                       params.use(tape, "dec.out.b2"));
    return ungroup_rows(flat, cfg.T);
}

Var StEncoder::apply_mask(Tape& tape, Var x, const MaskSpec& spec) {
    if (spec.mask.size() != static_cast<std::size_t>(x.rows()))
        throw DataError("apply_mask: mask does not cover the window cells");
    Mat keep(x.rows(), cfg.d_x), masked(x.rows(), cfg.d_x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double m = spec.mask[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
        masked.row(r).setConstant(m);
        keep.row(r).setConstant(1.0 - m);
    }
    Var token_slab = matmul(tape.constant(Mat::Ones(x.rows(), 1)), params.use(tape, "tk"));
    return add(mul(x, tape.constant(keep)), mul(token_slab, tape.constant(masked)));
}

Var StEncoder::masked_mae(Tape& tape, Var recon, const Mat& target, const MaskSpec& spec) {
    if (spec.count == 0) throw ConfigError("masked loss undefined for an empty mask");
    Mat weights(target.rows(), target.cols());
    for (Eigen::Index r = 0; r < target.rows(); ++r)
        weights.row(r).setConstant(spec.mask[static_cast<std::size_t>(r)] ? 1.0 : 0.0);
    Var diff = vabs(sub(recon, tape.constant(target)));
    Var masked = mul(diff, tape.constant(weights));
    return scale(sum_all(masked), 1.0 / (static_cast<double>(spec.count) * target.cols()));
}

double StEncoder::pretrain_step(const std::vector<const WindowPair*>& batch,
                                const Graph& graph, double sample_rate, double mask_ratio,
                                Rng& rng, Adam& opt) {
    if (batch.empty()) throw ConfigError("pretrain_step: empty batch");
    if (mask_ratio <= 0.0) throw ConfigError("pre-training requires a positive mask ratio");
    params.zero_grad();
    double total = 0.0;
    for (const WindowPair* w : batch) {
        SubgraphSample sub = sample_subgraph(graph, sample_rate, rng);
        const int keep = static_cast<int>(sub.kept_indices.size());
        Graph sg;
        sg.n_nodes = keep;
        sg.adjacency = sub.adjacency;
        std::vector<Mat> powers = propagation_powers(normalize_adjacency(sg), cfg.gcn_depth);
        Mat x(static_cast<Eigen::Index>(keep) * cfg.T, cfg.d_x);
        for (int i = 0; i < keep; ++i)
            x.middleRows(static_cast<Eigen::Index>(i) * cfg.T, cfg.T) =
                w->condition.middleRows(
                    static_cast<Eigen::Index>(sub.kept_indices[i]) * cfg.T, cfg.T);
        MaskSpec spec = sample_mask(keep, cfg.T, mask_ratio, rng);
        Tape tape;
        Var masked = apply_mask(tape, tape.constant(x), spec);
        Var recon = reconstruct(tape, encode(tape, masked, powers), powers);
        Var loss = masked_mae(tape, recon, x, spec);
        total += loss.value()(0, 0);
        tape.backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
    }
    double mean_loss = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean_loss))
        throw NumericError("pre-training loss became non-finite (step " +
                           std::to_string(opt.step + 1) + ")");
    opt.update(params);
    return mean_loss;
}

Mat StEncoder::encode_value(const Mat& x, const std::vector<Mat>& powers) {
    Tape tape(false);
    return encode(tape, tape.constant(x), powers).value();
}

Checkpoint StEncoder::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config = cfg.to_map();
    ckpt.config["kind"] = "encoder";
    ckpt.arrays = params.snapshot();
    return ckpt;
}

StEncoder StEncoder::from_checkpoint(const Checkpoint& ckpt) {
    auto kind = ckpt.config.find("kind");
    if (kind == ckpt.config.end() || kind->second != "encoder")
        throw ConfigError("checkpoint does not hold an encoder");
    StEncoder enc;
    enc.cfg = EncoderConfig::from_map(ckpt.config);
    Rng dummy(0);
    enc.init(dummy);
    enc.params.load(ckpt.arrays);
    return enc;
}

}  // namespace ustd
