#include "ustd/denoiser.hpp"

#include <cmath>

namespace ustd {

using ad::Tape;
using ad::Var;

void DenoiserConfig::validate() const {
    if (d_y < 1 || steps < 1 || channel < 1 || layers < 1 || heads < 1 || latent < 1 ||
        tau < 1 || d_s < 1 || diff_dim < 2)
        throw ConfigError("denoiser config: dimensions must be positive");
    if (channel % heads != 0)
        throw ConfigError("denoiser config: channel must be divisible by head count");
    if (raw_condition && raw_dim < 1)
        throw ConfigError("denoiser config: raw conditioning needs raw_dim");
    if (full_attention && no_self_attention)
        throw ConfigError("denoiser config: joint-attention variant has no gated branches");
}

std::map<std::string, std::string> DenoiserConfig::to_map() const {
    return {{"task", task_name(task)},
            {"d_y", std::to_string(d_y)},
            {"steps", std::to_string(steps)},
            {"channel", std::to_string(channel)},
            {"layers", std::to_string(layers)},
            {"heads", std::to_string(heads)},
            {"latent", std::to_string(latent)},
            {"tau", std::to_string(tau)},
            {"d_s", std::to_string(d_s)},
            {"diff_dim", std::to_string(diff_dim)},
            {"no_self_attention", no_self_attention ? "1" : "0"},
            {"raw_condition", raw_condition ? "1" : "0"},
            {"raw_dim", std::to_string(raw_dim)},
            {"full_attention", full_attention ? "1" : "0"},
            {"ffn_hidden", std::to_string(ffn_hidden)}};
}

DenoiserConfig DenoiserConfig::from_map(const std::map<std::string, std::string>& m) {
    DenoiserConfig cfg;
    auto get = [&](const char* key) -> const std::string& {
        auto it = m.find(key);
        if (it == m.end()) throw ConfigError(std::string("denoiser config missing ") + key);
        return it->second;
    };
    cfg.task = parse_task(get("task"));
    cfg.d_y = std::stoi(get("d_y"));
    cfg.steps = std::stoi(get("steps"));
    cfg.channel = std::stoi(get("channel"));
    cfg.layers = std::stoi(get("layers"));
    cfg.heads = std::stoi(get("heads"));
    cfg.latent = std::stoi(get("latent"));
    cfg.tau = std::stoi(get("tau"));
    cfg.d_s = std::stoi(get("d_s"));
    cfg.diff_dim = std::stoi(get("diff_dim"));
    cfg.no_self_attention = get("no_self_attention") == "1";
    cfg.raw_condition = get("raw_condition") == "1";
    cfg.raw_dim = std::stoi(get("raw_dim"));
    cfg.full_attention = get("full_attention") == "1";
    cfg.ffn_hidden = std::stoi(get("ffn_hidden"));
    cfg.validate();
    return cfg;
}

Mat sinusoidal_embedding(double pos, int dim) {
    Mat e(1, dim);
    for (int i = 0; i < dim / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / dim);
        e(0, 2 * i) = std::sin(pos * freq);
        e(0, 2 * i + 1) = std::cos(pos * freq);
    }
    if (dim % 2) e(0, dim - 1) = std::sin(pos * std::pow(10000.0, -1.0));
    return e;
}

void Denoiser::init(Rng& rng) {
    cfg.validate();
    const int ch = cfg.channel;
    const int flat = cfg.steps * cfg.d_y;
    params.add("in.W", glorot(rng, flat, ch));
    params.add("in.b", Mat::Zero(1, ch));
    params.add("semb.W", glorot(rng, cfg.d_s, ch));
    params.add("semb.b", Mat::Zero(1, ch));
    params.add("demb.W1", glorot(rng, cfg.diff_dim, ch));
    params.add("demb.b1", Mat::Zero(1, ch));
    params.add("demb.W2", glorot(rng, ch, ch));
    params.add("demb.b2", Mat::Zero(1, ch));

    // Width of one conditioning token before projection to the channel size.
    const int cond_in = cfg.raw_condition ? cfg.raw_dim : cfg.latent;
    if (cfg.task == Task::krige) {
        int absorb_in = cfg.raw_condition ? cfg.raw_dim : cfg.tau * cfg.latent;
        params.add("absorb.W", glorot(rng, absorb_in, cfg.latent));
        params.add("absorb.b", Mat::Zero(1, cfg.latent));
    }

    if (cfg.full_attention) {
        int hp_in = cfg.task == Task::krige ? cfg.latent : cond_in;
        params.add("hproj.W", glorot(rng, hp_in, ch));
        params.add("hproj.b", Mat::Zero(1, ch));
        for (int i = 0; i < cfg.layers; ++i) {
            std::string p = "l" + std::to_string(i);
            params.add(p + ".att.Wq", glorot(rng, ch, ch));
            params.add(p + ".att.Wk", glorot(rng, ch, ch));
            params.add(p + ".att.Wv", glorot(rng, ch, ch));
            params.add(p + ".ffn.W1", glorot(rng, ch, cfg.ffn_hidden));
            params.add(p + ".ffn.b1", Mat::Zero(1, cfg.ffn_hidden));
            params.add(p + ".ffn.W2", glorot(rng, cfg.ffn_hidden, ch));
            params.add(p + ".ffn.b2", Mat::Zero(1, ch));
        }
    } else {
        int hp_in = cfg.task == Task::krige ? cfg.latent : cond_in;
        for (int i = 0; i < cfg.layers; ++i) {
            std::string p = "l" + std::to_string(i);
            params.add(p + ".hproj.W", glorot(rng, hp_in, ch));
            params.add(p + ".hproj.b", Mat::Zero(1, ch));
            params.add(p + ".ca.Wq", glorot(rng, ch, ch));
            params.add(p + ".ca.Wk", glorot(rng, ch, ch));
            params.add(p + ".ca.Wv", glorot(rng, ch, ch));
            if (!cfg.no_self_attention) {
                params.add(p + ".sa.Wq", glorot(rng, ch, ch));
                params.add(p + ".sa.Wk", glorot(rng, ch, ch));
                params.add(p + ".sa.Wv", glorot(rng, ch, ch));
                params.add(p + ".gate.W1", glorot(rng, ch, ch));
                params.add(p + ".gate.W2", glorot(rng, ch, ch));
                params.add(p + ".gate.b", Mat::Zero(1, ch));
            }
        }
    }
    // Zero-initialized head: a freshly built denoiser predicts zero noise.
    params.add("out.W", Mat::Zero(ch, flat));
    params.add("out.b", Mat::Zero(1, flat));
}

namespace {

Var linear(Tape& tape, ParamStore& params, Var x, const std::string& w,
           const std::string& b) {
    return add_row(matmul(x, params.use(tape, w)), params.use(tape, b));
}

}  // namespace

Var Denoiser::forward(Tape& tape, Var y_k, const Cond& cond, int k) {
    return forward_with(tape, y_k, tape.constant(cond.h), cond, k);
}

Var Denoiser::forward_with(Tape& tape, Var y_k, Var h, const Cond& cond, int k) {
    cfg.validate();
    const int flat = cfg.steps * cfg.d_y;
    if (y_k.cols() != cfg.d_y || y_k.rows() % cfg.steps != 0)
        throw DataError("denoiser: target shape does not match the configured task");
    const int n_t = static_cast<int>(y_k.rows()) / cfg.steps;
    if (cond.spatial_target.rows() != n_t || cond.spatial_target.cols() != cfg.d_s)
        throw DataError("denoiser: every target node needs a spatial embedding row");

    // Diffusion-step context: sinusoidal code through a two-layer perceptron.
    Var demb = linear(tape, params, tape.constant(sinusoidal_embedding(k, cfg.diff_dim)),
                      "demb.W1", "demb.b1");
    demb = linear(tape, params, silu(demb), "demb.W2", "demb.b2");

    // Target tokens: one per node from the flattened noisy slab.
    Var r = linear(tape, params, group_rows(y_k, cfg.steps), "in.W", "in.b");
    r = add(r, linear(tape, params, tape.constant(cond.spatial_target), "semb.W", "semb.b"));
    r = add_row(r, demb);

    // Conditioning tokens.
    Var htok;       // (n_cond * tokens_per_node) x channel after projection
    int kv_group = 1;  // conditioning tokens per node (forecasting path)
    int n_cond = 0;
    Var habs;  // kriging: per-node time-absorbed representation
    Mat temporal_pe;
    if (h.rows() < 1 || h.cols() < 1)
        throw DataError("denoiser: empty conditioning input");
    if (cfg.task == Task::krige) {
        int group = cfg.raw_condition ? cfg.raw_dim / static_cast<int>(h.cols())
                                      : cfg.tau;
        Var grouped = group_rows(h, group);
        habs = linear(tape, params, grouped, "absorb.W", "absorb.b");
        n_cond = static_cast<int>(habs.rows());
        if (cond.spatial_cond.rows() != n_cond || cond.spatial_cond.cols() != cfg.d_s)
            throw DataError("denoiser: every observed node needs a spatial embedding row");
    } else {
        kv_group = cfg.raw_condition ? 1 : cfg.tau;
        int expected_cols = cfg.raw_condition ? cfg.raw_dim : cfg.latent;
        Var base = cfg.raw_condition
                       ? group_rows(h, cfg.raw_dim / static_cast<int>(h.cols()))
                       : h;
        if (base.cols() != expected_cols)
            throw DataError("denoiser: conditioning width mismatch");
        n_cond = static_cast<int>(base.rows()) / kv_group;
        if (n_cond != n_t)
            throw DataError("denoiser: forecasting requires one condition block per node");
        htok = base;
        // Absolute-position sinusoidal code of each latent step.
        temporal_pe.resize(static_cast<Eigen::Index>(n_cond) * kv_group, cfg.channel);
        for (int node = 0; node < n_cond; ++node)
            for (int j = 0; j < kv_group; ++j)
                temporal_pe.row(static_cast<Eigen::Index>(node) * kv_group + j) =
                    sinusoidal_embedding(cond.t_abs - (kv_group - 1) + j, cfg.channel);
    }

    if (cfg.full_attention) {
        // Joint variant: concatenate target and conditioning tokens and run
        // standard pre-norm attention + feed-forward blocks over all of them.
        Var hp;
        if (cfg.task == Task::krige) {
            hp = linear(tape, params, habs, "hproj.W", "hproj.b");
            hp = add(hp, linear(tape, params, tape.constant(cond.spatial_cond), "semb.W",
                                "semb.b"));
        } else {
            hp = linear(tape, params, htok, "hproj.W", "hproj.b");
            hp = add(hp, tape.constant(temporal_pe));
        }
        hp = add_row(hp, demb);
        Var x = concat_rows(r, hp);
        for (int i = 0; i < cfg.layers; ++i) {
            std::string p = "l" + std::to_string(i);
            Var xn = layernorm_rows(x);
            Var att = attention(matmul(xn, params.use(tape, p + ".att.Wq")),
                                matmul(xn, params.use(tape, p + ".att.Wk")),
                                matmul(xn, params.use(tape, p + ".att.Wv")), cfg.heads);
            x = add(x, att);
            Var ffn = linear(tape, params, relu(linear(tape, params, layernorm_rows(x),
                                                       p + ".ffn.W1", p + ".ffn.b1")),
                             p + ".ffn.W2", p + ".ffn.b2");
            x = add(x, ffn);
        }
        std::vector<int> target_rows(static_cast<std::size_t>(n_t));
        for (int i = 0; i < n_t; ++i) target_rows[static_cast<std::size_t>(i)] = i;
        r = gather_rows(layernorm_rows(x), std::move(target_rows));
        Var flat_out = linear(tape, params, r, "out.W", "out.b");
        return ungroup_rows(flat_out, cfg.steps);
    }

    for (int i = 0; i < cfg.layers; ++i) {
        std::string p = "l" + std::to_string(i);
        Var hp;
        if (cfg.task == Task::krige) {
            hp = linear(tape, params, habs, p + ".hproj.W", p + ".hproj.b");
            hp = add(hp, linear(tape, params, tape.constant(cond.spatial_cond), "semb.W",
                                "semb.b"));
        } else {
            hp = linear(tape, params, htok, p + ".hproj.W", p + ".hproj.b");
            hp = add(hp, tape.constant(temporal_pe));
        }
        hp = add_row(hp, demb);

        Var rn = layernorm_rows(r);
        Var q = matmul(rn, params.use(tape, p + ".ca.Wq"));
        Var kk = matmul(hp, params.use(tape, p + ".ca.Wk"));
        Var vv = matmul(hp, params.use(tape, p + ".ca.Wv"));
        Var ca = cfg.task == Task::krige
                     ? attention(q, kk, vv, cfg.heads)
                     : grouped_attention(q, kk, vv, cfg.heads, 1, kv_group);

        Var fused;
        if (cfg.no_self_attention) {
            fused = ca;
        } else {
            Var sa = attention(matmul(rn, params.use(tape, p + ".sa.Wq")),
                               matmul(rn, params.use(tape, p + ".sa.Wk")),
                               matmul(rn, params.use(tape, p + ".sa.Wv")), cfg.heads);
            Var gate = sigmoid(add_row(add(matmul(ca, params.use(tape, p + ".gate.W1")),
                                           matmul(sa, params.use(tape, p + ".gate.W2"))),
                                       params.use(tape, p + ".gate.b")));
            // gate*ca + (1-gate)*sa
            fused = add(sa, mul(gate, sub(ca, sa)));
        }
        r = add(r, fused);
    }
    Var flat_out = linear(tape, params, layernorm_rows(r), "out.W", "out.b");
    if (flat_out.cols() != flat) throw NumericError("denoiser: head width out of sync");
    return ungroup_rows(flat_out, cfg.steps);
}

Mat Denoiser::forward_value(const Mat& y_k, const Cond& cond, int k) {
    Tape tape(false);
    return forward(tape, tape.constant(y_k), cond, k).value();
}

Checkpoint Denoiser::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config = cfg.to_map();
    ckpt.config["kind"] = "denoiser";
    ckpt.arrays = params.snapshot();
    return ckpt;
}

Denoiser Denoiser::from_checkpoint(const Checkpoint& ckpt) {
    auto kind = ckpt.config.find("kind");
    if (kind == ckpt.config.end() || kind->second != "denoiser")
        throw ConfigError("checkpoint does not hold a denoiser");
    Denoiser d;
    d.cfg = DenoiserConfig::from_map(ckpt.config);
    Rng dummy(0);
    d.init(dummy);
    d.params.load(ckpt.arrays);
    return d;
}

}  // namespace ustd
