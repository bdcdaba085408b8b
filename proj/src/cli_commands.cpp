#include "ustd/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "ustd/svg.hpp"

namespace ustd {

namespace {

namespace fs = std::filesystem;

std::string out_dir(const RunConfig& cfg) {
    const std::string& dir = cfg.str("run.out_dir");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
    return dir;
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

/// Load the dataset files named in the config, or synthesize the built-in
/// generator output in memory when no signals path is given.
std::pair<Graph, SignalSeries> load_or_synthesize(const RunConfig& cfg) {
    if (!cfg.str("data.signals").empty()) {
        DatasetPaths paths;
        paths.signals = cfg.str("data.signals");
        paths.adjacency = cfg.str("data.adjacency");
        paths.coords = cfg.str("data.coords");
        GraphKernelConfig kernel;
        kernel.sigma = cfg.getd("data.kernel_sigma");
        kernel.epsilon = cfg.getd("data.kernel_epsilon");
        return load_dataset(paths, kernel);
    }
    std::uint64_t seed = cfg.getu("run.seed");
    std::printf("no dataset files configured; generating synthetic data (seed %llu)\n",
                static_cast<unsigned long long>(seed));
    Rng rng(seed);
    return synthesize_graph_signal(cfg.synth(), rng);
}

void merge_config_into(Checkpoint& ckpt, const RunConfig& cfg) {
    for (const auto& [k, v] : cfg.entries()) ckpt.config[k] = v;
}

void save_config_dump(const RunConfig& cfg, const std::string& dir, const std::string& name) {
    cfg.save(join_path(dir, name));
}

StEncoder make_encoder(const RunConfig& cfg) {
    StEncoder enc;
    enc.cfg = cfg.encoder();
    enc.cfg.validate();
    Rng rng(Rng::derive_seed(cfg.getu("run.seed"), 0x656e63ULL));
    enc.init(rng);
    return enc;
}

/// Optimizer moments and counters ride inside the checkpoint so an
/// interrupted run resumes bit-exactly.
void store_adam_state(Checkpoint& ckpt, const ParamStore& params, const Adam& adam,
                      long steps_done) {
    for (const std::string& name : params.names()) {
        const auto& e = params.at(name);
        ckpt.arrays["opt.m." + name] = e.m;
        ckpt.arrays["opt.v." + name] = e.v;
    }
    ckpt.config["adam.step"] = std::to_string(adam.step);
    ckpt.config["pretrain.step"] = std::to_string(steps_done);
}

long restore_adam_state(const Checkpoint& ckpt, ParamStore& params, Adam& adam) {
    for (const std::string& name : params.names()) {
        auto m = ckpt.arrays.find("opt.m." + name);
        auto v = ckpt.arrays.find("opt.v." + name);
        if (m == ckpt.arrays.end() || v == ckpt.arrays.end())
            throw ConfigError("checkpoint lacks optimizer state for " + name);
        auto& e = params.at(name);
        if (m->second.rows() != e.value.rows() || m->second.cols() != e.value.cols())
            throw ConfigError("optimizer state shape mismatch for " + name);
        e.m = m->second;
        e.v = v->second;
    }
    auto it = ckpt.config.find("adam.step");
    if (it == ckpt.config.end()) throw ConfigError("checkpoint lacks the optimizer counter");
    adam.step = std::stol(it->second);
    auto st = ckpt.config.find("pretrain.step");
    if (st == ckpt.config.end()) throw ConfigError("checkpoint lacks the step counter");
    return std::stol(st->second);
}

std::vector<double> node_history(const DatasetBundle& data, int node, int t_begin, int t_end) {
    std::vector<double> out;
    for (int t = t_begin; t < t_end; ++t) out.push_back(data.raw.at(node, t, 0));
    return out;
}

void write_fan_charts(const RunConfig& cfg, const DatasetBundle& data, const EvalResult& res,
                      const std::string& dir) {
    std::vector<int> nodes = cfg.get_int_list("eval.fan_nodes");
    for (int node : nodes) {
        const WindowPrediction* hit = nullptr;
        int local = -1;
        for (const auto& p : res.predictions) {
            for (std::size_t i = 0; i < p.target_nodes.size(); ++i)
                if (p.target_nodes[i] == node) {
                    hit = &p;
                    local = static_cast<int>(i);
                    break;
                }
            if (hit) break;
        }
        if (!hit)
            throw DataError("fan chart: node " + std::to_string(node) +
                            " is not a target of any evaluated window");
        const int T = data.t_target;
        std::vector<std::vector<double>> samples;
        for (const Mat& s : hit->set.samples) {
            std::vector<double> row(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t) row[static_cast<std::size_t>(t)] = s(local * T + t, 0);
            samples.push_back(std::move(row));
        }
        std::vector<double> median(static_cast<std::size_t>(T)),
            truth(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            median[static_cast<std::size_t>(t)] = hit->set.point_estimate(local * T + t, 0);
            truth[static_cast<std::size_t>(t)] = hit->truth(local * T + t, 0);
        }
        // Forecasting shows the conditioning history; kriging targets are
        // never observed, so their history is empty.
        std::vector<double> history;
        int t0 = hit->start_step + (data.task == Task::forecast ? data.t_cond : 0);
        if (data.task == Task::forecast)
            history = node_history(data, node, hit->start_step, t0);
        std::ostringstream title;
        title << task_name(data.task) << " node " << node << ", steps " << t0 << ".."
              << t0 + T - 1;
        std::string path = join_path(dir, "fan_node" + std::to_string(node) + ".svg");
        write_fan_chart(path, history, samples, median, truth, title.str());
        std::printf("wrote %s\n", path.c_str());
    }
}

void print_report(const MetricReport& rep) {
    std::printf("%s", rep.to_text().c_str());
}

}  // namespace

int cmd_synth(const RunConfig& cfg) {
    const std::string dir = out_dir(cfg);
    SynthConfig sc = cfg.synth();
    std::uint64_t seed = cfg.getu("run.seed");
    Rng rng(seed);
    auto [graph, series] = synthesize_graph_signal(sc, rng);

    const std::string signals = join_path(dir, "signals.bin");
    const std::string edges = join_path(dir, "graph.edges");
    const std::string coords = join_path(dir, "coords.csv");
    save_signals(signals, series);
    save_edge_list(edges, graph);
    save_coords_csv(coords, graph);
    save_config_dump(cfg, dir, "synth_config.txt");

    long edge_count = 0;
    for (Eigen::Index i = 0; i < graph.adjacency.rows(); ++i)
        for (Eigen::Index j = 0; j < graph.adjacency.cols(); ++j)
            if (graph.adjacency(i, j) > 0) ++edge_count;
    std::printf("synthesized %d nodes x %d steps (seed %llu, %ld directed edges)\n",
                series.n_nodes, series.t_total, static_cast<unsigned long long>(seed),
                edge_count);
    for (const auto& [k, v] : series.meta) std::printf("meta %s=%s\n", k.c_str(), v.c_str());
    std::printf("wrote %s\nwrote %s\nwrote %s\n", signals.c_str(), edges.c_str(),
                coords.c_str());
    return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
    const std::string dir = out_dir(cfg);
    auto [graph, series] = load_or_synthesize(cfg);
    PrepareOptions prep = cfg.prepare();
    prep.task = Task::forecast;  // reconstruction windows span every node
    DatasetBundle data = prepare_dataset(graph, series, prep);

    PretrainOptions opt = cfg.pretrain();
    Adam adam;
    adam.cfg.lr = opt.lr;
    StEncoder enc;
    const std::string resume = cfg.str("pretrain.resume");
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        enc = StEncoder::from_checkpoint(ck);
        opt.start_step = restore_adam_state(ck, enc.params, adam);
        std::printf("resuming from %s at step %ld\n", resume.c_str(), opt.start_step);
        if (opt.start_step >= opt.steps) {
            std::printf("checkpoint already covers %d steps; nothing to do\n", opt.steps);
            return 0;
        }
    } else {
        enc = make_encoder(cfg);
    }

    auto curve = run_pretraining(enc, data, opt, &adam);

    Checkpoint ck = enc.to_checkpoint();
    merge_config_into(ck, cfg);
    store_adam_state(ck, enc.params, adam, opt.steps);
    const std::string path = join_path(dir, "encoder.ckpt");
    save_checkpoint(path, ck);
    save_config_dump(cfg, dir, "pretrain_config.txt");
    if (!curve.empty()) {
        write_line_chart(join_path(dir, "pretrain_loss.svg"), {"reconstruction loss"},
                         {curve}, "encoder pre-training", "step", "masked MAE");
        std::printf("pretrained %zu steps, first loss %.6f, last loss %.6f\n", curve.size(),
                    curve.front(), curve.back());
    }
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    const std::string dir = out_dir(cfg);
    auto [graph, series] = load_or_synthesize(cfg);
    DatasetBundle data = prepare_dataset(graph, series, cfg.prepare());

    StEncoder enc;
    const std::string enc_path = cfg.str("train.encoder");
    if (!enc_path.empty()) {
        enc = StEncoder::from_checkpoint(load_checkpoint(enc_path));
        std::printf("loaded encoder %s\n", enc_path.c_str());
    } else {
        enc = make_encoder(cfg);
        std::printf("no pre-trained encoder given; starting from a random one\n");
    }

    DenoiserConfig dc = cfg.denoiser();
    dc.d_y = enc.cfg.d_x;
    dc.latent = enc.cfg.latent;
    dc.tau = enc.cfg.tau();
    dc.validate();
    Denoiser den;
    den.cfg = dc;
    Rng drng(Rng::derive_seed(cfg.getu("run.seed"), 0x64656eULL));
    den.init(drng);

    TrainRun run = train_denoiser(den, enc, data, cfg.train());

    const std::string task = task_name(data.task);
    Checkpoint dck = den.to_checkpoint();
    merge_config_into(dck, cfg);
    run.denoiser_ckpt = join_path(dir, "denoiser_" + task + ".ckpt");
    save_checkpoint(run.denoiser_ckpt, dck);
    if (!dc.raw_condition) {
        Checkpoint eck = enc.to_checkpoint();
        merge_config_into(eck, cfg);
        run.encoder_ckpt = join_path(dir, "encoder_" + task + ".ckpt");
        save_checkpoint(run.encoder_ckpt, eck);
    }
    save_config_dump(cfg, dir, "train_" + task + "_config.txt");

    std::ofstream log(join_path(dir, "train_" + task + ".txt"));
    log << "task=" << task << "\nsteps=" << run.steps << "\nbest_epoch=" << run.best_epoch
        << "\nbest_val=" << run.best_val << "\n";
    for (std::size_t e = 0; e < run.epoch_loss.size(); ++e)
        log << "epoch." << e + 1 << " train=" << run.epoch_loss[e]
            << " val=" << run.val_loss[e] << "\n";
    for (const auto& [k, v] : run.config) log << "config." << k << "=" << v << "\n";
    if (!run.epoch_loss.empty())
        write_line_chart(join_path(dir, "train_" + task + "_loss.svg"),
                         {"train", "validation"}, {run.epoch_loss, run.val_loss},
                         "denoiser training (" + task + ")", "epoch", "noise-regression loss");

    std::printf("trained %ld steps over %zu epochs; best validation %.6f at epoch %d\n",
                run.steps, run.epoch_loss.size(), run.best_val, run.best_epoch + 1);
    std::printf("wrote %s\n", run.denoiser_ckpt.c_str());
    if (!run.encoder_ckpt.empty()) std::printf("wrote %s\n", run.encoder_ckpt.c_str());
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    const std::string dir = out_dir(cfg);
    const std::string den_path = cfg.str("eval.denoiser");
    if (den_path.empty()) throw ConfigError("evaluate needs a denoiser checkpoint");
    Denoiser den = Denoiser::from_checkpoint(load_checkpoint(den_path));

    StEncoder enc;
    const std::string enc_path = cfg.str("eval.encoder");
    if (!enc_path.empty()) {
        enc = StEncoder::from_checkpoint(load_checkpoint(enc_path));
    } else if (den.cfg.raw_condition) {
        enc = make_encoder(cfg);  // never queried on the raw-condition path
    } else {
        throw ConfigError("evaluate needs an encoder checkpoint for this denoiser");
    }

    auto [graph, series] = load_or_synthesize(cfg);
    PrepareOptions prep = cfg.prepare();
    prep.task = den.cfg.task;  // the checkpoint decides the task
    DatasetBundle data = prepare_dataset(graph, series, prep);

    EvalOptions opt = cfg.eval();
    EvalResult res = evaluate_model(den, enc, data, opt);

    const std::string task = task_name(data.task);
    const std::string base = "report_" + task + "_" + opt.split;
    const std::string text_path = join_path(dir, base + ".txt");
    {
        std::ofstream out(text_path);
        if (!out) throw DataError("cannot write " + text_path);
        out << res.report.to_text();
        for (const auto& [k, v] : cfg.entries()) out << "config." << k << "=" << v << "\n";
    }
    const std::string table_path = join_path(dir, base + ".tsv");
    {
        std::ofstream out(table_path);
        if (!out) throw DataError("cannot write " + table_path);
        out << res.report.to_table();
    }
    if (!res.report.horizon_mae.empty())
        write_line_chart(join_path(dir, "horizon_" + opt.split + ".svg"), {"MAE", "RMSE"},
                         {res.report.horizon_mae, res.report.horizon_rmse},
                         "error by forecast horizon", "horizon step", "error");

    // Point estimates in the signals container layout so external tooling can
    // line predictions up against the source series cell by cell. Only the
    // predicted target cells are valid; everything else is written as NaN.
    std::string pred_path;
    if (!res.predictions.empty()) {
        SignalSeries pred;
        pred.n_nodes = data.raw.n_nodes;
        pred.t_total = data.raw.t_total;
        pred.channels = data.raw.channels;
        pred.values = Mat::Constant(static_cast<Eigen::Index>(pred.n_nodes) * pred.t_total,
                                    pred.channels, std::numeric_limits<double>::quiet_NaN());
        pred.valid.assign(static_cast<std::size_t>(pred.n_nodes) * pred.t_total, 0);
        const int offset = data.task == Task::forecast ? data.t_cond : 0;
        for (const auto& p : res.predictions) {
            const int tt = static_cast<int>(p.set.point_estimate.rows() /
                                            static_cast<Eigen::Index>(p.target_nodes.size()));
            for (std::size_t i = 0; i < p.target_nodes.size(); ++i) {
                const Eigen::Index g = p.target_nodes[i];
                for (int t = 0; t < tt; ++t) {
                    const int at = p.start_step + offset + t;
                    pred.values.row(g * pred.t_total + at) =
                        p.set.point_estimate.row(static_cast<Eigen::Index>(i) * tt + t);
                    pred.valid[static_cast<std::size_t>(g) * pred.t_total + at] = 1;
                }
            }
        }
        pred.meta["kind"] = "predictions";
        pred.meta["task"] = task;
        pred.meta["split"] = opt.split;
        pred.meta["samples"] = std::to_string(opt.sampling.n_samples);
        pred_path = join_path(dir, "predictions_" + task + "_" + opt.split + ".bin");
        save_signals(pred_path, pred);
    }
    write_fan_charts(cfg, data, res, dir);
    save_config_dump(cfg, dir, "evaluate_config.txt");

    print_report(res.report);
    std::printf("wrote %s\nwrote %s\n", text_path.c_str(), table_path.c_str());
    if (!pred_path.empty()) std::printf("wrote %s\n", pred_path.c_str());
    return 0;
}

int cmd_bench(const RunConfig& cfg) {
    const std::string dir = out_dir(cfg);
    const int trials = cfg.geti("bench.trials");
    if (trials < 5) throw ConfigError("bench needs at least 5 trials");
    const int K = cfg.geti("bench.K");
    const std::uint64_t seed = cfg.getu("run.seed");

    Denoiser tga, full;
    const std::string tga_path = cfg.str("bench.tga");
    const std::string full_path = cfg.str("bench.full");
    int n_nodes = cfg.geti("bench.n_nodes");
    if (tga_path.empty() != full_path.empty())
        throw ConfigError("bench needs both checkpoints or neither");
    if (!tga_path.empty()) {
        tga = Denoiser::from_checkpoint(load_checkpoint(tga_path));
        full = Denoiser::from_checkpoint(load_checkpoint(full_path));
        if (!full.cfg.full_attention || tga.cfg.full_attention)
            throw ConfigError("bench expects a cross-attention and a full-attention checkpoint");
    } else {
        // Matched randomly initialized pair at the configured node count.
        DenoiserConfig dc = cfg.denoiser();
        dc.task = Task::forecast;
        dc.raw_condition = false;
        dc.raw_dim = 0;
        dc.full_attention = false;
        Rng r1(Rng::derive_seed(seed, 0x62656eULL));
        tga.cfg = dc;
        tga.init(r1);
        dc.full_attention = true;
        Rng r2(Rng::derive_seed(seed, 0x62656eULL));
        full.cfg = dc;
        full.init(r2);
        std::printf("no checkpoints given; timing randomly initialized denoisers\n");
    }
    if (tga.cfg.raw_condition || full.cfg.raw_condition)
        throw ConfigError("bench does not support raw-condition denoisers");
    if (tga.cfg.steps != full.cfg.steps || tga.cfg.d_y != full.cfg.d_y ||
        tga.cfg.latent != full.cfg.latent || tga.cfg.tau != full.cfg.tau ||
        tga.cfg.d_s != full.cfg.d_s)
        throw ConfigError("bench checkpoints disagree on tensor shapes");

    Rng crng(Rng::derive_seed(seed, 0x636f6eULL));
    Denoiser::Cond cond;
    cond.h = crng.normal_matrix(static_cast<Eigen::Index>(n_nodes) * tga.cfg.tau,
                                tga.cfg.latent);
    cond.spatial_target = crng.normal_matrix(n_nodes, tga.cfg.d_s);
    cond.spatial_cond = cond.spatial_target;
    cond.t_abs = tga.cfg.steps;

    NoiseSchedule sched = NoiseSchedule::make(K, cfg.getd("train.beta_start"),
                                              cfg.getd("train.beta_end"),
                                              parse_schedule_shape(cfg.str("train.schedule")));
    const Eigen::Index rows = static_cast<Eigen::Index>(n_nodes) * tga.cfg.steps;
    TimingStats t_tga =
        time_sampling(tga, cond, rows, tga.cfg.d_y, sched, trials, Rng::derive_seed(seed, 1));
    TimingStats t_full =
        time_sampling(full, cond, rows, full.cfg.d_y, sched, trials, Rng::derive_seed(seed, 2));

    const double param_ratio = static_cast<double>(full.n_params()) /
                               static_cast<double>(tga.n_params());
    const double speedup = t_full.mean_s / t_tga.mean_s;
    std::ostringstream rep;
    rep.precision(6);
    rep << "nodes=" << n_nodes << "\nK=" << K << "\ntrials=" << trials << "\n";
    rep << "tga.params=" << tga.n_params() << "\nfull.params=" << full.n_params() << "\n";
    rep << "param_ratio=" << param_ratio << "\n";
    rep << std::fixed;
    rep << "tga.mean_s=" << t_tga.mean_s << "\ntga.std_s=" << t_tga.std_s << "\n";
    rep << "full.mean_s=" << t_full.mean_s << "\nfull.std_s=" << t_full.std_s << "\n";
    rep << "speedup=" << speedup << "\n";
    const std::string path = join_path(dir, "bench.txt");
    {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write " + path);
        out << rep.str();
    }
    save_config_dump(cfg, dir, "bench_config.txt");
    std::printf("%s", rep.str().c_str());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

namespace {

struct Binding {
    CLI::Option* opt = nullptr;
    std::string key;
    std::shared_ptr<std::string> slot;  // null: flag with a fixed value
    std::string fixed;
};

struct SubSpec {
    CLI::App* app = nullptr;
    std::vector<Binding> binds;
    std::shared_ptr<std::string> config_path = std::make_shared<std::string>();
    CLI::Option* config_opt = nullptr;
    std::shared_ptr<std::vector<int>> fan_nodes = std::make_shared<std::vector<int>>();
    CLI::Option* fan_opt = nullptr;
};

void bind_value(SubSpec& s, const std::string& flag, const std::string& key,
                const std::string& desc) {
    auto slot = std::make_shared<std::string>();
    CLI::Option* o = s.app->add_option(flag, *slot, desc);
    s.binds.push_back({o, key, slot, ""});
}

void bind_flag(SubSpec& s, const std::string& flag, const std::string& key,
               const std::string& value, const std::string& desc) {
    CLI::Option* o = s.app->add_flag(flag, desc);
    s.binds.push_back({o, key, nullptr, value});
}

void common_opts(SubSpec& s) {
    s.config_opt = s.app->add_option("--config", *s.config_path,
                                     "sectioned key-value configuration file");
    bind_value(s, "--seed", "run.seed", "master random seed (USTD_SEED as fallback)");
    bind_value(s, "--out", "run.out_dir", "output directory");
}

void data_opts(SubSpec& s) {
    bind_value(s, "--signals", "data.signals", "signal container (empty: synthesize)");
    bind_value(s, "--adjacency", "data.adjacency", "edge-list file");
    bind_value(s, "--coords", "data.coords", "node coordinates CSV");
}

int dispatch(const std::string& name, const RunConfig& cfg) {
    if (name == "synth") return cmd_synth(cfg);
    if (name == "pretrain") return cmd_pretrain(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "evaluate") return cmd_evaluate(cfg);
    return cmd_bench(cfg);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Graph diffusion experiments: pre-trained spatio-temporal encoder with "
                 "attention-based denoisers for probabilistic forecasting and kriging"};
    app.require_subcommand(1);
    std::map<std::string, SubSpec> subs;

    {
        SubSpec& s = subs["synth"];
        s.app = app.add_subcommand("synth", "generate a synthetic graph signal dataset");
        common_opts(s);
        bind_value(s, "--nodes", "synth.n_nodes", "number of sensor nodes");
        bind_value(s, "--steps", "synth.t_total", "number of time steps");
        bind_value(s, "--snr-db", "synth.snr_db", "observation noise level");
    }
    {
        SubSpec& s = subs["pretrain"];
        s.app = app.add_subcommand("pretrain", "pre-train the encoder by masked reconstruction");
        common_opts(s);
        data_opts(s);
        bind_value(s, "--steps", "pretrain.steps", "optimization steps");
        bind_value(s, "--batch", "pretrain.batch", "windows per step");
        bind_value(s, "--lr", "pretrain.lr", "learning rate");
        bind_value(s, "--mask-ratio", "pretrain.mask_ratio", "fraction of cells masked");
        bind_value(s, "--graph-sample-rate", "pretrain.sample_rate",
                   "node fraction kept per subgraph sample");
        bind_flag(s, "--unmasked", "pretrain.masked", "0",
                  "plain full reconstruction instead of masking");
        bind_value(s, "--resume", "pretrain.resume", "continue from an encoder checkpoint");
        bind_value(s, "--log-every", "pretrain.log_every", "print the loss every N steps");
    }
    {
        SubSpec& s = subs["train"];
        s.app = app.add_subcommand("train", "train a task denoiser on top of the encoder");
        common_opts(s);
        data_opts(s);
        bind_value(s, "--task", "train.task", "forecast or krige");
        bind_value(s, "--encoder", "train.encoder", "pre-trained encoder checkpoint");
        bind_value(s, "--epochs", "train.max_epochs", "epoch budget");
        bind_value(s, "--steps-per-epoch", "train.steps_per_epoch", "0: one pass of batches");
        bind_value(s, "--batch", "train.batch", "windows per step");
        bind_value(s, "--lr", "train.lr", "denoiser learning rate");
        bind_value(s, "--patience", "train.patience", "early-stopping patience in epochs");
        bind_value(s, "--diffusion-steps", "train.K", "number of diffusion steps");
        bind_flag(s, "--freeze-encoder", "train.freeze_encoder", "1",
                  "skip encoder finetuning");
        bind_flag(s, "--raw-condition", "denoiser.raw_condition", "1",
                  "condition on raw windows instead of encodings");
        bind_flag(s, "--no-self-attention", "denoiser.no_self_attention", "1",
                  "drop the self-attention branch");
        bind_flag(s, "--full-attention", "denoiser.full_attention", "1",
                  "plain transformer over all tokens");
        bind_value(s, "--log-every", "train.log_every", "print the loss every N steps");
    }
    {
        SubSpec& s = subs["evaluate"];
        s.app = app.add_subcommand("evaluate",
                                   "probabilistic evaluation of a trained checkpoint");
        common_opts(s);
        data_opts(s);
        bind_value(s, "--encoder", "eval.encoder", "encoder checkpoint");
        bind_value(s, "--denoiser", "eval.denoiser", "denoiser checkpoint");
        bind_value(s, "--split", "eval.split", "val or test");
        bind_value(s, "--num-samples", "sample.n_samples", "ensemble draws per window");
        bind_value(s, "--diffusion-steps", "sample.K", "reverse-chain length");
        bind_flag(s, "--compare-baselines", "eval.compare_baselines", "1",
                  "add reference method rows");
        bind_flag(s, "--unfair-crps", "eval.fair_crps", "0",
                  "skip the finite-ensemble spread correction");
        s.fan_opt = s.app->add_option("--fan-node", *s.fan_nodes,
                                      "node id to draw a fan chart for (repeatable)");
    }
    {
        SubSpec& s = subs["bench"];
        s.app = app.add_subcommand("bench", "time full sampling passes of two denoisers");
        common_opts(s);
        bind_value(s, "--tga", "bench.tga", "cross-attention denoiser checkpoint");
        bind_value(s, "--full", "bench.full", "full-attention denoiser checkpoint");
        bind_value(s, "--nodes", "bench.n_nodes", "node count for the timing problem");
        bind_value(s, "--trials", "bench.trials", "repetitions (at least 5)");
        bind_value(s, "--diffusion-steps", "bench.K", "reverse-chain length");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        for (auto& [name, s] : subs) {
            if (!app.got_subcommand(s.app)) continue;
            RunConfig cfg = RunConfig::defaults();
            std::map<std::string, std::string> file_map;
            if (s.config_opt->count() > 0) file_map = RunConfig::parse_file(*s.config_path);
            cfg.merge(file_map);
            bool cli_seed = false;
            for (const Binding& b : s.binds)
                if (b.key == "run.seed" && b.opt->count() > 0) cli_seed = true;
            if (!cli_seed && file_map.count("run.seed") == 0)
                if (const char* env = std::getenv("USTD_SEED")) cfg.set("run.seed", env);
            for (const Binding& b : s.binds)
                if (b.opt->count() > 0) cfg.set(b.key, b.slot ? *b.slot : b.fixed);
            if (s.fan_opt && s.fan_opt->count() > 0) {
                std::ostringstream joined;
                for (std::size_t i = 0; i < s.fan_nodes->size(); ++i)
                    joined << (i ? "," : "") << (*s.fan_nodes)[i];
                cfg.set("eval.fan_nodes", joined.str());
            }
            return dispatch(name, cfg);
        }
        return 2;  // unreachable with require_subcommand(1)
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace ustd
