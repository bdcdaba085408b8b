#include "ustd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace ustd {

using ad::Tape;
using ad::Var;

namespace {

Graph induced_subgraph(const Graph& g, const std::vector<int>& nodes) {
    Graph s;
    s.n_nodes = static_cast<int>(nodes.size());
    s.adjacency.resize(s.n_nodes, s.n_nodes);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (std::size_t j = 0; j < nodes.size(); ++j)
            s.adjacency(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                g.adjacency(nodes[i], nodes[j]);
    if (g.has_coords()) {
        s.coords.resize(s.n_nodes, 2);
        for (std::size_t i = 0; i < nodes.size(); ++i)
            s.coords.row(static_cast<Eigen::Index>(i)) = g.coords.row(nodes[i]);
    }
    return s;
}

Mat gather_matrix_rows(const Mat& m, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

const std::vector<Mat>& condition_powers(const DatasetBundle& data) {
    return data.task == Task::krige ? data.powers_observed : data.powers;
}

}  // namespace

std::vector<WindowPair> thin_windows(const std::vector<WindowPair>& windows, int step) {
    if (step < 1) throw ConfigError("thin_windows: step must be positive");
    std::vector<WindowPair> out;
    long next = std::numeric_limits<long>::min();
    for (const auto& w : windows) {
        if (w.start_step >= next) {
            out.push_back(w);
            next = static_cast<long>(w.start_step) + step;
        }
    }
    return out;
}

DatasetBundle prepare_dataset(const Graph& graph, const SignalSeries& series,
                              const PrepareOptions& opt) {
    graph.validate();
    series.validate();
    if (opt.t_cond < 1 || opt.t_target < 1)
        throw ConfigError("prepare_dataset: window lengths must be positive");
    if (opt.d_s < 1 || opt.d_s >= graph.n_nodes)
        throw ConfigError("prepare_dataset: spatial embedding width must be below the node count");

    DatasetBundle b;
    b.task = opt.task;
    b.graph = graph;
    b.raw = series;
    b.t_cond = opt.t_cond;
    b.t_target = opt.task == Task::krige ? opt.t_cond : opt.t_target;
    b.split = make_split(series.t_total, opt.split_train, opt.split_val, opt.split_test);
    b.normalizer = fit_normalizer(series, 0, b.split.t_train_end);
    b.series = series;
    b.series.values = b.normalizer.apply(series.values);
    b.powers = propagation_powers(normalize_adjacency(graph), opt.gcn_depth);
    b.spatial = laplacian_embedding(graph, opt.d_s);

    if (opt.task == Task::forecast) {
        auto all = make_forecast_windows(b.series, opt.t_cond, opt.t_target, 1);
        b.train_windows = windows_in_range(all, 0, b.split.t_train_end);
        b.val_windows =
            thin_windows(windows_in_range(all, b.split.t_train_end, b.split.t_val_end),
                         b.t_target);
        b.test_windows = thin_windows(
            windows_in_range(all, b.split.t_val_end, series.t_total), b.t_target);
    } else {
        Rng prng(opt.partition_seed);
        auto kd = make_kriging_partition(graph, b.series, opt.t_cond, 1,
                                         opt.krige_target_fraction, prng);
        b.observed_nodes = kd.observed_nodes;
        b.target_nodes = kd.target_nodes;
        b.split.observed_nodes = kd.observed_nodes;
        b.split.target_nodes = kd.target_nodes;
        b.train_windows = windows_in_range(kd.windows, 0, b.split.t_train_end);
        b.val_windows = thin_windows(
            windows_in_range(kd.windows, b.split.t_train_end, b.split.t_val_end),
            b.t_target);
        b.test_windows = thin_windows(
            windows_in_range(kd.windows, b.split.t_val_end, series.t_total), b.t_target);
        b.powers_observed = propagation_powers(
            normalize_adjacency(induced_subgraph(graph, b.observed_nodes)), opt.gcn_depth);
    }
    if (b.train_windows.empty())
        throw DataError("prepare_dataset: training split has no complete windows");
    return b;
}

namespace {

// Reconstruction step without masking: every cell contributes to the loss and
// no token substitution happens, so the encoder sees the clean window.
double unmasked_step(StEncoder& enc, const std::vector<const WindowPair*>& batch,
                     const Graph& graph, double sample_rate, Rng& rng, Adam& opt) {
    enc.params.zero_grad();
    double total = 0.0;
    for (const WindowPair* w : batch) {
        SubgraphSample sub = sample_subgraph(graph, sample_rate, rng);
        const int keep = static_cast<int>(sub.kept_indices.size());
        Graph sg;
        sg.n_nodes = keep;
        sg.adjacency = sub.adjacency;
        std::vector<Mat> powers =
            propagation_powers(normalize_adjacency(sg), enc.cfg.gcn_depth);
        Mat x(static_cast<Eigen::Index>(keep) * enc.cfg.T, enc.cfg.d_x);
        for (int i = 0; i < keep; ++i)
            x.middleRows(static_cast<Eigen::Index>(i) * enc.cfg.T, enc.cfg.T) =
                w->condition.middleRows(
                    static_cast<Eigen::Index>(sub.kept_indices[i]) * enc.cfg.T, enc.cfg.T);
        MaskSpec everything;
        everything.mask.assign(static_cast<std::size_t>(keep) * enc.cfg.T, 1);
        everything.count = keep * enc.cfg.T;
        everything.ratio = 1.0;
        Tape tape;
        Var input = tape.constant(x);
        Var recon = enc.reconstruct(tape, enc.encode(tape, input, powers), powers);
        Var loss = enc.masked_mae(tape, recon, x, everything);
        total += loss.value()(0, 0);
        tape.backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
    }
    double mean_loss = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean_loss)) throw NumericError("pre-training loss became non-finite");
    opt.update(enc.params);
    return mean_loss;
}

}  // namespace

std::vector<double> run_pretraining(StEncoder& enc, const DatasetBundle& data,
                                    const PretrainOptions& opt, Adam* opt_state) {
    if (opt.batch < 1) throw ConfigError("pre-training: batch must be positive");
    if (opt.start_step < 0 || opt.start_step > opt.steps)
        throw ConfigError("pre-training: bad step range");
    if (data.train_windows.empty()) throw DataError("pre-training: no training windows");
    Adam local;
    Adam& adam = opt_state ? *opt_state : local;
    adam.cfg.lr = opt.lr;
    const std::size_t n = data.train_windows.size();
    std::vector<double> curve;
    curve.reserve(static_cast<std::size_t>(opt.steps - opt.start_step));
    for (long step = opt.start_step; step < opt.steps; ++step) {
        // Seed per step so a resumed run replays the identical remainder.
        Rng srng(Rng::derive_seed(opt.seed, static_cast<std::uint64_t>(step)));
        std::vector<const WindowPair*> batch;
        batch.reserve(static_cast<std::size_t>(opt.batch));
        for (int bi = 0; bi < opt.batch; ++bi)
            batch.push_back(&data.train_windows[srng.index(n)]);
        double loss =
            opt.masked
                ? enc.pretrain_step(batch, data.graph, opt.sample_rate, opt.mask_ratio,
                                    srng, adam)
                : unmasked_step(enc, batch, data.graph, opt.sample_rate, srng, adam);
        curve.push_back(loss);
        if (opt.log_every > 0 && (step + 1) % opt.log_every == 0)
            std::printf("pretrain step %ld/%d loss %.6f\n", step + 1, opt.steps, loss);
    }
    return curve;
}

Denoiser::Cond window_cond(const DatasetBundle& data, const WindowPair& w) {
    Denoiser::Cond c;
    c.spatial_target = gather_matrix_rows(data.spatial.vectors, w.target_nodes);
    if (data.task == Task::krige)
        c.spatial_cond = gather_matrix_rows(data.spatial.vectors, w.cond_nodes);
    c.t_abs = w.start_step + w.t_cond - 1;
    return c;
}

Mat encode_condition(StEncoder& enc, const DatasetBundle& data, const WindowPair& w) {
    return enc.encode_value(w.condition, condition_powers(data));
}

namespace {

double validation_loss(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                       const std::vector<const WindowPair*>& val,
                       const NoiseSchedule& sched, std::uint64_t seed) {
    // Fixed draws: the same seed every epoch makes losses comparable.
    Rng vr(Rng::derive_seed(seed, 0x76616cULL));
    double total = 0.0;
    for (const WindowPair* w : val) {
        Denoiser::Cond cond = window_cond(data, *w);
        cond.h = den.cfg.raw_condition ? w->condition : encode_condition(enc, data, *w);
        int k = 1 + static_cast<int>(vr.index(static_cast<std::size_t>(sched.K)));
        Mat eps = vr.normal_matrix(w->target.rows(), w->target.cols());
        Mat y_k = q_sample(w->target, k, eps, sched);
        Mat eps_hat = den.forward_value(y_k, cond, k);
        total += (eps - eps_hat).squaredNorm() / static_cast<double>(eps.size());
    }
    return total / static_cast<double>(val.size());
}

}  // namespace

TrainRun train_denoiser(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                        const TrainOptions& opt) {
    if (den.cfg.task != data.task)
        throw ConfigError("training: denoiser task does not match the dataset task");
    if (opt.batch < 1 || opt.max_epochs < 1 || opt.patience < 1)
        throw ConfigError("training: loop settings must be positive");
    if (data.train_windows.empty()) throw DataError("training: no training windows");
    NoiseSchedule sched = NoiseSchedule::make(opt.K, opt.beta_start, opt.beta_end, opt.shape);

    const bool raw_cond = den.cfg.raw_condition;
    const bool finetune = !opt.freeze_encoder && !raw_cond;
    const auto& powers = condition_powers(data);
    const std::size_t n_train = data.train_windows.size();

    Adam den_opt;
    den_opt.cfg.lr = opt.lr;
    Adam enc_opt;
    enc_opt.cfg.lr = opt.lr * opt.encoder_lr_scale;

    const int steps_per_epoch =
        opt.steps_per_epoch > 0
            ? opt.steps_per_epoch
            : static_cast<int>((n_train + static_cast<std::size_t>(opt.batch) - 1) /
                               static_cast<std::size_t>(opt.batch));

    std::vector<const WindowPair*> val;
    for (const auto& w : data.val_windows) val.push_back(&w);
    if (val.empty())  // tiny runs without a dedicated split: reuse training windows
        for (const auto& w : data.train_windows) val.push_back(&w);
    if (static_cast<int>(val.size()) > opt.val_window_cap)
        val.resize(static_cast<std::size_t>(opt.val_window_cap));

    TrainRun run;
    run.task = data.task;
    run.seed = opt.seed;
    for (const auto& [k, v] : den.cfg.to_map()) run.config["denoiser." + k] = v;
    for (const auto& [k, v] : enc.cfg.to_map()) run.config["encoder." + k] = v;
    run.config["train.batch"] = std::to_string(opt.batch);
    run.config["train.lr"] = std::to_string(opt.lr);
    run.config["train.encoder_lr_scale"] = std::to_string(opt.encoder_lr_scale);
    run.config["train.freeze_encoder"] = opt.freeze_encoder ? "1" : "0";
    run.config["train.K"] = std::to_string(opt.K);
    run.config["train.beta_start"] = std::to_string(opt.beta_start);
    run.config["train.beta_end"] = std::to_string(opt.beta_end);
    run.config["train.schedule"] = schedule_shape_name(opt.shape);
    run.config["train.seed"] = std::to_string(opt.seed);

    double initial_loss = -1.0;
    int above_initial = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1, since_best = 0;
    std::map<std::string, Mat> best_den, best_enc;

    long step_counter = 0;
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        double epoch_sum = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s, ++step_counter) {
            Rng srng(Rng::derive_seed(opt.seed, 0x747200ULL + static_cast<std::uint64_t>(step_counter)));
            den.params.zero_grad();
            if (finetune) enc.params.zero_grad();
            double batch_loss = 0.0;
            for (int b = 0; b < opt.batch; ++b) {
                const WindowPair& w = data.train_windows[srng.index(n_train)];
                Tape tape;
                Var h = raw_cond ? tape.constant(w.condition)
                                 : (finetune ? enc.encode(tape, tape.constant(w.condition),
                                                          powers)
                                             : tape.constant(
                                                   enc.encode_value(w.condition, powers)));
                Denoiser::Cond cond = window_cond(data, w);
                int k = 1 + static_cast<int>(srng.index(static_cast<std::size_t>(opt.K)));
                Mat eps = srng.normal_matrix(w.target.rows(), w.target.cols());
                auto fn = [&](Tape& t, const Mat& y_k, int kk) {
                    return den.forward_with(t, t.constant(y_k), h, cond, kk);
                };
                Var loss = diffusion_training_loss(tape, w.target, k, eps, sched, fn);
                batch_loss += loss.value()(0, 0);
                tape.backward(scale(loss, 1.0 / static_cast<double>(opt.batch)));
            }
            batch_loss /= static_cast<double>(opt.batch);
            if (!std::isfinite(batch_loss))
                throw NumericError("training loss became non-finite at step " +
                                   std::to_string(step_counter + 1));
            if (initial_loss < 0) initial_loss = std::max(batch_loss, 1e-12);
            if (batch_loss > opt.divergence_factor * initial_loss) {
                if (++above_initial >= opt.divergence_steps)
                    throw NumericError(
                        "training diverged: loss stayed above " +
                        std::to_string(opt.divergence_factor) + "x the initial value for " +
                        std::to_string(opt.divergence_steps) + " steps");
            } else {
                above_initial = 0;
            }
            den_opt.update(den.params);
            if (finetune) enc_opt.update(enc.params);
            epoch_sum += batch_loss;
            if (opt.log_every > 0 && (step_counter + 1) % opt.log_every == 0)
                std::printf("train step %ld loss %.6f\n", step_counter + 1, batch_loss);
        }
        run.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
        double v = validation_loss(den, enc, data, val, sched, opt.seed);
        run.val_loss.push_back(v);
        if (opt.log_every > 0)
            std::printf("epoch %d train %.6f val %.6f\n", epoch + 1, run.epoch_loss.back(), v);
        if (v < best_val) {
            best_val = v;
            best_epoch = epoch;
            since_best = 0;
            best_den = den.params.snapshot();
            if (finetune) best_enc = enc.params.snapshot();
        } else if (++since_best >= opt.patience) {
            break;
        }
    }
    run.steps = step_counter;
    run.best_val = best_val;
    run.best_epoch = best_epoch;
    if (!best_den.empty()) den.params.load(best_den);
    if (finetune && !best_enc.empty()) enc.params.load(best_enc);
    return run;
}

Mat elementwise_median(const std::vector<Mat>& mats) {
    if (mats.empty()) throw DataError("median of an empty sample set");
    const Eigen::Index rows = mats[0].rows(), cols = mats[0].cols();
    for (const Mat& m : mats)
        if (m.rows() != rows || m.cols() != cols)
            throw DataError("median over differently shaped samples");
    Mat out(rows, cols);
    std::vector<double> v(mats.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (std::size_t i = 0; i < mats.size(); ++i) v[i] = mats[i](r, c);
            std::sort(v.begin(), v.end());
            const std::size_t m = v.size();
            out(r, c) = (m % 2 == 1) ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
        }
    }
    return out;
}

SampleSet infer_window(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                       const WindowPair& w, const NoiseSchedule& sched, int n_samples,
                       std::uint64_t window_seed) {
    if (n_samples < 1) throw ConfigError("inference: sample count must be positive");
    Denoiser::Cond cond = window_cond(data, w);
    cond.h = den.cfg.raw_condition ? w.condition : encode_condition(enc, data, w);
    auto fn = [&](const Mat& y_k, int k) { return den.forward_value(y_k, cond, k); };
    SampleSet out;
    out.samples.reserve(static_cast<std::size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s) {
        Rng srng(Rng::derive_seed(window_seed, static_cast<std::uint64_t>(s)));
        Mat y0 = sample_chain(w.target.rows(), w.target.cols(), sched, fn, srng);
        out.samples.push_back(data.normalizer.invert(y0));
    }
    out.point_estimate = elementwise_median(out.samples);
    return out;
}

EvalResult evaluate_model(Denoiser& den, StEncoder& enc, const DatasetBundle& data,
                          const EvalOptions& opt) {
    const std::vector<WindowPair>* windows = nullptr;
    if (opt.split == "val")
        windows = &data.val_windows;
    else if (opt.split == "test")
        windows = &data.test_windows;
    else
        throw ConfigError("evaluate: unknown split '" + opt.split + "'");
    if (windows->empty()) throw DataError("evaluate: split '" + opt.split + "' has no windows");

    NoiseSchedule sched = NoiseSchedule::make(opt.sampling.K, opt.sampling.beta_start,
                                              opt.sampling.beta_end, opt.sampling.shape);
    const int horizons = data.task == Task::forecast ? data.t_target : 0;
    ErrorStats err(horizons);
    CrpsStats crps;
    crps.fair = opt.fair_crps;

    EvalResult res;
    std::vector<double> cell(static_cast<std::size_t>(opt.sampling.n_samples));
    for (std::size_t wi = 0; wi < windows->size(); ++wi) {
        const WindowPair& w = (*windows)[wi];
        SampleSet set = infer_window(den, enc, data, w, sched, opt.sampling.n_samples,
                                     Rng::derive_seed(opt.sampling.seed, wi));
        Mat truth = data.normalizer.invert(w.target);
        for (Eigen::Index r = 0; r < truth.rows(); ++r) {
            int horizon = static_cast<int>(r % data.t_target);
            for (Eigen::Index c = 0; c < truth.cols(); ++c) {
                err.add(set.point_estimate(r, c), truth(r, c), horizons > 0 ? horizon : 0);
                for (int s = 0; s < opt.sampling.n_samples; ++s)
                    cell[static_cast<std::size_t>(s)] = set.samples[static_cast<std::size_t>(s)](r, c);
                crps.add(cell, truth(r, c));
            }
        }
        if (opt.keep_predictions)
            res.predictions.push_back({w.start_step, w.target_nodes, std::move(set), truth});
    }

    MetricReport& rep = res.report;
    rep.split = opt.split;
    rep.task = data.task;
    rep.windows = static_cast<long>(windows->size());
    rep.samples = opt.sampling.n_samples;
    rep.mae = err.mae();
    rep.rmse = err.rmse();
    rep.crps = crps.normalized();
    if (horizons > 0) {
        for (int h = 0; h < horizons; ++h) {
            rep.horizon_mae.push_back(err.mae_at(h));
            rep.horizon_rmse.push_back(err.rmse_at(h));
        }
    }

    if (opt.compare_baselines) {
        if (data.task == Task::forecast) {
            ErrorStats perr(horizons);
            CrpsStats pcrps;
            pcrps.fair = opt.fair_crps;
            ErrorStats cerr(horizons);
            CrpsStats ccrps;
            ccrps.fair = opt.fair_crps;
            ClimatologyModel clim = ClimatologyModel::fit(data.raw, 0, data.split.t_train_end);
            for (std::size_t wi = 0; wi < windows->size(); ++wi) {
                const WindowPair& w = (*windows)[wi];
                Mat truth = data.normalizer.invert(w.target);
                Mat cond_raw = data.normalizer.invert(w.condition);
                Mat persist = persistence_forecast(
                    cond_raw, static_cast<int>(w.cond_nodes.size()), w.t_cond, w.t_target);
                Rng crng(Rng::derive_seed(opt.sampling.seed, 0xC11A0000ULL + wi));
                auto clim_draws =
                    clim.sample(w.target_nodes, w.t_target, opt.sampling.n_samples, crng);
                Mat clim_point = clim.point(w.target_nodes, w.t_target);
                for (Eigen::Index r = 0; r < truth.rows(); ++r) {
                    int horizon = static_cast<int>(r % data.t_target);
                    for (Eigen::Index c = 0; c < truth.cols(); ++c) {
                        perr.add(persist(r, c), truth(r, c), horizon);
                        pcrps.add({persist(r, c), persist(r, c)}, truth(r, c));
                        cerr.add(clim_point(r, c), truth(r, c), horizon);
                        for (int s = 0; s < opt.sampling.n_samples; ++s)
                            cell[static_cast<std::size_t>(s)] =
                                clim_draws[static_cast<std::size_t>(s)](r, c);
                        ccrps.add(cell, truth(r, c));
                    }
                }
            }
            rep.baselines.push_back({"persistence", perr.mae(), perr.rmse(), pcrps.normalized()});
            rep.baselines.push_back({"climatology", cerr.mae(), cerr.rmse(), ccrps.normalized()});
        } else {
            ErrorStats ierr;
            CrpsStats icrps;
            icrps.fair = opt.fair_crps;
            for (const WindowPair& w : *windows) {
                Mat truth = data.normalizer.invert(w.target);
                Mat obs_raw = data.normalizer.invert(w.condition);
                Mat est = idw_krige(data.graph, w.cond_nodes, w.target_nodes, obs_raw,
                                    w.t_cond);
                for (Eigen::Index r = 0; r < truth.rows(); ++r)
                    for (Eigen::Index c = 0; c < truth.cols(); ++c) {
                        ierr.add(est(r, c), truth(r, c));
                        icrps.add({est(r, c), est(r, c)}, truth(r, c));
                    }
            }
            rep.baselines.push_back({"idw", ierr.mae(), ierr.rmse(), icrps.normalized()});
        }
    }
    return res;
}

TimingStats time_sampling(Denoiser& den, const Denoiser::Cond& cond, Eigen::Index rows,
                          Eigen::Index cols, const NoiseSchedule& sched, int trials,
                          std::uint64_t seed) {
    if (trials < 1) throw ConfigError("timing: need at least one trial");
    auto fn = [&](const Mat& y_k, int k) { return den.forward_value(y_k, cond, k); };
    {
        Rng warm(Rng::derive_seed(seed, 0xFFFFULL));
        sample_chain(rows, cols, sched, fn, warm);
    }
    std::vector<double> secs(static_cast<std::size_t>(trials));
    for (int t = 0; t < trials; ++t) {
        Rng r(Rng::derive_seed(seed, static_cast<std::uint64_t>(t)));
        auto t0 = std::chrono::steady_clock::now();
        sample_chain(rows, cols, sched, fn, r);
        auto t1 = std::chrono::steady_clock::now();
        secs[static_cast<std::size_t>(t)] =
            std::chrono::duration<double>(t1 - t0).count();
    }
    TimingStats st;
    st.trials = trials;
    for (double s : secs) st.mean_s += s;
    st.mean_s /= static_cast<double>(trials);
    if (trials > 1) {
        double acc = 0;
        for (double s : secs) acc += (s - st.mean_s) * (s - st.mean_s);
        st.std_s = std::sqrt(acc / static_cast<double>(trials - 1));
    }
    return st;
}

}  // namespace ustd
