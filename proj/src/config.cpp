#include "ustd/config.hpp"

#include <fstream>
#include <sstream>

namespace ustd {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    auto& kv = c.kv_;
    kv["run.out_dir"] = "out";
    kv["run.seed"] = "1";

    kv["data.signals"] = "";
    kv["data.adjacency"] = "";
    kv["data.coords"] = "";
    kv["data.kernel_sigma"] = "0";
    kv["data.kernel_epsilon"] = "0.1";

    kv["dataset.t_cond"] = "12";
    kv["dataset.t_target"] = "12";
    kv["dataset.split_train"] = "0.6";
    kv["dataset.split_val"] = "0.2";
    kv["dataset.split_test"] = "0.2";
    kv["dataset.krige_target_fraction"] = "0.33333333333333331";
    kv["dataset.d_s"] = "8";
    kv["dataset.partition_seed"] = "7";

    SynthConfig sy;
    kv["synth.n_nodes"] = std::to_string(sy.n_nodes);
    kv["synth.t_total"] = std::to_string(sy.t_total);
    std::ostringstream p2;
    p2.precision(17);
    p2 << sy.p2;
    kv["synth.p1"] = std::to_string(sy.p1);
    kv["synth.p2"] = p2.str();
    kv["synth.amp1"] = "1";
    kv["synth.amp2"] = "0.5";
    kv["synth.phase_smoothness"] = "1.5";
    kv["synth.phase_jitter"] = "0.35";
    kv["synth.ar_coeff"] = "0.8";
    kv["synth.ar_sigma"] = "0.4";
    kv["synth.snr_db"] = "10";
    kv["synth.kernel_epsilon"] = "0.1";
    kv["synth.burn_in"] = std::to_string(sy.burn_in);

    kv["encoder.d_x"] = "1";
    kv["encoder.hidden"] = "32";
    kv["encoder.latent"] = "64";
    kv["encoder.skip"] = "64";
    kv["encoder.kernel"] = "2";
    kv["encoder.dilations"] = "1,2,3,1,2,2";
    kv["encoder.gcn_depth"] = "2";
    kv["encoder.decoder_layers"] = "3";

    kv["pretrain.steps"] = "600";
    kv["pretrain.batch"] = "8";
    kv["pretrain.lr"] = "0.001";
    kv["pretrain.mask_ratio"] = "0.75";
    kv["pretrain.sample_rate"] = "0.8";
    kv["pretrain.masked"] = "1";
    kv["pretrain.log_every"] = "100";
    kv["pretrain.resume"] = "";

    kv["denoiser.channel"] = "96";
    kv["denoiser.layers"] = "2";
    kv["denoiser.heads"] = "4";
    kv["denoiser.diff_dim"] = "128";
    kv["denoiser.ffn_hidden"] = "256";
    kv["denoiser.no_self_attention"] = "0";
    kv["denoiser.raw_condition"] = "0";
    kv["denoiser.full_attention"] = "0";

    kv["train.task"] = "forecast";
    kv["train.batch"] = "8";
    kv["train.lr"] = "0.001";
    kv["train.encoder_lr_scale"] = "0.1";
    kv["train.freeze_encoder"] = "0";
    kv["train.max_epochs"] = "200";
    kv["train.steps_per_epoch"] = "0";
    kv["train.patience"] = "10";
    kv["train.val_window_cap"] = "64";
    kv["train.K"] = "50";
    kv["train.beta_start"] = "0.0001";
    kv["train.beta_end"] = "0.5";
    kv["train.schedule"] = "quadratic";
    kv["train.divergence_factor"] = "10";
    kv["train.divergence_steps"] = "500";
    kv["train.log_every"] = "0";
    kv["train.encoder"] = "";

    kv["sample.n_samples"] = "8";
    kv["sample.K"] = "50";

    kv["eval.split"] = "test";
    kv["eval.compare_baselines"] = "0";
    kv["eval.fair_crps"] = "1";
    kv["eval.fan_nodes"] = "";
    kv["eval.encoder"] = "";
    kv["eval.denoiser"] = "";

    kv["bench.n_nodes"] = "300";
    kv["bench.trials"] = "7";
    kv["bench.K"] = "50";
    kv["bench.tga"] = "";
    kv["bench.full"] = "";
    return c;
}

std::map<std::string, std::string> RunConfig::parse_text(std::istream& in) {
    std::map<std::string, std::string> out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (section.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key outside of any [section]");
        out[section + "." + key] = value;
    }
    return out;
}

std::map<std::string, std::string> RunConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_text(in);
}

void RunConfig::merge(const std::map<std::string, std::string>& overrides) {
    for (const auto& [k, v] : overrides) set(k, v);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key.find('.') == std::string::npos)
        throw ConfigError("config key '" + key + "' lacks a section prefix");
    kv_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

int RunConfig::geti(const std::string& key) const {
    return static_cast<int>(getl(key));
}

long RunConfig::getl(const std::string& key) const {
    const std::string& v = str(key);
    try {
        std::size_t used = 0;
        long out = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    }
}

double RunConfig::getd(const std::string& key) const {
    const std::string& v = str(key);
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
}

bool RunConfig::getb(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::uint64_t RunConfig::getu(const std::string& key) const {
    const std::string& v = str(key);
    try {
        std::size_t used = 0;
        unsigned long long out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
    }
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    const std::string& v = str(key);
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + item + "' is not an integer");
        }
    }
    return out;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    std::string section;
    for (const auto& [k, v] : kv_) {  // map order groups keys by section prefix
        std::size_t dot = k.find('.');
        std::string sec = k.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << k.substr(dot + 1) << " = " << v << "\n";
    }
    return os.str();
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path);
    out << to_text();
}

Task RunConfig::task() const { return parse_task(str("train.task")); }

SynthConfig RunConfig::synth() const {
    SynthConfig s;
    s.n_nodes = geti("synth.n_nodes");
    s.t_total = geti("synth.t_total");
    s.p1 = getd("synth.p1");
    s.p2 = getd("synth.p2");
    s.amp1 = getd("synth.amp1");
    s.amp2 = getd("synth.amp2");
    s.phase_smoothness = getd("synth.phase_smoothness");
    s.phase_jitter = getd("synth.phase_jitter");
    s.ar_coeff = getd("synth.ar_coeff");
    s.ar_sigma = getd("synth.ar_sigma");
    s.snr_db = getd("synth.snr_db");
    s.kernel_epsilon = getd("synth.kernel_epsilon");
    s.burn_in = geti("synth.burn_in");
    return s;
}

PrepareOptions RunConfig::prepare() const {
    PrepareOptions p;
    p.task = task();
    p.t_cond = geti("dataset.t_cond");
    p.t_target = geti("dataset.t_target");
    p.split_train = getd("dataset.split_train");
    p.split_val = getd("dataset.split_val");
    p.split_test = getd("dataset.split_test");
    p.krige_target_fraction = getd("dataset.krige_target_fraction");
    p.d_s = geti("dataset.d_s");
    p.gcn_depth = geti("encoder.gcn_depth");
    p.partition_seed = getu("dataset.partition_seed");
    return p;
}

EncoderConfig RunConfig::encoder() const {
    EncoderConfig e;
    e.d_x = geti("encoder.d_x");
    e.hidden = geti("encoder.hidden");
    e.latent = geti("encoder.latent");
    e.skip = geti("encoder.skip");
    e.kernel = geti("encoder.kernel");
    e.dilations = get_int_list("encoder.dilations");
    e.gcn_depth = geti("encoder.gcn_depth");
    e.decoder_layers = geti("encoder.decoder_layers");
    e.T = geti("dataset.t_cond");
    return e;
}

DenoiserConfig RunConfig::denoiser() const {
    EncoderConfig e = encoder();
    DenoiserConfig d;
    d.task = task();
    d.d_y = e.d_x;
    d.steps = d.task == Task::krige ? geti("dataset.t_cond") : geti("dataset.t_target");
    d.channel = geti("denoiser.channel");
    d.layers = geti("denoiser.layers");
    d.heads = geti("denoiser.heads");
    d.latent = e.latent;
    d.tau = e.tau();
    d.d_s = geti("dataset.d_s");
    d.diff_dim = geti("denoiser.diff_dim");
    d.ffn_hidden = geti("denoiser.ffn_hidden");
    d.no_self_attention = getb("denoiser.no_self_attention");
    d.raw_condition = getb("denoiser.raw_condition");
    if (d.raw_condition) d.raw_dim = geti("dataset.t_cond") * e.d_x;
    d.full_attention = getb("denoiser.full_attention");
    return d;
}

PretrainOptions RunConfig::pretrain() const {
    PretrainOptions p;
    p.steps = geti("pretrain.steps");
    p.batch = geti("pretrain.batch");
    p.lr = getd("pretrain.lr");
    p.mask_ratio = getd("pretrain.mask_ratio");
    p.sample_rate = getd("pretrain.sample_rate");
    p.masked = getb("pretrain.masked");
    p.seed = getu("run.seed");
    p.log_every = geti("pretrain.log_every");
    return p;
}

TrainOptions RunConfig::train() const {
    TrainOptions t;
    t.batch = geti("train.batch");
    t.lr = getd("train.lr");
    t.encoder_lr_scale = getd("train.encoder_lr_scale");
    t.freeze_encoder = getb("train.freeze_encoder");
    t.max_epochs = geti("train.max_epochs");
    t.steps_per_epoch = geti("train.steps_per_epoch");
    t.patience = geti("train.patience");
    t.val_window_cap = geti("train.val_window_cap");
    t.K = geti("train.K");
    t.beta_start = getd("train.beta_start");
    t.beta_end = getd("train.beta_end");
    t.shape = parse_schedule_shape(str("train.schedule"));
    t.seed = getu("run.seed");
    t.divergence_factor = getd("train.divergence_factor");
    t.divergence_steps = geti("train.divergence_steps");
    t.log_every = geti("train.log_every");
    return t;
}

SampleOptions RunConfig::sampling() const {
    SampleOptions s;
    s.n_samples = geti("sample.n_samples");
    s.K = geti("sample.K");
    s.beta_start = getd("train.beta_start");
    s.beta_end = getd("train.beta_end");
    s.shape = parse_schedule_shape(str("train.schedule"));
    s.seed = getu("run.seed");
    return s;
}

EvalOptions RunConfig::eval() const {
    EvalOptions e;
    e.sampling = sampling();
    e.split = str("eval.split");
    e.compare_baselines = getb("eval.compare_baselines");
    e.fair_crps = getb("eval.fair_crps");
    e.keep_predictions = true;
    return e;
}

}  // namespace ustd
