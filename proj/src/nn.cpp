#include "ustd/nn.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace ustd {

Mat& ParamStore::add(const std::string& name, Mat init) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Entry e;
    e.grad = Mat::Zero(init.rows(), init.cols());
    e.m = Mat::Zero(init.rows(), init.cols());
    e.v = Mat::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    order_.push_back(name);
    return it->second.value;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

ad::Var ParamStore::use(ad::Tape& tape, const std::string& name) {
    Entry& e = at(name);
    return tape.param(e.value, &e.grad);
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.grad.setZero();
}

std::size_t ParamStore::count_scalars() const {
    std::size_t total = 0;
    for (const auto& [name, e] : entries_) total += static_cast<std::size_t>(e.value.size());
    return total;
}

std::map<std::string, Mat> ParamStore::snapshot() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, e] : entries_) out.emplace(name, e.value);
    return out;
}

void ParamStore::load(const std::map<std::string, Mat>& values) {
    for (auto& [name, e] : entries_) {
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("checkpoint missing parameter: " + name);
        if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols())
            throw ConfigError("checkpoint shape mismatch for parameter: " + name);
        e.value = it->second;
    }
}

void Adam::update(ParamStore& params) {
    ++step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (const std::string& name : params.names()) {
        auto& e = params.at(name);
        e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad;
        e.v = cfg.beta2 * e.v.array() + (1.0 - cfg.beta2) * e.grad.array().square();
        Mat m_hat = e.m / bc1;
        Mat v_hat = e.v / bc2;
        e.value.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
    }
}

Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
}

namespace {

constexpr char kMagic[8] = {'U', 'S', 'T', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i64(std::ofstream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ofstream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::int64_t read_i64(std::ifstream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::string read_string(std::ifstream& in) {
    std::uint32_t len = read_u32(in);
    if (len > (1u << 20)) throw DataError("checkpoint string length corrupt");
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(ckpt.config.size()));
    for (const auto& [k, v] : ckpt.config) {
        write_string(out, k);
        write_string(out, v);
    }
    write_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, m] : ckpt.arrays) {
        write_string(out, name);
        write_i64(out, m.rows());
        write_i64(out, m.cols());
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            out.write(reinterpret_cast<const char*>(m.row(r).eval().data()),
                      static_cast<std::streamsize>(sizeof(double) * m.cols()));
    }
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    std::uint32_t n_config = read_u32(in);
    for (std::uint32_t i = 0; i < n_config; ++i) {
        std::string k = read_string(in);
        ckpt.config[k] = read_string(in);
    }
    std::uint32_t n_arrays = read_u32(in);
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        std::string name = read_string(in);
        std::int64_t rows = read_i64(in);
        std::int64_t cols = read_i64(in);
        if (rows < 0 || cols < 0 || rows * cols > (1ll << 30))
            throw DataError("checkpoint array shape corrupt: " + name);
        Mat m(rows, cols);
        std::vector<double> buf(static_cast<std::size_t>(cols));
        for (std::int64_t r = 0; r < rows; ++r) {
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(sizeof(double) * cols));
            for (std::int64_t c = 0; c < cols; ++c) m(r, c) = buf[static_cast<std::size_t>(c)];
        }
        ckpt.arrays.emplace(std::move(name), std::move(m));
    }
    if (!in) throw DataError("truncated checkpoint: " + path);
    return ckpt;
}

}  // namespace ustd
