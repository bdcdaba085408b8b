#pragma once

#include <map>
#include <string>
#include <vector>

#include "ustd/autodiff.hpp"
#include "ustd/common.hpp"

namespace ustd {

/// Named trainable arrays with gradient and Adam moment storage. Entries keep
/// stable addresses once added, so tapes can bind gradient sinks directly.
class ParamStore {
public:
    struct Entry {
        Mat value, grad, m, v;
    };

    Mat& add(const std::string& name, Mat init);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Entry& at(const std::string& name);
    const Entry& at(const std::string& name) const;

    /// Bind a parameter onto a tape; backward() accumulates into its grad.
    ad::Var use(ad::Tape& tape, const std::string& name);

    void zero_grad();
    const std::vector<std::string>& names() const { return order_; }
    std::size_t count_scalars() const;

    std::map<std::string, Mat> snapshot() const;
    /// Replace values from a snapshot; throws ConfigError when a name is
    /// missing or a shape differs.
    void load(const std::map<std::string, Mat>& values);

private:
    std::vector<std::string> order_;
    std::map<std::string, Entry> entries_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer state; one instance per parameter group.
struct Adam {
    AdamConfig cfg;
    long step = 0;
    void update(ParamStore& params);
};

/// Glorot-uniform initializer.
Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols);

// -- checkpoint container --
// Binary layout: magic "USTDCKPT", u32 version, u32 config entry count,
// (string key, string value) pairs, u32 array count, (string name, i64 rows,
// i64 cols, row-major doubles) records. Strings are u32 length + bytes.
// Round trips are bit-exact.
struct Checkpoint {
    std::map<std::string, std::string> config;
    std::map<std::string, Mat> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ustd
