#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ustd/pipeline.hpp"
#include "ustd/synthetic.hpp"

namespace ustd {

/// Layered run configuration: built-in defaults, overridden by a sectioned
/// key-value file, overridden again by command-line flags. Keys are
/// "section.key"; the file groups keys under "[section]" headers.
class RunConfig {
public:
    /// All built-in defaults filled in.
    static RunConfig defaults();

    /// Parse "[section]" / "key = value" text; '#' starts a comment.
    static std::map<std::string, std::string> parse_text(std::istream& in);
    static std::map<std::string, std::string> parse_file(const std::string& path);

    void merge(const std::map<std::string, std::string>& overrides);
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    const std::string& str(const std::string& key) const;
    int geti(const std::string& key) const;
    long getl(const std::string& key) const;
    double getd(const std::string& key) const;
    bool getb(const std::string& key) const;
    std::uint64_t getu(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }
    std::string to_text() const;
    void save(const std::string& path) const;

    // Materialized module options. The task comes from "train.task".
    Task task() const;
    SynthConfig synth() const;
    PrepareOptions prepare() const;
    EncoderConfig encoder() const;
    DenoiserConfig denoiser() const;
    PretrainOptions pretrain() const;
    TrainOptions train() const;
    SampleOptions sampling() const;
    EvalOptions eval() const;

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace ustd
