#pragma once

#include <string>

#include "ustd/config.hpp"

namespace ustd {

// Individual commands; each reads every input it needs from the config
// (including checkpoint paths) and writes its artifacts under run.out_dir.
int cmd_synth(const RunConfig& cfg);
int cmd_pretrain(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);
int cmd_bench(const RunConfig& cfg);

/// Parse arguments, assemble the layered config (defaults < file < USTD_SEED
/// < flags) and dispatch. Exit codes: 0 success, 2 configuration error,
/// 3 data error, 4 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace ustd
