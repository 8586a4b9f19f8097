// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `cvm` tool. Each command returns an
// outcome instead of exiting so tests can drive them in process.

#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cvm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

struct CommandOutcome {
  int exit_code = kOk;
  std::string summary;
  std::vector<std::filesystem::path> artifacts;
};

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

struct SynthOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};
/// Writes <out>/manifest.jsonl, <out>/config.json and one directory per scene.
CommandOutcome cmd_synth(const SynthOptions& o);

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path manifest, out;
  std::string split = "train";
  std::optional<std::string> ablation;
  std::optional<std::int64_t> views, steps;
  std::vector<std::int64_t> depth_candidates;  // several values train one run each under <out>/L<n>
  std::optional<std::uint64_t> seed;
};
CommandOutcome cmd_train(const TrainOptions& o, std::ostream& log);

struct EvalOptions {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path manifest, out;
  std::string split = "test";
  std::optional<std::string> ablation;
  std::optional<std::string> name;  // report name; defaults to the checkpoint's directory name
};
/// Writes <out>/<name>.json per checkpoint.
CommandOutcome cmd_eval(const EvalOptions& o);

struct InferOptions {
  std::filesystem::path checkpoint, image, out;
};
/// Writes one image per task under <out> (plus depth.pfm in metres).
CommandOutcome cmd_infer(const InferOptions& o);

struct ReportOptions {
  std::vector<std::filesystem::path> inputs;
  std::string baseline;  // report name or path of one of the inputs
  std::filesystem::path out;  // stem: writes <out>.csv and <out>.txt
};
CommandOutcome cmd_report(const ReportOptions& o);

/// Parse argv and dispatch. Usage problems return kUsage.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cvm::cli
