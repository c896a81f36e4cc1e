#pragma once

// Command-line entry points. Each command reads a RunConfig and writes its
// outputs under out_dir, starting with an echo of the config it ran with.
//
//   synth      train.jsonl, val.jsonl, test.jsonl (+ feature sidecars), vocab.txt, world.json
//   train      config.json, metrics.jsonl, [batches.jsonl], checkpoint.bin, summary.json
//   eval       report.json, report.csv
//   sweep      sweep.csv, sweep_metrics.jsonl
//   gradcheck  gradcheck.json
//
// Exit codes: 0 success, 1 gradcheck or other failure, 2 config error,
// 3 data error, 4 numeric divergence. Errors go to stderr as one JSON line.

#include <iosfwd>
#include <vector>

#include "grounder/config.hpp"
#include "grounder/eval.hpp"
#include "grounder/gradcheck.hpp"

namespace grounder {

void cmd_synth(const RunConfig& config);

struct TrainOutcome {
  TrainResult result;  // best model, metrics; empty metrics for a 0-epoch run
  ModelParams model;   // what was written to the checkpoint
};
TrainOutcome cmd_train(const RunConfig& config);

EvalReport cmd_eval(const RunConfig& config);

struct SweepRow {
  double fraction = 0.0;
  std::string mode;
  double lambda = 0.0;
  double accuracy = 0.0;
  std::optional<double> supervised_only_accuracy;  // with sweep_ablation
};
std::vector<SweepRow> cmd_sweep(const RunConfig& config);

GradcheckReport cmd_gradcheck(const RunConfig& config);

// Parses argv, runs one command and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace grounder
