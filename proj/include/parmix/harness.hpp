#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "parmix/core.hpp"
#include "parmix/model.hpp"
#include "parmix/neural.hpp"
#include "parmix/schedule.hpp"

namespace parmix {

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

enum class TaskKind { kCopy, kReverse, kRepeatK, kParitySuffix };

TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

/// Desk-scale stand-ins for the corpus tasks: inputs are uniform random data
/// tokens, targets derive from the input (copy, reverse, k-fold repeat, or
/// input plus one parity token).
struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  int vocab_size = 16;
  int min_input_len = 1;
  int max_input_len = 8;
  int train_size = 256;
  int eval_size = 64;
  int repeats = 2;  // repeat-k only
  std::uint64_t seed = 0;

  void validate() const;
  int max_target_len() const;
};

struct Dataset {
  Vocab vocab;
  std::vector<Example> train;
  std::vector<Example> eval;
};

/// Deterministic in spec.seed.
Dataset make_task(const TaskSpec& spec);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Method { kTeacherForcing, kSequentialSs, kParallelSs };

Method parse_method(const std::string& name);
std::string to_string(Method method);

struct RunConfig {
  TaskSpec task;
  ModelDims model;
  MixingConfig mixing;
  Method method = Method::kTeacherForcing;
  int batch_size = 16;
  std::int64_t total_steps = 1000;
  std::int64_t eval_interval = 100;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  void validate() const;
};

/// One metrics-log record; appended per eval interval, never rewritten.
struct MetricsRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double p = 0.0;
  double tokens_per_sec = 0.0;
  double steps_per_sec = 0.0;
  double eval_token_acc = 0.0;
  double eval_exact_match = 0.0;
  double eval_edit_dist = 0.0;
};

/// Line encoding: space-separated key=value pairs, floats at full round-trip
/// precision, one self-contained record per line.
std::string format_metrics_line(const MetricsRecord& record);
MetricsRecord parse_metrics_line(const std::string& line);

struct TrainResult {
  MiniNeuralModel<float> model;
  std::vector<MetricsRecord> metrics;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Runs the configured training loop; writes metrics.log and checkpoint.pmnc
/// under config.output_dir. Bitwise reproducible per seed. A non-finite loss
/// aborts with a diagnostic record appended to the log.
TrainResult train(const RunConfig& config);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct DecoderSpec {
  enum class Kind { kGreedy, kSample, kBeam } kind = Kind::kGreedy;
  int beam_width = 4;
  std::uint64_t seed = 0;

  static DecoderSpec parse(const std::string& name);  // greedy | sample | beam-<B>
  std::string to_string() const;
};

struct EvalMetrics {
  double token_accuracy = 0.0;   // position-wise vs gold up to min length
  double exact_match = 0.0;
  double mean_edit_distance = 0.0;
};

int levenshtein(const TokenSeq& a, const TokenSeq& b);

/// Decodes every example (predictions capped at twice the gold length) and
/// scores against gold targets.
EvalMetrics evaluate(const ModelInterface& model,
                     const std::vector<Example>& examples,
                     const DecoderSpec& decoder);

// ---------------------------------------------------------------------------
// Throughput benchmark
// ---------------------------------------------------------------------------

struct BenchmarkSpec {
  std::vector<Method> methods = {Method::kTeacherForcing, Method::kParallelSs,
                                 Method::kSequentialSs};
  std::vector<int> lengths = {16, 32, 64};
  int vocab_size = 16;
  ModelDims model{32, 2, 64, 2, 128};
  int batch_size = 32;
  int passes = 1;
  double p = 0.5;
  int measure_steps = 12;       // parallel methods
  int measure_steps_seq = 4;    // sequential-ss
  std::uint64_t seed = 0;
};

struct BenchmarkRow {
  Method method = Method::kTeacherForcing;
  int length = 0;
  double steps_per_sec = 0.0;
  /// Inference calls per example per step, counted by the instrumented
  /// wrapper (1 for teacher-forcing, K+1 for parallel SS, T+1 for sequential).
  double inference_calls = 0.0;
};

/// Wall-clock steps/sec per (method, target length) on identical model and
/// batch. Timings cover the middle 80% of measured steps. Single worker
/// thread throughout; runs execute in isolation, one after another.
std::vector<BenchmarkRow> run_benchmark(const BenchmarkSpec& spec);

/// CSV with header `method,length,steps_per_sec,inference_calls`.
void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows);

}  // namespace parmix
