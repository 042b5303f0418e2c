#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "parmix/config.hpp"
#include "parmix/exactdist.hpp"
#include "parmix/harness.hpp"
#include "parmix/sstrain.hpp"

namespace {

using namespace parmix;

TokenSeq parse_tokens(const std::string& text) {
  TokenSeq tokens;
  std::istringstream is(text);
  long v;
  while (is >> v) tokens.push_back(static_cast<Token>(v));
  return tokens;
}

std::string show_tokens(const TokenSeq& tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << ' ';
    os << tokens[i];
  }
  return os.str();
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& method, const std::string& output_dir) {
  RunConfig config = load_run_config(config_path);
  apply_seed_overrides(config, seed);
  if (!method.empty()) config.method = parse_method(method);
  if (!output_dir.empty()) config.output_dir = output_dir;
  config.validate();

  const TrainResult result = train(config);
  const MetricsRecord& last = result.metrics.back();
  std::cout << "trained " << to_string(config.method) << " for "
            << config.total_steps << " steps\n"
            << "final: " << format_metrics_line(last) << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n"
            << "metrics: " << result.metrics_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             const std::string& decoder_name, std::optional<std::uint64_t> seed) {
  RunConfig config = load_run_config(config_path);
  apply_seed_overrides(config, seed);
  const MiniNeuralModel<float> model = load_checkpoint(checkpoint);
  const Dataset data = make_task(config.task);
  const DecoderSpec decoder = DecoderSpec::parse(decoder_name);
  const NeuralAdapter<float> adapter(model);
  const EvalMetrics m = evaluate(adapter, data.eval, decoder);
  std::cout << "decoder=" << decoder.to_string()
            << " token_acc=" << m.token_accuracy
            << " exact_match=" << m.exact_match
            << " edit_dist=" << m.mean_edit_distance << "\n";
  return 0;
}

int cmd_decode(const std::string& checkpoint, const std::string& input,
               const std::string& decoder_name, int max_len,
               std::uint64_t seed) {
  const MiniNeuralModel<float> model = load_checkpoint(checkpoint);
  const NeuralAdapter<float> adapter(model);
  const TokenSeq context = parse_tokens(input);
  const DecoderSpec decoder = DecoderSpec::parse(decoder_name);
  TokenSeq out;
  switch (decoder.kind) {
    case DecoderSpec::Kind::kGreedy:
      out = decode_greedy(adapter, context, max_len);
      break;
    case DecoderSpec::Kind::kSample:
      out = decode_sample(adapter, context, max_len, make_stream(seed));
      break;
    case DecoderSpec::Kind::kBeam:
      out = decode_beam(adapter, context, decoder.beam_width, max_len);
      break;
  }
  std::cout << show_tokens(out) << "\n";
  return 0;
}

int cmd_verify_theorem(int vocab_size, int length, int n_seeds,
                       double concentration, double tolerance, bool verbose) {
  const Vocab vocab = Vocab::plain(vocab_size);
  bool all_pass = true;
  for (int seed = 0; seed < n_seeds; ++seed) {
    const RngStream root = make_stream(static_cast<std::uint64_t>(seed));
    const TabularModel model =
        tabular_random(vocab, length, concentration, root);
    const TokenSeq gold = decode_sample(
        model, {}, length, split_stream(root, rng_label::kGold));
    const TheoremReport report = verify_theorem(model, gold, length, tolerance);
    if (verbose) std::cout << "seed " << seed << ": " << report.to_string();
    if (!report.pass) {
      all_pass = false;
      std::cout << "seed " << seed << " FAILED\n" << report.to_string();
    }
  }
  std::cout << (all_pass ? "PASS" : "FAIL") << " (" << n_seeds
            << " seeds, V=" << vocab_size << ", T=" << length << ")\n";
  return all_pass ? 0 : 1;
}

int cmd_analyze_proposal(int vocab_size, int length, std::uint64_t seed,
                         double concentration, const std::string& out_path) {
  const Vocab vocab = Vocab::plain(vocab_size);
  const RngStream root = make_stream(seed);
  const TabularModel model = tabular_random(vocab, length, concentration, root);
  const TokenSeq gold =
      decode_sample(model, {}, length, split_stream(root, rng_label::kGold));
  const std::vector<double> p_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  const std::vector<int> k_grid = {1, 2, 3, 4, 5};
  const auto rows = proposal_sweep(model, gold, p_grid, k_grid);
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) {
    std::cerr << "cannot open " << out_path << "\n";
    return 1;
  }
  write_sweep_csv(os, rows);
  std::cout << "gold: " << show_tokens(gold) << "\n"
            << "wrote " << rows.size() << " rows to " << out_path << "\n";
  return 0;
}

int cmd_benchmark(const std::vector<int>& lengths, int batch, int passes,
                  double p, int vocab_size, const std::string& methods_csv,
                  const std::string& out_path, std::uint64_t seed) {
  BenchmarkSpec spec;
  if (!lengths.empty()) spec.lengths = lengths;
  spec.batch_size = batch;
  spec.passes = passes;
  spec.p = p;
  spec.vocab_size = vocab_size;
  spec.seed = seed;
  if (!methods_csv.empty()) {
    spec.methods.clear();
    std::istringstream is(methods_csv);
    std::string name;
    while (std::getline(is, name, ',')) spec.methods.push_back(parse_method(name));
  }
  // Targets plus markers must fit the position budget.
  for (int len : spec.lengths)
    spec.model.max_positions = std::max(spec.model.max_positions, len + 2);

  std::cout << "benchmark: batch=" << spec.batch_size << " passes=" << spec.passes
            << " p=" << spec.p << " worker_threads=1\n";
  const auto rows = run_benchmark(spec);
  std::ostringstream csv;
  write_benchmark_csv(csv, rows);
  std::cout << csv.str();
  if (!out_path.empty()) {
    std::ofstream os(out_path, std::ios::trunc);
    if (!os) {
      std::cerr << "cannot open " << out_path << "\n";
      return 1;
    }
    os << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel/Sequential Scheduled Sampling trainer and analysis tools"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  std::string config_path, method_override, output_dir_override;
  std::optional<std::uint64_t> seed_flag;
  train_cmd->add_option("--config", config_path, "JSON config file")->required();
  train_cmd->add_option("--seed", seed_flag, "override the run seed");
  train_cmd->add_option("--method", method_override,
                        "teacher-forcing | sequential-ss | parallel-ss");
  train_cmd->add_option("--output-dir", output_dir_override, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  std::string eval_checkpoint, eval_config, eval_decoder = "greedy";
  std::optional<std::uint64_t> eval_seed;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "JSON config file")->required();
  eval_cmd->add_option("--decoder", eval_decoder, "greedy | sample | beam-<B>");
  eval_cmd->add_option("--seed", eval_seed, "override the run seed");

  // decode
  auto* decode_cmd = app.add_subcommand("decode", "decode from a checkpoint");
  std::string decode_checkpoint, decode_input, decode_decoder = "greedy";
  int decode_max_len = 64;
  std::uint64_t decode_seed = 0;
  decode_cmd->add_option("--checkpoint", decode_checkpoint, "checkpoint file")
      ->required();
  decode_cmd->add_option("--input", decode_input,
                         "space-separated context token ids (may be empty)");
  decode_cmd->add_option("--decoder", decode_decoder, "greedy | sample | beam-<B>");
  decode_cmd->add_option("--max-len", decode_max_len, "maximum decode length");
  decode_cmd->add_option("--seed", decode_seed, "sampling seed");

  // verify-theorem
  auto* verify_cmd = app.add_subcommand(
      "verify-theorem",
      "check that the parallel proposal equals ancestral sampling at p=1, K>=T");
  int vt_vocab = 3, vt_len = 3, vt_seeds = 20;
  double vt_conc = 1.0, vt_tol = 1e-10;
  bool vt_verbose = false;
  verify_cmd->add_option("--vocab", vt_vocab, "vocabulary size");
  verify_cmd->add_option("--len", vt_len, "sequence length");
  verify_cmd->add_option("--seeds", vt_seeds, "number of seeded models");
  verify_cmd->add_option("--concentration", vt_conc, "Dirichlet concentration");
  verify_cmd->add_option("--tolerance", vt_tol, "TV tolerance");
  verify_cmd->add_flag("--verbose", vt_verbose, "print every report");

  // analyze-proposal
  auto* analyze_cmd = app.add_subcommand(
      "analyze-proposal", "sweep TV/KL of the parallel proposal over (p, K)");
  int ap_vocab = 3, ap_len = 3;
  std::uint64_t ap_seed = 7;
  double ap_conc = 1.0;
  std::string ap_out = "proposal_sweep.csv";
  analyze_cmd->add_option("--vocab", ap_vocab, "vocabulary size");
  analyze_cmd->add_option("--len", ap_len, "sequence length");
  analyze_cmd->add_option("--seed", ap_seed, "model seed");
  analyze_cmd->add_option("--concentration", ap_conc, "Dirichlet concentration");
  analyze_cmd->add_option("--out", ap_out, "output CSV path");

  // benchmark
  auto* bench_cmd = app.add_subcommand(
      "benchmark", "steps/sec per training method at several target lengths");
  std::vector<int> bm_lengths;
  int bm_batch = 32, bm_passes = 1, bm_vocab = 16;
  double bm_p = 0.5;
  std::string bm_methods, bm_out = "benchmark.csv";
  std::uint64_t bm_seed = 0;
  bench_cmd->add_option("--lengths", bm_lengths, "target lengths");
  bench_cmd->add_option("--batch", bm_batch, "batch size");
  bench_cmd->add_option("--passes", bm_passes, "parallel-ss passes");
  bench_cmd->add_option("--p", bm_p, "mixing probability");
  bench_cmd->add_option("--vocab", bm_vocab, "vocabulary size");
  bench_cmd->add_option("--methods", bm_methods, "comma-separated method list");
  bench_cmd->add_option("--out", bm_out, "output CSV path");
  bench_cmd->add_option("--seed", bm_seed, "benchmark seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed())
      return cmd_train(config_path, seed_flag, method_override, output_dir_override);
    if (eval_cmd->parsed())
      return cmd_eval(eval_checkpoint, eval_config, eval_decoder, eval_seed);
    if (decode_cmd->parsed())
      return cmd_decode(decode_checkpoint, decode_input, decode_decoder,
                        decode_max_len, decode_seed);
    if (verify_cmd->parsed())
      return cmd_verify_theorem(vt_vocab, vt_len, vt_seeds, vt_conc, vt_tol,
                                vt_verbose);
    if (analyze_cmd->parsed())
      return cmd_analyze_proposal(ap_vocab, ap_len, ap_seed, ap_conc, ap_out);
    if (bench_cmd->parsed())
      return cmd_benchmark(bm_lengths, bm_batch, bm_passes, bm_p, bm_vocab,
                           bm_methods, bm_out, bm_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
