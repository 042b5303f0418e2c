#include <chrono>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "parmix/harness.hpp"
#include "parmix/sstrain.hpp"

namespace parmix {

namespace {

using Clock = std::chrono::steady_clock;

// Fixed batch of unconditional examples with targets of exactly `length`
// data tokens; the benchmark measures shape-dependent cost, not learning.
std::vector<Example> bench_batch(const Vocab& vocab, int length, int batch,
                                 RngStream stream) {
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(batch));
  const Token lo = vocab.first_data_token();
  const auto n_data = static_cast<std::uint64_t>(vocab.num_data_tokens());
  for (int b = 0; b < batch; ++b) {
    RngStream s = split_stream(stream, static_cast<std::uint64_t>(b));
    Example ex;
    ex.target.resize(static_cast<std::size_t>(length));
    for (Token& t : ex.target) t = lo + static_cast<Token>(next_below(s, n_data));
    out.push_back(std::move(ex));
  }
  return out;
}

// One full training step (conditioning + loss/grads + update) for every
// example of the batch, with all inference routed through the wrapper.
void run_step(Method method, const MiniNeuralModel<float>& model,
              const InstrumentedModel& wrapper,
              const std::vector<Example>& batch, double p, int passes,
              std::int64_t step, const RngStream& root,
              ParamSet<float>& grads, AdamState<float>& adam,
              MiniNeuralModel<float>& mutable_model) {
  grads.for_each_tensor([](const std::string&, Mat<float>& t) { t.fill(0.0f); });
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Example& ex = batch[b];
    RngStream ex_stream = split_stream(
        split_stream(split_stream(root, rng_label::kExample),
                     static_cast<std::uint64_t>(step)),
        static_cast<std::uint64_t>(b));
    TokenSeq mixed = ex.target;
    switch (method) {
      case Method::kTeacherForcing:
        break;
      case Method::kParallelSs:
        mixed = parallel_ss(wrapper, ex, p, passes, ex_stream).final_mixed;
        break;
      case Method::kSequentialSs:
        mixed = sequential_ss(wrapper, ex, p, ex_stream).final_mixed;
        break;
    }
    const SupervisedBatchItem item = pack_supervised(model.vocab, ex, mixed);
    LossResult<float> lr =
        loss_and_grads(model, item.conditioning, item.targets, item.mask);
    wrapper.note_full_pass();  // the loss pass is one full inference call
    add_scaled(grads, lr.grads, inv_b);
  }
  apply_update(mutable_model, grads, adam);
}

}  // namespace

std::vector<BenchmarkRow> run_benchmark(const BenchmarkSpec& spec) {
  std::vector<BenchmarkRow> rows;
  const Vocab vocab = Vocab::with_markers(spec.vocab_size);

  for (int length : spec.lengths) {
    for (Method method : spec.methods) {
      const RngStream root = make_stream(spec.seed);
      MiniNeuralModel<float> model =
          MiniNeuralModel<float>::init(vocab, spec.model, root);
      AdamState<float> adam = AdamState<float>::init_like(vocab, spec.model);
      ParamSet<float> grads = ParamSet<float>::zeros(vocab.size, spec.model);
      const NeuralAdapter<float> adapter(model);
      InstrumentedModel wrapper(adapter);
      const std::vector<Example> batch = bench_batch(
          vocab, length, spec.batch_size, split_stream(root, rng_label::kTask));

      const int steps = method == Method::kSequentialSs ? spec.measure_steps_seq
                                                        : spec.measure_steps;

      // One untimed step to fault in allocations and caches.
      run_step(method, model, wrapper, batch, spec.p, spec.passes, 0, root,
               grads, adam, model);
      wrapper.reset();

      std::vector<double> durations;
      durations.reserve(static_cast<std::size_t>(steps));
      for (int s = 1; s <= steps; ++s) {
        const auto t0 = Clock::now();
        run_step(method, model, wrapper, batch, spec.p, spec.passes, s, root,
                 grads, adam, model);
        durations.push_back(
            std::chrono::duration<double>(Clock::now() - t0).count());
      }

      // Middle 80% of measured steps.
      const int drop = steps / 10;
      double total = 0.0;
      int used = 0;
      for (int s = drop; s < steps - drop; ++s) {
        total += durations[static_cast<std::size_t>(s)];
        ++used;
      }

      BenchmarkRow row;
      row.method = method;
      row.length = length;
      row.steps_per_sec = used / total;
      row.inference_calls =
          static_cast<double>(wrapper.total_calls()) /
          (static_cast<double>(steps) * spec.batch_size);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  os << "method,length,steps_per_sec,inference_calls\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g\n",
                  to_string(r.method).c_str(), r.length, r.steps_per_sec,
                  r.inference_calls);
    os << buf;
  }
}

}  // namespace parmix
