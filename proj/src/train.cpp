#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "parmix/harness.hpp"
#include "parmix/sstrain.hpp"

namespace parmix {

Method parse_method(const std::string& name) {
  if (name == "teacher-forcing") return Method::kTeacherForcing;
  if (name == "sequential-ss") return Method::kSequentialSs;
  if (name == "parallel-ss") return Method::kParallelSs;
  throw std::invalid_argument("unknown method: " + name);
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kTeacherForcing: return "teacher-forcing";
    case Method::kSequentialSs: return "sequential-ss";
    case Method::kParallelSs: return "parallel-ss";
  }
  return "?";
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  mixing.validate();
  if (batch_size < 1) throw std::invalid_argument("run.batch_size must be >= 1");
  if (total_steps < 1) throw std::invalid_argument("run.total_steps must be >= 1");
  if (eval_interval < 1)
    throw std::invalid_argument("run.eval_interval must be >= 1");
  if (method == Method::kSequentialSs && task.max_target_len() > 64)
    throw std::invalid_argument(
        "sequential-ss is limited to task lengths <= 64");
  // Packed sequence: [input, sep, target, end slot] plus the bos shift.
  const int packed = task.max_input_len + 1 + task.max_target_len() + 1;
  if (packed > model.max_positions)
    throw std::invalid_argument(
        "task does not fit in model.max_positions (needs " +
        std::to_string(packed) + ")");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string format_metrics_line(const MetricsRecord& r) {
  std::ostringstream os;
  os << "step=" << r.step << " loss=" << format_double(r.loss)
     << " p=" << format_double(r.p)
     << " tokens_per_sec=" << format_double(r.tokens_per_sec)
     << " steps_per_sec=" << format_double(r.steps_per_sec)
     << " eval_token_acc=" << format_double(r.eval_token_acc)
     << " eval_exact_match=" << format_double(r.eval_exact_match)
     << " eval_edit_dist=" << format_double(r.eval_edit_dist);
  return os.str();
}

MetricsRecord parse_metrics_line(const std::string& line) {
  MetricsRecord r;
  std::istringstream is(line);
  std::string field;
  bool saw_step = false;
  while (is >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("metrics line: malformed field " + field);
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "step") {
      r.step = std::stoll(value);
      saw_step = true;
    } else if (key == "loss") r.loss = std::stod(value);
    else if (key == "p") r.p = std::stod(value);
    else if (key == "tokens_per_sec") r.tokens_per_sec = std::stod(value);
    else if (key == "steps_per_sec") r.steps_per_sec = std::stod(value);
    else if (key == "eval_token_acc") r.eval_token_acc = std::stod(value);
    else if (key == "eval_exact_match") r.eval_exact_match = std::stod(value);
    else if (key == "eval_edit_dist") r.eval_edit_dist = std::stod(value);
    else throw std::invalid_argument("metrics line: unknown key " + key);
  }
  if (!saw_step) throw std::invalid_argument("metrics line: missing step");
  return r;
}

TrainResult train(const RunConfig& config) {
  config.validate();

  Dataset data = make_task(config.task);
  const RngStream root = make_stream(config.seed);
  MiniNeuralModel<float> model = MiniNeuralModel<float>::init(
      data.vocab, config.model, root);
  AdamState<float> adam = AdamState<float>::init_like(data.vocab, config.model);

  std::filesystem::create_directories(config.output_dir);
  TrainResult result{std::move(model), {}, config.output_dir + "/metrics.log",
                     config.output_dir + "/checkpoint.pmnc"};
  std::ofstream log(result.metrics_path, std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot open " + result.metrics_path);

  const NeuralAdapter<float> adapter(result.model);

  using Clock = std::chrono::steady_clock;
  auto interval_start = Clock::now();
  std::int64_t interval_steps = 0;
  std::int64_t interval_tokens = 0;

  for (std::int64_t step = 0; step < config.total_steps; ++step) {
    RngStream batch_stream =
        split_stream(split_stream(root, rng_label::kBatch),
                     static_cast<std::uint64_t>(step));
    ParamSet<float> grads =
        ParamSet<float>::zeros(data.vocab.size, config.model);
    const float inv_b = 1.0f / static_cast<float>(config.batch_size);
    double loss_sum = 0.0;
    double p_now = 0.0;

    for (int b = 0; b < config.batch_size; ++b) {
      const auto idx = next_below(batch_stream, data.train.size());
      const Example& ex = data.train[idx];
      RngStream ex_stream = split_stream(
          split_stream(split_stream(root, rng_label::kExample),
                       static_cast<std::uint64_t>(step)),
          static_cast<std::uint64_t>(b));

      switch (config.method) {
        case Method::kTeacherForcing: {
          const SupervisedBatchItem item =
              pack_supervised(data.vocab, ex, ex.target);
          LossResult<float> lr =
              loss_and_grads(result.model, item.conditioning, item.targets, item.mask);
          loss_sum += lr.loss;
          add_scaled(grads, lr.grads, inv_b);
          interval_tokens += static_cast<std::int64_t>(item.conditioning.size());
          break;
        }
        case Method::kParallelSs: {
          SsStepResult<float> sr =
              ss_training_step(result.model, ex, config.mixing, step, ex_stream);
          p_now = sr.p;
          loss_sum += sr.loss;
          add_scaled(grads, sr.grads, inv_b);
          interval_tokens += static_cast<std::int64_t>(
              ex.input.size() + ex.target.size() + 2);
          break;
        }
        case Method::kSequentialSs: {
          const double p = mixing_prob(config.mixing, step);
          p_now = p;
          const ConditioningResult cond =
              sequential_ss(adapter, ex, p, ex_stream);
          const SupervisedBatchItem item =
              pack_supervised(data.vocab, ex, cond.final_mixed);
          LossResult<float> lr =
              loss_and_grads(result.model, item.conditioning, item.targets, item.mask);
          loss_sum += lr.loss;
          add_scaled(grads, lr.grads, inv_b);
          interval_tokens += static_cast<std::int64_t>(item.conditioning.size());
          break;
        }
      }
    }

    const double mean_loss = loss_sum / config.batch_size;
    if (!std::isfinite(mean_loss)) {
      log << "step=" << step << " event=non_finite_loss loss="
          << format_double(mean_loss) << "\n";
      log.flush();
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));
    }
    apply_update(result.model, grads, adam);
    ++interval_steps;

    if ((step + 1) % config.eval_interval == 0 || step + 1 == config.total_steps) {
      const auto now = Clock::now();
      const double elapsed =
          std::chrono::duration<double>(now - interval_start).count();
      const EvalMetrics em = evaluate(adapter, data.eval, DecoderSpec{});
      MetricsRecord rec;
      rec.step = step;
      rec.loss = mean_loss;
      rec.p = p_now;
      rec.steps_per_sec = elapsed > 0.0 ? interval_steps / elapsed : 0.0;
      rec.tokens_per_sec = elapsed > 0.0 ? interval_tokens / elapsed : 0.0;
      rec.eval_token_acc = em.token_accuracy;
      rec.eval_exact_match = em.exact_match;
      rec.eval_edit_dist = em.mean_edit_distance;
      result.metrics.push_back(rec);
      log << format_metrics_line(rec) << "\n";
      log.flush();
      interval_start = Clock::now();
      interval_steps = 0;
      interval_tokens = 0;
    }
  }

  save_checkpoint(result.model, result.checkpoint_path);
  return result;
}

}  // namespace parmix
