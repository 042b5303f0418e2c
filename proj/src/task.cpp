#include <algorithm>
#include <stdexcept>

#include "parmix/harness.hpp"

namespace parmix {

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "reverse") return TaskKind::kReverse;
  if (name == "repeat-k") return TaskKind::kRepeatK;
  if (name == "parity-suffix") return TaskKind::kParitySuffix;
  throw std::invalid_argument("unknown task kind: " + name);
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kRepeatK: return "repeat-k";
    case TaskKind::kParitySuffix: return "parity-suffix";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (vocab_size < 5)
    throw std::invalid_argument(
        "task.vocab_size must be >= 5 (three markers plus two data tokens)");
  if (min_input_len < 1 || max_input_len < min_input_len)
    throw std::invalid_argument("task input length range invalid");
  if (train_size < 1 || eval_size < 1)
    throw std::invalid_argument("task dataset sizes must be positive");
  if (kind == TaskKind::kRepeatK && repeats < 1)
    throw std::invalid_argument("task.repeats must be >= 1");
}

int TaskSpec::max_target_len() const {
  switch (kind) {
    case TaskKind::kCopy:
    case TaskKind::kReverse: return max_input_len;
    case TaskKind::kRepeatK: return max_input_len * repeats;
    case TaskKind::kParitySuffix: return max_input_len + 1;
  }
  return max_input_len;
}

namespace {

Example make_example(const TaskSpec& spec, const Vocab& vocab,
                     RngStream stream) {
  const Token lo = vocab.first_data_token();
  const auto n_data = static_cast<std::uint64_t>(vocab.num_data_tokens());
  const auto span =
      static_cast<std::uint64_t>(spec.max_input_len - spec.min_input_len + 1);
  const int len = spec.min_input_len + static_cast<int>(next_below(stream, span));

  Example ex;
  ex.input.resize(static_cast<std::size_t>(len));
  for (Token& t : ex.input)
    t = lo + static_cast<Token>(next_below(stream, n_data));

  switch (spec.kind) {
    case TaskKind::kCopy:
      ex.target = ex.input;
      break;
    case TaskKind::kReverse:
      ex.target.assign(ex.input.rbegin(), ex.input.rend());
      break;
    case TaskKind::kRepeatK:
      ex.target.reserve(ex.input.size() * static_cast<std::size_t>(spec.repeats));
      for (int r = 0; r < spec.repeats; ++r)
        ex.target.insert(ex.target.end(), ex.input.begin(), ex.input.end());
      break;
    case TaskKind::kParitySuffix: {
      ex.target = ex.input;
      std::int64_t sum = 0;
      for (Token t : ex.input) sum += t;
      ex.target.push_back(lo + static_cast<Token>(sum % 2));
      break;
    }
  }
  return ex;
}

}  // namespace

Dataset make_task(const TaskSpec& spec) {
  spec.validate();
  Dataset data;
  data.vocab = Vocab::with_markers(spec.vocab_size);

  const RngStream root = split_stream(make_stream(spec.seed), rng_label::kTask);
  const RngStream train_stream = split_stream(root, 0);
  const RngStream eval_stream = split_stream(root, 1);

  data.train.reserve(static_cast<std::size_t>(spec.train_size));
  for (int i = 0; i < spec.train_size; ++i)
    data.train.push_back(make_example(
        spec, data.vocab, split_stream(train_stream, static_cast<std::uint64_t>(i))));
  data.eval.reserve(static_cast<std::size_t>(spec.eval_size));
  for (int i = 0; i < spec.eval_size; ++i)
    data.eval.push_back(make_example(
        spec, data.vocab, split_stream(eval_stream, static_cast<std::uint64_t>(i))));
  return data;
}

}  // namespace parmix
