#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "parmix/core.hpp"

namespace parmix {

/// Row-major [rows x cols] matrix of 64-bit logits.
struct LogitMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  LogitMatrix() = default;
  LogitMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c) {}

  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
  std::span<double> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
};

using LogitRow = std::vector<double>;

/// Softmax of a logit row, computed in 64-bit with max subtraction.
std::vector<double> softmax(std::span<const double> logits);

/// log softmax(logits)[index], numerically stable.
double log_softmax_at(std::span<const double> logits, int index);

/// Autoregressive model over token sequences.
///
/// conditional_logits returns one row per conditioning position: row t
/// (0-indexed), softmax-normalized, is p(token at position t | conditioning
/// tokens 0..t-1, context). Causality is exact: row t never depends on
/// conditioning positions >= t. A single invocation yields all rows.
class ModelInterface {
 public:
  virtual ~ModelInterface() = default;

  virtual const Vocab& vocab() const = 0;

  /// Longest conditioning sequence accepted for the given context length.
  virtual int max_conditioning_len(int context_len) const = 0;

  /// Token that terminates decoding, when the vocabulary defines one.
  virtual std::optional<Token> end_token() const = 0;

  virtual LogitMatrix conditional_logits(const TokenSeq& conditioning,
                                         const TokenSeq& context) const = 0;

  /// Distribution of the next token after `prefix` (one inference step).
  virtual LogitRow next_logits(const TokenSeq& prefix,
                               const TokenSeq& context) const = 0;
};

/// Counts inference invocations made through the interface. Full-sequence
/// calls (conditional_logits) and single-step calls (next_logits) are
/// tracked separately; loss passes that bypass the interface are recorded
/// via note_full_pass.
class InstrumentedModel : public ModelInterface {
 public:
  explicit InstrumentedModel(const ModelInterface& inner) : inner_(inner) {}

  const Vocab& vocab() const override { return inner_.vocab(); }
  int max_conditioning_len(int context_len) const override {
    return inner_.max_conditioning_len(context_len);
  }
  std::optional<Token> end_token() const override { return inner_.end_token(); }

  LogitMatrix conditional_logits(const TokenSeq& conditioning,
                                 const TokenSeq& context) const override {
    ++full_calls_;
    return inner_.conditional_logits(conditioning, context);
  }
  LogitRow next_logits(const TokenSeq& prefix,
                       const TokenSeq& context) const override {
    ++step_calls_;
    return inner_.next_logits(prefix, context);
  }

  void note_full_pass() const { ++full_calls_; }
  void reset() {
    full_calls_ = 0;
    step_calls_ = 0;
  }
  std::uint64_t full_calls() const { return full_calls_; }
  std::uint64_t step_calls() const { return step_calls_; }
  std::uint64_t total_calls() const { return full_calls_ + step_calls_; }

 private:
  const ModelInterface& inner_;
  mutable std::uint64_t full_calls_ = 0;
  mutable std::uint64_t step_calls_ = 0;
};

}  // namespace parmix
