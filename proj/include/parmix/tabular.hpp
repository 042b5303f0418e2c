#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "parmix/core.hpp"
#include "parmix/model.hpp"

namespace parmix {

/// Autoregressive model given by explicit full-context conditional tables:
/// one probability row of length V for every prefix of length 0..max_len-1.
/// Small enough to enumerate every sequence exactly, which is what the
/// proposal-distribution checks need.
class TabularModel : public ModelInterface {
 public:
  /// Construction guard: V^max_len must stay enumerable.
  static constexpr std::uint64_t kMaxSequences = 1'000'000;

  static TabularModel from_tables(const Vocab& vocab, int max_len,
                                  std::vector<std::vector<double>> rows);

  const Vocab& vocab() const override { return vocab_; }
  int max_len() const { return max_len_; }
  int max_conditioning_len(int context_len) const override;
  std::optional<Token> end_token() const override;

  /// Stored conditional distribution for a prefix (length < max_len).
  std::span<const double> table_row(std::span<const Token> prefix) const;

  LogitMatrix conditional_logits(const TokenSeq& conditioning,
                                 const TokenSeq& context) const override;
  LogitRow next_logits(const TokenSeq& prefix,
                       const TokenSeq& context) const override;

  /// Number of stored prefix rows: sum of V^t for t in 0..max_len-1.
  std::size_t num_rows() const { return offsets_.back(); }

 private:
  TabularModel(const Vocab& vocab, int max_len);

  std::size_t row_index(std::span<const Token> prefix) const;

  Vocab vocab_;
  int max_len_ = 0;
  std::vector<std::size_t> offsets_;  // offsets_[t] = first row of length-t prefixes
  std::vector<double> tables_;        // num_rows() rows of V entries each

  friend TabularModel tabular_random(const Vocab&, int, double, RngStream);
};

/// Random tabular model: every conditional row drawn from a symmetric
/// Dirichlet with the given concentration. Deterministic in the stream.
TabularModel tabular_random(const Vocab& vocab, int max_len,
                            double concentration, RngStream stream);

}  // namespace parmix
