#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "parmix/core.hpp"
#include "parmix/tabular.hpp"

namespace parmix {

/// Dense probability table over all V^T sequences, indexed by the big-endian
/// base-V encoding of the sequence (first token most significant).
struct SeqDistribution {
  int vocab_size = 0;
  int length = 0;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  static std::size_t encode(std::span<const Token> seq, int vocab_size);
  TokenSeq decode(std::size_t code) const;

  /// Marginal over the first `prefix_len` positions (a V^prefix_len table).
  SeqDistribution prefix_marginal(int prefix_len) const;

  /// Sequence with the highest probability; ties break to the lowest code.
  TokenSeq argmax() const;

  void validate(double tolerance = 1e-10) const;
};

/// Exact law of ancestral (sample) decoding: entry for z is the product of
/// the stored conditionals along z.
SeqDistribution ancestral(const TabularModel& model, int length);

/// Exact law of the Sequential Scheduled Sampling conditioning sequence:
/// entry for z is the product over positions of
///   (1-p) * [z_t == gold_t] + p * p(z_t | z_{1:t-1}).
SeqDistribution sequential_proposal(const TabularModel& model,
                                    const TokenSeq& gold, double p);

/// Exact law of the Parallel Scheduled Sampling conditioning sequence after
/// `passes` passes, computed as a Markov chain over V^T states. The pass-k
/// transition from source y~ to target z has probability
///   prod_{t<k} [z_t == y~_t] * prod_{t>=k} ((1-p) [z_t == gold_t] + p p(z_t | y~_{1:t-1}))
/// with positions 1-indexed; the chain starts at a point mass on gold.
SeqDistribution parallel_proposal(const TabularModel& model,
                                  const TokenSeq& gold, double p, int passes);

double tv_distance(const SeqDistribution& a, const SeqDistribution& b);

/// KL(a || b); requires b positive wherever a is positive.
double kl_divergence(const SeqDistribution& a, const SeqDistribution& b);

// ---------------------------------------------------------------------------
// Executable check of the proposal-equals-ancestral property at p=1, K>=T.
// ---------------------------------------------------------------------------

struct TheoremReport {
  struct Entry {
    int passes = 0;
    double tv = 0.0;
    /// Max deviation, over prefix lengths 1..min(passes,T), between the
    /// proposal prefix marginal and the ancestral prefix marginal.
    double prefix_marginal_err = 0.0;
  };
  int vocab_size = 0;
  int length = 0;
  std::vector<Entry> entries;  // passes = 1 .. length+2
  double tolerance = 1e-10;
  bool pass = false;

  std::string to_string() const;
};

/// Evaluates TV(q^K, ancestral) at p=1 for K = 1..T+2. PASS iff TV <= tol for
/// all K >= T and every per-pass prefix marginal agrees within tol.
TheoremReport verify_theorem(const TabularModel& model, const TokenSeq& gold,
                             int length, double tolerance = 1e-10);

struct SweepRow {
  double p = 0.0;
  int passes = 0;
  double tv = 0.0;
  double kl = 0.0;
};

/// TV and KL of parallel_proposal against ancestral over a (p, K) grid.
std::vector<SweepRow> proposal_sweep(const TabularModel& model,
                                     const TokenSeq& gold,
                                     const std::vector<double>& p_grid,
                                     const std::vector<int>& pass_grid);

/// CSV with header `p,K,tv,kl`, 17 significant digits.
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace parmix
