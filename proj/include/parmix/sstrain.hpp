#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "parmix/core.hpp"
#include "parmix/model.hpp"
#include "parmix/neural.hpp"
#include "parmix/schedule.hpp"

namespace parmix {

/// State after one sample-and-mix pass. Pass 0 is the gold initialization
/// (no sampled tokens); for k >= 1 and every position t < k the mixed token
/// is copied from pass k-1.
struct PassState {
  int pass = 0;
  TokenSeq mixed;
  std::optional<TokenSeq> sampled;
};

/// Conditioning sequence produced by scheduled sampling, with an optional
/// per-pass trace and the per-(pass, position) coin outcomes (true = the
/// sampled token was chosen).
struct ConditioningResult {
  TokenSeq final_mixed;
  std::vector<PassState> trace;            // K+1 entries when retained
  std::vector<std::vector<bool>> coins;    // one vector per pass 1..K
};

struct SsOptions {
  bool keep_trace = false;
  /// Draw one coin per position and reuse it on every pass, instead of
  /// redrawing per pass. Off by default (the per-pass redraw is the literal
  /// reading of the multi-pass mixing loop).
  bool fixed_coin_mask = false;
};

/// Mean negative log-likelihood of `gold` under the model when conditioning
/// on `conditioning`: one full-sequence inference pass, loss averaged over
/// the gold positions. Loss targets are always gold tokens, whatever the
/// conditioning.
double sequence_nll(const ModelInterface& model, const TokenSeq& conditioning,
                    const TokenSeq& context, const TokenSeq& gold);

/// Teacher-forcing loss: sequence_nll with conditioning = gold.
double teacher_forcing_loss(const ModelInterface& model, const Example& example);

/// Sequential Scheduled Sampling: build the conditioning sequence left to
/// right with exactly T single-step inference calls. Each position keeps the
/// gold token with probability 1-p, otherwise takes a token freshly sampled
/// from the model conditioned on the mixed prefix.
ConditioningResult sequential_ss(const ModelInterface& model,
                                 const Example& example, double p,
                                 RngStream stream, const SsOptions& options = {});

/// Parallel Scheduled Sampling: `passes` full-sequence inference calls. Pass
/// 1 conditions on gold (the forward pass of teacher-forcing); pass k samples
/// every position in parallel from the pass-(k-1) mixed sequence, copies
/// positions t < k, and coin-mixes the rest with gold. Coins are independent
/// per (pass, position). Only target positions are ever mixed.
ConditioningResult parallel_ss(const ModelInterface& model,
                               const Example& example, double p, int passes,
                               RngStream stream, const SsOptions& options = {});

/// One Parallel-SS training step for the neural model: conditioning built by
/// parallel_ss at p = mixing_prob(config, step), loss and gradients taken on
/// gold targets with the mixed conditioning held constant (no gradient flows
/// through the sampling passes).
template <typename S>
struct SsStepResult {
  double loss = 0.0;
  double p = 0.0;
  ParamSet<S> grads;
  ConditioningResult conditioning;
};

template <typename S>
SsStepResult<S> ss_training_step(const MiniNeuralModel<S>& model,
                                 const Example& example,
                                 const MixingConfig& config, std::int64_t step,
                                 RngStream stream);

// ---------------------------------------------------------------------------
// Decoders
// ---------------------------------------------------------------------------

/// Greedy decode; argmax ties break to the lowest token id. Stops at the
/// model's end token or max_len.
TokenSeq decode_greedy(const ModelInterface& model, const TokenSeq& context,
                       int max_len);

/// Ancestral sampling at temperature 1.
TokenSeq decode_sample(const ModelInterface& model, const TokenSeq& context,
                       int max_len, RngStream stream);

/// Beam search over accumulated log-probability, no length normalization.
/// beam_width 1 reproduces decode_greedy exactly.
TokenSeq decode_beam(const ModelInterface& model, const TokenSeq& context,
                     int beam_width, int max_len);

extern template SsStepResult<float> ss_training_step(
    const MiniNeuralModel<float>&, const Example&, const MixingConfig&,
    std::int64_t, RngStream);
extern template SsStepResult<double> ss_training_step(
    const MiniNeuralModel<double>&, const Example&, const MixingConfig&,
    std::int64_t, RngStream);

}  // namespace parmix
