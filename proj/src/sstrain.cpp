#include "parmix/sstrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace parmix {

namespace {

Token sample_from_logits(std::span<const double> logits, RngStream& site) {
  const std::vector<double> probs = softmax(logits);
  return draw_categorical(site, probs);
}

Token argmax_lowest(std::span<const double> logits) {
  Token best = 0;
  for (int v = 1; v < static_cast<int>(logits.size()); ++v)
    if (logits[static_cast<std::size_t>(v)] > logits[static_cast<std::size_t>(best)])
      best = static_cast<Token>(v);
  return best;
}

void check_example(const ModelInterface& model, const Example& example) {
  if (example.target.empty())
    throw std::invalid_argument("example target must be non-empty");
  validate_tokens(example.input, model.vocab(), "example input");
  validate_tokens(example.target, model.vocab(), "example target");
  const int max_t =
      model.max_conditioning_len(static_cast<int>(example.input.size()));
  if (static_cast<int>(example.target.size()) > max_t)
    throw std::invalid_argument("example target exceeds model capacity");
}

RngStream site_stream(const RngStream& base, std::uint64_t purpose, int pass,
                      int position) {
  return split_stream(
      split_stream(split_stream(base, purpose), static_cast<std::uint64_t>(pass)),
      static_cast<std::uint64_t>(position));
}

}  // namespace

double sequence_nll(const ModelInterface& model, const TokenSeq& conditioning,
                    const TokenSeq& context, const TokenSeq& gold) {
  if (conditioning.size() != gold.size())
    throw std::invalid_argument("sequence_nll: conditioning/gold length mismatch");
  const LogitMatrix logits = model.conditional_logits(conditioning, context);
  double total = 0.0;
  for (int t = 0; t < logits.rows; ++t)
    total -= log_softmax_at(logits.row(t), gold[static_cast<std::size_t>(t)]);
  return total / logits.rows;
}

double teacher_forcing_loss(const ModelInterface& model, const Example& example) {
  check_example(model, example);
  return sequence_nll(model, example.target, example.input, example.target);
}

ConditioningResult sequential_ss(const ModelInterface& model,
                                 const Example& example, double p,
                                 RngStream stream, const SsOptions& options) {
  check_example(model, example);
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("sequential_ss: p must be in [0,1]");
  const TokenSeq& gold = example.target;
  const int T = static_cast<int>(gold.size());

  ConditioningResult result;
  result.coins.emplace_back(static_cast<std::size_t>(T), false);
  TokenSeq mixed;
  TokenSeq sampled;
  mixed.reserve(gold.size());
  sampled.reserve(gold.size());

  for (int t = 0; t < T; ++t) {
    const LogitRow row = model.next_logits(mixed, example.input);
    RngStream sample_site = site_stream(stream, rng_label::kSample, 0, t);
    const Token drawn = sample_from_logits(row, sample_site);
    sampled.push_back(drawn);

    RngStream coin_site = site_stream(stream, rng_label::kCoin, 0, t);
    const bool take_sample = next_double(coin_site) < p;
    result.coins[0][static_cast<std::size_t>(t)] = take_sample;
    mixed.push_back(take_sample ? drawn : gold[static_cast<std::size_t>(t)]);
  }

  if (options.keep_trace) {
    result.trace.push_back({0, gold, std::nullopt});
    result.trace.push_back({1, mixed, sampled});
  }
  result.final_mixed = std::move(mixed);
  return result;
}

ConditioningResult parallel_ss(const ModelInterface& model,
                               const Example& example, double p, int passes,
                               RngStream stream, const SsOptions& options) {
  check_example(model, example);
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("parallel_ss: p must be in [0,1]");
  if (passes < 1)
    throw std::invalid_argument("parallel_ss: passes must be >= 1");
  const TokenSeq& gold = example.target;
  const int T = static_cast<int>(gold.size());

  ConditioningResult result;
  TokenSeq mixed = gold;  // pass 0
  if (options.keep_trace) result.trace.push_back({0, mixed, std::nullopt});

  std::vector<bool> fixed_coins;
  if (options.fixed_coin_mask) {
    fixed_coins.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      RngStream coin_site = site_stream(stream, rng_label::kCoin, 1, t);
      fixed_coins[static_cast<std::size_t>(t)] = next_double(coin_site) < p;
    }
  }

  for (int k = 1; k <= passes; ++k) {
    // One full-sequence inference pass conditioned on the previous mixture.
    const LogitMatrix logits = model.conditional_logits(mixed, example.input);

    TokenSeq sampled(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      RngStream sample_site = site_stream(stream, rng_label::kSample, k, t);
      sampled[static_cast<std::size_t>(t)] =
          sample_from_logits(logits.row(t), sample_site);
    }

    TokenSeq next(static_cast<std::size_t>(T));
    std::vector<bool> coins(static_cast<std::size_t>(T), false);
    for (int t = 0; t < T; ++t) {
      if (t < k - 1) {  // copy rule: positions before pass index stay frozen
        next[static_cast<std::size_t>(t)] = mixed[static_cast<std::size_t>(t)];
        continue;
      }
      bool take_sample;
      if (options.fixed_coin_mask) {
        take_sample = fixed_coins[static_cast<std::size_t>(t)];
      } else {
        RngStream coin_site = site_stream(stream, rng_label::kCoin, k, t);
        take_sample = next_double(coin_site) < p;
      }
      coins[static_cast<std::size_t>(t)] = take_sample;
      next[static_cast<std::size_t>(t)] = take_sample
                                              ? sampled[static_cast<std::size_t>(t)]
                                              : gold[static_cast<std::size_t>(t)];
    }

    mixed = std::move(next);
    result.coins.push_back(std::move(coins));
    if (options.keep_trace) result.trace.push_back({k, mixed, sampled});
  }

  result.final_mixed = std::move(mixed);
  return result;
}

template <typename S>
SsStepResult<S> ss_training_step(const MiniNeuralModel<S>& model,
                                 const Example& example,
                                 const MixingConfig& config, std::int64_t step,
                                 RngStream stream) {
  SsStepResult<S> result;
  result.p = mixing_prob(config, step);
  const NeuralAdapter<S> adapter(model);
  result.conditioning =
      parallel_ss(adapter, example, result.p, config.passes, stream);
  const SupervisedBatchItem item =
      pack_supervised(model.vocab, example, result.conditioning.final_mixed);
  LossResult<S> lr = loss_and_grads(model, item.conditioning, item.targets, item.mask);
  result.loss = lr.loss;
  result.grads = std::move(lr.grads);
  return result;
}

TokenSeq decode_greedy(const ModelInterface& model, const TokenSeq& context,
                       int max_len) {
  validate_tokens(context, model.vocab(), "decode context");
  const int cap = std::min(
      max_len, model.max_conditioning_len(static_cast<int>(context.size())));
  const std::optional<Token> end = model.end_token();
  TokenSeq out;
  for (int t = 0; t < cap; ++t) {
    const LogitRow row = model.next_logits(out, context);
    const Token tok = argmax_lowest(row);
    if (end && tok == *end) break;
    out.push_back(tok);
  }
  return out;
}

TokenSeq decode_sample(const ModelInterface& model, const TokenSeq& context,
                       int max_len, RngStream stream) {
  validate_tokens(context, model.vocab(), "decode context");
  const int cap = std::min(
      max_len, model.max_conditioning_len(static_cast<int>(context.size())));
  const std::optional<Token> end = model.end_token();
  TokenSeq out;
  for (int t = 0; t < cap; ++t) {
    const LogitRow row = model.next_logits(out, context);
    RngStream site = site_stream(stream, rng_label::kDecode, 0, t);
    const Token tok = sample_from_logits(row, site);
    if (end && tok == *end) break;
    out.push_back(tok);
  }
  return out;
}

namespace {

struct Hypothesis {
  TokenSeq tokens;
  double log_prob = 0.0;
  bool finished = false;
};

// Order: higher log-prob first; ties to the lexicographically lower tokens
// so selection is deterministic.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

TokenSeq decode_beam(const ModelInterface& model, const TokenSeq& context,
                     int beam_width, int max_len) {
  if (beam_width < 1)
    throw std::invalid_argument("decode_beam: beam width must be >= 1");
  validate_tokens(context, model.vocab(), "decode context");
  const int cap = std::min(
      max_len, model.max_conditioning_len(static_cast<int>(context.size())));
  const std::optional<Token> end = model.end_token();
  const int V = model.vocab().size;

  std::vector<Hypothesis> live{{TokenSeq{}, 0.0, false}};
  std::vector<Hypothesis> finished;

  for (int t = 0; t < cap && !live.empty(); ++t) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(V));
    for (const Hypothesis& hyp : live) {
      const LogitRow row = model.next_logits(hyp.tokens, context);
      // log softmax once per expansion
      double maxv = row[0];
      for (double v : row) maxv = std::max(maxv, v);
      double denom = 0.0;
      for (double v : row) denom += std::exp(v - maxv);
      const double log_denom = std::log(denom) + maxv;
      for (Token v = 0; v < V; ++v) {
        Hypothesis next = hyp;
        next.log_prob += row[static_cast<std::size_t>(v)] - log_denom;
        if (end && v == *end) {
          next.finished = true;
        } else {
          next.tokens.push_back(v);
        }
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    if (candidates.size() > static_cast<std::size_t>(beam_width))
      candidates.resize(static_cast<std::size_t>(beam_width));
    live.clear();
    for (Hypothesis& c : candidates) {
      if (c.finished)
        finished.push_back(std::move(c));
      else
        live.push_back(std::move(c));
    }
  }

  // Hypotheses that ran to the length cap count as finished.
  for (Hypothesis& h : live) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  std::sort(finished.begin(), finished.end(), better);
  return finished.front().tokens;
}

template SsStepResult<float> ss_training_step(const MiniNeuralModel<float>&,
                                              const Example&,
                                              const MixingConfig&, std::int64_t,
                                              RngStream);
template SsStepResult<double> ss_training_step(const MiniNeuralModel<double>&,
                                               const Example&,
                                               const MixingConfig&,
                                               std::int64_t, RngStream);

}  // namespace parmix
