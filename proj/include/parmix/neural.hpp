#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "parmix/core.hpp"
#include "parmix/model.hpp"

namespace parmix {

/// Dense row-major matrix. 1-D tensors are stored as a single row.
template <typename S>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<S> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, S(0)) {}

  S* operator[](int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const S* operator[](int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }
  std::size_t size() const { return data.size(); }
  void fill(S value) { std::fill(data.begin(), data.end(), value); }
};

/// Architecture constants for the trainable decoder.
struct ModelDims {
  int embed = 32;
  int heads = 2;
  int ff = 64;
  int layers = 2;
  int max_positions = 128;

  void validate() const;
};

template <typename S>
struct LayerParams {
  Mat<S> ln1_gain, ln1_bias;
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln2_gain, ln2_bias;
  Mat<S> w_ff1, b_ff1, w_ff2, b_ff2;
};

/// Named parameter tensors. for_each_tensor visits them in a fixed order,
/// which is also the checkpoint serialization order:
///   tok_emb, pos_emb,
///   layer<i>.{ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo,
///             ln2_gain, ln2_bias, w_ff1, b_ff1, w_ff2, b_ff2} for each layer,
///   lnf_gain, lnf_bias, w_out, b_out.
template <typename S>
struct ParamSet {
  Mat<S> tok_emb;  // [V x d]
  Mat<S> pos_emb;  // [max_positions x d]
  std::vector<LayerParams<S>> layers;
  Mat<S> lnf_gain, lnf_bias;  // [1 x d]
  Mat<S> w_out;               // [d x V]
  Mat<S> b_out;               // [1 x V]

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i) + ".";
      auto& l = layers[i];
      fn(prefix + "ln1_gain", l.ln1_gain);
      fn(prefix + "ln1_bias", l.ln1_bias);
      fn(prefix + "wq", l.wq);
      fn(prefix + "bq", l.bq);
      fn(prefix + "wk", l.wk);
      fn(prefix + "bk", l.bk);
      fn(prefix + "wv", l.wv);
      fn(prefix + "bv", l.bv);
      fn(prefix + "wo", l.wo);
      fn(prefix + "bo", l.bo);
      fn(prefix + "ln2_gain", l.ln2_gain);
      fn(prefix + "ln2_bias", l.ln2_bias);
      fn(prefix + "w_ff1", l.w_ff1);
      fn(prefix + "b_ff1", l.b_ff1);
      fn(prefix + "w_ff2", l.w_ff2);
      fn(prefix + "b_ff2", l.b_ff2);
    }
    fn("lnf_gain", lnf_gain);
    fn("lnf_bias", lnf_bias);
    fn("w_out", w_out);
    fn("b_out", b_out);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ParamSet*>(this)->for_each_tensor(
        [&](const std::string& name, Mat<S>& t) {
          fn(name, static_cast<const Mat<S>&>(t));
        });
  }

  static ParamSet zeros(int vocab_size, const ModelDims& dims);
};

/// Small causal self-attention decoder (pre-norm, learned positions, GELU
/// feed-forward, untied output projection). Scalar type S is float for
/// training and double for finite-difference checks.
template <typename S>
struct MiniNeuralModel {
  Vocab vocab;
  ModelDims dims;
  ParamSet<S> params;

  /// Gaussian(0, 0.02) weights and embeddings, unit gains, zero biases.
  static MiniNeuralModel init(const Vocab& vocab, const ModelDims& dims,
                              RngStream stream);

  void validate_finite() const;
};

template <typename S>
struct LayerCache {
  Mat<S> x_in, ln1_out;
  std::vector<S> ln1_mean, ln1_rstd;
  Mat<S> q, k, v;
  Mat<S> att;  // [H*T x T]; row h*T+i holds softmax weights for query i, head h
  Mat<S> ctx;
  Mat<S> x_mid, ln2_out;
  std::vector<S> ln2_mean, ln2_rstd;
  Mat<S> ff_pre, ff_act;
};

template <typename S>
struct ForwardCache {
  TokenSeq inputs;
  Mat<S> emb;
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final, lnf_out;
  std::vector<S> lnf_mean, lnf_rstd;
};

/// Language-model forward pass over a packed token sequence. Input row i is
/// bos for i = 0 and tokens[i-1] otherwise, so output row i holds the logits
/// for the token at position i given tokens 0..i-1. One invocation yields
/// all rows.
template <typename S>
Mat<S> lm_logits(const MiniNeuralModel<S>& model, const TokenSeq& tokens,
                 ForwardCache<S>* cache = nullptr);

template <typename S>
struct LossResult {
  double loss = 0.0;
  ParamSet<S> grads;
};

/// Negative mean log-softmax probability of targets over masked positions,
/// with gradients for every parameter tensor. conditioning and targets are
/// packed sequences of equal length; an all-false mask is rejected.
template <typename S>
LossResult<S> loss_and_grads(const MiniNeuralModel<S>& model,
                             const TokenSeq& conditioning,
                             const TokenSeq& targets,
                             const std::vector<bool>& mask);

/// Loss only (no gradient buffers).
template <typename S>
double masked_nll(const MiniNeuralModel<S>& model, const TokenSeq& conditioning,
                  const TokenSeq& targets, const std::vector<bool>& mask);

/// dst += src * scale, tensor by tensor (batch gradient accumulation).
template <typename S>
void add_scaled(ParamSet<S>& dst, const ParamSet<S>& src, S scale);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip
};

template <typename S>
struct AdamState {
  std::int64_t step = 0;
  ParamSet<S> m, v;

  static AdamState init_like(const Vocab& vocab, const ModelDims& dims);
};

/// One Adam step. Throws if any gradient is non-finite; the step is not
/// applied in that case.
template <typename S>
void apply_update(MiniNeuralModel<S>& model, const ParamSet<S>& grads,
                  AdamState<S>& state, const AdamConfig& config = {});

// ---------------------------------------------------------------------------
// Packing
// ---------------------------------------------------------------------------

/// Conditioning layout for conditional generation: [context, sep, target]
/// when the context is non-empty, the bare target otherwise. The bos shift
/// happens inside lm_logits.
TokenSeq pack_conditioning(const Vocab& vocab, const TokenSeq& context,
                           const TokenSeq& target_side);

/// Packed (conditioning, targets, mask) triple for a supervised step on one
/// example whose target side is `mixed`. Gold tokens are always the loss
/// targets; the mask covers the target span plus one end-of-sequence slot
/// (the model learns to emit sep after the target).
struct SupervisedBatchItem {
  TokenSeq conditioning;
  TokenSeq targets;
  std::vector<bool> mask;
};
SupervisedBatchItem pack_supervised(const Vocab& vocab, const Example& example,
                                    const TokenSeq& mixed);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Versioned binary container: magic, format version, architecture constants
/// and vocab ids, then the named float32 tensors in for_each_tensor order,
/// little-endian. Round-trips byte-exactly.
void save_checkpoint(const MiniNeuralModel<float>& model,
                     const std::string& path);
MiniNeuralModel<float> load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// ModelInterface adapter
// ---------------------------------------------------------------------------

template <typename S>
class NeuralAdapter : public ModelInterface {
 public:
  explicit NeuralAdapter(const MiniNeuralModel<S>& model) : model_(model) {}

  const Vocab& vocab() const override { return model_.vocab; }
  int max_conditioning_len(int context_len) const override;
  std::optional<Token> end_token() const override { return model_.vocab.sep; }

  LogitMatrix conditional_logits(const TokenSeq& conditioning,
                                 const TokenSeq& context) const override;
  LogitRow next_logits(const TokenSeq& prefix,
                       const TokenSeq& context) const override;

 private:
  const MiniNeuralModel<S>& model_;
};

extern template struct MiniNeuralModel<float>;
extern template struct MiniNeuralModel<double>;
extern template class NeuralAdapter<float>;
extern template class NeuralAdapter<double>;

}  // namespace parmix
