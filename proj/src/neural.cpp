#include "parmix/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace parmix {

namespace {

constexpr double kLnEps = 1e-5;
constexpr std::uint32_t kCheckpointMagic = 0x504d4e43;  // "PMNC"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void check_shape(const Mat<S>& a, int rows, int cols, const char* what) {
  if (a.rows != rows || a.cols != cols)
    throw std::invalid_argument(std::string(what) + ": tensor shape mismatch");
}

// C += A * B
template <typename S>
void addmm(Mat<S>& c, const Mat<S>& a, const Mat<S>& b) {
  for (int i = 0; i < a.rows; ++i) {
    const S* ai = a[i];
    S* ci = c[i];
    for (int k = 0; k < a.cols; ++k) {
      const S aik = ai[k];
      if (aik == S(0)) continue;
      const S* bk = b[k];
      for (int j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C += A^T * B  (A: [m x r], B: [m x n], C: [r x n])
template <typename S>
void addmm_at(Mat<S>& c, const Mat<S>& a, const Mat<S>& b) {
  for (int i = 0; i < a.rows; ++i) {
    const S* ai = a[i];
    const S* bi = b[i];
    for (int k = 0; k < a.cols; ++k) {
      const S aik = ai[k];
      if (aik == S(0)) continue;
      S* ck = c[k];
      for (int j = 0; j < b.cols; ++j) ck[j] += aik * bi[j];
    }
  }
}

// C += A * B^T  (A: [m x n], B: [r x n], C: [m x r])
template <typename S>
void addmm_bt(Mat<S>& c, const Mat<S>& a, const Mat<S>& b) {
  for (int i = 0; i < a.rows; ++i) {
    const S* ai = a[i];
    S* ci = c[i];
    for (int j = 0; j < b.rows; ++j) {
      const S* bj = b[j];
      S acc = S(0);
      for (int k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
      ci[j] += acc;
    }
  }
}

template <typename S>
void add_bias_rows(Mat<S>& x, const Mat<S>& bias) {
  for (int i = 0; i < x.rows; ++i) {
    S* xi = x[i];
    const S* b = bias[0];
    for (int j = 0; j < x.cols; ++j) xi[j] += b[j];
  }
}

template <typename S>
void accumulate_colsum(Mat<S>& bias_grad, const Mat<S>& dy) {
  S* g = bias_grad[0];
  for (int i = 0; i < dy.rows; ++i) {
    const S* di = dy[i];
    for (int j = 0; j < dy.cols; ++j) g[j] += di[j];
  }
}

template <typename S>
void layernorm_forward(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias,
                       Mat<S>& out, std::vector<S>& mean, std::vector<S>& rstd) {
  const int n = x.cols;
  mean.resize(static_cast<std::size_t>(x.rows));
  rstd.resize(static_cast<std::size_t>(x.rows));
  for (int i = 0; i < x.rows; ++i) {
    const S* xi = x[i];
    S mu = S(0);
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<S>(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) {
      const S dxj = xi[j] - mu;
      var += dxj * dxj;
    }
    var /= static_cast<S>(n);
    const S rs = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
    mean[static_cast<std::size_t>(i)] = mu;
    rstd[static_cast<std::size_t>(i)] = rs;
    S* oi = out[i];
    const S* g = gain[0];
    const S* b = bias[0];
    for (int j = 0; j < n; ++j) oi[j] = (xi[j] - mu) * rs * g[j] + b[j];
  }
}

// dx for y = xhat*g + b, accumulating dgain/dbias. dy is consumed row by row.
template <typename S>
void layernorm_backward(const Mat<S>& x, const std::vector<S>& mean,
                        const std::vector<S>& rstd, const Mat<S>& gain,
                        const Mat<S>& dy, Mat<S>& dx, Mat<S>& dgain,
                        Mat<S>& dbias) {
  const int n = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const S* xi = x[i];
    const S* dyi = dy[i];
    const S mu = mean[static_cast<std::size_t>(i)];
    const S rs = rstd[static_cast<std::size_t>(i)];
    const S* g = gain[0];
    S* dgi = dgain[0];
    S* dbi = dbias[0];
    S mean_dxhat = S(0);
    S mean_dxhat_xhat = S(0);
    for (int j = 0; j < n; ++j) {
      const S xhat = (xi[j] - mu) * rs;
      const S dxhat = dyi[j] * g[j];
      dgi[j] += dyi[j] * xhat;
      dbi[j] += dyi[j];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= static_cast<S>(n);
    mean_dxhat_xhat /= static_cast<S>(n);
    S* dxi = dx[i];
    for (int j = 0; j < n; ++j) {
      const S xhat = (xi[j] - mu) * rs;
      const S dxhat = dyi[j] * g[j];
      dxi[j] += rs * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * static_cast<S>(std::numbers::inv_sqrt2)));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * static_cast<S>(std::numbers::inv_sqrt2)));
  const S pdf = std::exp(S(-0.5) * x * x) *
                static_cast<S>(0.3989422804014326779);  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

template <typename S>
Mat<S> gaussian_mat(int rows, int cols, S scale, RngStream& stream) {
  Mat<S> m(rows, cols);
  for (auto& v : m.data) v = static_cast<S>(next_gaussian(stream)) * scale;
  return m;
}

// Little-endian scalar IO; explicit so checkpoints are platform-stable.
template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

void ModelDims::validate() const {
  if (embed < 1 || heads < 1 || ff < 1 || layers < 1 || max_positions < 2)
    throw std::invalid_argument("ModelDims: all dimensions must be positive");
  if (embed % heads != 0)
    throw std::invalid_argument("ModelDims: embed must be divisible by heads");
}

template <typename S>
ParamSet<S> ParamSet<S>::zeros(int vocab_size, const ModelDims& dims) {
  ParamSet<S> p;
  p.tok_emb = Mat<S>(vocab_size, dims.embed);
  p.pos_emb = Mat<S>(dims.max_positions, dims.embed);
  p.layers.resize(static_cast<std::size_t>(dims.layers));
  for (auto& l : p.layers) {
    l.ln1_gain = Mat<S>(1, dims.embed);
    l.ln1_bias = Mat<S>(1, dims.embed);
    l.wq = Mat<S>(dims.embed, dims.embed);
    l.bq = Mat<S>(1, dims.embed);
    l.wk = Mat<S>(dims.embed, dims.embed);
    l.bk = Mat<S>(1, dims.embed);
    l.wv = Mat<S>(dims.embed, dims.embed);
    l.bv = Mat<S>(1, dims.embed);
    l.wo = Mat<S>(dims.embed, dims.embed);
    l.bo = Mat<S>(1, dims.embed);
    l.ln2_gain = Mat<S>(1, dims.embed);
    l.ln2_bias = Mat<S>(1, dims.embed);
    l.w_ff1 = Mat<S>(dims.embed, dims.ff);
    l.b_ff1 = Mat<S>(1, dims.ff);
    l.w_ff2 = Mat<S>(dims.ff, dims.embed);
    l.b_ff2 = Mat<S>(1, dims.embed);
  }
  p.lnf_gain = Mat<S>(1, dims.embed);
  p.lnf_bias = Mat<S>(1, dims.embed);
  p.w_out = Mat<S>(dims.embed, vocab_size);
  p.b_out = Mat<S>(1, vocab_size);
  return p;
}

template <typename S>
MiniNeuralModel<S> MiniNeuralModel<S>::init(const Vocab& vocab,
                                            const ModelDims& dims,
                                            RngStream stream) {
  vocab.validate();
  dims.validate();
  if (!vocab.has_markers())
    throw std::invalid_argument(
        "MiniNeuralModel: vocab must provide pad/bos/sep markers");

  MiniNeuralModel<S> model;
  model.vocab = vocab;
  model.dims = dims;
  model.params = ParamSet<S>::zeros(vocab.size, dims);

  std::uint64_t index = 0;
  model.params.for_each_tensor([&](const std::string& name, Mat<S>& t) {
    RngStream s = split_stream(split_stream(stream, rng_label::kModelInit), index++);
    if (name.find("gain") != std::string::npos) {
      t.fill(S(1));
    } else if (name.find("bias") != std::string::npos || name[0] == 'b' ||
               name.find(".b") != std::string::npos) {
      t.fill(S(0));
    } else {
      t = gaussian_mat<S>(t.rows, t.cols, S(0.02), s);
    }
  });
  return model;
}

template <typename S>
void MiniNeuralModel<S>::validate_finite() const {
  params.for_each_tensor([&](const std::string& name, const Mat<S>& t) {
    for (S v : t.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("MiniNeuralModel: non-finite parameter in " + name);
  });
}

template <typename S>
Mat<S> lm_logits(const MiniNeuralModel<S>& model, const TokenSeq& tokens,
                 ForwardCache<S>* cache) {
  const int T = static_cast<int>(tokens.size());
  const int d = model.dims.embed;
  const int H = model.dims.heads;
  const int hd = d / H;
  const int V = model.vocab.size;
  if (T < 1) throw std::invalid_argument("lm_logits: empty sequence");
  if (T > model.dims.max_positions)
    throw std::invalid_argument("lm_logits: sequence exceeds max positions");
  validate_tokens(tokens, model.vocab, "lm_logits");

  ForwardCache<S> local;
  ForwardCache<S>& fc = cache ? *cache : local;
  fc.layers.resize(static_cast<std::size_t>(model.dims.layers));

  fc.inputs.resize(static_cast<std::size_t>(T));
  fc.inputs[0] = model.vocab.bos;
  for (int i = 1; i < T; ++i) fc.inputs[static_cast<std::size_t>(i)] = tokens[static_cast<std::size_t>(i - 1)];

  fc.emb = Mat<S>(T, d);
  for (int i = 0; i < T; ++i) {
    const S* te = model.params.tok_emb[fc.inputs[static_cast<std::size_t>(i)]];
    const S* pe = model.params.pos_emb[i];
    S* e = fc.emb[i];
    for (int c = 0; c < d; ++c) e[c] = te[c] + pe[c];
  }

  Mat<S> x = fc.emb;
  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));

  for (int l = 0; l < model.dims.layers; ++l) {
    const auto& lp = model.params.layers[static_cast<std::size_t>(l)];
    auto& lc = fc.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;

    lc.ln1_out = Mat<S>(T, d);
    layernorm_forward(lc.x_in, lp.ln1_gain, lp.ln1_bias, lc.ln1_out,
                      lc.ln1_mean, lc.ln1_rstd);

    lc.q = Mat<S>(T, d);
    lc.k = Mat<S>(T, d);
    lc.v = Mat<S>(T, d);
    addmm(lc.q, lc.ln1_out, lp.wq);
    add_bias_rows(lc.q, lp.bq);
    addmm(lc.k, lc.ln1_out, lp.wk);
    add_bias_rows(lc.k, lp.bk);
    addmm(lc.v, lc.ln1_out, lp.wv);
    add_bias_rows(lc.v, lp.bv);

    lc.att = Mat<S>(H * T, T);
    lc.ctx = Mat<S>(T, d);
    for (int h = 0; h < H; ++h) {
      const int c0 = h * hd;
      for (int i = 0; i < T; ++i) {
        S* arow = lc.att[h * T + i];
        // keys <= query position only
        S maxs = std::numeric_limits<S>::lowest();
        for (int j = 0; j <= i; ++j) {
          const S* qi = lc.q[i] + c0;
          const S* kj = lc.k[j] + c0;
          S acc = S(0);
          for (int c = 0; c < hd; ++c) acc += qi[c] * kj[c];
          arow[j] = acc * inv_sqrt_hd;
          maxs = std::max(maxs, arow[j]);
        }
        S denom = S(0);
        for (int j = 0; j <= i; ++j) {
          arow[j] = std::exp(arow[j] - maxs);
          denom += arow[j];
        }
        S* crow = lc.ctx[i] + c0;
        for (int j = 0; j <= i; ++j) {
          arow[j] /= denom;
          const S* vj = lc.v[j] + c0;
          for (int c = 0; c < hd; ++c) crow[c] += arow[j] * vj[c];
        }
      }
    }

    lc.x_mid = lc.x_in;
    addmm(lc.x_mid, lc.ctx, lp.wo);
    add_bias_rows(lc.x_mid, lp.bo);

    lc.ln2_out = Mat<S>(T, d);
    layernorm_forward(lc.x_mid, lp.ln2_gain, lp.ln2_bias, lc.ln2_out,
                      lc.ln2_mean, lc.ln2_rstd);

    lc.ff_pre = Mat<S>(T, model.dims.ff);
    addmm(lc.ff_pre, lc.ln2_out, lp.w_ff1);
    add_bias_rows(lc.ff_pre, lp.b_ff1);
    lc.ff_act = Mat<S>(T, model.dims.ff);
    for (std::size_t i = 0; i < lc.ff_pre.size(); ++i)
      lc.ff_act.data[i] = gelu(lc.ff_pre.data[i]);

    x = lc.x_mid;
    addmm(x, lc.ff_act, lp.w_ff2);
    add_bias_rows(x, lp.b_ff2);
  }

  fc.x_final = x;
  fc.lnf_out = Mat<S>(T, d);
  layernorm_forward(fc.x_final, model.params.lnf_gain, model.params.lnf_bias,
                    fc.lnf_out, fc.lnf_mean, fc.lnf_rstd);

  Mat<S> logits(T, V);
  addmm(logits, fc.lnf_out, model.params.w_out);
  add_bias_rows(logits, model.params.b_out);
  return logits;
}

namespace {

// Shared loss entry point; grads may be null for loss-only evaluation.
template <typename S>
double masked_nll_impl(const MiniNeuralModel<S>& model,
                       const TokenSeq& conditioning, const TokenSeq& targets,
                       const std::vector<bool>& mask, ParamSet<S>* grads) {
  const int T = static_cast<int>(conditioning.size());
  if (targets.size() != conditioning.size())
    throw std::invalid_argument("loss: conditioning/targets length mismatch");
  if (mask.size() != conditioning.size())
    throw std::invalid_argument("loss: mask length mismatch");
  validate_tokens(targets, model.vocab, "loss targets");
  int n_masked = 0;
  for (bool b : mask) n_masked += b ? 1 : 0;
  if (n_masked == 0) throw std::invalid_argument("loss: all-false mask");

  ForwardCache<S> fc;
  Mat<S> logits = lm_logits(model, conditioning, &fc);
  const int V = model.vocab.size;

  // Masked cross-entropy; dlogits = (softmax - onehot) / n_masked.
  double loss = 0.0;
  Mat<S> dlogits(T, V);
  const S inv_n = S(1) / static_cast<S>(n_masked);
  for (int i = 0; i < T; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    S* row = logits[i];
    S maxv = row[0];
    for (int v = 1; v < V; ++v) maxv = std::max(maxv, row[v]);
    S denom = S(0);
    for (int v = 0; v < V; ++v) denom += std::exp(row[v] - maxv);
    const Token gold = targets[static_cast<std::size_t>(i)];
    loss -= static_cast<double>(row[gold] - maxv - std::log(denom));
    if (grads) {
      S* drow = dlogits[i];
      for (int v = 0; v < V; ++v)
        drow[v] = std::exp(row[v] - maxv) / denom * inv_n;
      drow[gold] -= inv_n;
    }
  }
  loss /= n_masked;
  if (!grads) return loss;

  const int d = model.dims.embed;
  const int H = model.dims.heads;
  const int hd = d / H;
  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));
  ParamSet<S>& g = *grads;

  // Output head.
  addmm_at(g.w_out, fc.lnf_out, dlogits);
  accumulate_colsum(g.b_out, dlogits);
  Mat<S> d_lnf_out(T, d);
  addmm_bt(d_lnf_out, dlogits, model.params.w_out);

  Mat<S> dx(T, d);
  layernorm_backward(fc.x_final, fc.lnf_mean, fc.lnf_rstd,
                     model.params.lnf_gain, d_lnf_out, dx, g.lnf_gain,
                     g.lnf_bias);

  for (int l = model.dims.layers - 1; l >= 0; --l) {
    const auto& lp = model.params.layers[static_cast<std::size_t>(l)];
    auto& lg = g.layers[static_cast<std::size_t>(l)];
    const auto& lc = fc.layers[static_cast<std::size_t>(l)];

    // Feed-forward block: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2.
    Mat<S> d_ff_act(T, model.dims.ff);
    addmm_at(lg.w_ff2, lc.ff_act, dx);
    accumulate_colsum(lg.b_ff2, dx);
    addmm_bt(d_ff_act, dx, lp.w_ff2);

    Mat<S> d_ff_pre(T, model.dims.ff);
    for (std::size_t i = 0; i < d_ff_pre.size(); ++i)
      d_ff_pre.data[i] = d_ff_act.data[i] * gelu_grad(lc.ff_pre.data[i]);

    Mat<S> d_ln2_out(T, d);
    addmm_at(lg.w_ff1, lc.ln2_out, d_ff_pre);
    accumulate_colsum(lg.b_ff1, d_ff_pre);
    addmm_bt(d_ln2_out, d_ff_pre, lp.w_ff1);

    Mat<S> d_x_mid = dx;  // residual path
    layernorm_backward(lc.x_mid, lc.ln2_mean, lc.ln2_rstd, lp.ln2_gain,
                       d_ln2_out, d_x_mid, lg.ln2_gain, lg.ln2_bias);

    // Attention block: x_mid = x_in + (heads(ln1(x_in))) Wo + bo.
    Mat<S> d_ctx(T, d);
    addmm_at(lg.wo, lc.ctx, d_x_mid);
    accumulate_colsum(lg.bo, d_x_mid);
    addmm_bt(d_ctx, d_x_mid, lp.wo);

    Mat<S> dq(T, d), dk(T, d), dv(T, d);
    std::vector<S> datt(static_cast<std::size_t>(T));
    for (int h = 0; h < H; ++h) {
      const int c0 = h * hd;
      for (int i = 0; i < T; ++i) {
        const S* arow = lc.att[h * T + i];
        const S* dci = d_ctx[i] + c0;
        S dot = S(0);
        for (int j = 0; j <= i; ++j) {
          const S* vj = lc.v[j] + c0;
          S acc = S(0);
          for (int c = 0; c < hd; ++c) acc += dci[c] * vj[c];
          datt[static_cast<std::size_t>(j)] = acc;
          dot += acc * arow[j];
          S* dvj = dv[j] + c0;
          for (int c = 0; c < hd; ++c) dvj[c] += arow[j] * dci[c];
        }
        // softmax backward, then scores -> q, k
        for (int j = 0; j <= i; ++j) {
          const S dscore = arow[j] * (datt[static_cast<std::size_t>(j)] - dot) *
                           inv_sqrt_hd;
          const S* kj = lc.k[j] + c0;
          const S* qi = lc.q[i] + c0;
          S* dqi = dq[i] + c0;
          S* dkj = dk[j] + c0;
          for (int c = 0; c < hd; ++c) {
            dqi[c] += dscore * kj[c];
            dkj[c] += dscore * qi[c];
          }
        }
      }
    }

    Mat<S> d_ln1_out(T, d);
    addmm_at(lg.wq, lc.ln1_out, dq);
    accumulate_colsum(lg.bq, dq);
    addmm_bt(d_ln1_out, dq, lp.wq);
    addmm_at(lg.wk, lc.ln1_out, dk);
    accumulate_colsum(lg.bk, dk);
    addmm_bt(d_ln1_out, dk, lp.wk);
    addmm_at(lg.wv, lc.ln1_out, dv);
    accumulate_colsum(lg.bv, dv);
    addmm_bt(d_ln1_out, dv, lp.wv);

    Mat<S> d_x_in = d_x_mid;  // residual path
    layernorm_backward(lc.x_in, lc.ln1_mean, lc.ln1_rstd, lp.ln1_gain,
                       d_ln1_out, d_x_in, lg.ln1_gain, lg.ln1_bias);
    dx = d_x_in;
  }

  for (int i = 0; i < T; ++i) {
    const Token tok = fc.inputs[static_cast<std::size_t>(i)];
    S* te = g.tok_emb[tok];
    S* pe = g.pos_emb[i];
    const S* dxi = dx[i];
    for (int c = 0; c < d; ++c) {
      te[c] += dxi[c];
      pe[c] += dxi[c];
    }
  }
  return loss;
}

}  // namespace

template <typename S>
LossResult<S> loss_and_grads(const MiniNeuralModel<S>& model,
                             const TokenSeq& conditioning,
                             const TokenSeq& targets,
                             const std::vector<bool>& mask) {
  LossResult<S> result;
  result.grads = ParamSet<S>::zeros(model.vocab.size, model.dims);
  result.loss = masked_nll_impl(model, conditioning, targets, mask, &result.grads);
  return result;
}

template <typename S>
double masked_nll(const MiniNeuralModel<S>& model, const TokenSeq& conditioning,
                  const TokenSeq& targets, const std::vector<bool>& mask) {
  return masked_nll_impl<S>(model, conditioning, targets, mask, nullptr);
}

template <typename S>
void add_scaled(ParamSet<S>& dst, const ParamSet<S>& src, S scale) {
  std::vector<Mat<S>*> ds;
  dst.for_each_tensor([&](const std::string&, Mat<S>& t) { ds.push_back(&t); });
  std::vector<const Mat<S>*> ss;
  src.for_each_tensor([&](const std::string&, const Mat<S>& t) { ss.push_back(&t); });
  for (std::size_t t = 0; t < ds.size(); ++t) {
    if (ds[t]->size() != ss[t]->size())
      throw std::invalid_argument("add_scaled: tensor shape mismatch");
    for (std::size_t i = 0; i < ds[t]->data.size(); ++i)
      ds[t]->data[i] += ss[t]->data[i] * scale;
  }
}

template <typename S>
AdamState<S> AdamState<S>::init_like(const Vocab& vocab, const ModelDims& dims) {
  AdamState<S> state;
  state.m = ParamSet<S>::zeros(vocab.size, dims);
  state.v = ParamSet<S>::zeros(vocab.size, dims);
  return state;
}

template <typename S>
void apply_update(MiniNeuralModel<S>& model, const ParamSet<S>& grads,
                  AdamState<S>& state, const AdamConfig& config) {
  double sq_norm = 0.0;
  grads.for_each_tensor([&](const std::string& name, const Mat<S>& t) {
    for (S v : t.data) {
      const double dv = static_cast<double>(v);
      if (!std::isfinite(dv))
        throw std::runtime_error("apply_update: non-finite gradient in " + name);
      sq_norm += dv * dv;
    }
  });
  const double norm = std::sqrt(sq_norm);
  const double scale = (norm > config.clip_norm) ? config.clip_norm / norm : 1.0;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  // Walk the three ParamSets in lockstep; visitation order is fixed.
  std::vector<Mat<S>*> params, ms, vs;
  model.params.for_each_tensor([&](const std::string&, Mat<S>& t) { params.push_back(&t); });
  state.m.for_each_tensor([&](const std::string&, Mat<S>& t) { ms.push_back(&t); });
  state.v.for_each_tensor([&](const std::string&, Mat<S>& t) { vs.push_back(&t); });
  std::vector<const Mat<S>*> gs;
  grads.for_each_tensor([&](const std::string&, const Mat<S>& t) { gs.push_back(&t); });

  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat<S>& p = *params[t];
    Mat<S>& m = *ms[t];
    Mat<S>& v = *vs[t];
    const Mat<S>& gmat = *gs[t];
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gval = static_cast<double>(gmat.data[i]) * scale;
      const double mi = config.beta1 * static_cast<double>(m.data[i]) +
                        (1.0 - config.beta1) * gval;
      const double vi = config.beta2 * static_cast<double>(v.data[i]) +
                        (1.0 - config.beta2) * gval * gval;
      m.data[i] = static_cast<S>(mi);
      v.data[i] = static_cast<S>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.data[i] = static_cast<S>(static_cast<double>(p.data[i]) -
                                 config.lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

TokenSeq pack_conditioning(const Vocab& vocab, const TokenSeq& context,
                           const TokenSeq& target_side) {
  TokenSeq packed;
  if (!context.empty()) {
    packed.reserve(context.size() + 1 + target_side.size());
    packed.insert(packed.end(), context.begin(), context.end());
    packed.push_back(vocab.sep);
  } else {
    packed.reserve(target_side.size());
  }
  packed.insert(packed.end(), target_side.begin(), target_side.end());
  return packed;
}

SupervisedBatchItem pack_supervised(const Vocab& vocab, const Example& example,
                                    const TokenSeq& mixed) {
  if (mixed.size() != example.target.size())
    throw std::invalid_argument("pack_supervised: mixed/target length mismatch");
  SupervisedBatchItem item;
  item.conditioning = pack_conditioning(vocab, example.input, mixed);
  item.conditioning.push_back(vocab.pad);  // slot for the end-of-sequence row
  item.targets = pack_conditioning(vocab, example.input, example.target);
  item.targets.push_back(vocab.sep);
  item.mask.assign(item.conditioning.size(), false);
  const std::size_t target_start = item.conditioning.size() - mixed.size() - 1;
  for (std::size_t i = target_start; i < item.mask.size(); ++i) item.mask[i] = true;
  return item;
}

void save_checkpoint(const MiniNeuralModel<float>& model,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  write_le<std::uint32_t>(os, kCheckpointMagic);
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::int32_t>(os, model.vocab.size);
  write_le<std::int32_t>(os, model.vocab.pad);
  write_le<std::int32_t>(os, model.vocab.bos);
  write_le<std::int32_t>(os, model.vocab.sep);
  write_le<std::int32_t>(os, model.dims.embed);
  write_le<std::int32_t>(os, model.dims.heads);
  write_le<std::int32_t>(os, model.dims.ff);
  write_le<std::int32_t>(os, model.dims.layers);
  write_le<std::int32_t>(os, model.dims.max_positions);

  std::uint32_t count = 0;
  model.params.for_each_tensor([&](const std::string&, const Mat<float>&) { ++count; });
  write_le<std::uint32_t>(os, count);
  model.params.for_each_tensor([&](const std::string& name, const Mat<float>& t) {
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rows));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.cols));
    for (float v : t.data) write_le<float>(os, v);
  });
  if (!os) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

MiniNeuralModel<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  if (read_le<std::uint32_t>(is) != kCheckpointMagic)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  if (read_le<std::uint32_t>(is) != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);

  Vocab vocab;
  vocab.size = read_le<std::int32_t>(is);
  vocab.pad = read_le<std::int32_t>(is);
  vocab.bos = read_le<std::int32_t>(is);
  vocab.sep = read_le<std::int32_t>(is);
  ModelDims dims;
  dims.embed = read_le<std::int32_t>(is);
  dims.heads = read_le<std::int32_t>(is);
  dims.ff = read_le<std::int32_t>(is);
  dims.layers = read_le<std::int32_t>(is);
  dims.max_positions = read_le<std::int32_t>(is);
  vocab.validate();
  dims.validate();

  MiniNeuralModel<float> model;
  model.vocab = vocab;
  model.dims = dims;
  model.params = ParamSet<float>::zeros(vocab.size, dims);

  std::uint32_t count = read_le<std::uint32_t>(is);
  std::uint32_t seen = 0;
  model.params.for_each_tensor([&](const std::string& name, Mat<float>& t) {
    ++seen;
    const auto name_len = read_le<std::uint16_t>(is);
    std::string stored(name_len, '\0');
    is.read(stored.data(), name_len);
    if (stored != name)
      throw std::runtime_error("load_checkpoint: tensor order mismatch at " + name);
    const auto rows = read_le<std::uint32_t>(is);
    const auto cols = read_le<std::uint32_t>(is);
    if (static_cast<int>(rows) != t.rows || static_cast<int>(cols) != t.cols)
      throw std::runtime_error("load_checkpoint: tensor shape mismatch at " + name);
    for (float& v : t.data) v = read_le<float>(is);
  });
  if (seen != count)
    throw std::runtime_error("load_checkpoint: tensor count mismatch");
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  model.validate_finite();
  return model;
}

template <typename S>
int NeuralAdapter<S>::max_conditioning_len(int context_len) const {
  const int overhead = context_len > 0 ? context_len + 1 : 0;
  // Reserve one slot so next_logits works on a full-length conditioning.
  return model_.dims.max_positions - overhead - 1;
}

template <typename S>
LogitMatrix NeuralAdapter<S>::conditional_logits(const TokenSeq& conditioning,
                                                 const TokenSeq& context) const {
  if (conditioning.empty())
    throw std::invalid_argument("conditional_logits: empty conditioning");
  const TokenSeq packed = pack_conditioning(model_.vocab, context, conditioning);
  Mat<S> logits = lm_logits(model_, packed);
  const int T = static_cast<int>(conditioning.size());
  const int V = model_.vocab.size;
  LogitMatrix out(T, V);
  const int offset = static_cast<int>(packed.size()) - T;
  for (int t = 0; t < T; ++t) {
    const S* src = logits[offset + t];
    auto dst = out.row(t);
    for (int v = 0; v < V; ++v) dst[v] = static_cast<double>(src[v]);
  }
  return out;
}

template <typename S>
LogitRow NeuralAdapter<S>::next_logits(const TokenSeq& prefix,
                                       const TokenSeq& context) const {
  TokenSeq with_slot = prefix;
  with_slot.push_back(model_.vocab.pad);  // value irrelevant; row only needs the prefix
  const TokenSeq packed = pack_conditioning(model_.vocab, context, with_slot);
  Mat<S> logits = lm_logits(model_, packed);
  const int V = model_.vocab.size;
  LogitRow out(static_cast<std::size_t>(V));
  const S* src = logits[logits.rows - 1];
  for (int v = 0; v < V; ++v) out[static_cast<std::size_t>(v)] = static_cast<double>(src[v]);
  return out;
}

// Explicit instantiations: float for training, double for gradient checks.
template struct ParamSet<float>;
template struct ParamSet<double>;
template struct MiniNeuralModel<float>;
template struct MiniNeuralModel<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template class NeuralAdapter<float>;
template class NeuralAdapter<double>;

template Mat<float> lm_logits(const MiniNeuralModel<float>&, const TokenSeq&,
                              ForwardCache<float>*);
template Mat<double> lm_logits(const MiniNeuralModel<double>&, const TokenSeq&,
                               ForwardCache<double>*);
template LossResult<float> loss_and_grads(const MiniNeuralModel<float>&,
                                          const TokenSeq&, const TokenSeq&,
                                          const std::vector<bool>&);
template LossResult<double> loss_and_grads(const MiniNeuralModel<double>&,
                                           const TokenSeq&, const TokenSeq&,
                                           const std::vector<bool>&);
template double masked_nll(const MiniNeuralModel<float>&, const TokenSeq&,
                           const TokenSeq&, const std::vector<bool>&);
template double masked_nll(const MiniNeuralModel<double>&, const TokenSeq&,
                           const TokenSeq&, const std::vector<bool>&);
template void apply_update(MiniNeuralModel<float>&, const ParamSet<float>&,
                           AdamState<float>&, const AdamConfig&);
template void apply_update(MiniNeuralModel<double>&, const ParamSet<double>&,
                           AdamState<double>&, const AdamConfig&);
template void add_scaled(ParamSet<float>&, const ParamSet<float>&, float);
template void add_scaled(ParamSet<double>&, const ParamSet<double>&, double);

}  // namespace parmix
