#include "cpscode/mini_plm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpscode/error.hpp"

namespace cpscode {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskedScore = -1e30;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double gelu_grad(double x) {
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

// Y[R,N] = X[R,K] * W[K,N] + b
void linear_forward(std::vector<double>& y, const std::vector<double>& x,
                    const Tensor& w, const Tensor& b, size_t rows, size_t k,
                    size_t n) {
  y.resize(rows * n);
  for (size_t i = 0; i < rows; ++i) {
    std::copy(b.v.begin(), b.v.end(), y.begin() + i * n);
  }
  gemm_nn(y.data(), x.data(), w.data(), rows, k, n, true);
}

// Accumulates dW, db and dX for Y = X*W + b.
void linear_backward(const std::vector<double>& dy,
                     const std::vector<double>& x, Tensor& w, Tensor& b,
                     std::vector<double>& dx, size_t rows, size_t k,
                     size_t n) {
  w.ensure_grad();
  b.ensure_grad();
  gemm_tn(w.g.data(), x.data(), dy.data(), k, rows, n, true);
  for (size_t i = 0; i < rows; ++i) {
    const double* row = dy.data() + i * n;
    for (size_t j = 0; j < n; ++j) b.g[j] += row[j];
  }
  gemm_nt(dx.data(), dy.data(), w.data(), rows, n, k, true);
}

void layernorm_forward(std::vector<double>& out, std::vector<double>& mean,
                       std::vector<double>& rstd,
                       const std::vector<double>& in, const Tensor& gamma,
                       const Tensor& beta, size_t rows, size_t d) {
  out.resize(rows * d);
  mean.resize(rows);
  rstd.resize(rows);
  for (size_t i = 0; i < rows; ++i) {
    const double* x = in.data() + i * d;
    double mu = 0.0;
    for (size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[i] = mu;
    rstd[i] = rs;
    double* y = out.data() + i * d;
    for (size_t j = 0; j < d; ++j) {
      y[j] = gamma.v[j] * (x[j] - mu) * rs + beta.v[j];
    }
  }
}

void layernorm_backward(const std::vector<double>& dy,
                        const std::vector<double>& in,
                        const std::vector<double>& mean,
                        const std::vector<double>& rstd, Tensor& gamma,
                        Tensor& beta, std::vector<double>& dx, size_t rows,
                        size_t d) {
  gamma.ensure_grad();
  beta.ensure_grad();
  for (size_t i = 0; i < rows; ++i) {
    const double* x = in.data() + i * d;
    const double* dyr = dy.data() + i * d;
    double* dxr = dx.data() + i * d;
    const double mu = mean[i];
    const double rs = rstd[i];
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double xhat = (x[j] - mu) * rs;
      const double dxhat = dyr[j] * gamma.v[j];
      gamma.g[j] += dyr[j] * xhat;
      beta.g[j] += dyr[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (size_t j = 0; j < d; ++j) {
      const double xhat = (x[j] - mu) * rs;
      const double dxhat = dyr[j] * gamma.v[j];
      dxr[j] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

void apply_dropout(std::vector<double>& x, std::vector<std::uint8_t>& keep,
                   double rate, std::mt19937* rng) {
  if (rate <= 0.0 || rng == nullptr) return;
  keep.resize(x.size());
  std::bernoulli_distribution coin(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < x.size(); ++i) {
    keep[i] = coin(*rng) ? 1 : 0;
    x[i] = keep[i] ? x[i] * scale : 0.0;
  }
}

void dropout_backward(std::vector<double>& dx,
                      const std::vector<std::uint8_t>& keep, double rate) {
  if (keep.empty()) return;
  const double scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < dx.size(); ++i) {
    dx[i] = keep[i] ? dx[i] * scale : 0.0;
  }
}

Tensor randn(std::vector<size_t> shape, double stddev, std::mt19937& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.v) x = dist(rng);
  return t;
}

}  // namespace

void MiniPlmConfig::validate() const {
  if (vocab_size == 0) {
    raise(ErrorCode::ShapeMismatch, "vocab_size must be positive");
  }
  if (num_heads == 0 || model_dim % num_heads != 0) {
    raise(ErrorCode::ShapeMismatch,
          "model_dim must be divisible by num_heads");
  }
  if (max_positions < 20) {
    raise(ErrorCode::ShapeMismatch,
          "max_positions must fit 16 content tokens plus template scaffold");
  }
}

BatchInput make_batch(const std::vector<std::vector<int>>& sequences,
                      int pad_id) {
  BatchInput in;
  in.batch_size = sequences.size();
  in.seq_len = 0;
  for (const auto& s : sequences) in.seq_len = std::max(in.seq_len, s.size());
  in.ids.assign(in.batch_size * in.seq_len, pad_id);
  in.attn_mask.assign(in.batch_size * in.seq_len, 0);
  for (size_t b = 0; b < sequences.size(); ++b) {
    for (size_t t = 0; t < sequences[b].size(); ++t) {
      in.ids[b * in.seq_len + t] = sequences[b][t];
      in.attn_mask[b * in.seq_len + t] = 1;
    }
  }
  return in;
}

MiniPlm MiniPlm::init(const MiniPlmConfig& config) {
  config.validate();
  MiniPlm model;
  model.config_ = config;
  std::mt19937 rng(config.seed);
  const size_t dim = config.model_dim;
  const double stddev = 0.02;

  model.tok_emb = randn({config.vocab_size, dim}, stddev, rng);
  model.pos_emb = randn({config.max_positions, dim}, stddev, rng);
  model.layers.resize(config.num_layers);
  for (auto& layer : model.layers) {
    layer.attn.wq = randn({dim, dim}, stddev, rng);
    layer.attn.bq = Tensor::zeros({dim});
    layer.attn.wk = randn({dim, dim}, stddev, rng);
    layer.attn.bk = Tensor::zeros({dim});
    layer.attn.wv = randn({dim, dim}, stddev, rng);
    layer.attn.bv = Tensor::zeros({dim});
    layer.attn.wo = randn({dim, dim}, stddev, rng);
    layer.attn.bo = Tensor::zeros({dim});
    layer.ln1_gamma = Tensor::zeros({dim});
    std::fill(layer.ln1_gamma.v.begin(), layer.ln1_gamma.v.end(), 1.0);
    layer.ln1_beta = Tensor::zeros({dim});
    layer.ffn_w1 = randn({dim, config.ffn_dim}, stddev, rng);
    layer.ffn_b1 = Tensor::zeros({config.ffn_dim});
    layer.ffn_w2 = randn({config.ffn_dim, dim}, stddev, rng);
    layer.ffn_b2 = Tensor::zeros({dim});
    layer.ln2_gamma = Tensor::zeros({dim});
    std::fill(layer.ln2_gamma.v.begin(), layer.ln2_gamma.v.end(), 1.0);
    layer.ln2_beta = Tensor::zeros({dim});
  }
  model.out_w = randn({dim, config.vocab_size}, stddev, rng);
  model.out_b = Tensor::zeros({config.vocab_size});
  return model;
}

NamedParams MiniPlm::parameters() {
  NamedParams params;
  params.emplace_back("tok_emb", &tok_emb);
  params.emplace_back("pos_emb", &pos_emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    auto& layer = layers[l];
    params.emplace_back(prefix + "attn.wq", &layer.attn.wq);
    params.emplace_back(prefix + "attn.bq", &layer.attn.bq);
    params.emplace_back(prefix + "attn.wk", &layer.attn.wk);
    params.emplace_back(prefix + "attn.bk", &layer.attn.bk);
    params.emplace_back(prefix + "attn.wv", &layer.attn.wv);
    params.emplace_back(prefix + "attn.bv", &layer.attn.bv);
    params.emplace_back(prefix + "attn.wo", &layer.attn.wo);
    params.emplace_back(prefix + "attn.bo", &layer.attn.bo);
    params.emplace_back(prefix + "ln1.gamma", &layer.ln1_gamma);
    params.emplace_back(prefix + "ln1.beta", &layer.ln1_beta);
    params.emplace_back(prefix + "ffn.w1", &layer.ffn_w1);
    params.emplace_back(prefix + "ffn.b1", &layer.ffn_b1);
    params.emplace_back(prefix + "ffn.w2", &layer.ffn_w2);
    params.emplace_back(prefix + "ffn.b2", &layer.ffn_b2);
    params.emplace_back(prefix + "ln2.gamma", &layer.ln2_gamma);
    params.emplace_back(prefix + "ln2.beta", &layer.ln2_beta);
  }
  params.emplace_back("out_w", &out_w);
  params.emplace_back("out_b", &out_b);
  return params;
}

Activations MiniPlm::forward(const BatchInput& in) const {
  const size_t batch = in.batch_size;
  const size_t seq = in.seq_len;
  const size_t dim = config_.model_dim;
  const size_t heads = config_.num_heads;
  const size_t hd = config_.head_dim();
  const size_t ffn = config_.ffn_dim;
  const size_t rows = batch * seq;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Activations acts;
  acts.batch_size = batch;
  acts.seq_len = seq;
  acts.embedded.assign(rows * dim, 0.0);
  for (size_t r = 0; r < rows; ++r) {
    const size_t t = r % seq;
    const int id = in.ids[r];
    const double* src;
    if (id >= 0) {
      src = tok_emb.data() + static_cast<size_t>(id) * dim;
    } else {
      src = (*in.slots)[static_cast<size_t>(-id - 1)].data();
    }
    const double* pos = pos_emb.data() + t * dim;
    double* dst = acts.embedded.data() + r * dim;
    for (size_t d = 0; d < dim; ++d) dst[d] = src[d] + pos[d];
  }

  const std::vector<double>* x = &acts.embedded;
  acts.layers.resize(layers.size());
  std::vector<double> scores(seq * seq);
  for (size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& p = layers[l];
    LayerActivations& a = acts.layers[l];
    a.x_in = *x;

    linear_forward(a.q, a.x_in, p.attn.wq, p.attn.bq, rows, dim, dim);
    linear_forward(a.k, a.x_in, p.attn.wk, p.attn.bk, rows, dim, dim);
    linear_forward(a.v, a.x_in, p.attn.wv, p.attn.bv, rows, dim, dim);

    a.attn.assign(batch * heads * seq * seq, 0.0);
    a.ctx.assign(rows * dim, 0.0);
    for (size_t b = 0; b < batch; ++b) {
      for (size_t h = 0; h < heads; ++h) {
        const size_t off = h * hd;
        for (size_t t = 0; t < seq; ++t) {
          const double* qr = a.q.data() + (b * seq + t) * dim + off;
          for (size_t u = 0; u < seq; ++u) {
            if (!in.attn_mask[b * seq + u]) {
              scores[t * seq + u] = kMaskedScore;
              continue;
            }
            const double* kr = a.k.data() + (b * seq + u) * dim + off;
            double dot = 0.0;
            for (size_t d = 0; d < hd; ++d) dot += qr[d] * kr[d];
            scores[t * seq + u] = dot * scale;
          }
        }
        softmax_rows(scores.data(), seq, seq);
        std::copy(scores.begin(), scores.end(),
                  a.attn.begin() + (b * heads + h) * seq * seq);
        for (size_t t = 0; t < seq; ++t) {
          double* out = a.ctx.data() + (b * seq + t) * dim + off;
          for (size_t u = 0; u < seq; ++u) {
            const double w = scores[t * seq + u];
            if (w == 0.0) continue;
            const double* vr = a.v.data() + (b * seq + u) * dim + off;
            for (size_t d = 0; d < hd; ++d) out[d] += w * vr[d];
          }
        }
      }
    }

    std::vector<double> attn_proj;
    linear_forward(attn_proj, a.ctx, p.attn.wo, p.attn.bo, rows, dim, dim);
    apply_dropout(attn_proj, a.drop1, config_.dropout_rate, in.dropout_rng);

    a.r1.resize(rows * dim);
    for (size_t i = 0; i < rows * dim; ++i) {
      a.r1[i] = a.x_in[i] + attn_proj[i];
    }
    layernorm_forward(a.x1, a.ln1_mean, a.ln1_rstd, a.r1, p.ln1_gamma,
                      p.ln1_beta, rows, dim);

    linear_forward(a.f1, a.x1, p.ffn_w1, p.ffn_b1, rows, dim, ffn);
    a.gact.resize(rows * ffn);
    for (size_t i = 0; i < rows * ffn; ++i) a.gact[i] = gelu(a.f1[i]);
    std::vector<double> ffn_out;
    linear_forward(ffn_out, a.gact, p.ffn_w2, p.ffn_b2, rows, ffn, dim);
    apply_dropout(ffn_out, a.drop2, config_.dropout_rate, in.dropout_rng);

    a.r2.resize(rows * dim);
    for (size_t i = 0; i < rows * dim; ++i) a.r2[i] = a.x1[i] + ffn_out[i];
    layernorm_forward(a.x2, a.ln2_mean, a.ln2_rstd, a.r2, p.ln2_gamma,
                      p.ln2_beta, rows, dim);

    x = &a.x2;
  }
  return acts;
}

void MiniPlm::backward(const BatchInput& in, const Activations& acts,
                       const std::vector<double>& d_hidden) {
  const size_t batch = in.batch_size;
  const size_t seq = in.seq_len;
  const size_t dim = config_.model_dim;
  const size_t heads = config_.num_heads;
  const size_t hd = config_.head_dim();
  const size_t ffn = config_.ffn_dim;
  const size_t rows = batch * seq;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dx = d_hidden;  // gradient flowing down the stack
  std::vector<double> ds(seq * seq);

  for (size_t l = layers.size(); l-- > 0;) {
    LayerParams& p = layers[l];
    const LayerActivations& a = acts.layers[l];

    // second layernorm
    std::vector<double> dr2(rows * dim, 0.0);
    layernorm_backward(dx, a.r2, a.ln2_mean, a.ln2_rstd, p.ln2_gamma,
                       p.ln2_beta, dr2, rows, dim);
    std::vector<double> dx1 = dr2;  // residual branch
    std::vector<double> dffn_out = std::move(dr2);
    dropout_backward(dffn_out, a.drop2, config_.dropout_rate);

    // FFN
    std::vector<double> dgact(rows * ffn, 0.0);
    linear_backward(dffn_out, a.gact, p.ffn_w2, p.ffn_b2, dgact, rows, ffn,
                    dim);
    for (size_t i = 0; i < rows * ffn; ++i) dgact[i] *= gelu_grad(a.f1[i]);
    linear_backward(dgact, a.x1, p.ffn_w1, p.ffn_b1, dx1, rows, dim, ffn);

    // first layernorm
    std::vector<double> dr1(rows * dim, 0.0);
    layernorm_backward(dx1, a.r1, a.ln1_mean, a.ln1_rstd, p.ln1_gamma,
                       p.ln1_beta, dr1, rows, dim);
    std::vector<double> dx_in = dr1;  // residual branch
    std::vector<double> dattn_proj = std::move(dr1);
    dropout_backward(dattn_proj, a.drop1, config_.dropout_rate);

    // output projection
    std::vector<double> dctx(rows * dim, 0.0);
    linear_backward(dattn_proj, a.ctx, p.attn.wo, p.attn.bo, dctx, rows, dim,
                    dim);

    // attention core
    std::vector<double> dq(rows * dim, 0.0);
    std::vector<double> dk(rows * dim, 0.0);
    std::vector<double> dv(rows * dim, 0.0);
    for (size_t b = 0; b < batch; ++b) {
      for (size_t h = 0; h < heads; ++h) {
        const size_t off = h * hd;
        const double* attn = a.attn.data() + (b * heads + h) * seq * seq;
        // dA and dV
        for (size_t t = 0; t < seq; ++t) {
          const double* dctx_r = dctx.data() + (b * seq + t) * dim + off;
          double row_dot = 0.0;
          for (size_t u = 0; u < seq; ++u) {
            const double w = attn[t * seq + u];
            const double* vr = a.v.data() + (b * seq + u) * dim + off;
            double da = 0.0;
            for (size_t d = 0; d < hd; ++d) da += dctx_r[d] * vr[d];
            ds[t * seq + u] = da;
            row_dot += da * w;
            if (w != 0.0) {
              double* dvr = dv.data() + (b * seq + u) * dim + off;
              for (size_t d = 0; d < hd; ++d) dvr[d] += w * dctx_r[d];
            }
          }
          // softmax backward, then score scale
          for (size_t u = 0; u < seq; ++u) {
            const double w = attn[t * seq + u];
            ds[t * seq + u] = w * (ds[t * seq + u] - row_dot) * scale;
          }
        }
        // dQ, dK
        for (size_t t = 0; t < seq; ++t) {
          double* dqr = dq.data() + (b * seq + t) * dim + off;
          const double* qr = a.q.data() + (b * seq + t) * dim + off;
          for (size_t u = 0; u < seq; ++u) {
            const double g = ds[t * seq + u];
            if (g == 0.0) continue;
            const double* kr = a.k.data() + (b * seq + u) * dim + off;
            double* dkr = dk.data() + (b * seq + u) * dim + off;
            for (size_t d = 0; d < hd; ++d) {
              dqr[d] += g * kr[d];
              dkr[d] += g * qr[d];
            }
          }
        }
      }
    }

    linear_backward(dq, a.x_in, p.attn.wq, p.attn.bq, dx_in, rows, dim, dim);
    linear_backward(dk, a.x_in, p.attn.wk, p.attn.bk, dx_in, rows, dim, dim);
    linear_backward(dv, a.x_in, p.attn.wv, p.attn.bv, dx_in, rows, dim, dim);

    dx = std::move(dx_in);
  }

  // embeddings
  tok_emb.ensure_grad();
  pos_emb.ensure_grad();
  for (size_t r = 0; r < rows; ++r) {
    const size_t t = r % seq;
    const int id = in.ids[r];
    const double* src = dx.data() + r * dim;
    double* dpos = pos_emb.grad() + t * dim;
    for (size_t d = 0; d < dim; ++d) dpos[d] += src[d];
    if (id >= 0) {
      double* dtok = tok_emb.grad() + static_cast<size_t>(id) * dim;
      for (size_t d = 0; d < dim; ++d) dtok[d] += src[d];
    } else if (in.slot_grads != nullptr) {
      Tensor& slot = (*in.slot_grads)[static_cast<size_t>(-id - 1)];
      slot.ensure_grad();
      for (size_t d = 0; d < dim; ++d) slot.g[d] += src[d];
    }
  }
}

std::vector<double> MiniPlm::head_logits(
    const Activations& acts, const std::vector<size_t>& positions) const {
  const size_t dim = config_.model_dim;
  const size_t vocab = config_.vocab_size;
  const std::vector<double>& hidden = acts.final_hidden();
  std::vector<double> gathered(positions.size() * dim);
  for (size_t i = 0; i < positions.size(); ++i) {
    std::copy_n(hidden.data() + positions[i] * dim, dim,
                gathered.data() + i * dim);
  }
  std::vector<double> logits(positions.size() * vocab);
  for (size_t i = 0; i < positions.size(); ++i) {
    std::copy(out_b.v.begin(), out_b.v.end(), logits.begin() + i * vocab);
  }
  gemm_nn(logits.data(), gathered.data(), out_w.data(), positions.size(), dim,
          vocab, true);
  return logits;
}

std::vector<double> MiniPlm::head_backward(
    const Activations& acts, const std::vector<size_t>& positions,
    const std::vector<double>& d_logits) {
  const size_t dim = config_.model_dim;
  const size_t vocab = config_.vocab_size;
  const std::vector<double>& hidden = acts.final_hidden();
  std::vector<double> gathered(positions.size() * dim);
  for (size_t i = 0; i < positions.size(); ++i) {
    std::copy_n(hidden.data() + positions[i] * dim, dim,
                gathered.data() + i * dim);
  }
  out_w.ensure_grad();
  out_b.ensure_grad();
  gemm_tn(out_w.g.data(), gathered.data(), d_logits.data(), dim,
          positions.size(), vocab, true);
  for (size_t i = 0; i < positions.size(); ++i) {
    const double* row = d_logits.data() + i * vocab;
    for (size_t j = 0; j < vocab; ++j) out_b.g[j] += row[j];
  }
  std::vector<double> d_rows(positions.size() * dim, 0.0);
  gemm_nt(d_rows.data(), d_logits.data(), out_w.data(), positions.size(),
          vocab, dim, true);
  std::vector<double> d_hidden(hidden.size(), 0.0);
  for (size_t i = 0; i < positions.size(); ++i) {
    double* dst = d_hidden.data() + positions[i] * dim;
    const double* src = d_rows.data() + i * dim;
    for (size_t d = 0; d < dim; ++d) dst[d] += src[d];
  }
  return d_hidden;
}

std::vector<double> MiniPlm::mask_distribution(const TokenSequence& seq) const {
  if (!seq.mask_position) {
    raise(ErrorCode::NoMaskPosition, "sequence has no [MASK] position");
  }
  return mask_distribution_ids(seq.ids, *seq.mask_position, nullptr);
}

std::vector<double> MiniPlm::mask_distribution_ids(
    const std::vector<int>& ids, size_t mask_position,
    const std::vector<Tensor>* slots) const {
  if (ids.size() > config_.max_positions) {
    raise(ErrorCode::SequenceTooLong,
          "sequence length " + std::to_string(ids.size()) +
              " exceeds max_positions " +
              std::to_string(config_.max_positions));
  }
  if (mask_position >= ids.size()) {
    raise(ErrorCode::NoMaskPosition, "mask position out of range");
  }
  for (int id : ids) {
    if (id >= static_cast<int>(config_.vocab_size)) {
      raise(ErrorCode::ShapeMismatch,
            "token id " + std::to_string(id) + " outside vocabulary");
    }
    if (id < 0 && slots == nullptr) {
      raise(ErrorCode::ConditionIncompatible,
            "soft template slots require the built-in model");
    }
  }
  BatchInput in = make_batch({ids}, /*pad_id=*/0);
  in.slots = slots;
  Activations acts = forward(in);
  std::vector<double> logits = head_logits(acts, {mask_position});
  softmax_rows(logits.data(), 1, config_.vocab_size);
  return logits;
}

double mlm_loss(MiniPlm& model, const BatchInput& in,
                const std::vector<MaskedToken>& targets, bool backprop) {
  Activations acts = model.forward(in);
  std::vector<size_t> positions(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) positions[i] = targets[i].flat_pos;
  std::vector<double> logits = model.head_logits(acts, positions);
  const size_t vocab = model.config().vocab_size;
  softmax_rows(logits.data(), targets.size(), vocab);

  double loss = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    const double p = logits[i * vocab + static_cast<size_t>(targets[i].target)];
    loss -= std::log(std::max(p, 1e-300));
  }
  loss /= static_cast<double>(targets.size());
  if (!std::isfinite(loss)) {
    raise(ErrorCode::NonFiniteLoss, "masked-token loss is not finite");
  }
  if (backprop) {
    const double inv = 1.0 / static_cast<double>(targets.size());
    std::vector<double>& d_logits = logits;  // reuse: softmax probs -> grads
    for (size_t i = 0; i < targets.size(); ++i) {
      d_logits[i * vocab + static_cast<size_t>(targets[i].target)] -= 1.0;
      for (size_t j = 0; j < vocab; ++j) d_logits[i * vocab + j] *= inv;
    }
    std::vector<double> d_hidden =
        model.head_backward(acts, positions, d_logits);
    model.backward(in, acts, d_hidden);
  }
  return loss;
}

std::vector<double> pretrain_mlm(MiniPlm& model,
                                 const std::vector<TokenSequence>& corpus,
                                 const PretrainOptions& options) {
  if (corpus.empty()) {
    raise(ErrorCode::EmptyCorpus, "pretraining corpus is empty");
  }
  if (!(options.mask_rate > 0.0) || !(options.mask_rate < 1.0)) {
    raise(ErrorCode::FractionInvalid, "mask_rate must be in (0, 1)");
  }

  const int cls = 2, sep = 3, mask = 4;  // reserved block ids
  std::vector<std::vector<int>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& seq : corpus) {
    if (seq.ids.empty()) continue;
    std::vector<int> ids;
    ids.reserve(seq.ids.size() + 2);
    ids.push_back(cls);
    ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
    ids.push_back(sep);
    if (ids.size() > model.config().max_positions) {
      ids.resize(model.config().max_positions - 1);
      ids.push_back(sep);
    }
    encoded.push_back(std::move(ids));
  }
  if (encoded.empty()) {
    raise(ErrorCode::EmptyCorpus, "pretraining corpus has no usable text");
  }

  std::mt19937 rng(options.seed);
  Adam optimizer({.learning_rate = options.learning_rate});
  NamedParams params = model.parameters();
  std::vector<double> trace;
  trace.reserve(options.epochs);

  std::vector<size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_ce = 0.0;
    size_t epoch_masked = 0;
    for (size_t start = 0; start < order.size();
         start += options.batch_size) {
      const size_t stop = std::min(start + options.batch_size, order.size());
      std::vector<std::vector<int>> chunk;
      chunk.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) chunk.push_back(encoded[order[i]]);
      BatchInput in = make_batch(chunk, /*pad_id=*/0);

      std::vector<MaskedToken> targets;
      for (size_t b = 0; b < chunk.size(); ++b) {
        const size_t len = chunk[b].size();
        size_t n_masked = 0;
        for (size_t t = 1; t + 1 < len; ++t) {
          if (unif(rng) < options.mask_rate) {
            const size_t flat = b * in.seq_len + t;
            targets.push_back({flat, in.ids[flat]});
            in.ids[flat] = mask;
            ++n_masked;
          }
        }
        if (n_masked == 0 && len > 2) {
          // always mask at least one content token
          std::uniform_int_distribution<size_t> pick(1, len - 2);
          const size_t t = pick(rng);
          const size_t flat = b * in.seq_len + t;
          targets.push_back({flat, in.ids[flat]});
          in.ids[flat] = mask;
        }
      }
      if (targets.empty()) continue;
      const double loss = mlm_loss(model, in, targets, /*backprop=*/true);
      optimizer.step(params);
      epoch_ce += loss * static_cast<double>(targets.size());
      epoch_masked += targets.size();
    }
    trace.push_back(epoch_masked ? epoch_ce / static_cast<double>(epoch_masked)
                                 : 0.0);
  }
  return trace;
}

}  // namespace cpscode
