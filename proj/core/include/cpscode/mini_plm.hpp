#pragma once
// Desk-scale transformer masked language model: the probability source
// behind mask prediction, with explicit forward/backward for training.

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "cpscode/optimizer.hpp"
#include "cpscode/tensor.hpp"
#include "cpscode/textprep.hpp"

namespace cpscode {

struct MiniPlmConfig {
  size_t vocab_size = 0;
  size_t model_dim = 64;
  size_t num_heads = 4;
  size_t num_layers = 2;
  size_t ffn_dim = 128;
  size_t max_positions = 24;  // 16 content tokens + template scaffold
  double dropout_rate = 0.0;
  std::uint32_t seed = 0;

  size_t head_dim() const { return model_dim / num_heads; }
  void validate() const;
};

// Extension point: anything that can score the [MASK] position over the
// vocabulary can stand in for the built-in model.
class MaskScorer {
 public:
  virtual ~MaskScorer() = default;
  // Probability vector over the vocabulary at seq.mask_position;
  // non-negative, sums to 1.
  virtual std::vector<double> mask_distribution(
      const TokenSequence& seq) const = 0;
  virtual size_t vocab_size() const = 0;
};

// A padded minibatch of id sequences. Negative ids index soft template
// slots: id -1-j refers to slots[j].
struct BatchInput {
  size_t batch_size = 0;
  size_t seq_len = 0;
  std::vector<int> ids;        // batch_size * seq_len
  std::vector<std::uint8_t> attn_mask;  // 1 = real token, 0 = padding
  const std::vector<Tensor>* slots = nullptr;
  std::vector<Tensor>* slot_grads = nullptr;  // parallel to slots
  std::mt19937* dropout_rng = nullptr;        // non-null enables dropout
};

BatchInput make_batch(const std::vector<std::vector<int>>& sequences,
                      int pad_id);

struct LayerActivations {
  std::vector<double> x_in;   // (B*T) x D, layer input
  std::vector<double> q, k, v;
  std::vector<double> attn;   // B*H*T*T attention probabilities
  std::vector<double> ctx;    // (B*T) x D, heads concatenated
  std::vector<double> r1;     // residual before first layernorm
  std::vector<double> ln1_mean, ln1_rstd;
  std::vector<double> x1;     // after first layernorm
  std::vector<double> f1;     // (B*T) x F, pre-activation
  std::vector<double> gact;   // (B*T) x F, post-activation
  std::vector<double> r2;     // residual before second layernorm
  std::vector<double> ln2_mean, ln2_rstd;
  std::vector<double> x2;     // layer output
  std::vector<std::uint8_t> drop1, drop2;  // dropout keep masks (optional)
};

struct Activations {
  size_t batch_size = 0;
  size_t seq_len = 0;
  std::vector<double> embedded;  // (B*T) x D
  std::vector<LayerActivations> layers;

  const std::vector<double>& final_hidden() const {
    return layers.empty() ? embedded : layers.back().x2;
  }
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerParams {
  AttentionParams attn;
  Tensor ln1_gamma, ln1_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gamma, ln2_beta;
};

class MiniPlm : public MaskScorer {
 public:
  MiniPlm() = default;
  static MiniPlm init(const MiniPlmConfig& config);

  const MiniPlmConfig& config() const { return config_; }

  // Stable-ordered named parameter registry (optimizer, checkpoints,
  // gradient checks).
  NamedParams parameters();

  Activations forward(const BatchInput& in) const;
  // d_hidden: (B*T) x D gradient w.r.t. the final hidden states;
  // accumulates into parameter .g buffers (and slot grads when present).
  void backward(const BatchInput& in, const Activations& acts,
                const std::vector<double>& d_hidden);

  // MLM head logits over the vocabulary at flat positions (b*T + t).
  std::vector<double> head_logits(const Activations& acts,
                                  const std::vector<size_t>& positions) const;
  // Backward through the head; returns d_hidden for MiniPlm::backward.
  std::vector<double> head_backward(const Activations& acts,
                                    const std::vector<size_t>& positions,
                                    const std::vector<double>& d_logits);

  std::vector<double> mask_distribution(const TokenSequence& seq)
      const override;
  // Soft-template variant: negative ids in `ids` index `slots`.
  std::vector<double> mask_distribution_ids(const std::vector<int>& ids,
                                            size_t mask_position,
                                            const std::vector<Tensor>* slots)
      const;
  size_t vocab_size() const override { return config_.vocab_size; }

  Tensor tok_emb;  // V x D
  Tensor pos_emb;  // P x D
  std::vector<LayerParams> layers;
  Tensor out_w;  // D x V
  Tensor out_b;  // V

 private:
  MiniPlmConfig config_;
};

struct MaskedToken {
  size_t flat_pos = 0;  // b * seq_len + t
  int target = 0;       // original token id
};

// Mean masked-token cross-entropy; accumulates parameter gradients when
// backprop is set. Raises NonFiniteLoss if the loss is NaN or infinite.
double mlm_loss(MiniPlm& model, const BatchInput& in,
                const std::vector<MaskedToken>& targets, bool backprop);

struct PretrainOptions {
  size_t epochs = 30;
  double mask_rate = 0.15;
  double learning_rate = 1e-3;  // from-scratch pretraining needs more than
                                // the fine-tuning default
  size_t batch_size = 32;
  std::uint32_t seed = 0;
};

// Masked-token pretraining over content sequences (the [CLS]/[SEP] frame
// is added internally). Returns the per-epoch mean loss trace.
std::vector<double> pretrain_mlm(MiniPlm& model,
                                 const std::vector<TokenSequence>& corpus,
                                 const PretrainOptions& options);

}  // namespace cpscode
