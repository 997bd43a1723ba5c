#pragma once
// Prompt-based chat coding: template wrapping, verbalizer aggregation,
// argmax decision, and training under the four prompt conditions; also
// the fine-tuning comparison head.

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cpscode/classifier.hpp"
#include "cpscode/mini_plm.hpp"
#include "cpscode/record.hpp"
#include "cpscode/textprep.hpp"

namespace cpscode {

enum class TemplateMode { Hard, Soft };

struct PromptTemplate {
  TemplateMode mode = TemplateMode::Hard;
  // Hard mode: tokens inserted between [CLS] and X, and between X and
  // [MASK]. The default renders "[CLS] X , it is [MASK] [SEP]".
  std::vector<std::string> prefix;
  std::vector<std::string> suffix = {",", "it", "is"};
  // Soft mode: trainable slot embeddings between X and [MASK].
  size_t num_slots = 4;
  std::vector<Tensor> slot_embeddings;

  static PromptTemplate hard_default();
  // Slots are initialized later from the backend's "it is" embeddings
  // plus noise (see init_soft_slots).
  static PromptTemplate soft(size_t num_slots = 4);

  size_t scaffold_tokens() const;  // everything except X
};

void init_soft_slots(PromptTemplate& tmpl, const MiniPlm& backend,
                     const Vocab& vocab, std::uint32_t seed);

// Wraps content tokens in the template frame. Throws MaskAlreadyPresent
// if x already contains [MASK] and SequenceTooLong past max_positions.
// Slot markers get ids -1, -2, ... and surface "<slot0>", "<slot1>", ...
TokenSequence wrap_template(const TokenSequence& x,
                            const PromptTemplate& tmpl, const Vocab& vocab,
                            size_t max_positions);

enum class VerbalizerMode { Manual, Trainable };

// Manual default mapping; words land in the vocabulary as ordinary
// tokens. Overridable through the verbalizer config format.
const std::map<CpsLabel, std::vector<std::string>>& default_label_words();

// Tokens every prompt vocabulary must contain: template words plus the
// given label words.
std::vector<std::string> prompt_vocab_extras(
    const std::map<CpsLabel, std::vector<std::string>>& label_words);

class Verbalizer {
 public:
  Verbalizer() = default;

  static Verbalizer manual(
      const Vocab& vocab,
      const std::map<CpsLabel, std::vector<std::string>>& label_words =
          default_label_words());

  // Shared candidate pool = manual words + the pool_extra most frequent
  // non-reserved vocabulary tokens; weights are a per-label softmax over
  // the pool, biased toward each label's manual words.
  static Verbalizer trainable(
      const Vocab& vocab,
      const std::map<CpsLabel, std::vector<std::string>>& label_words =
          default_label_words(),
      size_t pool_extra = 32);

  // `label <TAB> word[,word...] [<TAB> weight,...]`
  static Verbalizer from_config(const Vocab& vocab, std::string_view text);
  std::string to_config(const Vocab& vocab) const;

  VerbalizerMode mode() const { return mode_; }
  // Token ids scored for `label` with their current weights.
  std::vector<std::pair<int, double>> label_words(int chat_index) const;
  const std::vector<int>& pool() const { return pool_; }

  // Eq.-style aggregation: score(s) = sum over s's words of
  // weight * P(word).
  std::array<double, kNumChatLabels> aggregate(
      std::span<const double> word_probs) const;

  Tensor& weights() { return theta_; }          // Trainable parameters
  const Tensor& weights() const { return theta_; }
  // Effective per-label weight over the pool (softmax of theta_ rows).
  std::vector<double> effective_weights(int chat_index) const;

 private:
  VerbalizerMode mode_ = VerbalizerMode::Manual;
  // Manual: per-label word ids, weight 1 each.
  std::array<std::vector<int>, kNumChatLabels> manual_words_;
  // Trainable: shared pool + per-label softmax weights.
  std::vector<int> pool_;
  Tensor theta_;  // kNumChatLabels x pool size

  friend class ChatCoderTrainer;
};

enum class PromptCondition { Manual, TV, TT, TTV };
std::string_view condition_name(PromptCondition c);
std::optional<PromptCondition> parse_condition(std::string_view name);

enum class CoderMode { Prompt, Finetune };

class ChatCoder : public ChatClassifier {
 public:
  std::shared_ptr<MiniPlm> backend;
  std::shared_ptr<const MaskScorer> external_scorer;  // replaces backend
                                                      // for classification
  Vocab vocab;
  std::vector<ReplacementRule> rules = default_replacement_rules();
  PromptTemplate prompt;
  Verbalizer verbalizer;
  PromptCondition condition = PromptCondition::Manual;
  CoderMode mode = CoderMode::Prompt;
  Tensor head_w, head_b;  // Finetune: model_dim x 8, 8
  size_t max_len = kDefaultMaxLen;
  bool allow_untrained = false;
  bool trained = false;

  // normalize -> tokenize; both Prompt and Finetune consume this.
  TokenSequence preprocess(const std::string& raw_text) const;

  // Full pipeline: normalize, tokenize, wrap, mask probabilities,
  // verbalizer aggregation, argmax.
  Prediction classify_text(const std::string& raw_text) const override;
  std::vector<Prediction> classify_batch(
      const std::vector<std::string>& raw_texts) const;
};

struct CoderSetup {
  PromptCondition condition = PromptCondition::Manual;
  CoderMode mode = CoderMode::Prompt;
  MiniPlmConfig plm;  // vocab_size is filled from the vocab
  size_t max_len = kDefaultMaxLen;
  std::map<CpsLabel, std::vector<std::string>> label_words =
      default_label_words();
  size_t verbalizer_pool_extra = 32;
  size_t soft_slots = 4;
};

// Builds an untrained coder with a freshly initialized backend. The seed
// drives backend init, slot init and the finetune head.
ChatCoder build_chat_coder(const Vocab& vocab,
                           const std::vector<ReplacementRule>& rules,
                           const CoderSetup& setup, std::uint32_t seed);

struct TrainOptions {
  size_t epochs = 20;
  double learning_rate = 1e-5;
  size_t batch_size = 32;
  std::uint32_t seed = 0;
};

struct EpochMetrics {
  size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double val_kappa = 0.0;
};

struct TrainTrace {
  std::vector<EpochMetrics> epochs;
  size_t best_epoch = 0;  // 1-based; 0 = no training happened
};

// Minimizes cross-entropy of the renormalized label scores (Prompt) or
// the head distribution (Finetune). Trainable components follow the
// condition: Manual trains the backend only, TV adds verbalizer weights,
// TT adds slot embeddings, TTV all three. Returns the per-epoch trace and
// restores the best-validation-macro-F1 checkpoint.
TrainTrace train_chat_coder(ChatCoder& coder,
                            const std::vector<BehaviorRecord>& train,
                            const std::vector<BehaviorRecord>& validation,
                            const TrainOptions& options);

}  // namespace cpscode
