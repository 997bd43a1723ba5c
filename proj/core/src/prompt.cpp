#include "cpscode/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "cpscode/error.hpp"
#include "cpscode/metrics.hpp"

namespace cpscode {

PromptTemplate PromptTemplate::hard_default() { return PromptTemplate{}; }

PromptTemplate PromptTemplate::soft(size_t num_slots) {
  PromptTemplate tmpl;
  tmpl.mode = TemplateMode::Soft;
  tmpl.prefix.clear();
  tmpl.suffix.clear();
  tmpl.num_slots = num_slots;
  return tmpl;
}

size_t PromptTemplate::scaffold_tokens() const {
  // [CLS], [MASK], [SEP] plus the template body
  const size_t body = mode == TemplateMode::Hard
                          ? prefix.size() + suffix.size()
                          : num_slots;
  return body + 3;
}

void init_soft_slots(PromptTemplate& tmpl, const MiniPlm& backend,
                     const Vocab& vocab, std::uint32_t seed) {
  const size_t dim = backend.config().model_dim;
  std::mt19937 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.02);
  const std::array<std::string, 2> seed_words = {"it", "is"};
  tmpl.slot_embeddings.clear();
  for (size_t j = 0; j < tmpl.num_slots; ++j) {
    Tensor slot = Tensor::zeros({dim});
    const int word_id = vocab.id_or_unk(seed_words[j % seed_words.size()]);
    const double* src =
        backend.tok_emb.data() + static_cast<size_t>(word_id) * dim;
    for (size_t d = 0; d < dim; ++d) slot.v[d] = src[d] + noise(rng);
    tmpl.slot_embeddings.push_back(std::move(slot));
  }
}

TokenSequence wrap_template(const TokenSequence& x, const PromptTemplate& tmpl,
                            const Vocab& vocab, size_t max_positions) {
  for (int id : x.ids) {
    if (id == vocab.mask_id()) {
      raise(ErrorCode::MaskAlreadyPresent,
            "input sequence already contains [MASK]");
    }
  }
  TokenSequence out;
  auto push = [&out](int id, std::string surface) {
    out.ids.push_back(id);
    out.surface.push_back(std::move(surface));
  };
  push(vocab.cls_id(), "[CLS]");
  if (tmpl.mode == TemplateMode::Hard) {
    for (const auto& tok : tmpl.prefix) push(vocab.id_or_unk(tok), tok);
  }
  for (size_t i = 0; i < x.ids.size(); ++i) push(x.ids[i], x.surface[i]);
  if (tmpl.mode == TemplateMode::Hard) {
    for (const auto& tok : tmpl.suffix) push(vocab.id_or_unk(tok), tok);
  } else {
    for (size_t j = 0; j < tmpl.num_slots; ++j) {
      push(-static_cast<int>(j) - 1, "<slot" + std::to_string(j) + ">");
    }
  }
  out.mask_position = out.ids.size();
  push(vocab.mask_id(), "[MASK]");
  push(vocab.sep_id(), "[SEP]");
  if (out.ids.size() > max_positions) {
    raise(ErrorCode::SequenceTooLong,
          "wrapped sequence length " + std::to_string(out.ids.size()) +
              " exceeds max_positions " + std::to_string(max_positions));
  }
  return out;
}

const std::map<CpsLabel, std::vector<std::string>>& default_label_words() {
  static const std::map<CpsLabel, std::vector<std::string>> kWords = {
      {CpsLabel::CRF, {"represent", "formulate"}},
      {CpsLabel::CP, {"plan"}},
      {CpsLabel::CEC, {"execute", "instruct"}},
      {CpsLabel::CMC, {"progress", "status"}},
      {CpsLabel::SMC, {"chat", "social"}},
      {CpsLabel::SSI, {"share", "inform"}},
      {CpsLabel::SESU, {"understand", "clarify"}},
      {CpsLabel::SN, {"negotiate", "disagree"}},
  };
  return kWords;
}

std::vector<std::string> prompt_vocab_extras(
    const std::map<CpsLabel, std::vector<std::string>>& label_words) {
  std::vector<std::string> extras = {",", "it", "is"};
  for (const auto& [label, words] : label_words) {
    for (const auto& w : words) {
      if (std::find(extras.begin(), extras.end(), w) == extras.end()) {
        extras.push_back(w);
      }
    }
  }
  return extras;
}

namespace {

std::array<std::vector<int>, kNumChatLabels> resolve_words(
    const Vocab& vocab,
    const std::map<CpsLabel, std::vector<std::string>>& label_words) {
  std::array<std::vector<int>, kNumChatLabels> resolved;
  for (CpsLabel label : chat_labels()) {
    auto it = label_words.find(label);
    if (it == label_words.end() || it->second.empty()) {
      raise(ErrorCode::UnknownLabelWord,
            "label " + std::string(label_name(label)) + " has no label words");
    }
    for (const auto& word : it->second) {
      auto id = vocab.id(word);
      if (!id) {
        raise(ErrorCode::UnknownLabelWord,
              "label word \"" + word + "\" is not in the vocabulary");
      }
      resolved[static_cast<size_t>(chat_label_index(label))].push_back(*id);
    }
  }
  return resolved;
}

}  // namespace

Verbalizer Verbalizer::manual(
    const Vocab& vocab,
    const std::map<CpsLabel, std::vector<std::string>>& label_words) {
  Verbalizer v;
  v.mode_ = VerbalizerMode::Manual;
  v.manual_words_ = resolve_words(vocab, label_words);
  return v;
}

Verbalizer Verbalizer::trainable(
    const Vocab& vocab,
    const std::map<CpsLabel, std::vector<std::string>>& label_words,
    size_t pool_extra) {
  Verbalizer v;
  v.mode_ = VerbalizerMode::Trainable;
  v.manual_words_ = resolve_words(vocab, label_words);

  for (const auto& ids : v.manual_words_) {
    for (int id : ids) {
      if (std::find(v.pool_.begin(), v.pool_.end(), id) == v.pool_.end()) {
        v.pool_.push_back(id);
      }
    }
  }
  // Vocabulary ids are frequency-ranked past the reserved block, so the
  // most frequent content tokens come first.
  const int reserved = static_cast<int>(Vocab::reserved_tokens().size());
  for (int id = reserved;
       id < static_cast<int>(vocab.size()) && pool_extra > 0; ++id) {
    if (std::find(v.pool_.begin(), v.pool_.end(), id) == v.pool_.end()) {
      v.pool_.push_back(id);
      --pool_extra;
    }
  }

  v.theta_ = Tensor::zeros({kNumChatLabels, v.pool_.size()});
  for (size_t l = 0; l < kNumChatLabels; ++l) {
    for (int id : v.manual_words_[l]) {
      const auto it = std::find(v.pool_.begin(), v.pool_.end(), id);
      const size_t i = static_cast<size_t>(it - v.pool_.begin());
      v.theta_.v[l * v.pool_.size() + i] = 2.0;  // bias toward manual words
    }
  }
  return v;
}

Verbalizer Verbalizer::from_config(const Vocab& vocab,
                                   std::string_view text) {
  std::map<CpsLabel, std::vector<std::string>> words;
  std::map<CpsLabel, std::vector<double>> weights;
  bool any_weights = false;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3) {
      raise(ErrorCode::BadConfig, "verbalizer line " +
                                      std::to_string(line_no) +
                                      ": expected 2 or 3 fields");
    }
    auto label = parse_label(fields[0]);
    if (!label || !chat_eligible(*label)) {
      raise(ErrorCode::BadConfig, "verbalizer line " +
                                      std::to_string(line_no) +
                                      ": not a chat label: " + fields[0]);
    }
    std::istringstream wl(fields[1]);
    std::string word;
    while (std::getline(wl, word, ',')) {
      if (!word.empty()) words[*label].push_back(word);
    }
    if (fields.size() == 3) {
      any_weights = true;
      std::istringstream ws(fields[2]);
      std::string w;
      while (std::getline(ws, w, ',')) {
        weights[*label].push_back(std::stod(w));
      }
      if (weights[*label].size() != words[*label].size()) {
        raise(ErrorCode::BadConfig,
              "verbalizer line " + std::to_string(line_no) +
                  ": weight count does not match word count");
      }
    }
  }
  if (!any_weights) return manual(vocab, words);

  // Weighted config: build a trainable verbalizer whose pool is exactly
  // the listed words, with softmax(log w) reproducing w / sum(w).
  Verbalizer v;
  v.mode_ = VerbalizerMode::Trainable;
  v.manual_words_ = resolve_words(vocab, words);
  for (const auto& ids : v.manual_words_) {
    for (int id : ids) {
      if (std::find(v.pool_.begin(), v.pool_.end(), id) == v.pool_.end()) {
        v.pool_.push_back(id);
      }
    }
  }
  v.theta_ = Tensor::zeros({kNumChatLabels, v.pool_.size()});
  std::fill(v.theta_.v.begin(), v.theta_.v.end(), -30.0);  // ~zero weight
  for (const auto& [label, ws] : weights) {
    const size_t l = static_cast<size_t>(chat_label_index(label));
    const auto& word_list = words.at(label);
    for (size_t i = 0; i < word_list.size(); ++i) {
      const int id = *vocab.id(word_list[i]);
      const auto it = std::find(v.pool_.begin(), v.pool_.end(), id);
      const size_t p = static_cast<size_t>(it - v.pool_.begin());
      if (!(ws[i] > 0)) {
        raise(ErrorCode::BadConfig, "verbalizer weights must be positive");
      }
      v.theta_.v[l * v.pool_.size() + p] = std::log(ws[i]);
    }
  }
  return v;
}

std::string Verbalizer::to_config(const Vocab& vocab) const {
  std::string out;
  for (CpsLabel label : chat_labels()) {
    const size_t l = static_cast<size_t>(chat_label_index(label));
    out += label_name(label);
    out += '\t';
    if (mode_ == VerbalizerMode::Manual) {
      for (size_t i = 0; i < manual_words_[l].size(); ++i) {
        if (i) out += ',';
        out += vocab.token(manual_words_[l][i]);
      }
    } else {
      const auto w = effective_weights(static_cast<int>(l));
      std::string weights;
      for (size_t i = 0; i < pool_.size(); ++i) {
        if (i) {
          out += ',';
          weights += ',';
        }
        out += vocab.token(pool_[i]);
        weights += std::to_string(w[i]);
      }
      out += '\t' + weights;
    }
    out += '\n';
  }
  return out;
}

std::vector<double> Verbalizer::effective_weights(int chat_index) const {
  const size_t n = pool_.size();
  std::vector<double> w(n);
  const double* row = theta_.data() + static_cast<size_t>(chat_index) * n;
  const double mx = *std::max_element(row, row + n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    w[i] = std::exp(row[i] - mx);
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

std::vector<std::pair<int, double>> Verbalizer::label_words(
    int chat_index) const {
  std::vector<std::pair<int, double>> out;
  if (mode_ == VerbalizerMode::Manual) {
    for (int id : manual_words_[static_cast<size_t>(chat_index)]) {
      out.emplace_back(id, 1.0);
    }
  } else {
    const auto w = effective_weights(chat_index);
    for (size_t i = 0; i < pool_.size(); ++i) {
      out.emplace_back(pool_[i], w[i]);
    }
  }
  return out;
}

std::array<double, kNumChatLabels> Verbalizer::aggregate(
    std::span<const double> word_probs) const {
  std::array<double, kNumChatLabels> scores{};
  for (int l = 0; l < kNumChatLabels; ++l) {
    double sum = 0.0;
    for (const auto& [id, weight] : label_words(l)) {
      if (id < 0 || static_cast<size_t>(id) >= word_probs.size()) {
        raise(ErrorCode::UnknownLabelWord,
              "label word id " + std::to_string(id) +
                  " outside the probability vector");
      }
      sum += weight * word_probs[static_cast<size_t>(id)];
    }
    scores[static_cast<size_t>(l)] = sum;
  }
  return scores;
}

std::string_view condition_name(PromptCondition c) {
  switch (c) {
    case PromptCondition::Manual: return "manual";
    case PromptCondition::TV: return "tv";
    case PromptCondition::TT: return "tt";
    case PromptCondition::TTV: return "ttv";
  }
  return "?";
}

std::optional<PromptCondition> parse_condition(std::string_view name) {
  for (PromptCondition c : {PromptCondition::Manual, PromptCondition::TV,
                            PromptCondition::TT, PromptCondition::TTV}) {
    if (condition_name(c) == name) return c;
  }
  return std::nullopt;
}

TokenSequence ChatCoder::preprocess(const std::string& raw_text) const {
  return tokenize(apply_replacements(raw_text, rules), vocab, max_len);
}

namespace {

Prediction prediction_from_scores(
    const std::array<double, kNumChatLabels>& scores) {
  Prediction pred;
  pred.scores = scores;
  pred.label = argmax_chat_label(scores);
  return pred;
}

std::array<double, kNumChatLabels> head_scores(const double* logits) {
  std::array<double, kNumChatLabels> scores{};
  double mx = logits[0];
  for (int l = 1; l < kNumChatLabels; ++l) mx = std::max(mx, logits[l]);
  double sum = 0.0;
  for (int l = 0; l < kNumChatLabels; ++l) {
    scores[static_cast<size_t>(l)] = std::exp(logits[l] - mx);
    sum += scores[static_cast<size_t>(l)];
  }
  for (double& s : scores) s /= sum;
  return scores;
}

}  // namespace

Prediction ChatCoder::classify_text(const std::string& raw_text) const {
  auto batch = classify_batch({raw_text});
  return batch.front();
}

std::vector<Prediction> ChatCoder::classify_batch(
    const std::vector<std::string>& raw_texts) const {
  if (!trained && !allow_untrained) {
    raise(ErrorCode::UntrainedCoder,
          "coder is untrained; set allow_untrained to classify anyway");
  }
  std::vector<Prediction> out;
  out.reserve(raw_texts.size());

  if (mode == CoderMode::Prompt && external_scorer) {
    if (prompt.mode == TemplateMode::Soft) {
      raise(ErrorCode::ConditionIncompatible,
            "soft templates require the built-in backend");
    }
    for (const auto& text : raw_texts) {
      TokenSequence wrapped =
          wrap_template(preprocess(text), prompt, vocab,
                        backend ? backend->config().max_positions
                                : std::numeric_limits<size_t>::max());
      const auto probs = external_scorer->mask_distribution(wrapped);
      out.push_back(prediction_from_scores(verbalizer.aggregate(probs)));
    }
    return out;
  }

  const size_t max_pos = backend->config().max_positions;
  const size_t vocab_size = backend->config().vocab_size;
  const size_t dim = backend->config().model_dim;
  const size_t chunk_size = 64;
  for (size_t start = 0; start < raw_texts.size(); start += chunk_size) {
    const size_t stop = std::min(start + chunk_size, raw_texts.size());
    std::vector<std::vector<int>> ids;
    std::vector<size_t> special_pos;  // mask (Prompt) or [CLS] (Finetune)
    for (size_t i = start; i < stop; ++i) {
      TokenSequence seq = preprocess(raw_texts[i]);
      if (mode == CoderMode::Prompt) {
        TokenSequence wrapped = wrap_template(seq, prompt, vocab, max_pos);
        special_pos.push_back(*wrapped.mask_position);
        ids.push_back(std::move(wrapped.ids));
      } else {
        std::vector<int> frame;
        frame.push_back(vocab.cls_id());
        frame.insert(frame.end(), seq.ids.begin(), seq.ids.end());
        frame.push_back(vocab.sep_id());
        special_pos.push_back(0);
        ids.push_back(std::move(frame));
      }
    }
    BatchInput in = make_batch(ids, vocab.pad_id());
    if (prompt.mode == TemplateMode::Soft) in.slots = &prompt.slot_embeddings;
    Activations acts = backend->forward(in);
    std::vector<size_t> flat(ids.size());
    for (size_t b = 0; b < ids.size(); ++b) {
      flat[b] = b * in.seq_len + special_pos[b];
    }
    if (mode == CoderMode::Prompt) {
      std::vector<double> logits = backend->head_logits(acts, flat);
      softmax_rows(logits.data(), flat.size(), vocab_size);
      for (size_t b = 0; b < ids.size(); ++b) {
        std::span<const double> row(logits.data() + b * vocab_size,
                                    vocab_size);
        out.push_back(prediction_from_scores(verbalizer.aggregate(row)));
      }
    } else {
      const auto& hidden = acts.final_hidden();
      for (size_t b = 0; b < ids.size(); ++b) {
        std::vector<double> logits(head_b.v);
        gemm_nn(logits.data(), hidden.data() + flat[b] * dim, head_w.data(),
                1, dim, kNumChatLabels, true);
        out.push_back(prediction_from_scores(head_scores(logits.data())));
      }
    }
  }
  return out;
}

ChatCoder build_chat_coder(const Vocab& vocab,
                           const std::vector<ReplacementRule>& rules,
                           const CoderSetup& setup, std::uint32_t seed) {
  ChatCoder coder;
  coder.vocab = vocab;
  coder.rules = rules;
  coder.condition = setup.condition;
  coder.mode = setup.mode;
  coder.max_len = setup.max_len;

  MiniPlmConfig plm = setup.plm;
  plm.vocab_size = vocab.size();
  plm.seed = seed;
  coder.backend = std::make_shared<MiniPlm>(MiniPlm::init(plm));

  const bool soft = setup.condition == PromptCondition::TT ||
                    setup.condition == PromptCondition::TTV;
  if (coder.mode == CoderMode::Prompt && soft) {
    coder.prompt = PromptTemplate::soft(setup.soft_slots);
    init_soft_slots(coder.prompt, *coder.backend, vocab, seed ^ 0x9E3779B9u);
  } else {
    coder.prompt = PromptTemplate::hard_default();
  }
  if (plm.max_positions < setup.max_len + coder.prompt.scaffold_tokens()) {
    raise(ErrorCode::SequenceTooLong,
          "max_positions too small for max_len plus the template scaffold");
  }

  const bool trainable_verbalizer = setup.condition == PromptCondition::TV ||
                                    setup.condition == PromptCondition::TTV;
  coder.verbalizer =
      trainable_verbalizer
          ? Verbalizer::trainable(vocab, setup.label_words,
                                  setup.verbalizer_pool_extra)
          : Verbalizer::manual(vocab, setup.label_words);

  if (coder.mode == CoderMode::Finetune) {
    std::mt19937 rng(seed ^ 0x517CC1B7u);
    std::normal_distribution<double> dist(0.0, 0.02);
    coder.head_w = Tensor::zeros({plm.model_dim, kNumChatLabels});
    for (double& x : coder.head_w.v) x = dist(rng);
    coder.head_b = Tensor::zeros({kNumChatLabels});
  }
  return coder;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Example {
  std::vector<int> ids;
  size_t special_pos = 0;  // mask position (Prompt) or 0 (Finetune)
  int gold = 0;            // chat label index
};

struct Snapshot {
  std::vector<std::vector<double>> values;
  void capture(const NamedParams& params) {
    values.clear();
    for (const auto& [name, tensor] : params) values.push_back(tensor->v);
  }
  void restore(const NamedParams& params) const {
    for (size_t i = 0; i < params.size(); ++i) params[i].second->v = values[i];
  }
};

}  // namespace

TrainTrace train_chat_coder(ChatCoder& coder,
                            const std::vector<BehaviorRecord>& train,
                            const std::vector<BehaviorRecord>& validation,
                            const TrainOptions& options) {
  if (train.empty()) {
    raise(ErrorCode::EmptyTrainingSet, "training set is empty");
  }
  auto check_records = [](const std::vector<BehaviorRecord>& records,
                          const char* which) {
    for (const auto& rec : records) {
      if (rec.kind != RecordKind::Chat) {
        raise(ErrorCode::LabelOutsideChatSet,
              std::string(which) + " record " + rec.record_id +
                  " is not a chat record");
      }
      if (!rec.gold_label) {
        raise(ErrorCode::UnlabeledRecord, std::string(which) + " record " +
                                              rec.record_id +
                                              " has no gold label");
      }
    }
  };
  check_records(train, "training");
  check_records(validation, "validation");

  if (coder.mode == CoderMode::Prompt) {
    const bool soft = coder.prompt.mode == TemplateMode::Soft;
    const bool trainable_v =
        coder.verbalizer.mode() == VerbalizerMode::Trainable;
    const bool wants_soft = coder.condition == PromptCondition::TT ||
                            coder.condition == PromptCondition::TTV;
    const bool wants_trainable_v = coder.condition == PromptCondition::TV ||
                                   coder.condition == PromptCondition::TTV;
    if (wants_soft != soft || wants_trainable_v != trainable_v) {
      raise(ErrorCode::ConditionIncompatible,
            std::string("condition ") +
                std::string(condition_name(coder.condition)) +
                " does not match the coder's template/verbalizer modes");
    }
    if (coder.external_scorer) {
      raise(ErrorCode::ConditionIncompatible,
            "external scoring backends cannot be trained");
    }
  }

  MiniPlm& model = *coder.backend;
  const size_t vocab_size = model.config().vocab_size;
  const size_t dim = model.config().model_dim;
  const size_t max_pos = model.config().max_positions;

  // Precompute wrapped inputs once; both modes share preprocess().
  auto encode = [&](const BehaviorRecord& rec) {
    Example ex;
    TokenSequence seq = coder.preprocess(rec.text);
    if (coder.mode == CoderMode::Prompt) {
      TokenSequence wrapped = wrap_template(seq, coder.prompt, coder.vocab,
                                            max_pos);
      ex.ids = std::move(wrapped.ids);
      ex.special_pos = *wrapped.mask_position;
    } else {
      ex.ids.push_back(coder.vocab.cls_id());
      ex.ids.insert(ex.ids.end(), seq.ids.begin(), seq.ids.end());
      ex.ids.push_back(coder.vocab.sep_id());
      ex.special_pos = 0;
    }
    ex.gold = chat_label_index(*rec.gold_label);
    return ex;
  };
  std::vector<Example> examples;
  examples.reserve(train.size());
  for (const auto& rec : train) examples.push_back(encode(rec));

  std::vector<std::string> val_texts;
  std::vector<CpsLabel> val_gold;
  for (const auto& rec : validation) {
    val_texts.push_back(rec.text);
    val_gold.push_back(*rec.gold_label);
  }

  // Trainable registry per condition.
  NamedParams params = model.parameters();
  const bool train_theta = coder.mode == CoderMode::Prompt &&
                           (coder.condition == PromptCondition::TV ||
                            coder.condition == PromptCondition::TTV);
  const bool train_slots = coder.mode == CoderMode::Prompt &&
                           (coder.condition == PromptCondition::TT ||
                            coder.condition == PromptCondition::TTV);
  if (train_theta) params.emplace_back("verbalizer.theta",
                                       &coder.verbalizer.weights());
  if (train_slots) {
    for (size_t j = 0; j < coder.prompt.slot_embeddings.size(); ++j) {
      params.emplace_back("prompt.slot" + std::to_string(j),
                          &coder.prompt.slot_embeddings[j]);
    }
  }
  if (coder.mode == CoderMode::Finetune) {
    params.emplace_back("head.w", &coder.head_w);
    params.emplace_back("head.b", &coder.head_b);
  }
  for (auto& [name, tensor] : params) tensor->ensure_grad();

  Adam optimizer({.learning_rate = options.learning_rate});
  std::mt19937 rng(options.seed);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainTrace trace;
  Snapshot best;
  double best_f1 = -1.0;
  if (options.epochs > 0) coder.trained = true;

  const auto chat_order =
      std::vector<CpsLabel>(chat_labels().begin(), chat_labels().end());
  std::mt19937 dropout_rng(options.seed ^ 0xA511E9B3u);
  const bool use_dropout = model.config().dropout_rate > 0.0;

  for (size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    size_t seen = 0;

    for (size_t start = 0; start < order.size(); start += options.batch_size) {
      const size_t stop = std::min(start + options.batch_size, order.size());
      const size_t bsz = stop - start;
      std::vector<std::vector<int>> ids;
      std::vector<size_t> special;
      std::vector<int> gold;
      ids.reserve(bsz);
      for (size_t i = start; i < stop; ++i) {
        const Example& ex = examples[order[i]];
        ids.push_back(ex.ids);
        special.push_back(ex.special_pos);
        gold.push_back(ex.gold);
      }
      BatchInput in = make_batch(ids, coder.vocab.pad_id());
      if (coder.prompt.mode == TemplateMode::Soft &&
          coder.mode == CoderMode::Prompt) {
        in.slots = &coder.prompt.slot_embeddings;
        if (train_slots) in.slot_grads = &coder.prompt.slot_embeddings;
      }
      if (use_dropout) in.dropout_rng = &dropout_rng;

      Activations acts = model.forward(in);
      std::vector<size_t> flat(bsz);
      for (size_t b = 0; b < bsz; ++b) {
        flat[b] = b * in.seq_len + special[b];
      }

      double batch_loss = 0.0;
      const double inv_b = 1.0 / static_cast<double>(bsz);

      if (coder.mode == CoderMode::Prompt) {
        std::vector<double> logits = model.head_logits(acts, flat);
        softmax_rows(logits.data(), bsz, vocab_size);
        std::vector<double> d_logits(bsz * vocab_size, 0.0);

        // Per-label effective weights are shared across the batch.
        std::vector<std::vector<std::pair<int, double>>> words(kNumChatLabels);
        for (int l = 0; l < kNumChatLabels; ++l) {
          words[static_cast<size_t>(l)] = coder.verbalizer.label_words(l);
        }

        for (size_t b = 0; b < bsz; ++b) {
          const double* p = logits.data() + b * vocab_size;
          std::array<double, kNumChatLabels> q{};
          for (int l = 0; l < kNumChatLabels; ++l) {
            for (const auto& [id, w] : words[static_cast<size_t>(l)]) {
              q[static_cast<size_t>(l)] += w * p[id];
            }
          }
          const double q_sum =
              std::accumulate(q.begin(), q.end(), 0.0);
          const double q_gold = q[static_cast<size_t>(gold[b])];
          batch_loss -= std::log(std::max(q_gold / q_sum, 1e-300));

          // d(loss)/d(q_l), then fan out to word probabilities (and the
          // verbalizer weights when trainable).
          std::array<double, kNumChatLabels> dq{};
          for (int l = 0; l < kNumChatLabels; ++l) {
            dq[static_cast<size_t>(l)] = inv_b / q_sum;
          }
          dq[static_cast<size_t>(gold[b])] -=
              inv_b / std::max(q_gold, 1e-300);

          std::vector<double> dp(vocab_size, 0.0);
          for (int l = 0; l < kNumChatLabels; ++l) {
            const double g = dq[static_cast<size_t>(l)];
            for (const auto& [id, w] : words[static_cast<size_t>(l)]) {
              dp[static_cast<size_t>(id)] += w * g;
            }
          }
          if (train_theta) {
            // d/dw_li = dq_l * P(pool_i); softmax-backward into theta.
            Tensor& theta = coder.verbalizer.weights();
            const auto& pool = coder.verbalizer.pool();
            for (int l = 0; l < kNumChatLabels; ++l) {
              const double g = dq[static_cast<size_t>(l)];
              if (g == 0.0) continue;
              const auto& lw = words[static_cast<size_t>(l)];
              double dot = 0.0;
              std::vector<double> dw(pool.size());
              for (size_t i = 0; i < pool.size(); ++i) {
                dw[i] = g * p[pool[i]];
                dot += dw[i] * lw[i].second;
              }
              double* trow =
                  theta.g.data() + static_cast<size_t>(l) * pool.size();
              for (size_t i = 0; i < pool.size(); ++i) {
                trow[i] += lw[i].second * (dw[i] - dot);
              }
            }
          }

          // Softmax jacobian: d(logit_j) = p_j * (dp_j - sum_k dp_k p_k).
          double mix = 0.0;
          for (size_t j = 0; j < vocab_size; ++j) mix += dp[j] * p[j];
          double* dl = d_logits.data() + b * vocab_size;
          for (size_t j = 0; j < vocab_size; ++j) {
            dl[j] = p[j] * (dp[j] - mix);
          }
        }
        std::vector<double> d_hidden =
            model.head_backward(acts, flat, d_logits);
        model.backward(in, acts, d_hidden);
      } else {
        // Finetune: linear head over the sequence representation.
        const auto& hidden = acts.final_hidden();
        std::vector<double> cls(bsz * dim);
        for (size_t b = 0; b < bsz; ++b) {
          std::copy_n(hidden.data() + flat[b] * dim, dim,
                      cls.data() + b * dim);
        }
        std::vector<double> logits(bsz * kNumChatLabels);
        for (size_t b = 0; b < bsz; ++b) {
          std::copy(coder.head_b.v.begin(), coder.head_b.v.end(),
                    logits.begin() + b * kNumChatLabels);
        }
        gemm_nn(logits.data(), cls.data(), coder.head_w.data(), bsz, dim,
                kNumChatLabels, true);
        softmax_rows(logits.data(), bsz, kNumChatLabels);
        for (size_t b = 0; b < bsz; ++b) {
          const double p_gold =
              logits[b * kNumChatLabels + static_cast<size_t>(gold[b])];
          batch_loss -= std::log(std::max(p_gold, 1e-300));
          logits[b * kNumChatLabels + static_cast<size_t>(gold[b])] -= 1.0;
        }
        for (double& x : logits) x *= inv_b;  // now d_logits

        coder.head_w.ensure_grad();
        coder.head_b.ensure_grad();
        gemm_tn(coder.head_w.g.data(), cls.data(), logits.data(), dim, bsz,
                kNumChatLabels, true);
        for (size_t b = 0; b < bsz; ++b) {
          for (int l = 0; l < kNumChatLabels; ++l) {
            coder.head_b.g[static_cast<size_t>(l)] +=
                logits[b * kNumChatLabels + static_cast<size_t>(l)];
          }
        }
        std::vector<double> dcls(bsz * dim, 0.0);
        gemm_nt(dcls.data(), logits.data(), coder.head_w.data(), bsz,
                kNumChatLabels, dim, true);
        std::vector<double> d_hidden(hidden.size(), 0.0);
        for (size_t b = 0; b < bsz; ++b) {
          std::copy_n(dcls.data() + b * dim, dim,
                      d_hidden.data() + flat[b] * dim);
        }
        model.backward(in, acts, d_hidden);
      }

      if (!std::isfinite(batch_loss)) {
        raise(ErrorCode::NonFiniteLoss, "training loss is not finite");
      }
      optimizer.step(params);
      epoch_loss += batch_loss;
      seen += bsz;
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
    if (!val_texts.empty()) {
      const auto preds = coder.classify_batch(val_texts);
      std::vector<CpsLabel> pred_labels(preds.size());
      for (size_t i = 0; i < preds.size(); ++i) pred_labels[i] = preds[i].label;
      const auto cm =
          ConfusionMatrix::from_pairs(val_gold, pred_labels, chat_order);
      metrics.val_accuracy = accuracy(cm);
      metrics.val_macro_f1 = macro_f1(cm);
      metrics.val_kappa = kappa(cm);
      if (metrics.val_macro_f1 > best_f1) {
        best_f1 = metrics.val_macro_f1;
        best.capture(params);
        trace.best_epoch = epoch;
      }
    } else {
      trace.best_epoch = epoch;  // no validation: keep the last epoch
    }
    trace.epochs.push_back(metrics);
  }

  if (!val_texts.empty() && best_f1 >= 0.0) best.restore(params);
  return trace;
}

}  // namespace cpscode
